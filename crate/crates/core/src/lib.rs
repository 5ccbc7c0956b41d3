//! Differentiable material point method simulation with neural constitutive
//! laws, low-rank material adapters, and a Gaussian-splat rendering bridge.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the bottom of this file fix the common choices.

pub mod constitutive;
pub mod diff;
pub mod error;
pub mod fit;
pub mod io;
pub mod linalg;
pub mod mpm;
pub mod optim;
pub mod particle_gs;
pub mod scalar;
pub mod scene;

pub use error::{Error, Result};
pub use linalg::{Mat3, Vec3};
pub use scalar::Real;

pub type ParticleSet64 = scene::ParticleSet<f64>;
pub type ParticleSet32 = scene::ParticleSet<f32>;
pub type Trajectory64 = mpm::Trajectory<f64>;
pub type Trajectory32 = mpm::Trajectory<f32>;
pub type Material64 = constitutive::MaterialModel<f64>;
pub type Material32 = constitutive::MaterialModel<f32>;
pub type Adapter64 = constitutive::MaterialAdapter<f64>;
pub type Adapter32 = constitutive::MaterialAdapter<f32>;
pub type Kernels64 = scene::GaussianKernelSet<f64>;
pub type Kernels32 = scene::GaussianKernelSet<f32>;
