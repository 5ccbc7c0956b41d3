//! `scene.json`: everything needed to rebuild a scene's particles and kernels.

use std::path::{Path, PathBuf};

use mpm_adapt::constitutive::MaterialModel;
use mpm_adapt::particle_gs::{bind_scene, BindingMode, BoundKernels, Camera};
use mpm_adapt::scene::{build_object, make_benchmark_with, BenchmarkOptions, ParticleSet, SceneConfig, ShapeSpec};
use mpm_adapt::Real;
use serde::{Deserialize, Serialize};

use crate::Failure;

fn default_stride() -> usize {
    2
}

fn default_tau() -> f64 {
    0.95
}

fn default_background() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub name: String,
    #[serde(default)]
    pub config: SceneConfig,
    pub shape: ShapeSpec,
    pub particles: usize,
    #[serde(default = "default_stride")]
    pub kernel_stride: usize,
    /// Sampling seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default = "default_background")]
    pub color: [f64; 3],
    pub steps: usize,
    /// Ground-truth material, relative to the scene file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<Camera>,
    #[serde(default = "default_background")]
    pub background: [f64; 3],
    #[serde(default)]
    pub binding: BindingMode,
    #[serde(default = "default_tau")]
    pub tau_bind: f64,
}

/// A scene with bound kernels; the particle set already includes any
/// particles spawned for kernel coverage.
pub struct LoadedScene<T> {
    pub file: SceneFile,
    pub dir: PathBuf,
    pub particles: ParticleSet<T>,
    pub kernels: BoundKernels<T>,
}

impl SceneFile {
    pub fn from_preset(name: &str, particles: usize, seed: u64, grid: usize) -> Result<(Self, MaterialModel<f64>), Failure> {
        let opts = BenchmarkOptions { particles, seed, grid_resolution: grid, ..Default::default() };
        let b = make_benchmark_with::<f64>(name, &opts)?;
        let material = b.material;
        let file = SceneFile {
            name: b.name,
            config: b.config,
            shape: b.shape,
            particles,
            kernel_stride: opts.kernel_stride,
            seed,
            velocity: b.initial_velocity,
            color: b.kernels.colors[0],
            steps: b.steps,
            material: None,
            camera: None,
            background: default_background(),
            binding: BindingMode::Mahalanobis,
            tau_bind: default_tau(),
        };
        Ok((file, material))
    }

    pub fn read(path: &Path) -> Result<Self, Failure> {
        Ok(mpm_adapt::io::read_json(path)?)
    }

    pub fn camera(&self, image_size: usize) -> Camera {
        self.camera.clone().unwrap_or_else(|| Camera::front(image_size, image_size))
    }

    pub fn material_path(&self, dir: &Path) -> Option<PathBuf> {
        self.material.as_ref().map(|m| if m.is_absolute() { m.clone() } else { dir.join(m) })
    }

    pub fn build<T: Real>(self, dir: &Path) -> Result<LoadedScene<T>, Failure> {
        self.config.validate()?;
        let opts = BenchmarkOptions {
            particles: self.particles,
            kernel_stride: self.kernel_stride,
            seed: self.seed,
            grid_resolution: self.config.grid_resolution,
        };
        let (ps, kernels) = build_object::<T>(&self.shape, &opts, self.color, self.velocity)?;
        let (particles, kernels) = bind_scene(&kernels, &ps, self.tau_bind, self.binding)?;
        Ok(LoadedScene { file: self, dir: dir.to_path_buf(), particles, kernels })
    }
}

pub fn load_scene<T: Real>(path: &Path) -> Result<LoadedScene<T>, Failure> {
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    SceneFile::read(path)?.build(&dir)
}
