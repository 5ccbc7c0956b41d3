//! Gaussian kernels driven by simulation particles.
//!
//! Kernels are bound to the particles that fall inside their confidence
//! ellipsoid, follow the bound particles' displacement, and deform their
//! covariance with the bound particles' averaged elastic deformation.

mod chi2;
mod render;

pub use chi2::{chi2_cdf, chi2_quantile};
pub use render::{image_loss, image_loss_grad, splat, splat_backward, Camera, Image, KernelGrad};

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diff::{StateGrad, TrajectoryLoss};
use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;
use crate::scene::{GaussianKernelSet, ParticleSet};

/// Default confidence level of the binding test.
pub const DEFAULT_TAU_BIND: f64 = 0.95;

/// Sparse row-normalized kernel-to-particle weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BindingMatrix {
    /// Per kernel, `(particle, weight)` in increasing particle order.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub particles: usize,
}

impl BindingMatrix {
    /// `K = N`, kernel `i` follows particle `i` only.
    pub fn identity(n: usize) -> Self {
        Self { rows: (0..n).map(|i| vec![(i, 1.0)]).collect(), particles: n }
    }

    pub fn kernels(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn empty_rows(&self) -> Vec<usize> {
        self.rows.iter().enumerate().filter(|(_, r)| r.is_empty()).map(|(i, _)| i).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|(_, w)| w).sum()).collect()
    }

    /// `Σ_j B_kj v_j` for every kernel.
    pub fn apply_vec<T: Real>(&self, v: &[Vec3<T>]) -> Vec<Vec3<T>> {
        self.rows
            .iter()
            .map(|r| r.iter().fold(Vec3::zero(), |acc, &(j, w)| acc + v[j].scale(T::lit(w))))
            .collect()
    }

    pub fn apply_mat<T: Real>(&self, m: &[Mat3<T>]) -> Vec<Mat3<T>> {
        self.rows
            .iter()
            .map(|r| r.iter().fold(Mat3::zero(), |acc, &(j, w)| acc + m[j].scale(T::lit(w))))
            .collect()
    }

    /// One line per kernel: row index, bound particle indices, weights.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, r) in self.rows.iter().enumerate() {
            let cols: Vec<String> = r.iter().map(|(j, _)| j.to_string()).collect();
            let ws: Vec<String> = r.iter().map(|(_, w)| format!("{w:.17e}")).collect();
            let _ = writeln!(out, "{i}\t{}\t{}", cols.join(","), ws.join(","));
        }
        out
    }
}

/// `A + 1e-10 tr(A)/3 I`, inverted; fails for matrices that stay indefinite.
fn regularized_inverse(a: &Mat3<f64>, kernel: usize) -> Result<Mat3<f64>> {
    let a = a.sym() + Mat3::scaled_identity(1e-10 * a.trace() / 3.0);
    if a.cholesky().is_none() {
        return Err(Error::Geometry(format!("kernel {kernel} covariance is not positive definite")));
    }
    a.inverse().ok_or_else(|| Error::Geometry(format!("kernel {kernel} covariance is singular")))
}

struct SpatialHash {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl SpatialHash {
    fn new(points: &[Vec3<f64>], cell: f64) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, buckets }
    }

    fn key(p: &Vec3<f64>, cell: f64) -> [i64; 3] {
        p.0.map(|c| (c / cell).floor() as i64)
    }

    /// Indices of points in the cells overlapping the box `center ± r`.
    fn query(&self, center: &Vec3<f64>, r: f64, out: &mut Vec<usize>) {
        out.clear();
        let lo = Self::key(&(*center - Vec3::splat(r)), self.cell);
        let hi = Self::key(&(*center + Vec3::splat(r)), self.cell);
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    if let Some(b) = self.buckets.get(&[i, j, k]) {
                        out.extend_from_slice(b);
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

/// Binds each kernel to the particles whose Mahalanobis distance under the
/// kernel covariance is within the `tau_bind` chi-squared quantile.
pub fn bind<T: Real>(kernels: &GaussianKernelSet<T>, positions: &[Vec3<T>], tau_bind: f64) -> Result<BindingMatrix> {
    if !(tau_bind > 0.0 && tau_bind < 1.0) {
        return Err(Error::Argument(format!("tau_bind {tau_bind} must lie in (0, 1)")));
    }
    if kernels.covariances.len() != kernels.len() {
        return Err(Error::Argument("kernel arrays have inconsistent lengths".into()));
    }
    let threshold = chi2_quantile(tau_bind, 3);
    let pts: Vec<Vec3<f64>> = positions.iter().map(|p| p.cast()).collect();
    let mut inverses = Vec::with_capacity(kernels.len());
    let mut radii = Vec::with_capacity(kernels.len());
    for (k, a) in kernels.covariances.iter().enumerate() {
        let a = a.cast::<f64>();
        let inv = regularized_inverse(&a, k)?;
        let (eig, _) = a.sym().sym_eigen();
        let lmax = eig.0.iter().fold(0.0f64, |m, &e| m.max(e)) * (1.0 + 1e-9) + 1e-10 * a.trace() / 3.0;
        inverses.push(inv);
        radii.push((threshold * lmax).sqrt() * (1.0 + 1e-9));
    }
    let mut rows = vec![Vec::new(); kernels.len()];
    if !pts.is_empty() && !radii.is_empty() {
        let mut sorted = radii.clone();
        sorted.sort_by(f64::total_cmp);
        let cell = sorted[sorted.len() / 2].max(1e-9);
        let hash = SpatialHash::new(&pts, cell);
        let mut candidates = Vec::new();
        for (k, row) in rows.iter_mut().enumerate() {
            let c = kernels.centers[k].cast::<f64>();
            hash.query(&c, radii[k], &mut candidates);
            for &j in &candidates {
                let d = pts[j] - c;
                if d.dot(inverses[k].mul_vec(d)) <= threshold {
                    row.push(j);
                }
            }
        }
    }
    Ok(BindingMatrix {
        rows: rows
            .into_iter()
            .map(|r| {
                let w = 1.0 / r.len() as f64;
                r.into_iter().map(|j| (j, w)).collect()
            })
            .collect(),
        particles: pts.len(),
    })
}

/// Two binding passes; every kernel left empty by the first gets a new
/// particle at its center.
pub fn ensure_coverage<T: Real>(
    kernels: &GaussianKernelSet<T>,
    particles: &ParticleSet<T>,
    tau_bind: f64,
) -> Result<(ParticleSet<T>, BindingMatrix)> {
    let first = bind(kernels, &particles.positions, tau_bind)?;
    let empty = first.empty_rows();
    if empty.is_empty() {
        return Ok((particles.clone(), first));
    }
    if particles.is_empty() {
        return Err(Error::Argument("cannot spawn particles without a template particle set".into()));
    }
    let n = particles.len();
    let mean_volume = particles.volumes.iter().copied().sum::<T>() / T::lit(n as f64);
    let mean_density = particles.densities.iter().copied().sum::<T>() / T::lit(n as f64);
    let mut out = particles.clone();
    for &k in &empty {
        let c = kernels.centers[k];
        // Velocity and tag from the nearest original particles.
        let mut by_dist: Vec<(T, usize)> =
            particles.positions.iter().enumerate().map(|(j, p)| ((*p - c).norm_squared(), j)).collect();
        let take = by_dist.len().min(8);
        by_dist.select_nth_unstable_by(take - 1, |a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        by_dist[..take].sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let v = by_dist[..take].iter().fold(Vec3::zero(), |acc, &(_, j)| acc + particles.velocities[j])
            .scale(T::one() / T::lit(take as f64));
        out.positions.push(c);
        out.velocities.push(v);
        out.deformation.push(Mat3::identity());
        out.volumes.push(mean_volume);
        out.densities.push(mean_density);
        out.masses.push(mean_volume * mean_density);
        out.tags.push(particles.tags[by_dist[0].1]);
    }
    let second = bind(kernels, &out.positions, tau_bind)?;
    debug_assert!(second.empty_rows().is_empty());
    Ok((out, second))
}

/// Projects a symmetric matrix onto eigenvalues `>= floor`.
fn spd_floor<T: Real>(a: &Mat3<T>, floor: T) -> Mat3<T> {
    let s = a.sym();
    let (eig, v) = s.sym_eigen();
    if eig.0.iter().all(|&e| e >= floor) {
        return s;
    }
    let clamped = Vec3(eig.0.map(|e| e.max(floor)));
    v * Mat3::diag(clamped) * v.transpose()
}

/// One step of kernel transport: centers follow the bound particles'
/// displacement, covariances become `F̄ A0 F̄ᵀ` with `F̄` the bound average.
pub fn deform_kernels<T: Real>(
    kernels: &GaussianKernelSet<T>,
    binding: &BindingMatrix,
    p_t: &[Vec3<T>],
    p_next: &[Vec3<T>],
    f_next: &[Mat3<T>],
    rest_covariances: &[Mat3<T>],
) -> Result<GaussianKernelSet<T>> {
    if binding.kernels() != kernels.len()
        || rest_covariances.len() != kernels.len()
        || p_t.len() != binding.particles
        || p_next.len() != binding.particles
        || f_next.len() != binding.particles
    {
        return Err(Error::Argument("binding, kernel and particle dimensions do not match".into()));
    }
    let disp: Vec<Vec3<T>> = p_next.iter().zip(p_t).map(|(a, b)| *a - *b).collect();
    let dx = binding.apply_vec(&disp);
    let fbar = binding.apply_mat(f_next);
    let mut out = kernels.clone();
    for k in 0..kernels.len() {
        out.centers[k] = kernels.centers[k] + dx[k];
        out.covariances[k] = spd_floor(&(fbar[k] * rest_covariances[k] * fbar[k].transpose()), T::lit(1e-12));
    }
    Ok(out)
}

/// Kernels of a bound scene at an arbitrary particle state.
#[derive(Clone, Debug)]
pub struct BoundKernels<T> {
    pub rest: GaussianKernelSet<T>,
    pub binding: BindingMatrix,
    pub rest_positions: Vec<Vec3<T>>,
}

impl<T: Real> BoundKernels<T> {
    pub fn new(rest: GaussianKernelSet<T>, binding: BindingMatrix, rest_positions: Vec<Vec3<T>>) -> Result<Self> {
        if binding.kernels() != rest.len() || binding.particles != rest_positions.len() {
            return Err(Error::Argument("binding does not match kernels and particles".into()));
        }
        Ok(Self { rest, binding, rest_positions })
    }

    /// `x = x0 + B (p - p0)`, `A = F̄ A0 F̄ᵀ`; without the eigenvalue floor
    /// so that the map stays smooth for differentiation.
    pub fn at(&self, positions: &[Vec3<T>], deformation: &[Mat3<T>]) -> GaussianKernelSet<T> {
        let disp: Vec<Vec3<T>> = positions.iter().zip(&self.rest_positions).map(|(a, b)| *a - *b).collect();
        let dx = self.binding.apply_vec(&disp);
        let fbar = self.binding.apply_mat(deformation);
        let mut out = self.rest.clone();
        for k in 0..out.len() {
            out.centers[k] = self.rest.centers[k] + dx[k];
            out.covariances[k] = (fbar[k] * self.rest.covariances[k] * fbar[k].transpose()).sym();
        }
        out
    }

    /// Pulls kernel-center and covariance gradients back to particles.
    pub fn pull_back(
        &self,
        deformation: &[Mat3<T>],
        grad: &KernelGrad<T>,
        into: &mut StateGrad<T>,
        through_covariance: bool,
    ) {
        let fbar = if through_covariance { self.binding.apply_mat(deformation) } else { Vec::new() };
        for (k, row) in self.binding.rows.iter().enumerate() {
            let gf = if through_covariance {
                let s = grad.covariances[k].sym();
                (s * fbar[k] * self.rest.covariances[k]).scale(T::lit(2.0))
            } else {
                Mat3::zero()
            };
            for &(j, w) in row {
                let w = T::lit(w);
                into.positions[j] += grad.centers[k].scale(w);
                if through_covariance {
                    into.deformation[j] += gf.scale(w);
                }
            }
        }
    }
}

/// How kernels are attached to particles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingMode {
    /// Chi-squared test with two-pass coverage.
    #[default]
    Mahalanobis,
    /// One kernel per particle (`K = N`, identity binding). Each kernel takes
    /// the covariance, color and opacity of the nearest input kernel.
    Identity,
}

/// Binds `kernels` to `particles` and returns the (possibly augmented)
/// particle set with the bound kernels at rest.
pub fn bind_scene<T: Real>(
    kernels: &GaussianKernelSet<T>,
    particles: &ParticleSet<T>,
    tau_bind: f64,
    mode: BindingMode,
) -> Result<(ParticleSet<T>, BoundKernels<T>)> {
    match mode {
        BindingMode::Mahalanobis => {
            let (ps, b) = ensure_coverage(kernels, particles, tau_bind)?;
            let bound = BoundKernels::new(kernels.clone(), b, ps.positions.clone())?;
            Ok((ps, bound))
        }
        BindingMode::Identity => {
            if kernels.is_empty() {
                return Err(Error::Argument("identity binding needs at least one template kernel".into()));
            }
            let mut rest = GaussianKernelSet {
                centers: particles.positions.clone(),
                opacities: Vec::with_capacity(particles.len()),
                covariances: Vec::with_capacity(particles.len()),
                colors: Vec::with_capacity(particles.len()),
            };
            for p in &particles.positions {
                let (k, _) = kernels.centers.iter().enumerate().fold((0, T::infinity()), |best, (k, c)| {
                    let d = (*c - *p).norm_squared();
                    if d < best.1 {
                        (k, d)
                    } else {
                        best
                    }
                });
                rest.opacities.push(kernels.opacities[k]);
                rest.covariances.push(kernels.covariances[k]);
                rest.colors.push(kernels.colors[k]);
            }
            let bound = BoundKernels::new(rest, BindingMatrix::identity(particles.len()), particles.positions.clone())?;
            Ok((particles.clone(), bound))
        }
    }
}

/// Mean squared image error against reference frames `1..=horizon`.
pub struct PixelLoss<T> {
    pub kernels: BoundKernels<T>,
    pub camera: Camera,
    pub background: [T; 3],
    pub reference: Vec<Image<T>>,
    pub horizon: usize,
    /// When false, covariance changes do not feed gradients into `F`.
    pub through_covariance: bool,
}

impl<T: Real> PixelLoss<T> {
    pub fn render(&self, state: &ParticleSet<T>) -> Image<T> {
        let k = self.kernels.at(&state.positions, &state.deformation);
        splat(&k, &self.camera, self.background)
    }
}

impl<T: Real> TrajectoryLoss<T> for PixelLoss<T> {
    fn frame_loss(&self, frame: usize, state: &ParticleSet<T>, grad: Option<&mut StateGrad<T>>) -> Result<T> {
        if frame == 0 || frame > self.horizon {
            return Ok(T::zero());
        }
        let target = self
            .reference
            .get(frame)
            .ok_or_else(|| Error::Argument(format!("no reference image for frame {frame}")))?;
        let kernels = self.kernels.at(&state.positions, &state.deformation);
        let img = splat(&kernels, &self.camera, self.background);
        let scale = T::one() / T::lit(self.horizon as f64);
        let loss = image_loss(&img, target)? * scale;
        if let Some(g) = grad {
            let mut pix = image_loss_grad(&img, target)?;
            pix.iter_mut().for_each(|p| *p = p.map(|c| c * scale));
            let kg = splat_backward(&kernels, &self.camera, self.background, &pix);
            self.kernels.pull_back(&state.deformation, &kg, g, self.through_covariance);
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests;
