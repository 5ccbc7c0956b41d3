//! Particles, Gaussian kernels, scene configuration, and the built-in
//! drop-test benchmarks.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constitutive::{ElasticModel, MaterialModel, PlasticModel};
use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

/// Default density (kg/m³).
pub const DEFAULT_DENSITY: f64 = 1000.0;
/// Distance kept between sampled shapes and the unit-cube faces: two cells
/// of the default 32³ grid.
pub const SAFE_MARGIN: f64 = 2.0 / 32.0;

/// Simulation state: one entry per material point.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet<T> {
    pub positions: Vec<Vec3<T>>,
    pub velocities: Vec<Vec3<T>>,
    /// Elastic deformation gradients.
    pub deformation: Vec<Mat3<T>>,
    pub masses: Vec<T>,
    pub volumes: Vec<T>,
    pub densities: Vec<T>,
    /// Index of the material each particle uses (see `compose_scene`).
    pub tags: Vec<u32>,
}

impl<T: Real> ParticleSet<T> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_mass(&self) -> T {
        self.masses.iter().copied().sum()
    }

    pub fn total_momentum(&self) -> Vec3<T> {
        self.velocities.iter().zip(&self.masses).fold(Vec3::zero(), |acc, (v, m)| acc + v.scale(*m))
    }

    pub fn center_of_mass(&self) -> Vec3<T> {
        let total = self.total_mass();
        self.positions.iter().zip(&self.masses).fold(Vec3::zero(), |acc, (p, m)| acc + p.scale(*m / total))
    }

    pub fn mean_height(&self) -> T {
        self.positions.iter().map(|p| p.y()).sum::<T>() / T::lit(self.len() as f64)
    }

    pub fn set_velocity(&mut self, v: Vec3<T>) {
        self.velocities.iter_mut().for_each(|x| *x = v);
    }

    pub fn translate(&mut self, d: Vec3<T>) {
        self.positions.iter_mut().for_each(|p| *p += d);
    }

    /// Checks array lengths, positive masses, and `det F > 0`.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if [
            self.velocities.len(),
            self.deformation.len(),
            self.masses.len(),
            self.volumes.len(),
            self.densities.len(),
            self.tags.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return Err(Error::Argument("particle arrays have inconsistent lengths".into()));
        }
        for i in 0..n {
            if !(self.masses[i] > T::zero()) || !(self.volumes[i] > T::zero()) {
                return Err(Error::Argument(format!("particle {i} has non-positive mass or volume")));
            }
            let d = self.deformation[i].det();
            if !(d > T::zero()) {
                return Err(Error::Inversion { index: i, det: d.to_f64_lossy() });
            }
        }
        Ok(())
    }

    /// Errors unless every particle keeps `margin` from the unit-cube faces.
    pub fn check_margin(&self, margin: f64) -> Result<()> {
        for (i, p) in self.positions.iter().enumerate() {
            let q = p.to_f64();
            if q.iter().any(|&c| !(c >= margin && c <= 1.0 - margin)) {
                return Err(Error::OutOfDomain { index: i, position: q });
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParticleSet<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect();
        ParticleSet {
            positions: self.positions.iter().map(|p| p.cast()).collect(),
            velocities: self.velocities.iter().map(|p| p.cast()).collect(),
            deformation: self.deformation.iter().map(|p| p.cast()).collect(),
            masses: c(&self.masses),
            volumes: c(&self.volumes),
            densities: c(&self.densities),
            tags: self.tags.clone(),
        }
    }

    /// Appends `other`, keeping its tags.
    pub fn extend(&mut self, other: &ParticleSet<T>) {
        self.positions.extend_from_slice(&other.positions);
        self.velocities.extend_from_slice(&other.velocities);
        self.deformation.extend_from_slice(&other.deformation);
        self.masses.extend_from_slice(&other.masses);
        self.volumes.extend_from_slice(&other.volumes);
        self.densities.extend_from_slice(&other.densities);
        self.tags.extend_from_slice(&other.tags);
    }
}

/// Isotropic-at-rest Gaussian kernels with constant color.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernelSet<T> {
    pub centers: Vec<Vec3<T>>,
    pub opacities: Vec<T>,
    pub covariances: Vec<Mat3<T>>,
    pub colors: Vec<[T; 3]>,
}

impl<T: Real> GaussianKernelSet<T> {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.len();
        if self.opacities.len() != k || self.covariances.len() != k || self.colors.len() != k {
            return Err(Error::Argument("kernel arrays have inconsistent lengths".into()));
        }
        for i in 0..k {
            let a = self.opacities[i];
            if !(a >= T::zero() && a <= T::one()) {
                return Err(Error::Argument(format!("kernel {i} opacity {a} outside [0, 1]")));
            }
            if self.covariances[i].cholesky().is_none() {
                return Err(Error::Geometry(format!("kernel {i} covariance is not positive definite")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> GaussianKernelSet<U> {
        let c = |x: T| U::lit(x.to_f64_lossy());
        GaussianKernelSet {
            centers: self.centers.iter().map(|p| p.cast()).collect(),
            opacities: self.opacities.iter().map(|&a| c(a)).collect(),
            covariances: self.covariances.iter().map(|a| a.cast()).collect(),
            colors: self.colors.iter().map(|col| col.map(c)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    #[default]
    Slip,
    Sticky,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryConfig {
    /// Floor plane height (m); `None` puts it at two cell widths.
    pub floor_height: Option<f64>,
    pub kind: BoundaryKind,
    /// Coulomb coefficient applied to the tangential velocity on contact.
    pub friction: f64,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self { floor_height: None, kind: BoundaryKind::Slip, friction: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transfer {
    /// Velocity-only transfer.
    #[default]
    Pic,
    /// Affine-augmented transfer; forward simulation only.
    Apic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Cells per axis over the unit cube.
    pub grid_resolution: usize,
    pub gravity: [f64; 3],
    pub boundary: BoundaryConfig,
    pub dt: f64,
    /// Steps between saved frames.
    pub substeps: usize,
    pub transfer: Transfer,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 32,
            gravity: [0.0, -9.8, 0.0],
            boundary: BoundaryConfig::default(),
            dt: 1e-3,
            substeps: 1,
            transfer: Transfer::Pic,
        }
    }
}

impl SceneConfig {
    pub fn cell_width(&self) -> f64 {
        1.0 / self.grid_resolution as f64
    }

    pub fn floor_height(&self) -> f64 {
        self.boundary.floor_height.unwrap_or(2.0 * self.cell_width())
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_resolution < 8 {
            return Err(Error::Argument(format!("grid resolution {} below 8", self.grid_resolution)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Argument(format!("time step {} must be positive", self.dt)));
        }
        if self.substeps == 0 {
            return Err(Error::Argument("substeps must be at least 1".into()));
        }
        let floor = self.floor_height();
        if !(0.0..1.0).contains(&floor) {
            return Err(Error::Argument(format!("floor height {floor} outside the domain")));
        }
        if !(self.boundary.friction >= 0.0) {
            return Err(Error::Argument("friction coefficient must be non-negative".into()));
        }
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return Err(Error::Argument("gravity must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ShapeSpec {
    Sphere { center: [f64; 3], radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
    /// Ellipsoid with semi-axes `radii` aligned to the coordinate axes.
    Ellipsoid { center: [f64; 3], radii: [f64; 3] },
    Union { parts: Vec<ShapeSpec> },
    /// Points read from an `NMPTS01` file; `volume` is the body volume they fill.
    Points { path: PathBuf, volume: f64 },
}

impl ShapeSpec {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            ShapeSpec::Sphere { center, radius } => {
                (0..3).map(|k| (p[k] - center[k]).powi(2)).sum::<f64>() <= radius * radius
            }
            ShapeSpec::Box { min, max } => (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]),
            ShapeSpec::Ellipsoid { center, radii } => {
                (0..3).map(|k| ((p[k] - center[k]) / radii[k]).powi(2)).sum::<f64>() <= 1.0
            }
            ShapeSpec::Union { parts } => parts.iter().any(|s| s.contains(p)),
            ShapeSpec::Points { .. } => false,
        }
    }

    /// Axis-aligned bounds; `None` for point lists (known only after loading).
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        match self {
            ShapeSpec::Sphere { center, radius } => {
                Some((center.map(|c| c - radius), center.map(|c| c + radius)))
            }
            ShapeSpec::Box { min, max } => Some((*min, *max)),
            ShapeSpec::Ellipsoid { center, radii } => {
                Some((std::array::from_fn(|k| center[k] - radii[k]), std::array::from_fn(|k| center[k] + radii[k])))
            }
            ShapeSpec::Union { parts } => parts.iter().try_fold(
                ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]),
                |(lo, hi), s| {
                    let (a, b) = s.bounds()?;
                    Some((std::array::from_fn(|k| lo[k].min(a[k])), std::array::from_fn(|k| hi[k].max(b[k]))))
                },
            ),
            ShapeSpec::Points { .. } => None,
        }
    }

    /// Body volume: closed form for primitives, midpoint quadrature on a
    /// 160³ lattice for unions.
    pub fn volume(&self) -> f64 {
        match self {
            ShapeSpec::Sphere { radius, .. } => 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3),
            ShapeSpec::Box { min, max } => (0..3).map(|k| (max[k] - min[k]).max(0.0)).product(),
            ShapeSpec::Ellipsoid { radii, .. } => 4.0 / 3.0 * std::f64::consts::PI * radii[0] * radii[1] * radii[2],
            ShapeSpec::Union { parts } => {
                if parts.len() == 1 {
                    return parts[0].volume();
                }
                let Some((lo, hi)) = self.bounds() else { return 0.0 };
                const RES: usize = 160;
                let step: [f64; 3] = std::array::from_fn(|k| (hi[k] - lo[k]) / RES as f64);
                let mut inside = 0usize;
                for i in 0..RES {
                    for j in 0..RES {
                        for k in 0..RES {
                            let p = [
                                lo[0] + (i as f64 + 0.5) * step[0],
                                lo[1] + (j as f64 + 0.5) * step[1],
                                lo[2] + (k as f64 + 0.5) * step[2],
                            ];
                            if self.contains(p) {
                                inside += 1;
                            }
                        }
                    }
                }
                inside as f64 * step[0] * step[1] * step[2]
            }
            ShapeSpec::Points { volume, .. } => *volume,
        }
    }

    pub fn translated(&self, d: [f64; 3]) -> ShapeSpec {
        let add = |p: &[f64; 3]| std::array::from_fn(|k| p[k] + d[k]);
        match self {
            ShapeSpec::Sphere { center, radius } => ShapeSpec::Sphere { center: add(center), radius: *radius },
            ShapeSpec::Box { min, max } => ShapeSpec::Box { min: add(min), max: add(max) },
            ShapeSpec::Ellipsoid { center, radii } => ShapeSpec::Ellipsoid { center: add(center), radii: *radii },
            ShapeSpec::Union { parts } => ShapeSpec::Union { parts: parts.iter().map(|s| s.translated(d)).collect() },
            ShapeSpec::Points { .. } => self.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ShapeSpec::Sphere { radius, .. } if !(*radius > 0.0) => {
                Err(Error::Argument(format!("sphere radius {radius} must be positive")))
            }
            ShapeSpec::Box { min, max } if (0..3).any(|k| !(max[k] > min[k])) => {
                Err(Error::Argument("box max must exceed min on every axis".into()))
            }
            ShapeSpec::Ellipsoid { radii, .. } if radii.iter().any(|r| !(*r > 0.0)) => {
                Err(Error::Argument("ellipsoid radii must be positive".into()))
            }
            ShapeSpec::Union { parts } if parts.is_empty() => Err(Error::Argument("empty union".into())),
            ShapeSpec::Union { parts } => parts.iter().try_for_each(|s| s.validate()),
            ShapeSpec::Points { volume, .. } if !(*volume > 0.0) => {
                Err(Error::Argument("point-list volume must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

fn check_bounds_margin(lo: [f64; 3], hi: [f64; 3], margin: f64) -> Result<()> {
    if (0..3).any(|k| lo[k] < margin || hi[k] > 1.0 - margin) {
        return Err(Error::Domain(format!(
            "shape bounds {lo:?}..{hi:?} leave the safe region [{margin}, {}]³",
            1.0 - margin
        )));
    }
    Ok(())
}

/// Uniformly fills `shape` with exactly `target_count` points (fewer only for
/// point lists shorter than the request).
///
/// A jittered lattice fine enough to hold the request is laid over the
/// bounding box; a seeded subsample of the points that land inside keeps the
/// density uniform.
pub fn sample_volume(shape: &ShapeSpec, target_count: usize, seed: u64) -> Result<Vec<Vec3<f64>>> {
    if target_count == 0 {
        return Err(Error::Argument("target count must be at least 1".into()));
    }
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if let ShapeSpec::Points { path, .. } = shape {
        let mut pts = crate::io::read_points(path)?;
        for (i, p) in pts.iter().enumerate() {
            if p.0.iter().any(|&c| !(SAFE_MARGIN..=1.0 - SAFE_MARGIN).contains(&c)) {
                return Err(Error::Domain(format!("imported point {i} at {:?} leaves the safe region", p.0)));
            }
        }
        if pts.len() > target_count {
            pts.shuffle(&mut rng);
            pts.truncate(target_count);
        }
        return Ok(pts);
    }
    let (lo, hi) = shape.bounds().expect("primitive shapes have bounds");
    check_bounds_margin(lo, hi, SAFE_MARGIN)?;
    let ext: [f64; 3] = std::array::from_fn(|k| hi[k] - lo[k]);
    let fill = shape.volume() / (ext[0] * ext[1] * ext[2]);
    let mut h = (shape.volume() / (1.25 * target_count as f64)).cbrt();
    loop {
        let cells: [usize; 3] = std::array::from_fn(|k| ((ext[k] / h).ceil() as usize).max(1));
        let cell: [f64; 3] = std::array::from_fn(|k| ext[k] / cells[k] as f64);
        let mut pts = Vec::with_capacity((cells[0] * cells[1] * cells[2]) as usize);
        for i in 0..cells[0] {
            for j in 0..cells[1] {
                for k in 0..cells[2] {
                    let p = [
                        lo[0] + (i as f64 + rng.gen::<f64>()) * cell[0],
                        lo[1] + (j as f64 + rng.gen::<f64>()) * cell[1],
                        lo[2] + (k as f64 + rng.gen::<f64>()) * cell[2],
                    ];
                    if shape.contains(p) {
                        pts.push(Vec3(p));
                    }
                }
            }
        }
        if pts.len() >= target_count {
            let (chosen, _) = pts.partial_shuffle(&mut rng, target_count);
            let mut out = chosen.to_vec();
            // Restore lattice order so neighbouring indices stay spatially close.
            out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
            return Ok(out);
        }
        if fill <= 0.0 || h < 1e-6 {
            return Err(Error::Geometry("shape too thin to hold the requested particle count".into()));
        }
        h *= 0.9;
    }
}

/// Rest state: equal volumes `total_volume / N`, `M = ρ V0`, zero velocity,
/// identity deformation. `densities` holds one value or one per particle.
pub fn init_rest_state<T: Real>(positions: &[Vec3<T>], densities: &[T], total_volume: T) -> Result<ParticleSet<T>> {
    let n = positions.len();
    if n == 0 {
        return Err(Error::Argument("no particles".into()));
    }
    if !(total_volume > T::zero()) {
        return Err(Error::Argument(format!("total volume {total_volume} must be positive")));
    }
    let rho: Vec<T> = match densities.len() {
        1 => vec![densities[0]; n],
        l if l == n => densities.to_vec(),
        l => return Err(Error::Argument(format!("{l} densities for {n} particles"))),
    };
    if let Some(bad) = rho.iter().find(|r| !(**r > T::zero())) {
        return Err(Error::Argument(format!("density {bad} must be positive")));
    }
    let v0 = total_volume / T::lit(n as f64);
    Ok(ParticleSet {
        positions: positions.to_vec(),
        velocities: vec![Vec3::zero(); n],
        deformation: vec![Mat3::identity(); n],
        masses: rho.iter().map(|&r| r * v0).collect(),
        volumes: vec![v0; n],
        densities: rho,
        tags: vec![0; n],
    })
}

/// One isotropic kernel `radius² I` per point.
pub fn synth_kernels<T: Real>(positions: &[Vec3<T>], radius: T, color: [T; 3], opacity: T) -> Result<GaussianKernelSet<T>> {
    if !(radius > T::zero()) {
        return Err(Error::Argument(format!("kernel radius {radius} must be positive")));
    }
    if !(opacity >= T::zero() && opacity <= T::one()) {
        return Err(Error::Argument(format!("opacity {opacity} outside [0, 1]")));
    }
    let k = positions.len();
    Ok(GaussianKernelSet {
        centers: positions.to_vec(),
        opacities: vec![opacity; k],
        covariances: vec![Mat3::scaled_identity(radius * radius); k],
        colors: vec![color; k],
    })
}

/// Lamé parameters `(μ, λ)` from Young's modulus and Poisson's ratio.
pub fn lame(youngs: f64, poisson: f64) -> (f64, f64) {
    let mu = youngs / (2.0 * (1.0 + poisson));
    let lambda = youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    (mu, lambda)
}

/// Names accepted by [`make_benchmark`].
pub const BENCHMARKS: [&str; 6] = [
    "bouncy-ball",
    "jelly-duck-analog",
    "rubber-pawn-analog",
    "clay-cat-analog",
    "honey-bottle-analog",
    "sand-fish-analog",
];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkOptions {
    pub particles: usize,
    /// Every `kernel_stride`-th particle seeds a Gaussian kernel.
    pub kernel_stride: usize,
    pub seed: u64,
    pub grid_resolution: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self { particles: 4000, kernel_stride: 2, seed: 0, grid_resolution: 32 }
    }
}

/// A drop-onto-floor scene with its ground-truth material.
#[derive(Clone, Debug)]
pub struct Benchmark<T> {
    pub name: String,
    pub config: SceneConfig,
    pub shape: ShapeSpec,
    pub particles: ParticleSet<T>,
    pub kernels: GaussianKernelSet<T>,
    pub material: MaterialModel<T>,
    pub initial_velocity: [f64; 3],
    /// Suggested rollout length.
    pub steps: usize,
}

struct Preset {
    dt: f64,
    speed: f64,
    /// Height of the shape's center above the floor (m).
    height: f64,
    color: [f64; 3],
    /// Shape centered at the origin.
    shape: ShapeSpec,
    elastic: ElasticModel<f64>,
    plastic: PlasticModel<f64>,
    steps: usize,
}

fn preset(name: &str) -> Result<Preset> {
    let sphere = |c: [f64; 3], r: f64| ShapeSpec::Sphere { center: c, radius: r };
    Ok(match name {
        "bouncy-ball" => {
            let (mu, lambda) = lame(1e5, 0.3);
            Preset {
                dt: 1e-3,
                speed: 1.92,
                height: 0.28,
                color: [0.85, 0.2, 0.2],
                shape: sphere([0.0; 3], 0.1),
                elastic: ElasticModel::NeoHookean { mu, lambda },
                plastic: PlasticModel::Identity,
                steps: 400,
            }
        }
        "jelly-duck-analog" => {
            let (mu, lambda) = lame(4e4, 0.35);
            Preset {
                dt: 1e-3,
                speed: 1.62,
                height: 0.42,
                color: [0.95, 0.8, 0.2],
                shape: ShapeSpec::Union {
                    parts: vec![
                        ShapeSpec::Ellipsoid { center: [0.0, -0.03, 0.0], radii: [0.12, 0.07, 0.08] },
                        sphere([0.07, 0.06, 0.0], 0.05),
                    ],
                },
                elastic: ElasticModel::NeoHookean { mu, lambda },
                plastic: PlasticModel::Identity,
                steps: 400,
            }
        }
        "rubber-pawn-analog" => {
            let (mu, lambda) = lame(2e5, 0.4);
            Preset {
                dt: 5e-4,
                speed: 1.57,
                height: 0.39,
                color: [0.2, 0.3, 0.85],
                shape: ShapeSpec::Union {
                    parts: vec![
                        ShapeSpec::Box { min: [-0.08, -0.1, -0.08], max: [0.08, -0.05, 0.08] },
                        ShapeSpec::Ellipsoid { center: [0.0, -0.01, 0.0], radii: [0.05, 0.06, 0.05] },
                        sphere([0.0, 0.07, 0.0], 0.045),
                    ],
                },
                elastic: ElasticModel::FixedCorotated { mu, lambda },
                plastic: PlasticModel::Identity,
                steps: 800,
            }
        }
        "clay-cat-analog" => {
            let (mu, lambda) = lame(2e5, 0.3);
            Preset {
                dt: 5e-4,
                speed: 2.11,
                height: 0.32,
                color: [0.75, 0.55, 0.4],
                shape: sphere([0.0; 3], 0.1),
                elastic: ElasticModel::NeoHookean { mu, lambda },
                plastic: PlasticModel::VonMises { yield_stress: 3e3, mu },
                steps: 800,
            }
        }
        "honey-bottle-analog" => {
            let (mu, lambda) = lame(5e4, 0.45);
            Preset {
                dt: 5e-4,
                speed: 1.19,
                height: 0.42,
                color: [0.9, 0.6, 0.1],
                shape: ShapeSpec::Union {
                    parts: vec![
                        ShapeSpec::Box { min: [-0.06, -0.1, -0.06], max: [0.06, 0.04, 0.06] },
                        ShapeSpec::Box { min: [-0.025, 0.04, -0.025], max: [0.025, 0.1, 0.025] },
                    ],
                },
                elastic: ElasticModel::FixedCorotated { mu, lambda },
                plastic: PlasticModel::VonMises { yield_stress: 5e2, mu },
                steps: 800,
            }
        }
        "sand-fish-analog" => {
            let (mu, lambda) = lame(2e5, 0.3);
            Preset {
                dt: 5e-4,
                speed: 0.69,
                height: 0.28,
                color: [0.85, 0.75, 0.5],
                shape: ShapeSpec::Union {
                    parts: vec![
                        ShapeSpec::Ellipsoid { center: [0.0, 0.0, 0.0], radii: [0.12, 0.06, 0.04] },
                        ShapeSpec::Box { min: [-0.17, -0.04, -0.01], max: [-0.11, 0.04, 0.01] },
                    ],
                },
                elastic: ElasticModel::StVK { mu, lambda },
                plastic: PlasticModel::DruckerPrager { friction_angle: 30.0, mu, lambda },
                steps: 800,
            }
        }
        other => return Err(Error::Catalog(other.to_string())),
    })
}

/// Builds a named benchmark with default options.
pub fn make_benchmark<T: Real>(name: &str) -> Result<Benchmark<T>> {
    make_benchmark_with(name, &BenchmarkOptions::default())
}

pub fn make_benchmark_with<T: Real>(name: &str, opts: &BenchmarkOptions) -> Result<Benchmark<T>> {
    let p = preset(name)?;
    let config = SceneConfig { grid_resolution: opts.grid_resolution, dt: p.dt, substeps: 10, ..Default::default() };
    config.validate()?;
    let floor = config.floor_height();
    let shape = p.shape.translated([0.5, floor + p.height, 0.5]);
    let initial_velocity = [0.0, -p.speed, 0.0];
    let (particles, kernels) = build_object(&shape, opts, p.color, initial_velocity)?;
    Ok(Benchmark {
        name: name.to_string(),
        config,
        shape,
        particles,
        kernels,
        material: MaterialModel::new(p.elastic, p.plastic).cast(),
        initial_velocity,
        steps: p.steps,
    })
}

/// Samples `shape`, assigns the rest state and velocity, and derives kernels
/// from every `kernel_stride`-th particle with radius 0.6 × particle spacing.
pub fn build_object<T: Real>(
    shape: &ShapeSpec,
    opts: &BenchmarkOptions,
    color: [f64; 3],
    velocity: [f64; 3],
) -> Result<(ParticleSet<T>, GaussianKernelSet<T>)> {
    let pts = sample_volume(shape, opts.particles, opts.seed)?;
    let pts_t: Vec<Vec3<T>> = pts.iter().map(|p| p.cast()).collect();
    let volume = shape.volume();
    let mut particles = init_rest_state(&pts_t, &[T::lit(DEFAULT_DENSITY)], T::lit(volume))?;
    particles.set_velocity(Vec3::from_f64(velocity));
    let spacing = (volume / pts.len() as f64).cbrt();
    let seeds: Vec<Vec3<T>> = pts_t.iter().step_by(opts.kernel_stride.max(1)).copied().collect();
    let kernels = synth_kernels(&seeds, T::lit(0.6 * spacing), color.map(T::lit), T::lit(0.9))?;
    Ok((particles, kernels))
}
