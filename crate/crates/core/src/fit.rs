//! Fitting adapters and initial velocities to reference motion, evaluation
//! metrics, and the experiments that reuse a fitted material.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constitutive::lora::{flatten_grad, flatten_net, unflatten_net, DEFAULT_ALPHA, DEFAULT_RANK};
use crate::constitutive::{compose_material, ElasticModel, MaterialAdapter, MaterialModel, PlasticModel};
use crate::diff::{grad_rollout, rollout_loss, ParticleMse, RolloutSpec, StateGrad, TrajectoryLoss};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::mpm::{simulate, simulate_with, Trajectory};
use crate::optim::{cosine_lr, Adam};
use crate::particle_gs::{image_loss, BindingMode, Image, PixelLoss, DEFAULT_TAU_BIND};
use crate::scalar::Real;
use crate::scene::{ParticleSet, SceneConfig};

/// Multiplier applied to Chamfer distances in reports.
pub const REPORT_SCALE: f64 = 1e4;
/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Uniform hash grid answering nearest-neighbour queries by growing shells.
struct NearestGrid<'a> {
    points: &'a [[f64; 3]],
    cell: f64,
    lo: [i64; 3],
    hi: [i64; 3],
    buckets: HashMap<[i64; 3], Vec<u32>>,
}

impl<'a> NearestGrid<'a> {
    fn new(points: &'a [[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let ext = (0..3).map(|k| hi[k] - lo[k]).fold(0.0f64, f64::max);
        let cell = if ext > 0.0 { ext / (points.len() as f64).cbrt() } else { 1.0 };
        let mut buckets: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        let klo = Self::key(&lo, cell);
        let khi = Self::key(&hi, cell);
        Self { points, cell, lo: klo, hi: khi, buckets }
    }

    fn key(p: &[f64; 3], cell: f64) -> [i64; 3] {
        p.map(|c| (c / cell).floor() as i64)
    }

    fn nearest_sq(&self, q: &[f64; 3]) -> f64 {
        let c = Self::key(q, self.cell);
        // Occupied cells lie in [lo, hi]; shells are clipped to that box.
        let off_lo: [i64; 3] = std::array::from_fn(|k| self.lo[k] - c[k]);
        let off_hi: [i64; 3] = std::array::from_fn(|k| self.hi[k] - c[k]);
        let start = (0..3).map(|k| off_lo[k].max(-off_hi[k]).max(0)).max().unwrap_or(0);
        let reach = (0..3).map(|k| off_lo[k].abs().max(off_hi[k].abs())).max().unwrap_or(0);
        let mut best = f64::INFINITY;
        let visit = |i: i64, j: i64, k: i64, best: &mut f64| {
            if let Some(b) = self.buckets.get(&[c[0] + i, c[1] + j, c[2] + k]) {
                for &idx in b {
                    let p = &self.points[idx as usize];
                    let d = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>();
                    if d < *best {
                        *best = d;
                    }
                }
            }
        };
        for r in start..=reach {
            let range = |a: usize| off_lo[a].max(-r)..=off_hi[a].min(r);
            for i in range(0) {
                for j in range(1) {
                    if i.abs() == r || j.abs() == r {
                        for k in range(2) {
                            visit(i, j, k, &mut best);
                        }
                    } else {
                        if range(2).contains(&-r) {
                            visit(i, j, -r, &mut best);
                        }
                        if r > 0 && range(2).contains(&r) {
                            visit(i, j, r, &mut best);
                        }
                    }
                }
            }
            // Every point in shell r + 1 is at least r cells away.
            let bound = r as f64 * self.cell;
            if best <= bound * bound {
                break;
            }
        }
        best
    }
}

fn one_sided(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let grid = NearestGrid::new(to);
    let d: Vec<f64> = from.par_iter().map(|q| grid.nearest_sq(q)).collect();
    d.iter().sum::<f64>() / from.len() as f64
}

/// Symmetric mean of squared nearest-neighbour distances, times `scale`.
pub fn chamfer<T: Real>(x: &[Vec3<T>], y: &[Vec3<T>], scale: f64) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Argument("chamfer distance needs two non-empty point sets".into()));
    }
    let xs: Vec<[f64; 3]> = x.iter().map(|p| p.to_f64()).collect();
    let ys: Vec<[f64; 3]> = y.iter().map(|p| p.to_f64()).collect();
    Ok((one_sided(&xs, &ys) + one_sided(&ys, &xs)) * scale)
}

/// `10 log10(1 / MSE)` for unit-range images, capped at [`PSNR_CAP`].
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    let mse = image_loss(a, b)?.to_f64_lossy();
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Per-frame Chamfer (scaled by `scale`) between two trajectories' positions.
pub fn chamfer_curve<T: Real>(pred: &Trajectory<T>, gt: &Trajectory<T>, scale: f64) -> Result<Vec<f64>> {
    if pred.frames.len() != gt.frames.len() {
        return Err(Error::Argument(format!("{} predicted frames vs {} reference frames", pred.frames.len(), gt.frames.len())));
    }
    pred.frames.iter().zip(&gt.frames).map(|(a, b)| chamfer(&a.positions, &b.positions, scale)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionKind {
    #[default]
    Particles,
    Pixels,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// Train the base network weights directly instead of an adapter.
    NoAdapter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Final learning rate as a fraction of the initial one.
    pub lr_floor: f64,
    pub supervision: SupervisionKind,
    /// Saved frames entering the loss; `None` uses the whole reference.
    pub horizon: Option<usize>,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub rank: usize,
    pub alpha: f64,
    pub ablation: Ablation,
    /// Side length of rendered supervision images.
    pub image_size: usize,
    pub binding: BindingMode,
    pub tau_bind: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            learning_rate: 1e-3,
            lr_floor: 0.0,
            supervision: SupervisionKind::Particles,
            horizon: None,
            checkpoint_every: 20,
            seed: 0,
            rank: DEFAULT_RANK,
            alpha: DEFAULT_ALPHA,
            ablation: Ablation::None,
            image_size: 64,
            binding: BindingMode::Mahalanobis,
            tau_bind: DEFAULT_TAU_BIND,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == Some(0) {
            return Err(Error::Argument("horizon must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || !(0.0..=1.0).contains(&self.lr_floor) {
            return Err(Error::Argument("learning rate must be finite and non-negative, floor in [0, 1]".into()));
        }
        if self.checkpoint_every == 0 || self.rank == 0 || self.image_size == 0 {
            return Err(Error::Argument("checkpoint interval, rank and image size must be positive".into()));
        }
        if !(self.tau_bind > 0.0 && self.tau_bind < 1.0) {
            return Err(Error::Argument(format!("tau_bind {} must lie in (0, 1)", self.tau_bind)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
    /// `[elastic, plastic]` gradient norm per material.
    pub grad_norms: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    /// Scaled by [`REPORT_SCALE`].
    pub chamfer: Option<f64>,
    pub psnr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub iterations: Vec<IterationRecord>,
    pub frames: Vec<FrameRecord>,
}

impl MetricsLog {
    pub fn push(&mut self, rec: IterationRecord) {
        debug_assert!(self.iterations.last().map_or(true, |l| l.iteration < rec.iteration));
        self.iterations.push(rec);
    }

    /// One JSON object per line per iteration.
    pub fn iterations_text(&self) -> String {
        let mut out = String::new();
        for r in &self.iterations {
            out.push_str(&serde_json::to_string(r).expect("plain record"));
            out.push('\n');
        }
        out
    }

    /// Tab-separated `frame chamfer psnr`, `-` for missing values.
    pub fn frames_text(&self) -> String {
        let mut out = String::from("frame\tchamfer\tpsnr\n");
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        for r in &self.frames {
            let _ = writeln!(out, "{}\t{}\t{}", r.frame, f(r.chamfer), f(r.psnr));
        }
        out
    }

    pub fn write(&self, iterations: &Path, frames: &Path) -> Result<()> {
        std::fs::write(iterations, self.iterations_text())?;
        std::fs::write(frames, self.frames_text())?;
        Ok(())
    }

    pub fn mean_chamfer(&self) -> Option<f64> {
        let v: Vec<f64> = self.frames.iter().filter_map(|r| r.chamfer).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Reference motion the fit is scored against.
pub enum Supervision<'a, T> {
    /// Saved frames of a reference rollout with matching particles.
    Particles(&'a Trajectory<T>),
    /// Rendered frames; `gt` optionally enables Chamfer reporting.
    Pixels { loss: &'a PixelLoss<T>, gt: Option<&'a Trajectory<T>> },
}

impl<'a, T: Real> Supervision<'a, T> {
    fn loss(&self, horizon: Option<usize>) -> Result<(Box<dyn TrajectoryLoss<T> + 'a>, usize)> {
        match *self {
            Supervision::Particles(t) => {
                let h = horizon.unwrap_or(t.frames.len().saturating_sub(1));
                Ok((Box::new(ParticleMse::new(t, h)?), h))
            }
            Supervision::Pixels { loss, .. } => {
                let h = horizon.unwrap_or(loss.horizon);
                if h == 0 || h > loss.horizon {
                    return Err(Error::Argument(format!("horizon {h} outside 1..={}", loss.horizon)));
                }
                Ok((Box::new(Truncated { inner: loss, horizon: h }), h))
            }
        }
    }

    fn gt(&self) -> Option<&'a Trajectory<T>> {
        match *self {
            Supervision::Particles(t) => Some(t),
            Supervision::Pixels { gt, .. } => gt,
        }
    }
}

/// Drops frames after `horizon`.
struct Truncated<'a, T> {
    inner: &'a dyn TrajectoryLoss<T>,
    horizon: usize,
}

impl<T: Real> TrajectoryLoss<T> for Truncated<'_, T> {
    fn frame_loss(&self, frame: usize, state: &ParticleSet<T>, grad: Option<&mut StateGrad<T>>) -> Result<T> {
        if frame > self.horizon {
            return Ok(T::zero());
        }
        self.inner.frame_loss(frame, state, grad)
    }
}

#[derive(Clone, Debug)]
pub struct FitResult<T> {
    /// Base material with the trained adapter attached at `w = α/r` (or the
    /// directly trained base under [`Ablation::NoAdapter`]).
    pub material: MaterialModel<T>,
    pub adapter: MaterialAdapter<T>,
    pub log: MetricsLog,
}

fn net_params<T: Real>(m: &MaterialModel<T>) -> Vec<T> {
    let mut out = Vec::new();
    if let ElasticModel::Neural(n) = &m.elastic {
        out.extend(flatten_net(&n.net));
    }
    if let PlasticModel::Neural(n) = &m.plastic {
        out.extend(flatten_net(&n.net));
    }
    out
}

fn set_net_params<T: Real>(m: &mut MaterialModel<T>, flat: &[T]) {
    let mut offset = 0;
    if let ElasticModel::Neural(n) = &mut m.elastic {
        let len = n.net.param_count();
        unflatten_net(&mut n.net, &flat[offset..offset + len]);
        offset += len;
    }
    if let PlasticModel::Neural(n) = &mut m.plastic {
        let len = n.net.param_count();
        unflatten_net(&mut n.net, &flat[offset..offset + len]);
    }
}

/// Trains an adapter on `base` (or, under the no-adapter ablation, the base
/// weights) so that rolling out `initial` reproduces the supervision.
pub fn fit_adapter<T: Real>(
    initial: &ParticleSet<T>,
    scene: &SceneConfig,
    base: &MaterialModel<T>,
    supervision: &Supervision<'_, T>,
    cfg: &FitConfig,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    scene.validate()?;
    let (loss, horizon) = supervision.loss(cfg.horizon)?;
    let spec = RolloutSpec { steps: horizon * scene.substeps, save_every: scene.substeps, checkpoint_every: cfg.checkpoint_every };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train_base = cfg.ablation == Ablation::NoAdapter;
    let mut adapter = if train_base {
        MaterialAdapter::default()
    } else {
        MaterialAdapter::for_material(base, cfg.rank, T::lit(cfg.alpha), &mut rng)
    };
    if !train_base && adapter.elastic.is_none() && adapter.plastic.is_none() {
        return Err(Error::Argument("the base material has no neural network to adapt".into()));
    }
    let weight = T::lit(cfg.alpha / cfg.rank as f64);
    let mut base_model = base.clone();
    let mut params = if train_base { net_params(base) } else { adapter.flatten() };
    if params.is_empty() {
        return Err(Error::Argument("the base material has no trainable network weights".into()));
    }
    let mut opt = Adam::new(params.len());
    let mut log = MetricsLog::default();
    let compose = |adapter: &MaterialAdapter<T>, base_model: &MaterialModel<T>| -> Result<MaterialModel<T>> {
        if train_base {
            Ok(base_model.clone())
        } else {
            compose_material(base_model, adapter, weight)
        }
    };
    for it in 0..cfg.iterations {
        let material = compose(&adapter, &base_model)?;
        let report = grad_rollout(loss.as_ref(), initial, std::slice::from_ref(&material), scene, &spec)
            .map_err(|e| training_error(it, e))?;
        if !report.is_finite() {
            return Err(Error::Training(format!("non-finite gradient at iteration {it}")));
        }
        let grad: Vec<T> = if train_base {
            let g = &report.materials[0];
            g.elastic.iter().chain(&g.plastic).flat_map(flatten_grad).collect()
        } else {
            report.adapters[0].flatten()
        };
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient at iteration {it}")));
        }
        let lr = cosine_lr(cfg.learning_rate, it, cfg.iterations, cfg.lr_floor);
        let (e, p) = report.norms(0);
        log.push(IterationRecord { iteration: it, loss: report.loss.to_f64_lossy(), lr, grad_norms: vec![[e, p]] });
        if it % 10 == 0 || it + 1 == cfg.iterations {
            log::info!("iteration {it}: loss {:.6e}, lr {lr:.3e}, |g| ({e:.3e}, {p:.3e})", report.loss.to_f64_lossy());
        }
        opt.step(&mut params, &grad, T::lit(lr));
        if train_base {
            set_net_params(&mut base_model, &params);
        } else {
            adapter.unflatten(&params);
        }
    }
    let material = compose(&adapter, &base_model)?;
    log.frames = evaluate_frames(initial, scene, &material, supervision)?;
    Ok(FitResult { material, adapter, log })
}

fn training_error(iteration: usize, e: Error) -> Error {
    if e.is_numerical() {
        Error::Training(format!("iteration {iteration}: {e}"))
    } else {
        e
    }
}

/// Per-frame Chamfer and PSNR of the rollout under `material` over the full
/// length of the supervision.
pub fn evaluate_frames<T: Real>(
    initial: &ParticleSet<T>,
    scene: &SceneConfig,
    material: &MaterialModel<T>,
    supervision: &Supervision<'_, T>,
) -> Result<Vec<FrameRecord>> {
    let frames = match supervision {
        Supervision::Particles(t) => t.frames.len(),
        Supervision::Pixels { loss, gt } => gt.map_or(loss.reference.len(), |t| t.frames.len().min(loss.reference.len())),
    };
    if frames < 2 {
        return Ok(Vec::new());
    }
    let pred = simulate(initial, std::slice::from_ref(material), scene, (frames - 1) * scene.substeps, scene.substeps)?;
    let mut out = Vec::with_capacity(frames);
    for (f, frame) in pred.frames.iter().enumerate() {
        let chamfer = match supervision.gt() {
            Some(gt) => Some(chamfer(&frame.positions, &gt.frames[f].positions, REPORT_SCALE)?),
            None => None,
        };
        let psnr = match supervision {
            Supervision::Pixels { loss, .. } => {
                let state = ParticleSet {
                    positions: frame.positions.clone(),
                    deformation: frame.deformation.clone(),
                    ..initial.clone()
                };
                Some(psnr(&loss.render(&state), &loss.reference[f])?)
            }
            Supervision::Particles(_) => None,
        };
        out.push(FrameRecord { frame: f, chamfer, psnr });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VelocityFitConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub lr_floor: f64,
    /// Saved frames entering the loss.
    pub frames_used: usize,
    pub initial_guess: [f64; 3],
    pub checkpoint_every: usize,
}

impl Default for VelocityFitConfig {
    fn default() -> Self {
        Self { iterations: 100, learning_rate: 0.1, lr_floor: 0.01, frames_used: 5, initial_guess: [0.0; 3], checkpoint_every: 20 }
    }
}

/// Fits one velocity shared by every particle over the first frames while
/// the material stays fixed. Returns the velocity and its loss.
pub fn fit_initial_velocity<T: Real>(
    initial: &ParticleSet<T>,
    scene: &SceneConfig,
    material: &MaterialModel<T>,
    supervision: &Supervision<'_, T>,
    cfg: &VelocityFitConfig,
) -> Result<(Vec3<T>, f64)> {
    if cfg.frames_used == 0 || cfg.checkpoint_every == 0 {
        return Err(Error::Argument("frames_used and checkpoint_every must be positive".into()));
    }
    let (loss, horizon) = supervision.loss(Some(cfg.frames_used))?;
    let spec = RolloutSpec { steps: horizon * scene.substeps, save_every: scene.substeps, checkpoint_every: cfg.checkpoint_every };
    let mut v = cfg.initial_guess.map(T::lit);
    let mut state = initial.clone();
    let mut opt = Adam::new(3);
    for it in 0..cfg.iterations {
        state.set_velocity(Vec3(v));
        let report = grad_rollout(loss.as_ref(), &state, std::slice::from_ref(material), scene, &spec)
            .map_err(|e| training_error(it, e))?;
        let g = report.rigid_velocity();
        if !report.loss.is_finite() || !g.is_finite() {
            return Err(Error::Training(format!("non-finite velocity fit at iteration {it}")));
        }
        let lr = cosine_lr(cfg.learning_rate, it, cfg.iterations, cfg.lr_floor);
        if it % 10 == 0 {
            log::info!("velocity iteration {it}: loss {:.6e}, v {:?}", report.loss.to_f64_lossy(), Vec3(v).to_f64());
        }
        opt.step(&mut v, &g.0, T::lit(lr));
    }
    state.set_velocity(Vec3(v));
    let l = rollout_loss(loss.as_ref(), &state, std::slice::from_ref(material), scene, &spec)?;
    Ok((Vec3(v), l.to_f64_lossy()))
}

/// One rollout per composition weight.
pub fn interpolate_dynamics<T: Real>(
    base: &MaterialModel<T>,
    adapter: &MaterialAdapter<T>,
    weights: &[f64],
    initial: &ParticleSet<T>,
    scene: &SceneConfig,
    steps: usize,
) -> Result<Vec<Trajectory<T>>> {
    weights
        .iter()
        .map(|&w| {
            let m = compose_material(base, adapter, T::lit(w))?;
            simulate(initial, std::slice::from_ref(&m), scene, steps, scene.substeps)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TransferReport<T> {
    pub trajectory: Trajectory<T>,
    /// Smallest `det F` seen on any step.
    pub min_det: f64,
    pub max_cfl: f64,
}

/// Plain rollout of a frozen material on a new initial condition.
pub fn transfer<T: Real>(
    material: &MaterialModel<T>,
    initial: &ParticleSet<T>,
    scene: &SceneConfig,
    steps: usize,
) -> Result<TransferReport<T>> {
    let mut min_det = f64::INFINITY;
    let mut max_cfl = 0.0f64;
    let trajectory = simulate_with(initial, std::slice::from_ref(material), scene, steps, scene.substeps, |_, d| {
        min_det = min_det.min(d.min_det);
        max_cfl = max_cfl.max(d.cfl);
    })?;
    if !(min_det > 0.0) {
        return Err(Error::Inversion { index: 0, det: min_det });
    }
    Ok(TransferReport { trajectory, min_det, max_cfl })
}

/// Merges objects into one particle set tagged by object index.
///
/// Objects overlap when some particle lies closer to another object than
/// half the finer of the two particle spacings.
pub fn compose_scene<T: Real>(objects: &[(ParticleSet<T>, MaterialModel<T>)]) -> Result<(ParticleSet<T>, Vec<MaterialModel<T>>)> {
    if objects.is_empty() {
        return Err(Error::Argument("no objects to compose".into()));
    }
    let spacing = |ps: &ParticleSet<T>| -> f64 {
        let v: f64 = ps.volumes.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / ps.len().max(1) as f64;
        v.cbrt()
    };
    for (i, (a, _)) in objects.iter().enumerate() {
        a.validate()?;
        if a.is_empty() {
            return Err(Error::Argument(format!("object {i} has no particles")));
        }
        for (j, (b, _)) in objects.iter().enumerate().skip(i + 1) {
            let pa: Vec<[f64; 3]> = a.positions.iter().map(|p| p.to_f64()).collect();
            let pb: Vec<[f64; 3]> = b.positions.iter().map(|p| p.to_f64()).collect();
            let grid = NearestGrid::new(&pb);
            let closest = pa.iter().map(|q| grid.nearest_sq(q)).fold(f64::INFINITY, f64::min).sqrt();
            let limit = 0.5 * spacing(a).min(spacing(b));
            if closest < limit {
                return Err(Error::Geometry(format!("objects {i} and {j} overlap (closest particles {closest:.3e} apart)")));
            }
        }
    }
    let mut merged = objects[0].0.clone();
    merged.tags.iter_mut().for_each(|t| *t = 0);
    for (i, (ps, _)) in objects.iter().enumerate().skip(1) {
        let mut p = ps.clone();
        p.tags.iter_mut().for_each(|t| *t = i as u32);
        merged.extend(&p);
    }
    Ok((merged, objects.iter().map(|(_, m)| m.clone()).collect()))
}

#[cfg(test)]
mod tests;
