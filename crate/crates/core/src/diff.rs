//! Reverse-mode derivatives of whole rollouts.
//!
//! The forward pass stores a full particle state every `checkpoint_every`
//! steps. The backward pass walks the segments in reverse, re-simulates the
//! states inside each segment from its checkpoint, and runs a hand-written
//! adjoint for every step. Loss terms attach to saved frames through
//! [`TrajectoryLoss`].

use crate::constitutive::{
    AdapterGrad, ElasticModel, MaterialGrad, MaterialModel, MlpGrad, PlasticModel,
};
use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::mpm::{Grid, Simulator, Stencil, TagGroups};
use crate::scalar::Real;
use crate::scene::{ParticleSet, SceneConfig, Transfer};

/// Adjoint (or loss gradient) of a particle state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateGrad<T> {
    pub positions: Vec<Vec3<T>>,
    pub velocities: Vec<Vec3<T>>,
    pub deformation: Vec<Mat3<T>>,
}

impl<T: Real> StateGrad<T> {
    pub fn zeros(n: usize) -> Self {
        Self { positions: vec![Vec3::zero(); n], velocities: vec![Vec3::zero(); n], deformation: vec![Mat3::zero(); n] }
    }

    fn is_finite(&self) -> bool {
        self.positions.iter().all(|v| v.is_finite())
            && self.velocities.iter().all(|v| v.is_finite())
            && self.deformation.iter().all(|m| m.is_finite())
    }
}

/// A loss that sums per-frame terms over the saved states of a rollout.
pub trait TrajectoryLoss<T: Real> {
    /// Loss of saved frame `frame` (the state after `frame * save_every`
    /// steps). When `grad` is given, adds the derivative with respect to the
    /// state into it.
    fn frame_loss(&self, frame: usize, state: &ParticleSet<T>, grad: Option<&mut StateGrad<T>>) -> Result<T>;
}

/// Mean squared particle displacement from a reference trajectory, averaged
/// over frames `1..=horizon`.
#[derive(Clone, Debug)]
pub struct ParticleMse<T> {
    pub reference: Vec<Vec<Vec3<T>>>,
    pub horizon: usize,
}

impl<T: Real> ParticleMse<T> {
    pub fn new(reference: &crate::mpm::Trajectory<T>, horizon: usize) -> Result<Self> {
        if horizon == 0 || horizon >= reference.frames.len() {
            return Err(Error::Argument(format!(
                "horizon {horizon} must lie in 1..{} for this reference",
                reference.frames.len()
            )));
        }
        Ok(Self { reference: reference.frames.iter().map(|f| f.positions.clone()).collect(), horizon })
    }
}

impl<T: Real> TrajectoryLoss<T> for ParticleMse<T> {
    fn frame_loss(&self, frame: usize, state: &ParticleSet<T>, grad: Option<&mut StateGrad<T>>) -> Result<T> {
        if frame == 0 || frame > self.horizon {
            return Ok(T::zero());
        }
        let target = &self.reference[frame];
        if target.len() != state.len() {
            return Err(Error::Argument("reference and simulated particle counts differ".into()));
        }
        let scale = T::one() / T::lit((state.len() * self.horizon) as f64);
        let mut loss = T::zero();
        for (p, q) in state.positions.iter().zip(target) {
            loss += (*p - *q).norm_squared();
        }
        if let Some(g) = grad {
            for (i, (p, q)) in state.positions.iter().zip(target).enumerate() {
                g.positions[i] += (*p - *q).scale(T::lit(2.0) * scale);
            }
        }
        Ok(loss * scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RolloutSpec {
    pub steps: usize,
    pub save_every: usize,
    pub checkpoint_every: usize,
}

impl RolloutSpec {
    pub fn new(steps: usize, save_every: usize) -> Self {
        Self { steps, save_every, checkpoint_every: 20 }
    }

    fn validate(&self) -> Result<()> {
        if self.save_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::Argument("save_every and checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    fn frame_at(&self, step: usize) -> Option<usize> {
        (step % self.save_every == 0).then_some(step / self.save_every)
    }
}

/// Gradients of one material's adapters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterGrads<T> {
    pub elastic: Option<AdapterGrad<T>>,
    pub plastic: Option<AdapterGrad<T>>,
}

impl<T: Real> AdapterGrads<T> {
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        if let Some(g) = &self.elastic {
            out.extend(g.flatten());
        }
        if let Some(g) = &self.plastic {
            out.extend(g.flatten());
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct GradientReport<T> {
    pub loss: T,
    pub frame_losses: Vec<T>,
    /// `∂L/∂v₀` per particle.
    pub initial_velocity: Vec<Vec3<T>>,
    /// `∂L/∂x₀` per particle.
    pub initial_position: Vec<Vec3<T>>,
    /// Gradients with respect to the composed network weights (equal to the
    /// base-weight gradients).
    pub materials: Vec<MaterialGrad<T>>,
    pub adapters: Vec<AdapterGrads<T>>,
    /// Largest number of full particle states held at once.
    pub peak_states: usize,
}

impl<T: Real> GradientReport<T> {
    /// Derivative with respect to a velocity shared by every particle.
    pub fn rigid_velocity(&self) -> Vec3<T> {
        self.initial_velocity.iter().fold(Vec3::zero(), |a, b| a + *b)
    }

    /// `(elastic, plastic)` gradient norms of material `m` with respect to
    /// the trained parameters (adapter factors when present).
    pub fn norms(&self, m: usize) -> (f64, f64) {
        let a = &self.adapters[m];
        let g = &self.materials[m];
        let e = match (&a.elastic, &g.elastic) {
            (Some(ad), _) => ad.norm().to_f64_lossy(),
            (None, Some(w)) => w.norm_squared().to_f64_lossy().sqrt(),
            _ => 0.0,
        };
        let p = match (&a.plastic, &g.plastic) {
            (Some(ad), _) => ad.norm().to_f64_lossy(),
            (None, Some(w)) => w.norm_squared().to_f64_lossy().sqrt(),
            _ => 0.0,
        };
        (e, p)
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self.initial_velocity.iter().all(|v| v.is_finite())
            && self.materials.iter().all(|g| g.is_finite())
    }
}

/// Loss of a rollout without gradients.
pub fn rollout_loss<T: Real>(
    loss: &dyn TrajectoryLoss<T>,
    initial: &ParticleSet<T>,
    materials: &[MaterialModel<T>],
    cfg: &SceneConfig,
    spec: &RolloutSpec,
) -> Result<T> {
    spec.validate()?;
    initial.validate()?;
    let sim = Simulator::new(cfg, materials)?;
    let groups = sim.groups(initial)?;
    let mut ps = initial.clone();
    let mut grid = Grid::new(sim.n);
    let mut total = loss.frame_loss(0, &ps, None)?;
    for s in 0..spec.steps {
        sim.step_grouped(&mut ps, &mut grid, None, &groups).map_err(|e| e.at_step(s))?;
        if let Some(f) = spec.frame_at(s + 1) {
            total += loss.frame_loss(f, &ps, None)?;
        }
    }
    Ok(total)
}

/// Loss and exact reverse-mode gradients of a rollout.
pub fn grad_rollout<T: Real>(
    loss: &dyn TrajectoryLoss<T>,
    initial: &ParticleSet<T>,
    materials: &[MaterialModel<T>],
    cfg: &SceneConfig,
    spec: &RolloutSpec,
) -> Result<GradientReport<T>> {
    spec.validate()?;
    initial.validate()?;
    if cfg.transfer == Transfer::Apic {
        return Err(Error::Unsupported("gradients are implemented for the velocity-only transfer".into()));
    }
    let sim = Simulator::new(cfg, materials)?;
    let groups = sim.groups(initial)?;
    let k = spec.checkpoint_every;
    let n = initial.len();

    // Forward pass with checkpoints.
    let mut checkpoints = vec![initial.clone()];
    let mut frame_losses = vec![loss.frame_loss(0, initial, None)?];
    let mut ps = initial.clone();
    let mut grid = Grid::new(sim.n);
    let mut peak = 2;
    for s in 0..spec.steps {
        sim.step_grouped(&mut ps, &mut grid, None, &groups).map_err(|e| e.at_step(s))?;
        if let Some(f) = spec.frame_at(s + 1) {
            frame_losses.push(loss.frame_loss(f, &ps, None)?);
        }
        if (s + 1) % k == 0 && s + 1 < spec.steps {
            checkpoints.push(ps.clone());
            peak = peak.max(checkpoints.len() + 1);
        }
    }
    let total = frame_losses.iter().copied().fold(T::zero(), |a, b| a + b);
    if !total.is_finite() {
        return Err(Error::Differentiation { step: spec.steps, reason: format!("loss is {total}") });
    }

    let mut grads: Vec<MaterialGrad<T>> = sim.materials.iter().map(MaterialGrad::zeros_for).collect();
    let mut adj = StateGrad::zeros(n);
    if spec.steps > 0 {
        if let Some(f) = spec.frame_at(spec.steps) {
            loss.frame_loss(f, &ps, Some(&mut adj))?;
        }
    }
    drop(ps);
    let mut ctx = AdjointWorkspace::new(&sim);
    while let Some(checkpoint) = checkpoints.pop() {
        let seg = checkpoints.len();
        let start = seg * k;
        let end = ((seg + 1) * k).min(spec.steps);
        let mut states = vec![checkpoint];
        while states.len() < end - start {
            let mut next = states[states.len() - 1].clone();
            let s = start + states.len() - 1;
            sim.step_grouped(&mut next, &mut grid, None, &groups).map_err(|e| e.at_step(s))?;
            states.push(next);
        }
        peak = peak.max(checkpoints.len() + states.len());
        for s in (start..end).rev() {
            let state = &states[s - start];
            ctx.backward_step(&sim, &groups, state, &mut adj, &mut grads).map_err(|e| e.at_step(s))?;
            if !adj.is_finite() {
                return Err(Error::Differentiation { step: s, reason: "non-finite adjoint state".into() });
            }
            if let Some(f) = spec.frame_at(s) {
                loss.frame_loss(f, state, Some(&mut adj))?;
            }
        }
    }
    if spec.steps == 0 {
        loss.frame_loss(0, initial, Some(&mut adj))?;
    }

    let adapters = materials
        .iter()
        .zip(&grads)
        .map(|(m, g)| AdapterGrads {
            elastic: match (&m.elastic, &g.elastic) {
                (ElasticModel::Neural(ne), Some(w)) => ne.adapter.as_ref().map(|a| a.pull_back(w, ne.weight)),
                _ => None,
            },
            plastic: match (&m.plastic, &g.plastic) {
                (PlasticModel::Neural(np), Some(w)) => np.adapter.as_ref().map(|a| a.pull_back(w, np.weight)),
                _ => None,
            },
        })
        .collect();
    let report = GradientReport {
        loss: total,
        frame_losses,
        initial_velocity: adj.velocities,
        initial_position: adj.positions,
        materials: grads,
        adapters,
        peak_states: peak,
    };
    if !report.is_finite() {
        return Err(Error::Differentiation { step: 0, reason: "non-finite parameter gradient".into() });
    }
    Ok(report)
}

/// Scratch buffers reused across backward steps.
struct AdjointWorkspace<T> {
    grid: Grid<T>,
    /// Pre-projection grid velocities.
    u: Vec<Vec3<T>>,
    u_bar: Vec<Vec3<T>>,
    q_bar: Vec<Vec3<T>>,
    m_bar: Vec<T>,
}

impl<T: Real> AdjointWorkspace<T> {
    fn new(sim: &Simulator<T>) -> Self {
        let len = sim.n * sim.n * sim.n;
        Self {
            grid: Grid::new(sim.n),
            u: vec![Vec3::zero(); len],
            u_bar: vec![Vec3::zero(); len],
            q_bar: vec![Vec3::zero(); len],
            m_bar: vec![T::zero(); len],
        }
    }

    /// Replaces `adj` (adjoint of the state after the step) by the adjoint
    /// of `state`, accumulating parameter gradients.
    fn backward_step(
        &mut self,
        sim: &Simulator<T>,
        groups: &TagGroups,
        state: &ParticleSet<T>,
        adj: &mut StateGrad<T>,
        grads: &mut [MaterialGrad<T>],
    ) -> Result<()> {
        let n = state.len();
        let dt = sim.dt;
        let stress = sim.stresses(state, groups)?;
        let stencils: Vec<Stencil<T>> = sim.stencils(&state.positions)?;
        let grid = &mut self.grid;
        sim.p2g(state, &stress, &stencils, None, grid);
        let eps = sim.mass_epsilon(state);
        for idx in 0..grid.mass.len() {
            let m = grid.mass[idx];
            if m < eps || m <= T::zero() {
                self.u[idx] = Vec3::zero();
                grid.velocity[idx] = Vec3::zero();
                continue;
            }
            let u = (grid.momentum[idx] + grid.force[idx].scale(dt)).scale(T::one() / m);
            self.u[idx] = u;
            grid.velocity[idx] = sim.project_node(idx, u);
        }
        let (_, lgrad) = sim.g2p(&stencils, grid);
        let f_trial: Vec<Mat3<T>> = lgrad
            .iter()
            .zip(&state.deformation)
            .map(|(l, f)| (Mat3::identity() + l.scale(dt)) * *f)
            .collect();

        // Return mapping.
        let ft_bar = vjp_by_group(groups, &f_trial, &adj.deformation, grads, |m, f, g, grad| {
            sim.materials[m].plastic.project_vjp_batch(f, g, grad.plastic.as_mut())
        });

        // Position update and trial deformation.
        let mut p_bar = adj.positions.clone();
        let v_new_bar: Vec<Vec3<T>> =
            adj.velocities.iter().zip(&adj.positions).map(|(v, p)| *v + p.scale(dt)).collect();
        let mut f_bar: Vec<Mat3<T>> = Vec::with_capacity(n);
        let mut l_bar: Vec<Mat3<T>> = Vec::with_capacity(n);
        for i in 0..n {
            let a = Mat3::identity() + lgrad[i].scale(dt);
            f_bar.push(a.transpose() * ft_bar[i]);
            l_bar.push((ft_bar[i] * state.deformation[i].transpose()).scale(dt));
        }

        // Gather.
        self.u_bar.iter_mut().for_each(|v| *v = Vec3::zero());
        for (i, s) in stencils.iter().enumerate() {
            let vb = v_new_bar[i];
            let lb = l_bar[i];
            let mut pb = Vec3::zero();
            s.for_each_node(sim.n, |idx, a, b, c| {
                let w = s.weight(a, b, c);
                let gw = s.gradient(a, b, c);
                let ub = grid.velocity[idx];
                self.u_bar[idx] += vb.scale(w) + lb.mul_vec(gw);
                pb += gw.scale(ub.dot(vb)) + s.hessian(a, b, c).mul_vec(lb.tr_mul_vec(ub));
            });
            p_bar[i] += pb;
        }

        // Grid update.
        for idx in 0..grid.mass.len() {
            let m = grid.mass[idx];
            if m < eps || m <= T::zero() {
                self.q_bar[idx] = Vec3::zero();
                self.m_bar[idx] = T::zero();
                continue;
            }
            let ub = sim.project_node_vjp(idx, self.u[idx], self.u_bar[idx]);
            let inv = T::one() / m;
            self.q_bar[idx] = ub.scale(inv);
            self.m_bar[idx] = -ub.dot(self.u[idx]) * inv;
        }

        // Scatter.
        let mut v_bar: Vec<Vec3<T>> = Vec::with_capacity(n);
        let mut tau_bar: Vec<Mat3<T>> = Vec::with_capacity(n);
        for (i, s) in stencils.iter().enumerate() {
            let mass = state.masses[i];
            let vol = state.volumes[i];
            let v = state.velocities[i];
            let tau = stress[i];
            let mut vb = Vec3::zero();
            let mut tb = Mat3::zero();
            let mut pb = Vec3::zero();
            s.for_each_node(sim.n, |idx, a, b, c| {
                let w = s.weight(a, b, c);
                let gw = s.gradient(a, b, c);
                let qb = self.q_bar[idx];
                vb += qb.scale(w * mass);
                tb += qb.outer(gw);
                let coeff = mass * (qb.dot(v) + dt * qb.dot(sim.gravity) + self.m_bar[idx]);
                pb += gw.scale(coeff) - s.hessian(a, b, c).mul_vec(tau.tr_mul_vec(qb)).scale(dt * vol);
            });
            v_bar.push(vb);
            tau_bar.push(tb.scale(-dt * vol));
            p_bar[i] += pb;
        }

        // Stress.
        let f_el_bar = vjp_by_group(groups, &state.deformation, &tau_bar, grads, |m, f, g, grad| {
            sim.materials[m].elastic.stress_vjp_batch(f, g, grad.elastic.as_mut())
        });
        for i in 0..n {
            f_bar[i] += f_el_bar[i];
        }

        adj.positions = p_bar;
        adj.velocities = v_bar;
        adj.deformation = f_bar;
        Ok(())
    }
}

fn vjp_by_group<T: Real>(
    groups: &TagGroups,
    f: &[Mat3<T>],
    g: &[Mat3<T>],
    grads: &mut [MaterialGrad<T>],
    mut kernel: impl FnMut(usize, &[Mat3<T>], &[Mat3<T>], &mut MaterialGrad<T>) -> Vec<Mat3<T>>,
) -> Vec<Mat3<T>> {
    if groups.uniform {
        let m = groups.groups.iter().position(|x| !x.is_empty()).unwrap_or(0);
        return kernel(m, f, g, &mut grads[m]);
    }
    let mut out = vec![Mat3::zero(); f.len()];
    for (m, idx) in groups.groups.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let fs: Vec<Mat3<T>> = idx.iter().map(|&i| f[i]).collect();
        let gs: Vec<Mat3<T>> = idx.iter().map(|&i| g[i]).collect();
        let res = kernel(m, &fs, &gs, &mut grads[m]);
        for (k, r) in res.into_iter().enumerate() {
            out[idx[k]] = r;
        }
    }
    out
}

/// Which network of a material a coordinate refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Net {
    Elastic,
    Plastic,
}

/// A scalar input of a rollout, for finite-difference checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coordinate {
    Velocity { particle: usize, axis: usize },
    /// The same offset applied to every particle's initial velocity.
    RigidVelocity { axis: usize },
    AdapterA { material: usize, net: Net, layer: usize, index: usize },
    AdapterB { material: usize, net: Net, layer: usize, index: usize },
    Weight { material: usize, net: Net, layer: usize, index: usize },
    Bias { material: usize, net: Net, layer: usize, index: usize },
}

impl<T: Real> GradientReport<T> {
    /// The reverse-mode derivative for `c`.
    pub fn get(&self, c: &Coordinate) -> T {
        match *c {
            Coordinate::Velocity { particle, axis } => self.initial_velocity[particle].0[axis],
            Coordinate::RigidVelocity { axis } => self.rigid_velocity().0[axis],
            Coordinate::AdapterA { material, net, layer, index } => {
                adapter_grad(&self.adapters[material], net).map_or(T::zero(), |g| g.layers[layer].a[index])
            }
            Coordinate::AdapterB { material, net, layer, index } => {
                adapter_grad(&self.adapters[material], net).map_or(T::zero(), |g| g.layers[layer].b[index])
            }
            Coordinate::Weight { material, net, layer, index } => {
                mlp_grad(&self.materials[material], net).map_or(T::zero(), |g| g.layers[layer].weight[index])
            }
            Coordinate::Bias { material, net, layer, index } => {
                mlp_grad(&self.materials[material], net).map_or(T::zero(), |g| g.layers[layer].bias[index])
            }
        }
    }
}

fn adapter_grad<T>(a: &AdapterGrads<T>, net: Net) -> Option<&AdapterGrad<T>> {
    match net {
        Net::Elastic => a.elastic.as_ref(),
        Net::Plastic => a.plastic.as_ref(),
    }
}

fn mlp_grad<T>(g: &MaterialGrad<T>, net: Net) -> Option<&MlpGrad<T>> {
    match net {
        Net::Elastic => g.elastic.as_ref(),
        Net::Plastic => g.plastic.as_ref(),
    }
}

fn perturb<T: Real>(
    initial: &mut ParticleSet<T>,
    materials: &mut [MaterialModel<T>],
    c: &Coordinate,
    delta: T,
) -> Result<()> {
    let missing = || Error::Argument(format!("coordinate {c:?} does not exist in this setup"));
    match *c {
        Coordinate::Velocity { particle, axis } => {
            initial.velocities.get_mut(particle).ok_or_else(missing)?.0[axis] += delta
        }
        Coordinate::RigidVelocity { axis } => initial.velocities.iter_mut().for_each(|v| v.0[axis] += delta),
        Coordinate::AdapterA { material, net, layer, index } | Coordinate::AdapterB { material, net, layer, index } => {
            let m = materials.get_mut(material).ok_or_else(missing)?;
            let ad = match (net, &mut m.elastic, &mut m.plastic) {
                (Net::Elastic, ElasticModel::Neural(e), _) => e.adapter.as_mut(),
                (Net::Plastic, _, PlasticModel::Neural(p)) => p.adapter.as_mut(),
                _ => None,
            }
            .ok_or_else(missing)?;
            let l = ad.layers.get_mut(layer).ok_or_else(missing)?;
            let v = if matches!(c, Coordinate::AdapterA { .. }) { &mut l.a } else { &mut l.b };
            *v.get_mut(index).ok_or_else(missing)? += delta;
        }
        Coordinate::Weight { material, net, layer, index } | Coordinate::Bias { material, net, layer, index } => {
            let m = materials.get_mut(material).ok_or_else(missing)?;
            let mlp = match (net, &mut m.elastic, &mut m.plastic) {
                (Net::Elastic, ElasticModel::Neural(e), _) => Some(&mut e.net),
                (Net::Plastic, _, PlasticModel::Neural(p)) => Some(&mut p.net),
                _ => None,
            }
            .ok_or_else(missing)?;
            let l = mlp.layers.get_mut(layer).ok_or_else(missing)?;
            let v = if matches!(c, Coordinate::Weight { .. }) { &mut l.weight } else { &mut l.bias };
            *v.get_mut(index).ok_or_else(missing)? += delta;
        }
    }
    Ok(())
}

/// Central differences `(L(x + h) - L(x - h)) / 2h` for each coordinate.
pub fn finite_diff_oracle<T: Real>(
    loss: &dyn TrajectoryLoss<T>,
    initial: &ParticleSet<T>,
    materials: &[MaterialModel<T>],
    cfg: &SceneConfig,
    spec: &RolloutSpec,
    coordinates: &[Coordinate],
    h: T,
) -> Result<Vec<T>> {
    coordinates
        .iter()
        .map(|c| {
            let eval = |delta: T| -> Result<T> {
                let mut ps = initial.clone();
                let mut ms = materials.to_vec();
                perturb(&mut ps, &mut ms, c, delta)?;
                rollout_loss(loss, &ps, &ms, cfg, spec)
            };
            Ok((eval(h)? - eval(-h)?) / (T::lit(2.0) * h))
        })
        .collect()
}
