//! Explicit MPM time stepping on a uniform grid over the unit cube.
//!
//! Each step evaluates stresses, scatters mass, momentum and forces to the
//! grid with quadratic B-spline weights, advances and constrains grid
//! velocities, gathers velocities and velocity gradients back, moves the
//! particles, and finally applies the return mapping.

use crate::constitutive::{MaterialModel, PreparedMaterial};
use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;
use crate::scene::{BoundaryKind, ParticleSet, SceneConfig, Transfer};

/// Quadratic B-spline weights of one particle over its 3×3×3 node block.
#[derive(Clone, Copy, Debug)]
pub struct Stencil<T> {
    pub base: [usize; 3],
    /// Per-axis weights.
    pub w: [[T; 3]; 3],
    /// Per-axis first derivatives with respect to position.
    pub dw: [[T; 3]; 3],
    /// Per-axis second derivatives.
    pub ddw: [[T; 3]; 3],
}

impl<T: Real> Stencil<T> {
    /// `None` when the block would leave the grid.
    pub fn new(p: Vec3<T>, n: usize, inv_h: T) -> Option<Self> {
        let half = T::lit(0.5);
        let mut base = [0usize; 3];
        let mut w = [[T::zero(); 3]; 3];
        let mut dw = [[T::zero(); 3]; 3];
        let mut ddw = [[T::zero(); 3]; 3];
        for a in 0..3 {
            let x = p.0[a] * inv_h;
            let b = (x - half).floor();
            if !(b >= T::zero()) || !b.is_finite() {
                return None;
            }
            let bi = b.to_usize()?;
            if bi + 2 >= n {
                return None;
            }
            base[a] = bi;
            let f = x - b;
            let t0 = T::lit(1.5) - f;
            let t1 = f - T::one();
            let t2 = f - half;
            w[a] = [half * t0 * t0, T::lit(0.75) - t1 * t1, half * t2 * t2];
            dw[a] = [-t0 * inv_h, T::lit(-2.0) * t1 * inv_h, t2 * inv_h];
            ddw[a] = [inv_h * inv_h, T::lit(-2.0) * inv_h * inv_h, inv_h * inv_h];
        }
        Some(Self { base, w, dw, ddw })
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize, k: usize) -> T {
        self.w[0][i] * self.w[1][j] * self.w[2][k]
    }

    #[inline]
    pub fn gradient(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        Vec3([
            self.dw[0][i] * self.w[1][j] * self.w[2][k],
            self.w[0][i] * self.dw[1][j] * self.w[2][k],
            self.w[0][i] * self.w[1][j] * self.dw[2][k],
        ])
    }

    /// Hessian of the node weight with respect to the particle position.
    #[inline]
    pub fn hessian(&self, i: usize, j: usize, k: usize) -> Mat3<T> {
        let (wx, wy, wz) = (self.w[0][i], self.w[1][j], self.w[2][k]);
        let (dx, dy, dz) = (self.dw[0][i], self.dw[1][j], self.dw[2][k]);
        let xy = dx * dy * wz;
        let xz = dx * wy * dz;
        let yz = wx * dy * dz;
        Mat3([
            [self.ddw[0][i] * wy * wz, xy, xz],
            [xy, wx * self.ddw[1][j] * wz, yz],
            [xz, yz, wx * wy * self.ddw[2][k]],
        ])
    }

    /// Visits the 27 nodes as `(flat index, (i, j, k))`.
    #[inline]
    pub fn for_each_node(&self, n: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        for i in 0..3 {
            for j in 0..3 {
                let row = ((self.base[0] + i) * n + self.base[1] + j) * n + self.base[2];
                for k in 0..3 {
                    f(row + k, i, j, k);
                }
            }
        }
    }
}

/// Nodal quantities; node `(i, j, k)` sits at `(i, j, k) · h`.
#[derive(Clone, Debug)]
pub struct Grid<T> {
    pub n: usize,
    pub mass: Vec<T>,
    pub momentum: Vec<Vec3<T>>,
    pub force: Vec<Vec3<T>>,
    pub velocity: Vec<Vec3<T>>,
}

impl<T: Real> Grid<T> {
    pub fn new(n: usize) -> Self {
        let len = n * n * n;
        Self {
            n,
            mass: vec![T::zero(); len],
            momentum: vec![Vec3::zero(); len],
            force: vec![Vec3::zero(); len],
            velocity: vec![Vec3::zero(); len],
        }
    }

    pub fn clear(&mut self) {
        self.mass.iter_mut().for_each(|m| *m = T::zero());
        self.momentum.iter_mut().for_each(|m| *m = Vec3::zero());
        self.force.iter_mut().for_each(|m| *m = Vec3::zero());
        self.velocity.iter_mut().for_each(|m| *m = Vec3::zero());
    }

    pub fn total_mass(&self) -> T {
        self.mass.iter().copied().sum()
    }

    pub fn total_momentum(&self) -> Vec3<T> {
        self.momentum.iter().fold(Vec3::zero(), |a, b| a + *b)
    }

    #[inline]
    pub fn node_coords(&self, idx: usize) -> [usize; 3] {
        [idx / (self.n * self.n), (idx / self.n) % self.n, idx % self.n]
    }
}

/// Per-step summary.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    pub grid_mass: f64,
    pub grid_momentum: [f64; 3],
    pub min_det: f64,
    pub max_speed: f64,
    /// `max|v| · dt / h`.
    pub cfl: f64,
}

/// Saved states of a rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T> {
    pub positions: Vec<Vec3<T>>,
    pub velocities: Vec<Vec3<T>>,
    pub deformation: Vec<Mat3<T>>,
}

impl<T: Real> Frame<T> {
    pub fn of(ps: &ParticleSet<T>) -> Self {
        Self { positions: ps.positions.clone(), velocities: ps.velocities.clone(), deformation: ps.deformation.clone() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub dt: f64,
    pub save_every: usize,
    pub frames: Vec<Frame<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn particle_count(&self) -> usize {
        self.frames.first().map_or(0, |f| f.positions.len())
    }

    pub fn mean_heights(&self) -> Vec<f64> {
        self.frames
            .iter()
            .map(|f| f.positions.iter().map(|p| p.y().to_f64_lossy()).sum::<f64>() / f.positions.len().max(1) as f64)
            .collect()
    }
}

/// Scene constants plus prepared materials; immutable during a rollout.
#[derive(Clone, Debug)]
pub struct Simulator<T> {
    pub cfg: SceneConfig,
    pub materials: Vec<PreparedMaterial<T>>,
    pub n: usize,
    pub h: T,
    pub inv_h: T,
    pub dt: T,
    pub gravity: Vec3<T>,
    pub floor: T,
    pub friction: T,
}

/// Particles of each material tag, in increasing index order.
#[derive(Clone, Debug)]
pub struct TagGroups {
    pub groups: Vec<Vec<usize>>,
    pub uniform: bool,
}

impl TagGroups {
    pub fn new(tags: &[u32], materials: usize) -> Result<Self> {
        let mut groups = vec![Vec::new(); materials];
        for (i, &t) in tags.iter().enumerate() {
            let g = groups
                .get_mut(t as usize)
                .ok_or_else(|| Error::Argument(format!("particle {i} uses material {t}, only {materials} given")))?;
            g.push(i);
        }
        let uniform = groups.iter().filter(|g| !g.is_empty()).count() <= 1;
        Ok(Self { groups, uniform })
    }
}

impl<T: Real> Simulator<T> {
    pub fn new(cfg: &SceneConfig, materials: &[MaterialModel<T>]) -> Result<Self> {
        cfg.validate()?;
        if materials.is_empty() {
            return Err(Error::Argument("at least one material is required".into()));
        }
        let prepared = materials
            .iter()
            .map(|m| {
                m.validate()?;
                m.prepare()
            })
            .collect::<Result<Vec<_>>>()?;
        let n = cfg.grid_resolution;
        Ok(Self {
            cfg: cfg.clone(),
            materials: prepared,
            n,
            h: T::lit(cfg.cell_width()),
            inv_h: T::lit(n as f64),
            dt: T::lit(cfg.dt),
            gravity: Vec3::from_f64(cfg.gravity),
            floor: T::lit(cfg.floor_height()),
            friction: T::lit(cfg.boundary.friction),
        })
    }

    pub(crate) fn groups(&self, ps: &ParticleSet<T>) -> Result<TagGroups> {
        TagGroups::new(&ps.tags, self.materials.len())
    }

    pub fn stencils(&self, positions: &[Vec3<T>]) -> Result<Vec<Stencil<T>>> {
        positions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Stencil::new(*p, self.n, self.inv_h).ok_or(Error::OutOfDomain { index: i, position: p.to_f64() })
            })
            .collect()
    }

    /// Runs a per-material batched kernel over `items`, writing results in place.
    pub(crate) fn dispatch<A: Copy, B: Clone + Default>(
        &self,
        groups: &TagGroups,
        items: &[A],
        mut f: impl FnMut(&PreparedMaterial<T>, &[A], &dyn Fn(usize) -> usize) -> Result<Vec<B>>,
    ) -> Result<Vec<B>> {
        if groups.uniform {
            let m = groups.groups.iter().position(|g| !g.is_empty()).unwrap_or(0);
            return f(&self.materials[m], items, &|i| i);
        }
        let mut out = vec![B::default(); items.len()];
        for (m, idx) in groups.groups.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let sub: Vec<A> = idx.iter().map(|&i| items[i]).collect();
            let res = f(&self.materials[m], &sub, &|k| idx[k])?;
            for (k, r) in res.into_iter().enumerate() {
                out[idx[k]] = r;
            }
        }
        Ok(out)
    }

    pub fn stresses(&self, ps: &ParticleSet<T>, groups: &TagGroups) -> Result<Vec<Mat3<T>>> {
        self.dispatch(groups, &ps.deformation, |m, f, ix| m.elastic.stress_batch(f, ix))
    }

    pub fn plastic(&self, f_trial: &[Mat3<T>], groups: &TagGroups) -> Result<Vec<Mat3<T>>> {
        self.dispatch(groups, f_trial, |m, f, ix| m.plastic.project_batch(f, ix))
    }

    /// Scatters mass, momentum, and forces. `affine` adds the APIC term.
    pub fn p2g(
        &self,
        ps: &ParticleSet<T>,
        stress: &[Mat3<T>],
        stencils: &[Stencil<T>],
        affine: Option<&[Mat3<T>]>,
        grid: &mut Grid<T>,
    ) {
        grid.clear();
        let h = self.h;
        for (i, s) in stencils.iter().enumerate() {
            let m = ps.masses[i];
            let v = ps.velocities[i];
            let stress_term = stress[i].scale(-ps.volumes[i]);
            let gravity_term = self.gravity.scale(m);
            let p = ps.positions[i];
            s.for_each_node(self.n, |idx, a, b, c| {
                let w = s.weight(a, b, c);
                let gw = s.gradient(a, b, c);
                grid.mass[idx] += w * m;
                let mut mv = v;
                if let Some(cm) = affine {
                    let xb = Vec3([
                        T::lit((s.base[0] + a) as f64) * h,
                        T::lit((s.base[1] + b) as f64) * h,
                        T::lit((s.base[2] + c) as f64) * h,
                    ]);
                    mv += cm[i].mul_vec(xb - p);
                }
                grid.momentum[idx] += mv.scale(w * m);
                grid.force[idx] += stress_term.mul_vec(gw) + gravity_term.scale(w);
            });
        }
    }

    pub fn mass_epsilon(&self, ps: &ParticleSet<T>) -> T {
        T::lit(1e-12) * ps.total_mass() / T::lit(ps.len().max(1) as f64)
    }

    /// Contact planes of a node: `(axis, outward-facing normal sign)`.
    #[inline]
    pub(crate) fn planes(&self, c: [usize; 3]) -> [(usize, T); 6] {
        let n = self.n;
        let zero = T::zero();
        let mut out = [(0usize, zero); 6];
        for a in 0..3 {
            let lower = if a == 1 { c[1] < 2 || T::lit(c[1] as f64) * self.h <= self.floor } else { c[a] < 2 };
            if lower {
                out[2 * a] = (a, T::one());
            }
            if c[a] + 2 > n - 1 {
                out[2 * a + 1] = (a, -T::one());
            }
        }
        out
    }

    /// Applies one contact plane with inward normal `sign · e_axis`.
    #[inline]
    pub(crate) fn project_plane(&self, u: Vec3<T>, axis: usize, sign: T) -> Vec3<T> {
        let vn = u.0[axis] * sign;
        if vn >= T::zero() {
            return u;
        }
        match self.cfg.boundary.kind {
            BoundaryKind::Sticky => Vec3::zero(),
            BoundaryKind::Slip => {
                let mut vt = u;
                vt.0[axis] = T::zero();
                if self.friction > T::zero() {
                    let t = vt.norm();
                    let keep = T::one() + self.friction * vn / t;
                    if !(t > T::zero()) || keep <= T::zero() {
                        return Vec3::zero();
                    }
                    vt = vt.scale(keep);
                }
                vt
            }
        }
    }

    /// Reverse of [`Self::project_plane`].
    pub(crate) fn project_plane_vjp(&self, u: Vec3<T>, axis: usize, sign: T, bar: Vec3<T>) -> Vec3<T> {
        let vn = u.0[axis] * sign;
        if vn >= T::zero() {
            return bar;
        }
        match self.cfg.boundary.kind {
            BoundaryKind::Sticky => Vec3::zero(),
            BoundaryKind::Slip => {
                let mut vt = u;
                vt.0[axis] = T::zero();
                let mut tb = bar;
                tb.0[axis] = T::zero();
                if self.friction <= T::zero() {
                    return tb;
                }
                let t = vt.norm();
                let keep = T::one() + self.friction * vn / t;
                if !(t > T::zero()) || keep <= T::zero() {
                    return Vec3::zero();
                }
                // out = vt + μ vn t̂
                let that = vt.scale(T::one() / t);
                let mu = self.friction;
                let proj = bar - that.scale(that.dot(bar));
                let mut g = bar + proj.scale(mu * vn / t);
                g.0[axis] = mu * sign * that.dot(bar);
                g
            }
        }
    }

    pub fn project_node(&self, idx: usize, u: Vec3<T>) -> Vec3<T> {
        let c = [idx / (self.n * self.n), (idx / self.n) % self.n, idx % self.n];
        let mut u = u;
        for (axis, sign) in self.planes(c) {
            if sign != T::zero() {
                u = self.project_plane(u, axis, sign);
            }
        }
        u
    }

    pub(crate) fn project_node_vjp(&self, idx: usize, u: Vec3<T>, bar: Vec3<T>) -> Vec3<T> {
        let c = [idx / (self.n * self.n), (idx / self.n) % self.n, idx % self.n];
        let planes = self.planes(c);
        let mut inputs = [u; 6];
        let mut cur = u;
        for (k, &(axis, sign)) in planes.iter().enumerate() {
            inputs[k] = cur;
            if sign != T::zero() {
                cur = self.project_plane(cur, axis, sign);
            }
        }
        let mut b = bar;
        for k in (0..6).rev() {
            let (axis, sign) = planes[k];
            if sign != T::zero() {
                b = self.project_plane_vjp(inputs[k], axis, sign, b);
            }
        }
        b
    }

    /// `v ← (momentum + dt f) / m` on active nodes, then contact projection.
    pub fn grid_update(&self, grid: &mut Grid<T>, mass_epsilon: T) {
        for idx in 0..grid.mass.len() {
            let m = grid.mass[idx];
            if m < mass_epsilon || m <= T::zero() {
                grid.velocity[idx] = Vec3::zero();
                continue;
            }
            let u = (grid.momentum[idx] + grid.force[idx].scale(self.dt)).scale(T::one() / m);
            grid.velocity[idx] = self.project_node(idx, u);
        }
    }

    /// Gathers velocities and velocity gradients `Σ v_b ⊗ ∇N_b`.
    pub fn g2p(&self, stencils: &[Stencil<T>], grid: &Grid<T>) -> (Vec<Vec3<T>>, Vec<Mat3<T>>) {
        let mut vel = Vec::with_capacity(stencils.len());
        let mut grad = Vec::with_capacity(stencils.len());
        for s in stencils {
            let mut v = Vec3::zero();
            let mut l = Mat3::zero();
            s.for_each_node(self.n, |idx, a, b, c| {
                let vb = grid.velocity[idx];
                v += vb.scale(s.weight(a, b, c));
                l += vb.outer(s.gradient(a, b, c));
            });
            vel.push(v);
            grad.push(l);
        }
        (vel, grad)
    }

    fn apic_affine(&self, ps: &ParticleSet<T>, stencils: &[Stencil<T>], grid: &Grid<T>) -> Vec<Mat3<T>> {
        let scale = T::lit(4.0) * self.inv_h * self.inv_h;
        stencils
            .iter()
            .zip(&ps.positions)
            .map(|(s, p)| {
                let mut c = Mat3::zero();
                s.for_each_node(self.n, |idx, a, b, k| {
                    let xb = Vec3([
                        T::lit((s.base[0] + a) as f64) * self.h,
                        T::lit((s.base[1] + b) as f64) * self.h,
                        T::lit((s.base[2] + k) as f64) * self.h,
                    ]);
                    c += grid.velocity[idx].outer(xb - *p).scale(s.weight(a, b, k));
                });
                c.scale(scale)
            })
            .collect()
    }

    /// Advances `ps` by one time step.
    pub fn step(
        &self,
        ps: &mut ParticleSet<T>,
        grid: &mut Grid<T>,
        affine: Option<&mut Vec<Mat3<T>>>,
    ) -> Result<StepDiagnostics> {
        let groups = self.groups(ps)?;
        self.step_grouped(ps, grid, affine, &groups)
    }

    pub(crate) fn step_grouped(
        &self,
        ps: &mut ParticleSet<T>,
        grid: &mut Grid<T>,
        affine: Option<&mut Vec<Mat3<T>>>,
        groups: &TagGroups,
    ) -> Result<StepDiagnostics> {
        let stress = self.stresses(ps, groups)?;
        let stencils = self.stencils(&ps.positions)?;
        self.p2g(ps, &stress, &stencils, affine.as_deref().map(|v| v.as_slice()), grid);
        let diag_mass = grid.total_mass();
        let diag_mom = grid.total_momentum();
        self.grid_update(grid, self.mass_epsilon(ps));
        let (vel, lgrad) = self.g2p(&stencils, grid);
        if let Some(c) = affine {
            *c = self.apic_affine(ps, &stencils, grid);
        }
        let f_trial: Vec<Mat3<T>> = lgrad
            .iter()
            .zip(&ps.deformation)
            .map(|(l, f)| (Mat3::identity() + l.scale(self.dt)) * *f)
            .collect();
        for (i, v) in vel.iter().enumerate() {
            ps.positions[i] += v.scale(self.dt);
        }
        ps.velocities = vel;
        ps.deformation = self.plastic(&f_trial, groups)?;

        let mut diag = StepDiagnostics {
            grid_mass: diag_mass.to_f64_lossy(),
            grid_momentum: diag_mom.to_f64(),
            min_det: f64::INFINITY,
            ..Default::default()
        };
        for (i, f) in ps.deformation.iter().enumerate() {
            let d = f.det().to_f64_lossy();
            diag.min_det = diag.min_det.min(d);
            if !(d > 0.0) {
                return Err(Error::Inversion { index: i, det: d });
            }
        }
        for (i, v) in ps.velocities.iter().enumerate() {
            let s = v.norm().to_f64_lossy();
            if !s.is_finite() {
                return Err(Error::OutOfDomain { index: i, position: ps.positions[i].to_f64() });
            }
            diag.max_speed = diag.max_speed.max(s);
        }
        diag.cfl = diag.max_speed * self.cfg.dt * self.cfg.grid_resolution as f64;
        if diag.cfl > 0.5 {
            log::warn!("CFL number {:.3} exceeds 0.5", diag.cfl);
        }
        Ok(diag)
    }
}

/// Mass, momentum, and force transfer for a single material scene.
pub fn p2g<T: Real>(ps: &ParticleSet<T>, stresses: &[Mat3<T>], cfg: &SceneConfig) -> Result<Grid<T>> {
    let sim = bare_simulator::<T>(cfg)?;
    let stencils = sim.stencils(&ps.positions)?;
    let mut grid = Grid::new(sim.n);
    sim.p2g(ps, stresses, &stencils, None, &mut grid);
    Ok(grid)
}

fn bare_simulator<T: Real>(cfg: &SceneConfig) -> Result<Simulator<T>> {
    cfg.validate()?;
    Ok(Simulator {
        cfg: cfg.clone(),
        materials: Vec::new(),
        n: cfg.grid_resolution,
        h: T::lit(cfg.cell_width()),
        inv_h: T::lit(cfg.grid_resolution as f64),
        dt: T::lit(cfg.dt),
        gravity: Vec3::from_f64(cfg.gravity),
        floor: T::lit(cfg.floor_height()),
        friction: T::lit(cfg.boundary.friction),
    })
}

/// Grid velocity update with contact projection; `mass_epsilon` gates inert nodes.
pub fn grid_update<T: Real>(grid: &mut Grid<T>, mass_epsilon: T, cfg: &SceneConfig) -> Result<()> {
    bare_simulator::<T>(cfg)?.grid_update(grid, mass_epsilon);
    Ok(())
}

/// Interpolated velocities and trial deformation gradients `(I + dt L) F`.
pub fn g2p<T: Real>(ps: &ParticleSet<T>, grid: &Grid<T>, cfg: &SceneConfig) -> Result<(Vec<Vec3<T>>, Vec<Mat3<T>>)> {
    let sim = bare_simulator::<T>(cfg)?;
    let stencils = sim.stencils(&ps.positions)?;
    let (v, l) = sim.g2p(&stencils, grid);
    let ft = l.iter().zip(&ps.deformation).map(|(l, f)| (Mat3::identity() + l.scale(sim.dt)) * *f).collect();
    Ok((v, ft))
}

/// One step of `ps` under `material`.
pub fn step<T: Real>(ps: &ParticleSet<T>, material: &MaterialModel<T>, cfg: &SceneConfig) -> Result<ParticleSet<T>> {
    let sim = Simulator::new(cfg, std::slice::from_ref(material))?;
    let mut out = ps.clone();
    out.tags.iter_mut().for_each(|t| *t = 0);
    let mut grid = Grid::new(sim.n);
    sim.step(&mut out, &mut grid, None)?;
    Ok(out)
}

/// Rolls out `steps` steps, saving every `save_every`-th state (and the initial one).
pub fn simulate<T: Real>(
    initial: &ParticleSet<T>,
    materials: &[MaterialModel<T>],
    cfg: &SceneConfig,
    steps: usize,
    save_every: usize,
) -> Result<Trajectory<T>> {
    simulate_with(initial, materials, cfg, steps, save_every, |_, _| {})
}

/// [`simulate`] with a per-step diagnostics callback.
pub fn simulate_with<T: Real>(
    initial: &ParticleSet<T>,
    materials: &[MaterialModel<T>],
    cfg: &SceneConfig,
    steps: usize,
    save_every: usize,
    mut on_step: impl FnMut(usize, &StepDiagnostics),
) -> Result<Trajectory<T>> {
    if steps == 0 {
        return Err(Error::Argument("steps must be at least 1".into()));
    }
    if save_every == 0 {
        return Err(Error::Argument("save_every must be at least 1".into()));
    }
    initial.validate()?;
    let sim = Simulator::new(cfg, materials)?;
    let groups = sim.groups(initial)?;
    let mut ps = initial.clone();
    let mut grid = Grid::new(sim.n);
    let mut affine = match cfg.transfer {
        Transfer::Pic => None,
        Transfer::Apic => Some(vec![Mat3::zero(); ps.len()]),
    };
    let mut frames = vec![Frame::of(&ps)];
    for s in 0..steps {
        let diag = sim.step_grouped(&mut ps, &mut grid, affine.as_mut(), &groups).map_err(|e| e.at_step(s))?;
        on_step(s, &diag);
        if (s + 1) % save_every == 0 {
            frames.push(Frame::of(&ps));
        }
    }
    Ok(Trajectory { dt: cfg.dt, save_every, frames })
}

#[cfg(test)]
mod tests;
