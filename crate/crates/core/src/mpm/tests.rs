use super::*;
use crate::constitutive::{ElasticModel, PlasticModel};
use crate::scene::{init_rest_state, sample_volume, BoundaryConfig, ShapeSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(n: usize, gravity: [f64; 3]) -> SceneConfig {
    SceneConfig { grid_resolution: n, gravity, dt: 1e-3, ..Default::default() }
}

fn random_state(seed: u64, count: usize) -> ParticleSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec3<f64>> =
        (0..count).map(|_| Vec3(std::array::from_fn(|_| rng.gen_range(0.2..0.8)))).collect();
    let dens: Vec<f64> = (0..count).map(|_| rng.gen_range(500.0..2000.0)).collect();
    let mut ps = init_rest_state(&pts, &dens, 1e-3).unwrap();
    for v in &mut ps.velocities {
        *v = Vec3(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
    }
    ps
}

fn ball(n: usize, center: [f64; 3], radius: f64) -> ParticleSet<f64> {
    let s = ShapeSpec::Sphere { center, radius };
    let pts = sample_volume(&s, n, 1).unwrap();
    init_rest_state(&pts, &[1000.0], s.volume()).unwrap()
}

fn soft() -> MaterialModel<f64> {
    MaterialModel::new(ElasticModel::NeoHookean { mu: 2e3, lambda: 3e3 }, PlasticModel::Identity)
}

fn rel_vec(a: Vec3<f64>, b: Vec3<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

#[test]
fn stencil_partition_of_unity_and_linear_reproduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 32;
    let h = 1.0 / n as f64;
    for _ in 0..100 {
        let p = Vec3(std::array::from_fn(|_| rng.gen_range(0.1..0.9)));
        let s = Stencil::new(p, n, n as f64).unwrap();
        let mut sum_w = 0.0;
        let mut sum_g = Vec3::zero();
        let mut sum_x = Vec3::zero();
        let mut sum_gx = Mat3::zero();
        s.for_each_node(n, |_, a, b, c| {
            let xb = Vec3::new((s.base[0] + a) as f64 * h, (s.base[1] + b) as f64 * h, (s.base[2] + c) as f64 * h);
            sum_w += s.weight(a, b, c);
            sum_g += s.gradient(a, b, c);
            sum_x += xb.scale(s.weight(a, b, c));
            sum_gx += xb.outer(s.gradient(a, b, c));
        });
        assert!((sum_w - 1.0).abs() < 1e-14);
        assert!(sum_g.max_abs() < 1e-11);
        assert!((sum_x - p).max_abs() < 1e-14);
        assert!((sum_gx - Mat3::identity()).max_abs() < 1e-12);
    }
}

#[test]
fn stencil_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 16;
    let h = 1e-7;
    for _ in 0..50 {
        let p = Vec3(std::array::from_fn(|_| rng.gen_range(0.2..0.8)));
        let s = Stencil::new(p, n, n as f64).unwrap();
        for d in 0..3 {
            let mut pp = p;
            pp.0[d] += h;
            let mut pm = p;
            pm.0[d] -= h;
            let sp = Stencil::new(pp, n, n as f64).unwrap();
            let sm = Stencil::new(pm, n, n as f64).unwrap();
            if sp.base != s.base || sm.base != s.base {
                continue;
            }
            for (a, b, c) in [(0, 0, 0), (1, 2, 0), (2, 1, 1), (1, 1, 1)] {
                let fd = (sp.weight(a, b, c) - sm.weight(a, b, c)) / (2.0 * h);
                assert!((fd - s.gradient(a, b, c).0[d]).abs() < 1e-5);
                let fd2 = (sp.gradient(a, b, c) - sm.gradient(a, b, c)).scale(0.5 / h);
                let hc = s.hessian(a, b, c);
                for r in 0..3 {
                    assert!((fd2.0[r] - hc.0[r][d]).abs() < 1e-4 * (1.0 + hc.0[r][d].abs()));
                }
            }
        }
    }
}

#[test]
fn particle_on_node_puts_27_64_there() {
    let c = cfg(16, [0.0; 3]);
    let p = Vec3::<f64>::new(8.0, 8.0, 8.0).scale(1.0 / 16.0);
    let mut ps = init_rest_state(&[p], &[1000.0], 1e-4).unwrap();
    ps.velocities[0] = Vec3::new(0.3, -0.2, 0.1);
    let g = p2g(&ps, &[Mat3::zero()], &c).unwrap();
    let idx = (8 * 16 + 8) * 16 + 8;
    assert!((g.mass[idx] / ps.masses[0] - 27.0 / 64.0).abs() < 1e-15);
    assert!(rel_vec(g.total_momentum(), ps.velocities[0].scale(ps.masses[0])) < 1e-14);
}

#[test]
fn transfer_conserves_mass_and_momentum() {
    let c = cfg(32, [0.0, -9.8, 0.0]);
    for seed in 0..100 {
        let ps = random_state(seed, 50);
        let g = p2g(&ps, &vec![Mat3::zero(); ps.len()], &c).unwrap();
        let m = ps.total_mass();
        assert!((g.total_mass() - m).abs() / m <= 1e-12);
        assert!(rel_vec(g.total_momentum(), ps.total_momentum()) <= 1e-12);
    }
}

#[test]
fn zero_stress_zero_gravity_means_no_force() {
    let ps = random_state(3, 30);
    let g = p2g(&ps, &vec![Mat3::zero(); ps.len()], &cfg(32, [0.0; 3])).unwrap();
    assert!(g.force.iter().all(|f| *f == Vec3::zero()));
}

#[test]
fn grid_update_gravity_and_boundaries() {
    let c = cfg(16, [0.0, -9.8, 0.0]);
    let mut g = Grid::<f64>::new(16);
    let free = (8 * 16 + 8) * 16 + 8;
    let floor = (8 * 16 + 1) * 16 + 8;
    let inert = (4 * 16 + 8) * 16 + 4;
    for idx in [free, floor] {
        g.mass[idx] = 2.0;
        g.force[idx] = Vec3::new(0.0, -9.8 * 2.0, 0.0);
    }
    g.momentum[floor] = Vec3::new(0.4, -2.0, 0.2);
    g.mass[inert] = 1e-20;
    g.momentum[inert] = Vec3::new(1.0, 1.0, 1.0);
    grid_update(&mut g, 1e-12, &c).unwrap();
    assert!((g.velocity[free] - Vec3::new(0.0, -9.8e-3, 0.0)).max_abs() < 1e-15);
    assert_eq!(g.velocity[floor], Vec3::new(0.2, 0.0, 0.1));
    assert_eq!(g.velocity[inert], Vec3::zero());

    let sticky = SceneConfig { boundary: BoundaryConfig { kind: BoundaryKind::Sticky, ..Default::default() }, ..c };
    let mut g2 = Grid::<f64>::new(16);
    g2.mass[floor] = 1.0;
    g2.momentum[floor] = Vec3::new(0.4, -2.0, 0.2);
    grid_update(&mut g2, 1e-12, &sticky).unwrap();
    assert_eq!(g2.velocity[floor], Vec3::zero());
}

#[test]
fn friction_projection_and_its_adjoint() {
    let c = SceneConfig {
        boundary: BoundaryConfig { friction: 0.4, ..Default::default() },
        ..cfg(16, [0.0; 3])
    };
    let sim = Simulator::<f64>::new(&c, &[soft()]).unwrap();
    let idx = (1 * 16 + 1) * 16 + 8; // near the x = 0 wall and on the floor
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let u = Vec3(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
        let bar = Vec3(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
        let g = sim.project_node_vjp(idx, u, bar);
        let h = 1e-7;
        for d in 0..3 {
            let mut up = u;
            up.0[d] += h;
            let mut um = u;
            um.0[d] -= h;
            let fd = (sim.project_node(idx, up) - sim.project_node(idx, um)).dot(bar) / (2.0 * h);
            assert!((fd - g.0[d]).abs() < 1e-6, "{fd} vs {}", g.0[d]);
        }
    }
    // Coulomb: tangential speed 1, normal -0.5, μ = 0.4 leaves 0.8.
    let out = sim.project_node((8 * 16 + 1) * 16 + 8, Vec3::new(1.0, -0.5, 0.0));
    assert!((out - Vec3::new(0.8, 0.0, 0.0)).max_abs() < 1e-15);
}

#[test]
fn g2p_reproduces_uniform_and_linear_fields() {
    let c = cfg(16, [0.0; 3]);
    let ps = random_state(5, 40);
    let n = 16;
    let h = 1.0 / n as f64;
    let mut g = Grid::<f64>::new(n);
    let u = Vec3::new(0.3, -0.7, 0.2);
    g.velocity.iter_mut().for_each(|v| *v = u);
    let (v, ft) = g2p(&ps, &g, &c).unwrap();
    for i in 0..ps.len() {
        assert!((v[i] - u).max_abs() < 1e-12);
        assert!((ft[i] - ps.deformation[i]).max_abs() < 1e-12);
    }
    let k = 2.5;
    for idx in 0..g.velocity.len() {
        let x = g.node_coords(idx)[0] as f64 * h;
        g.velocity[idx] = Vec3::new(k * x, 0.0, 0.0);
    }
    let (v, ft) = g2p(&ps, &g, &c).unwrap();
    for i in 0..ps.len() {
        assert!((v[i].0[0] - k * ps.positions[i].0[0]).abs() < 1e-12);
        let expect = Mat3::identity() + Mat3::diag(Vec3::new(k * 1e-3, 0.0, 0.0));
        assert!((ft[i] - expect).max_abs() < 1e-12);
    }
    g.velocity.iter_mut().for_each(|v| *v = Vec3::zero());
    let (v, _) = g2p(&ps, &g, &c).unwrap();
    assert!(v.iter().all(|v| *v == Vec3::zero()));
}

#[test]
fn rest_state_is_a_fixed_point() {
    let ps = ball(300, [0.5; 3], 0.1);
    let out = step(&ps, &soft(), &cfg(32, [0.0; 3])).unwrap();
    assert_eq!(out, ps);
}

#[test]
fn free_fall_step() {
    let ps = ball(300, [0.5, 0.6, 0.5], 0.1);
    let out = step(&ps, &soft(), &cfg(32, [0.0, -9.8, 0.0])).unwrap();
    for i in 0..ps.len() {
        assert!((out.velocities[i] - Vec3::new(0.0, -9.8e-3, 0.0)).max_abs() < 1e-12);
        assert!((out.positions[i] - ps.positions[i] - Vec3::new(0.0, -9.8e-6, 0.0)).max_abs() < 1e-15);
        assert!((out.deformation[i] - Mat3::identity()).max_abs() < 1e-12);
    }
}

#[test]
fn out_of_domain_names_particle() {
    let mut ps = ball(10, [0.5; 3], 0.05);
    ps.positions[7] = Vec3::new(0.5, 0.01, 0.5);
    match step(&ps, &soft(), &cfg(32, [0.0; 3])) {
        Err(Error::OutOfDomain { index, .. }) => assert_eq!(index, 7),
        other => panic!("{other:?}"),
    }
}

#[test]
fn simulate_contract_and_determinism() {
    let ps = ball(200, [0.5, 0.5, 0.5], 0.08);
    let c = cfg(16, [0.0, -9.8, 0.0]);
    assert!(simulate(&ps, &[soft()], &c, 0, 1).is_err());
    let t = simulate(&ps, &[soft()], &c, 1, 1).unwrap();
    assert_eq!(t.frames.len(), 2);
    let a = simulate(&ps, &[soft()], &c, 30, 10).unwrap();
    let b = simulate(&ps, &[soft()], &c, 30, 10).unwrap();
    assert_eq!(a.frames.len(), 4);
    assert_eq!(a, b);
}

#[test]
fn momentum_conserved_without_gravity_or_contact() {
    let mut ps = ball(400, [0.5; 3], 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for v in &mut ps.velocities {
        *v = Vec3::new(0.05, 0.02, -0.03) + Vec3(std::array::from_fn(|_| rng.gen_range(-0.05..0.05)));
    }
    let p0 = ps.total_momentum();
    let t = simulate(&ps, &[soft()], &cfg(32, [0.0; 3]), 100, 100).unwrap();
    let last = t.frames.last().unwrap();
    let p1 = last.velocities.iter().zip(&ps.masses).fold(Vec3::zero(), |a, (v, m)| a + v.scale(*m));
    assert!(rel_vec(p0, p1) <= 1e-10, "{}", rel_vec(p0, p1));
}

#[test]
fn apic_conserves_momentum_and_runs() {
    let mut ps = ball(300, [0.5; 3], 0.1);
    ps.set_velocity(Vec3::new(0.1, 0.0, 0.0));
    ps.velocities[0] = Vec3::new(0.3, 0.1, 0.0);
    let c = SceneConfig { transfer: Transfer::Apic, ..cfg(32, [0.0; 3]) };
    let t = simulate(&ps, &[soft()], &c, 50, 50).unwrap();
    let last = t.frames.last().unwrap();
    let p1 = last.velocities.iter().zip(&ps.masses).fold(Vec3::zero(), |a, (v, m)| a + v.scale(*m));
    assert!(rel_vec(ps.total_momentum(), p1) <= 1e-10);
}

#[test]
fn mass_is_constant_across_frames() {
    let mut ps = ball(200, [0.5, 0.3, 0.5], 0.08);
    ps.set_velocity(Vec3::new(0.0, -1.0, 0.0));
    let c = cfg(16, [0.0, -9.8, 0.0]);
    let sim = Simulator::new(&c, &[soft()]).unwrap();
    let mut grid = Grid::new(16);
    let m0 = ps.total_mass();
    for _ in 0..20 {
        let d = sim.step(&mut ps, &mut grid, None).unwrap();
        assert!((d.grid_mass - m0).abs() / m0 < 1e-12);
        assert!(d.min_det > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn p2g_conservation_holds(seed in any::<u64>(), count in 1usize..80) {
        let ps = random_state(seed, count);
        let g = p2g(&ps, &vec![Mat3::zero(); ps.len()], &cfg(24, [0.0, -9.8, 0.0])).unwrap();
        let m = ps.total_mass();
        prop_assert!((g.total_mass() - m).abs() / m <= 1e-12);
        prop_assert!(rel_vec(g.total_momentum(), ps.total_momentum()) <= 1e-12);
    }
}
