use super::*;
use crate::constitutive::random_neural_material;
use crate::linalg::Mat3;
use crate::scene::{init_rest_state, lame, sample_volume, ShapeSpec};
use proptest::prelude::*;
use rand::Rng;

fn brute_chamfer(x: &[Vec3<f64>], y: &[Vec3<f64>]) -> f64 {
    let side = |a: &[Vec3<f64>], b: &[Vec3<f64>]| {
        a.iter().map(|p| b.iter().map(|q| (*p - *q).norm_squared()).fold(f64::INFINITY, f64::min)).sum::<f64>()
            / a.len() as f64
    };
    side(x, y) + side(y, x)
}

#[test]
fn chamfer_examples() {
    let x = vec![Vec3::new(0.0, 0.0, 0.0)];
    let y = vec![Vec3::new(1.0, 0.0, 0.0)];
    assert_eq!(chamfer(&x, &y, 1.0).unwrap(), 2.0);
    assert_eq!(chamfer(&x, &y, REPORT_SCALE).unwrap(), 20000.0);
    assert_eq!(chamfer(&y, &y, 1.0).unwrap(), 0.0);
    assert!(chamfer::<f64>(&[], &y, 1.0).is_err());
}

proptest! {
    #[test]
    fn chamfer_matches_brute_force_and_is_symmetric(seed in 0u64..10_000, nx in 1usize..60, ny in 1usize..60, spread in 0.01f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = |n: usize, off: f64| -> Vec<Vec3<f64>> {
            (0..n).map(|_| Vec3(std::array::from_fn(|_| off + rng.gen_range(0.0..spread)))).collect()
        };
        let x = cloud(nx, 0.0);
        let y = cloud(ny, 0.3);
        let c = chamfer(&x, &y, 1.0).unwrap();
        let b = brute_chamfer(&x, &y);
        prop_assert!((c - b).abs() <= 1e-12 * b.max(1e-12), "{} vs {}", c, b);
        prop_assert_eq!(c, chamfer(&y, &x, 1.0).unwrap());
    }
}

#[test]
fn psnr_examples() {
    let a = Image::<f64>::filled(4, 4, [0.5; 3]);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    let b = Image::<f64>::filled(4, 4, [0.51; 3]);
    assert!((psnr(&a, &b).unwrap() - 40.0).abs() < 1e-9);
    assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    assert!(psnr(&a, &Image::filled(2, 4, [0.5; 3])).is_err());
}

fn small_scene() -> SceneConfig {
    SceneConfig { grid_resolution: 16, substeps: 4, ..SceneConfig::default() }
}

fn ball(particles: usize, center: [f64; 3], radius: f64, seed: u64) -> ParticleSet<f64> {
    let shape = ShapeSpec::Sphere { center, radius };
    let pts = sample_volume(&shape, particles, seed).unwrap();
    init_rest_state(&pts, &[1000.0], shape.volume()).unwrap()
}

/// Adds a random per-particle velocity so that the body deforms.
fn stir(ps: &mut ParticleSet<f64>, base: Vec3<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut ps.velocities {
        *v = base + Vec3(std::array::from_fn(|_| rng.gen_range(-0.3..0.3)));
    }
}

fn prior(seed: u64) -> MaterialModel<f64> {
    random_neural_material(2e3, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn small_fit_cfg(iterations: usize) -> FitConfig {
    FitConfig { iterations, learning_rate: 1e-2, rank: 4, alpha: 4.0, horizon: Some(2), ..FitConfig::default() }
}

fn reference(ps: &ParticleSet<f64>, scene: &SceneConfig) -> Trajectory<f64> {
    let (mu, lambda) = lame(2e4, 0.3);
    let gt = MaterialModel::new(ElasticModel::StVK { mu, lambda }, PlasticModel::Identity);
    simulate(ps, &[gt], scene, 3 * scene.substeps, scene.substeps).unwrap()
}

#[test]
fn zero_iterations_leave_the_prior_untouched() {
    let scene = small_scene();
    let mut ps = ball(60, [0.5, 0.5, 0.5], 0.08, 1);
    ps.set_velocity(Vec3::new(0.0, -0.5, 0.0));
    let gt = reference(&ps, &scene);
    let base = prior(2);
    let cfg = small_fit_cfg(0);
    let fit = fit_adapter(&ps, &scene, &base, &Supervision::Particles(&gt), &cfg).unwrap();
    let fresh = MaterialAdapter::for_material(&base, cfg.rank, cfg.alpha, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    assert_eq!(fit.adapter, fresh);
    assert!(fit.log.iterations.is_empty());
    let a = simulate(&ps, &[base], &scene, 12, 4).unwrap();
    let b = simulate(&ps, &[fit.material], &scene, 12, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(fit.log.frames.len(), gt.frames.len());
    assert_eq!(fit.log.frames[0].chamfer, Some(0.0));
}

#[test]
fn first_logged_loss_is_the_prior_loss_and_logs_are_reproducible() {
    let scene = small_scene();
    let mut ps = ball(60, [0.5, 0.5, 0.5], 0.08, 1);
    stir(&mut ps, Vec3::new(0.3, -0.5, 0.0), 1);
    let gt = reference(&ps, &scene);
    let base = prior(3);
    let cfg = small_fit_cfg(3);
    let sup = Supervision::Particles(&gt);
    let fit = fit_adapter(&ps, &scene, &base, &sup, &cfg).unwrap();
    let spec = RolloutSpec::new(2 * scene.substeps, scene.substeps);
    let prior_loss = rollout_loss(&ParticleMse::new(&gt, 2).unwrap(), &ps, &[base.clone()], &scene, &spec).unwrap();
    assert_eq!(fit.log.iterations[0].loss, prior_loss);
    let iters: Vec<usize> = fit.log.iterations.iter().map(|r| r.iteration).collect();
    assert_eq!(iters, vec![0, 1, 2]);
    assert!(fit.log.iterations.iter().all(|r| r.grad_norms[0][0] > 0.0 && r.grad_norms[0][1] >= 0.0));
    assert!(fit.log.iterations[0].lr > fit.log.iterations[2].lr);

    let again = fit_adapter(&ps, &scene, &base, &sup, &cfg).unwrap();
    assert_eq!(again.log, fit.log);
    assert_eq!(again.log.iterations_text(), fit.log.iterations_text());
    assert!(fit.log.frames.iter().all(|f| f.chamfer.unwrap().is_finite()));

    // Setting w = 0 recovers the prior at any point of training.
    let off = compose_material(&base, &fit.adapter, 0.0).unwrap();
    assert_eq!(simulate(&ps, &[off], &scene, 8, 4).unwrap(), simulate(&ps, &[base], &scene, 8, 4).unwrap());
    assert_ne!(fit.adapter.flatten(), MaterialAdapter::for_material(&prior(3), 4, 4.0, &mut ChaCha8Rng::seed_from_u64(0)).flatten());
}

#[test]
fn no_adapter_ablation_trains_base_weights() {
    let scene = small_scene();
    let mut ps = ball(40, [0.5, 0.5, 0.5], 0.07, 4);
    stir(&mut ps, Vec3::new(0.0, -0.5, 0.2), 2);
    let gt = reference(&ps, &scene);
    let base = prior(5);
    let cfg = FitConfig { ablation: Ablation::NoAdapter, ..small_fit_cfg(2) };
    let fit = fit_adapter(&ps, &scene, &base, &Supervision::Particles(&gt), &cfg).unwrap();
    assert_eq!(fit.adapter, MaterialAdapter::default());
    assert!(fit.material.adapter().elastic.is_none());
    assert_ne!(net_params(&fit.material), net_params(&base));
    assert_eq!(net_params(&fit.material).len(), net_params(&base).len());
}

#[test]
fn analytic_prior_cannot_be_adapted() {
    let scene = small_scene();
    let ps = ball(20, [0.5, 0.5, 0.5], 0.05, 4);
    let gt = reference(&ps, &scene);
    let (mu, lambda) = lame(1e4, 0.3);
    let m = MaterialModel::new(ElasticModel::NeoHookean { mu, lambda }, PlasticModel::Identity);
    assert!(matches!(fit_adapter(&ps, &scene, &m, &Supervision::Particles(&gt), &small_fit_cfg(1)), Err(Error::Argument(_))));
    let bad = FitConfig { horizon: Some(0), ..small_fit_cfg(1) };
    assert!(bad.validate().is_err());
}

#[test]
fn velocity_fit_examples() {
    let scene = SceneConfig { gravity: [0.0; 3], ..small_scene() };
    let ps = ball(40, [0.5, 0.5, 0.5], 0.06, 6);
    let (mu, lambda) = lame(2e4, 0.3);
    let m = MaterialModel::new(ElasticModel::NeoHookean { mu, lambda }, PlasticModel::Identity);
    let target = Vec3::new(0.3, -0.6, 0.1);
    let mut moving = ps.clone();
    moving.set_velocity(target);
    let gt = simulate(&moving, &[m.clone()], &scene, 5 * scene.substeps, scene.substeps).unwrap();
    let sup = Supervision::Particles(&gt);

    let none = VelocityFitConfig { iterations: 0, initial_guess: [0.1, 0.2, 0.3], ..Default::default() };
    let (v, _) = fit_initial_velocity(&ps, &scene, &m, &sup, &none).unwrap();
    assert_eq!(v, Vec3::new(0.1, 0.2, 0.3));

    let exact = VelocityFitConfig { iterations: 0, initial_guess: target.0, ..Default::default() };
    let (_, l) = fit_initial_velocity(&ps, &scene, &m, &sup, &exact).unwrap();
    assert!(l < 1e-20, "loss {l}");

    let cfg = VelocityFitConfig { iterations: 150, learning_rate: 0.05, ..Default::default() };
    let (v, l) = fit_initial_velocity(&ps, &scene, &m, &sup, &cfg).unwrap();
    for k in 0..3 {
        assert!((v.0[k] - target.0[k]).abs() < 1e-2, "{v:?} vs {target:?}, loss {l}");
    }
}

#[test]
fn interpolation_endpoints() {
    let scene = small_scene();
    let mut ps = ball(40, [0.5, 0.5, 0.5], 0.07, 7);
    stir(&mut ps, Vec3::new(0.0, -0.4, 0.0), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = prior(9);
    let mut adapter = MaterialAdapter::for_material(&base, 4, 4.0, &mut rng);
    let mut flat = adapter.flatten();
    flat.iter_mut().for_each(|x| *x = rng.gen_range(-0.05..0.05));
    adapter.unflatten(&flat);
    let ws = [0.0, 0.25, 0.5, 0.75, 1.0];
    let out = interpolate_dynamics(&base, &adapter, &ws, &ps, &scene, 8).unwrap();
    assert_eq!(out.len(), 5);
    assert_eq!(out[0], simulate(&ps, &[base.clone()], &scene, 8, scene.substeps).unwrap());
    let fitted = compose_material(&base, &adapter, 1.0).unwrap();
    assert_eq!(out[4], simulate(&ps, &[fitted], &scene, 8, scene.substeps).unwrap());
    assert_ne!(out[0], out[4]);
}

#[test]
fn transfer_is_translation_equivariant() {
    let scene = SceneConfig { gravity: [0.0; 3], ..small_scene() };
    let mut ps = ball(50, [0.4, 0.45, 0.5], 0.07, 10);
    ps.set_velocity(Vec3::new(0.2, 0.1, -0.1));
    let m = prior(11);
    let a = transfer(&m, &ps, &scene, 12).unwrap();
    let d = Vec3::new(0.125, 0.0625, 0.0);
    let mut moved = ps.clone();
    moved.translate(d);
    let b = transfer(&m, &moved, &scene, 12).unwrap();
    assert!(a.min_det > 0.0);
    for (fa, fb) in a.trajectory.frames.iter().zip(&b.trajectory.frames) {
        for (p, q) in fa.positions.iter().zip(&fb.positions) {
            assert!((*q - *p - d).max_abs() < 1e-12);
        }
        for (f, g) in fa.deformation.iter().zip(&fb.deformation) {
            assert!((*f - *g).max_abs() < 1e-10);
        }
    }
}

#[test]
fn composed_scenes() {
    let (mu, lambda) = lame(2e4, 0.3);
    let m = MaterialModel::new(ElasticModel::NeoHookean { mu, lambda }, PlasticModel::Identity);
    let a = ball(40, [0.35, 0.5, 0.5], 0.07, 12);
    let b = ball(40, [0.65, 0.5, 0.5], 0.07, 13);
    assert!(matches!(compose_scene(&[(a.clone(), m.clone()), (a.clone(), m.clone())]), Err(Error::Geometry(_))));

    let (merged, mats) = compose_scene(&[(a.clone(), m.clone()), (b.clone(), m.clone())]).unwrap();
    assert_eq!(mats.len(), 2);
    assert_eq!(merged.tags.iter().filter(|&&t| t == 1).count(), 40);
    let scene = SceneConfig { gravity: [0.0; 3], ..small_scene() };
    let two = simulate(&merged, &mats, &scene, 20, 4).unwrap();
    let mut single = a.clone();
    single.extend(&b);
    let one = simulate(&single, &[m.clone()], &scene, 20, 4).unwrap();
    assert_eq!(two, one);
    let last = two.frames.last().unwrap();
    assert!(last.positions.iter().zip(&merged.positions).all(|(p, q)| (*p - *q).max_abs() == 0.0));
    assert!(last.deformation.iter().all(|f| (*f - Mat3::identity()).max_abs() == 0.0));
}

#[test]
fn colliding_objects_conserve_momentum() {
    let (mu, lambda) = lame(2e4, 0.3);
    let soft = MaterialModel::new(ElasticModel::NeoHookean { mu, lambda }, PlasticModel::Identity);
    let (mu2, lambda2) = lame(5e4, 0.3);
    let stiff = MaterialModel::new(ElasticModel::StVK { mu: mu2, lambda: lambda2 }, PlasticModel::Identity);
    let mut a = ball(80, [0.5, 0.62, 0.5], 0.06, 14);
    a.set_velocity(Vec3::new(0.0, -1.0, 0.0));
    let b = ball(80, [0.5, 0.45, 0.5], 0.07, 15);
    let (merged, mats) = compose_scene(&[(a, soft), (b, stiff)]).unwrap();
    let scene = SceneConfig { gravity: [0.0; 3], ..small_scene() };
    let p0 = merged.total_momentum();
    let traj = simulate(&merged, &mats, &scene, 80, 4).unwrap();
    let mut collided = false;
    for f in &traj.frames {
        let p = f.velocities.iter().zip(&merged.masses).fold(Vec3::zero(), |acc, (v, m)| acc + v.scale(*m));
        assert!((p - p0).norm() <= 1e-10 * p0.norm(), "{p:?} vs {p0:?}");
        collided |= f.velocities[79].norm() > 1e-3 || f.velocities[80].norm() > 1e-3;
    }
    assert!(collided);
}
