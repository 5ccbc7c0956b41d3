use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn kernels_at(centers: &[[f64; 3]], cov: [[f64; 3]; 3]) -> GaussianKernelSet<f64> {
    GaussianKernelSet {
        centers: centers.iter().map(|&c| Vec3::from_f64(c)).collect(),
        opacities: vec![1.0; centers.len()],
        covariances: vec![Mat3::from_f64(cov); centers.len()],
        colors: vec![[0.5, 0.5, 0.5]; centers.len()],
    }
}

fn identity3() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn particles_at(points: &[Vec3<f64>]) -> ParticleSet<f64> {
    let n = points.len();
    ParticleSet {
        positions: points.to_vec(),
        velocities: (0..n).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect(),
        deformation: vec![Mat3::identity(); n],
        masses: vec![1e-3; n],
        volumes: vec![1e-6; n],
        densities: vec![1000.0; n],
        tags: vec![0; n],
    }
}

fn random_spd(rng: &mut ChaCha8Rng, scale: f64) -> Mat3<f64> {
    let m = Mat3(std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))));
    (m * m.transpose()).scale(scale) + Mat3::scaled_identity(0.1 * scale)
}

/// Quantile by bisection on the statrs CDF (its own inverse is coarse).
fn oracle_quantile(p: f64, dof: u32) -> f64 {
    let d = ChiSquared::new(dof as f64).unwrap();
    let (mut lo, mut hi) = (0.0, 1000.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if d.cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn chi2_quantile_matches_reference_values() {
    assert!((chi2_quantile(0.95, 3) - 7.8147).abs() < 5e-5);
    for dof in [1u32, 2, 3, 5, 10] {
        for p in [0.01, 0.1, 0.5, 0.9, 0.95, 0.99, 0.999] {
            let expect = oracle_quantile(p, dof);
            let got = chi2_quantile(p, dof);
            assert!((got - expect).abs() <= 1e-8 * expect.max(1.0), "dof {dof} p {p}: {got} vs {expect}");
            assert!((chi2_cdf(got, dof) - p).abs() < 1e-12);
        }
    }
}

#[test]
fn kernel_on_particle_binds_with_unit_weight() {
    let k = kernels_at(&[[0.3, 0.4, 0.5]], [[1e-4, 0.0, 0.0], [0.0, 1e-4, 0.0], [0.0, 0.0, 1e-4]]);
    let b = bind(&k, &[Vec3::new(0.3, 0.4, 0.5), Vec3::new(0.9, 0.9, 0.9)], DEFAULT_TAU_BIND).unwrap();
    assert_eq!(b.rows, vec![vec![(0, 1.0)]]);
}

#[test]
fn unit_covariance_threshold_is_chi2_quantile() {
    let q = oracle_quantile(0.95, 3);
    let k = kernels_at(&[[0.0, 0.0, 0.0]], identity3());
    for (d, inside) in [(q.sqrt() * (1.0 - 1e-6), true), (q.sqrt() * (1.0 + 1e-6), false), (2.0, true), (3.0, false)] {
        let b = bind(&k, &[Vec3::new(0.0, d, 0.0)], 0.95).unwrap();
        assert_eq!(b.rows[0].len() == 1, inside, "distance {d}");
    }
}

#[test]
fn invalid_tau_and_indefinite_covariance_are_rejected() {
    let k = kernels_at(&[[0.0; 3]], identity3());
    assert!(bind(&k, &[Vec3::zero()], 1.0).is_err());
    let bad = kernels_at(&[[0.0; 3]], [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]);
    assert!(matches!(bind(&bad, &[Vec3::zero()], 0.95), Err(Error::Geometry(_))));
}

#[test]
fn binding_is_sound_against_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<Vec3<f64>> = (0..400).map(|_| Vec3(std::array::from_fn(|_| rng.gen_range(0.0..1.0)))).collect();
    let mut k = kernels_at(&[], identity3());
    for _ in 0..40 {
        k.centers.push(Vec3(std::array::from_fn(|_| rng.gen_range(0.0..1.0))));
        let scale = 2e-3 * rng.gen_range(0.1..3.0);
        k.covariances.push(random_spd(&mut rng, scale));
        k.opacities.push(1.0);
        k.colors.push([1.0; 3]);
    }
    let b = bind(&k, &pts, 0.95).unwrap();
    let threshold = oracle_quantile(0.95, 3);
    for (i, row) in b.rows.iter().enumerate() {
        let inv = k.covariances[i].inverse().unwrap();
        let expect: Vec<usize> =
            (0..pts.len()).filter(|&j| (pts[j] - k.centers[i]).dot(inv.mul_vec(pts[j] - k.centers[i])) <= threshold).collect();
        let got: Vec<usize> = row.iter().map(|&(j, _)| j).collect();
        assert_eq!(got, expect, "kernel {i}");
        if !row.is_empty() {
            let s: f64 = row.iter().map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&(_, w)| w > 0.0));
        }
    }
}

#[test]
fn covered_scene_is_left_unchanged() {
    let pts = vec![Vec3::new(0.1, 0.1, 0.1), Vec3::new(0.2, 0.1, 0.1)];
    let ps = particles_at(&pts);
    let k = kernels_at(&[[0.1, 0.1, 0.1], [0.2, 0.1, 0.1]], [[1e-4, 0.0, 0.0], [0.0, 1e-4, 0.0], [0.0, 0.0, 1e-4]]);
    let (out, b) = ensure_coverage(&k, &ps, 0.95).unwrap();
    assert_eq!(out, ps);
    assert_eq!(b, bind(&k, &pts, 0.95).unwrap());
}

#[test]
fn isolated_kernel_spawns_one_particle() {
    let pts = vec![Vec3::new(0.1, 0.1, 0.1), Vec3::new(0.2, 0.1, 0.1)];
    let ps = particles_at(&pts);
    let small = [[1e-4, 0.0, 0.0], [0.0, 1e-4, 0.0], [0.0, 0.0, 1e-4]];
    let k = kernels_at(&[[0.1, 0.1, 0.1], [0.8, 0.8, 0.8]], small);
    let (out, b) = ensure_coverage(&k, &ps, 0.95).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(out.positions[2], Vec3::new(0.8, 0.8, 0.8));
    assert_eq!(out.deformation[2], Mat3::identity());
    assert_eq!(out.velocities[2], Vec3::new(0.5, 0.0, 0.0));
    assert_eq!(out.volumes[2], 1e-6);
    assert_eq!(b.rows[1], vec![(2, 1.0)]);
    assert!(b.empty_rows().is_empty());
}

#[test]
fn every_isolated_kernel_gets_a_particle() {
    let ps = particles_at(&[Vec3::new(0.0, 0.0, 0.0)]);
    let small = [[1e-4, 0.0, 0.0], [0.0, 1e-4, 0.0], [0.0, 0.0, 1e-4]];
    let centers: Vec<[f64; 3]> = (0..7).map(|i| [0.5 + 0.1 * i as f64, 0.5, 0.5]).collect();
    let k = kernels_at(&centers, small);
    let (out, b) = ensure_coverage(&k, &ps, 0.95).unwrap();
    assert_eq!(out.len(), 1 + centers.len());
    assert!(b.empty_rows().is_empty());
    assert!(b.row_sums().iter().all(|s| (s - 1.0).abs() <= 1e-12));
}

#[test]
fn deformation_examples() {
    let a0 = Mat3::from_f64([[2e-4, 1e-5, 0.0], [1e-5, 1e-4, 0.0], [0.0, 0.0, 3e-4]]);
    let mut k = kernels_at(&[[0.5, 0.5, 0.5]], identity3());
    k.covariances[0] = a0;
    let b = BindingMatrix::identity(1);
    let p = vec![Vec3::new(0.5, 0.5, 0.5)];

    let same = deform_kernels(&k, &b, &p, &p, &[Mat3::identity()], &[a0]).unwrap();
    assert_eq!(same.centers, k.centers);
    assert!((same.covariances[0] - a0).max_abs() < 1e-18);

    let d = Vec3::new(0.01, -0.02, 0.03);
    let moved = deform_kernels(&k, &b, &p, &[p[0] + d], &[Mat3::identity()], &[a0]).unwrap();
    assert_eq!(moved.centers[0], k.centers[0] + d);

    let grown = deform_kernels(&k, &b, &p, &p, &[Mat3::scaled_identity(2.0)], &[a0]).unwrap();
    assert!((grown.covariances[0] - a0.scale(4.0)).max_abs() < 1e-18);

    assert!(deform_kernels(&k, &b, &p, &p, &[], &[a0]).is_err());
}

#[test]
fn identity_binding_is_per_particle_transport() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 12;
    let p0: Vec<Vec3<f64>> = (0..n).map(|_| Vec3(std::array::from_fn(|_| rng.gen_range(0.0..1.0)))).collect();
    let p1: Vec<Vec3<f64>> = p0.iter().map(|p| *p + Vec3(std::array::from_fn(|_| rng.gen_range(-0.1..0.1)))).collect();
    let f: Vec<Mat3<f64>> =
        (0..n).map(|_| Mat3::identity() + Mat3(std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-0.2..0.2))))).collect();
    let a0: Vec<Mat3<f64>> = (0..n).map(|_| random_spd(&mut rng, 1e-4)).collect();
    let k = GaussianKernelSet { centers: p0.clone(), opacities: vec![1.0; n], covariances: a0.clone(), colors: vec![[1.0; 3]; n] };
    let out = deform_kernels(&k, &BindingMatrix::identity(n), &p0, &p1, &f, &a0).unwrap();
    for i in 0..n {
        assert_eq!(out.centers[i], p0[i] + (p1[i] - p0[i]));
        let expect = (f[i] * a0[i] * f[i].transpose()).sym();
        assert!((out.covariances[i] - expect).max_abs() <= 1e-15 * expect.max_abs());
    }
}

proptest! {
    #[test]
    fn translation_moves_centers_and_keeps_covariances(
        t in prop::array::uniform3(-0.3f64..0.3),
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec3<f64>> = (0..60).map(|_| Vec3(std::array::from_fn(|_| rng.gen_range(0.3..0.7)))).collect();
        let ps = particles_at(&pts);
        let mut k = kernels_at(&[], identity3());
        for _ in 0..10 {
            k.centers.push(Vec3(std::array::from_fn(|_| rng.gen_range(0.3..0.7))));
            k.covariances.push(random_spd(&mut rng, 5e-3));
            k.opacities.push(1.0);
            k.colors.push([1.0; 3]);
        }
        let (ps, b) = ensure_coverage(&k, &ps, 0.95).unwrap();
        let t = Vec3::from_f64(t);
        let moved: Vec<Vec3<f64>> = ps.positions.iter().map(|p| *p + t).collect();
        let out = deform_kernels(&k, &b, &ps.positions, &moved, &ps.deformation, &k.covariances).unwrap();
        for i in 0..k.len() {
            prop_assert!((out.centers[i] - (k.centers[i] + t)).max_abs() < 1e-14);
            prop_assert!((out.covariances[i] - k.covariances[i]).max_abs() < 1e-15);
        }
        for s in b.row_sums() {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn composited_pixels_stay_in_unit_range(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 20;
        let k = GaussianKernelSet {
            centers: (0..n).map(|_| Vec3(std::array::from_fn(|_| rng.gen_range(0.2..0.8)))).collect(),
            opacities: (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect(),
            covariances: (0..n).map(|_| random_spd(&mut rng, 4e-3)).collect(),
            colors: (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(0.0..=1.0))).collect(),
        };
        let bg = std::array::from_fn(|_| rng.gen_range(0.0..=1.0));
        let img = splat(&k, &Camera::front(16, 16), bg);
        for p in &img.pixels {
            for &c in p {
                prop_assert!(c.is_finite() && (0.0..=1.0).contains(&c));
            }
        }
    }
}

#[test]
fn empty_scene_renders_background() {
    let k = kernels_at(&[], identity3());
    let img = splat(&k, &Camera::front(8, 6), [0.1, 0.2, 0.3]);
    assert_eq!((img.width, img.height), (8, 6));
    assert!(img.pixels.iter().all(|p| *p == [0.1, 0.2, 0.3]));
}

#[test]
fn single_kernel_peaks_at_its_center() {
    let s = 1.0 / 16.0;
    // Center projects onto the middle of pixel (10, 5).
    let c = [(10.5 - 16.0) / 32.0 + 0.5, 0.5 - (5.5 - 16.0) / 32.0, 0.5];
    let mut k = kernels_at(&[c], [[s * s, 0.0, 0.0], [0.0, s * s, 0.0], [0.0, 0.0, s * s]]);
    k.colors[0] = [1.0; 3];
    let img = splat(&k, &Camera::front(32, 32), [0.0; 3]);
    let best = (0..img.pixels.len()).max_by(|&a, &b| img.pixels[a][0].total_cmp(&img.pixels[b][0])).unwrap();
    assert_eq!((best % 32, best / 32), (10, 5));
    assert!((img.pixels[best][0] - 1.0).abs() < 1e-15);
}

#[test]
fn two_layer_compositing() {
    // Both kernels centered on pixel (0, 0) of a 1x1 image; the front one
    // has half opacity.
    let cam = Camera::Orthographic { center: [0.5, 0.5, 0.0], scale: 1.0, width: 1, height: 1 };
    let cov = [[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.1]];
    let mut k = kernels_at(&[[0.5, 0.5, 0.5], [0.5, 0.5, 0.1]], cov);
    k.opacities = vec![0.5, 1.0];
    k.colors = vec![[1.0, 0.2, 0.0], [0.0, 0.6, 1.0]];
    let img = splat(&k, &cam, [0.3, 0.3, 0.3]);
    let expect = [0.5, 0.4, 0.5];
    for ch in 0..3 {
        assert!((img.pixels[0][ch] - expect[ch]).abs() < 1e-12);
    }
}

#[test]
fn image_loss_examples() {
    let zeros = Image::filled(4, 3, [0.0; 3]);
    let ones = Image::filled(4, 3, [1.0; 3]);
    assert_eq!(image_loss(&zeros, &zeros).unwrap(), 0.0);
    assert_eq!(image_loss(&zeros, &ones).unwrap(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut a = zeros.clone();
    a.pixels.iter_mut().for_each(|p| *p = std::array::from_fn(|_| rng.gen()));
    assert_eq!(image_loss(&a, &ones).unwrap(), image_loss(&ones, &a).unwrap());
    assert!(image_loss(&zeros, &Image::filled(3, 4, [0.0; 3])).is_err());
}

#[test]
fn camera_validation() {
    assert!(Camera::front(0, 4).validate().is_err());
    let good = Camera::Pinhole {
        intrinsics: [[40.0, 0.0, 16.0], [0.0, 40.0, 16.0], [0.0, 0.0, 1.0]],
        extrinsics: [[1.0, 0.0, 0.0, -0.5], [0.0, 1.0, 0.0, -0.5], [0.0, 0.0, 1.0, 2.0]],
        width: 32,
        height: 32,
    };
    good.validate().unwrap();
    let Camera::Pinhole { intrinsics, width, height, .. } = good.clone() else { unreachable!() };
    let sheared = Camera::Pinhole {
        intrinsics,
        extrinsics: [[1.0, 0.5, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 2.0]],
        width,
        height,
    };
    assert!(sheared.validate().is_err());
    let json = serde_json::to_string(&good).unwrap();
    assert!(json.contains("\"type\":\"pinhole\""));
    assert_eq!(serde_json::from_str::<Camera>(&json).unwrap(), good);
}

#[test]
fn kernel_behind_pinhole_camera_is_culled() {
    let cam = Camera::Pinhole {
        intrinsics: [[20.0, 0.0, 8.0], [0.0, 20.0, 8.0], [0.0, 0.0, 1.0]],
        extrinsics: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
        width: 16,
        height: 16,
    };
    let k = kernels_at(&[[0.0, 0.0, -1.0]], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    let img = splat(&k, &cam, [0.0; 3]);
    assert!(img.pixels.iter().all(|p| *p == [0.0; 3]));
}

fn random_scene(seed: u64, n: usize) -> (GaussianKernelSet<f64>, Image<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = GaussianKernelSet {
        centers: (0..n).map(|_| Vec3(std::array::from_fn(|_| rng.gen_range(0.3..0.7)))).collect(),
        opacities: (0..n).map(|_| rng.gen_range(0.3..0.9)).collect(),
        covariances: (0..n).map(|_| random_spd(&mut rng, 3e-3)).collect(),
        colors: (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0))).collect(),
    };
    let mut target = Image::filled(32, 32, [0.0; 3]);
    target.pixels.iter_mut().for_each(|p| *p = std::array::from_fn(|_| rng.gen_range(0.0..1.0)));
    (k, target)
}

fn check_render_gradient(cam: &Camera) {
    let bg = [0.2, 0.3, 0.4];
    let (k, target) = random_scene(5, 12);
    let loss = |k: &GaussianKernelSet<f64>| image_loss(&splat(k, cam, bg), &target).unwrap();
    let img = splat(&k, cam, bg);
    let g = splat_backward(&k, cam, bg, &image_loss_grad(&img, &target).unwrap());
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..k.len() {
        for a in 0..3 {
            let mut kp = k.clone();
            kp.centers[i].0[a] += h;
            let mut km = k.clone();
            km.centers[i].0[a] -= h;
            let fd = (loss(&kp) - loss(&km)) / (2.0 * h);
            let err = (g.centers[i].0[a] - fd).abs() / fd.abs().max(1e-6);
            worst = worst.max(err);
        }
        for (a, b) in [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)] {
            // Symmetric perturbation of the covariance.
            let hc = 1e-8;
            let mut kp = k.clone();
            let mut km = k.clone();
            kp.covariances[i].0[a][b] += hc;
            km.covariances[i].0[a][b] -= hc;
            if a != b {
                kp.covariances[i].0[b][a] += hc;
                km.covariances[i].0[b][a] -= hc;
            }
            let fd = (loss(&kp) - loss(&km)) / (2.0 * hc);
            let an = if a == b { g.covariances[i].0[a][a] } else { g.covariances[i].0[a][b] + g.covariances[i].0[b][a] };
            let err = (an - fd).abs() / fd.abs().max(1e-3);
            worst = worst.max(err);
        }
    }
    assert!(worst <= 1e-3, "worst relative error {worst:.3e}");
}

#[test]
fn orthographic_render_gradient_matches_finite_differences() {
    check_render_gradient(&Camera::front(32, 32));
}

#[test]
fn pinhole_render_gradient_matches_finite_differences() {
    let (c, s) = (0.3f64.cos(), 0.3f64.sin());
    let cam = Camera::Pinhole {
        intrinsics: [[40.0, 0.0, 16.0], [0.0, 40.0, 16.0], [0.0, 0.0, 1.0]],
        extrinsics: [[c, 0.0, s, -0.5 * c - 0.5 * s], [0.0, 1.0, 0.0, -0.5], [-s, 0.0, c, 0.5 * s - 0.5 * c + 1.5]],
        width: 32,
        height: 32,
    };
    cam.validate().unwrap();
    check_render_gradient(&cam);
}

#[test]
fn pixel_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pts: Vec<Vec3<f64>> = (0..30).map(|_| Vec3(std::array::from_fn(|_| rng.gen_range(0.35..0.65)))).collect();
    let ps = particles_at(&pts);
    let mut k = kernels_at(&[], identity3());
    for _ in 0..8 {
        k.centers.push(Vec3(std::array::from_fn(|_| rng.gen_range(0.4..0.6))));
        k.covariances.push(random_spd(&mut rng, 4e-3));
        k.opacities.push(0.7);
        k.colors.push(std::array::from_fn(|_| rng.gen_range(0.0..1.0)));
    }
    let (ps, b) = ensure_coverage(&k, &ps, 0.95).unwrap();
    let bound = BoundKernels::new(k, b, ps.positions.clone()).unwrap();
    let mut state = ps.clone();
    for i in 0..state.len() {
        state.positions[i] += Vec3(std::array::from_fn(|_| rng.gen_range(-0.02..0.02)));
        state.deformation[i] += Mat3(std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-0.1..0.1))));
    }
    let mut target = Image::filled(32, 32, [0.0; 3]);
    target.pixels.iter_mut().for_each(|p| *p = std::array::from_fn(|_| rng.gen_range(0.0..1.0)));
    let loss = PixelLoss {
        kernels: bound,
        camera: Camera::front(32, 32),
        background: [1.0; 3],
        reference: vec![target.clone(), target],
        horizon: 1,
        through_covariance: true,
    };
    let mut g = StateGrad::zeros(state.len());
    loss.frame_loss(1, &state, Some(&mut g)).unwrap();
    let eval = |s: &ParticleSet<f64>| loss.frame_loss(1, s, None).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..state.len() {
        for a in 0..3 {
            let mut sp = state.clone();
            sp.positions[i].0[a] += h;
            let mut sm = state.clone();
            sm.positions[i].0[a] -= h;
            let fd = (eval(&sp) - eval(&sm)) / (2.0 * h);
            worst = worst.max((g.positions[i].0[a] - fd).abs() / fd.abs().max(1e-5));
            for b in 0..3 {
                let mut sp = state.clone();
                sp.deformation[i].0[a][b] += h;
                let mut sm = state.clone();
                sm.deformation[i].0[a][b] -= h;
                let fd = (eval(&sp) - eval(&sm)) / (2.0 * h);
                worst = worst.max((g.deformation[i].0[a][b] - fd).abs() / fd.abs().max(1e-5));
            }
        }
    }
    assert!(worst <= 1e-3, "worst relative error {worst:.3e}");
    assert_eq!(loss.frame_loss(0, &state, None).unwrap(), 0.0);
}
