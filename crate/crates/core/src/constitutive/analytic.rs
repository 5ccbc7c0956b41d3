//! Closed-form stress laws and return mappings, with their reverse-mode
//! derivatives. All elastic laws return the Kirchhoff stress `τ = P Fᵀ`.

use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

pub fn neo_hookean<T: Real>(mu: T, lambda: T, f: &Mat3<T>) -> Mat3<T> {
    let j = f.det();
    (*f * f.transpose() - Mat3::identity()).scale(mu) + Mat3::scaled_identity(lambda * j.ln())
}

pub fn neo_hookean_vjp<T: Real>(mu: T, lambda: T, f: &Mat3<T>, g: &Mat3<T>) -> Mat3<T> {
    let j = f.det();
    let f_inv_t = f.cofactor().scale(T::one() / j);
    ((*g + g.transpose()) * *f).scale(mu) + f_inv_t.scale(lambda * g.trace())
}

fn stvk_pk2<T: Real>(mu: T, lambda: T, f: &Mat3<T>) -> Mat3<T> {
    let e = (f.transpose() * *f - Mat3::identity()).scale(T::lit(0.5));
    e.scale(T::lit(2.0) * mu) + Mat3::scaled_identity(lambda * e.trace())
}

pub fn stvk<T: Real>(mu: T, lambda: T, f: &Mat3<T>) -> Mat3<T> {
    *f * stvk_pk2(mu, lambda, f) * f.transpose()
}

pub fn stvk_vjp<T: Real>(mu: T, lambda: T, f: &Mat3<T>, g: &Mat3<T>) -> Mat3<T> {
    let s = stvk_pk2(mu, lambda, f);
    let s_bar = f.transpose() * *g * *f;
    let e_bar = s_bar.scale(T::lit(2.0) * mu) + Mat3::scaled_identity(lambda * s_bar.trace());
    (*g + g.transpose()) * *f * s + *f * e_bar.sym()
}

pub fn fixed_corotated<T: Real>(mu: T, lambda: T, f: &Mat3<T>) -> Mat3<T> {
    let svd = f.svd_rotations();
    let r = svd.u * svd.v.transpose();
    let j = f.det();
    ((*f - r) * f.transpose()).scale(T::lit(2.0) * mu) + Mat3::scaled_identity(lambda * (j - T::one()) * j)
}

pub fn fixed_corotated_vjp<T: Real>(mu: T, lambda: T, f: &Mat3<T>, g: &Mat3<T>) -> Mat3<T> {
    let two = T::lit(2.0);
    let svd = f.svd_rotations();
    let r = svd.u * svd.v.transpose();
    let p = *f - r;
    let p_bar = (*g * *f).scale(two * mu);
    let mut f_bar = (g.transpose() * p).scale(two * mu) + p_bar;
    f_bar -= svd.spectral_vjp(Vec3::splat(T::one()), &p_bar, Vec3::zero(), |_, _| T::zero());
    let j = f.det();
    let j_bar = lambda * (two * j - T::one()) * g.trace();
    f_bar + f.cofactor().scale(j_bar)
}

/// Outcome of a return mapping in log-principal-stretch space.
#[derive(Clone, Copy, Debug)]
pub struct LogReturn<T> {
    pub eps: Vec3<T>,
    /// True when the trial state was already admissible.
    pub elastic: bool,
    /// `(ε'_i - ε'_j) / (ε_i - ε_j)`, identical for every pair.
    pub pair_ratio: T,
}

fn dev_split<T: Real>(eps: Vec3<T>) -> (T, Vec3<T>) {
    let mean = (eps.0[0] + eps.0[1] + eps.0[2]) / T::lit(3.0);
    (mean, eps - Vec3::splat(mean))
}

/// Von Mises radial return: `‖2μ dev(ε')‖ ≤ yield_stress`.
pub fn von_mises_return<T: Real>(eps: Vec3<T>, mu: T, yield_stress: T) -> LogReturn<T> {
    let (mean, dev) = dev_split(eps);
    let radius = yield_stress / (T::lit(2.0) * mu);
    let norm = dev.norm();
    if norm <= radius {
        return LogReturn { eps, elastic: true, pair_ratio: T::one() };
    }
    let c = radius / norm;
    LogReturn { eps: Vec3::splat(mean) + dev.scale(c), elastic: false, pair_ratio: c }
}

pub fn von_mises_return_vjp<T: Real>(eps: Vec3<T>, mu: T, yield_stress: T, eps_bar_out: Vec3<T>) -> Vec3<T> {
    let (_, dev) = dev_split(eps);
    let radius = yield_stress / (T::lit(2.0) * mu);
    let norm = dev.norm();
    if norm <= radius {
        return eps_bar_out;
    }
    let n = dev.scale(T::one() / norm);
    let sum = (eps_bar_out.0[0] + eps_bar_out.0[1] + eps_bar_out.0[2]) / T::lit(3.0);
    // d(dev/‖dev‖) = (I - n nᵀ) d(dev) / ‖dev‖
    let tangential = (eps_bar_out - n.scale(n.dot(eps_bar_out))).scale(radius / norm);
    let (_, tangential_dev) = dev_split(tangential);
    Vec3::splat(sum) + tangential_dev
}

/// Cone coefficient `β = (3λ + 2μ)/(2μ) · sqrt(2/3) · 2 sin φ / (3 - sin φ)`.
pub fn drucker_prager_beta<T: Real>(friction_angle_deg: T, mu: T, lambda: T) -> T {
    let s = friction_angle_deg.to_radians().sin();
    let alpha = T::lit((2.0f64 / 3.0).sqrt()) * T::lit(2.0) * s / (T::lit(3.0) - s);
    (T::lit(3.0) * lambda + T::lit(2.0) * mu) / (T::lit(2.0) * mu) * alpha
}

/// Drucker-Prager cone projection in log-stretch space.
pub fn drucker_prager_return<T: Real>(eps: Vec3<T>, friction_angle_deg: T, mu: T, lambda: T) -> LogReturn<T> {
    let beta = drucker_prager_beta(friction_angle_deg, mu, lambda);
    let (mean, dev) = dev_split(eps);
    let tr = mean * T::lit(3.0);
    if tr >= T::zero() {
        return LogReturn { eps: Vec3::zero(), elastic: false, pair_ratio: T::zero() };
    }
    let norm = dev.norm();
    let dgamma = norm + beta * tr;
    if dgamma <= T::zero() {
        return LogReturn { eps, elastic: true, pair_ratio: T::one() };
    }
    // ε' = (tr/3) 1 - β tr n
    let c = -beta * tr / norm;
    LogReturn { eps: Vec3::splat(mean) + dev.scale(c), elastic: false, pair_ratio: c }
}

pub fn drucker_prager_return_vjp<T: Real>(
    eps: Vec3<T>,
    friction_angle_deg: T,
    mu: T,
    lambda: T,
    eps_bar_out: Vec3<T>,
) -> Vec3<T> {
    let beta = drucker_prager_beta(friction_angle_deg, mu, lambda);
    let (mean, dev) = dev_split(eps);
    let tr = mean * T::lit(3.0);
    if tr >= T::zero() {
        return Vec3::zero();
    }
    let norm = dev.norm();
    if norm + beta * tr <= T::zero() {
        return eps_bar_out;
    }
    let n = dev.scale(T::one() / norm);
    let third = T::one() / T::lit(3.0);
    let sum = eps_bar_out.0[0] + eps_bar_out.0[1] + eps_bar_out.0[2];
    // d tr = 1·dε ; contributions: (1/3)·1 d tr  and  -β n d tr
    let tr_bar = sum * third - beta * n.dot(eps_bar_out);
    let tangential = (eps_bar_out - n.scale(n.dot(eps_bar_out))).scale(-beta * tr / norm);
    let (_, tangential_dev) = dev_split(tangential);
    Vec3::splat(tr_bar) + tangential_dev
}

/// Yield function value `‖dev ε‖ + β tr ε` (≤ 0 inside the cone).
pub fn drucker_prager_yield<T: Real>(eps: Vec3<T>, friction_angle_deg: T, mu: T, lambda: T) -> T {
    let beta = drucker_prager_beta(friction_angle_deg, mu, lambda);
    let (mean, dev) = dev_split(eps);
    dev.norm() + beta * mean * T::lit(3.0)
}

/// `(e^a - e^b) / (a - b)` evaluated stably, including the tie limit.
pub fn exp_divided_difference<T: Real>(a: T, b: T) -> T {
    let d = a - b;
    if d.abs() < T::lit(1e-12) {
        return b.exp() * (T::one() + d * T::lit(0.5));
    }
    b.exp() * d.exp_m1() / d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_f(rng: &mut ChaCha8Rng) -> Mat3<f64> {
        let r1: Mat3<f64> = random_rotation(rng);
        let r2: Mat3<f64> = random_rotation(rng);
        let s = Vec3::new(rng.gen_range(0.75..1.3), rng.gen_range(0.75..1.3), rng.gen_range(0.75..1.3));
        r1 * Mat3::diag(s) * r2.transpose()
    }

    fn check_vjp(
        stress: impl Fn(&Mat3<f64>) -> Mat3<f64>,
        vjp: impl Fn(&Mat3<f64>, &Mat3<f64>) -> Mat3<f64>,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let f = random_f(&mut rng);
            let g = random_f(&mut rng);
            let fb = vjp(&f, &g);
            let h = 1e-6;
            for i in 0..3 {
                for j in 0..3 {
                    let mut fp = f;
                    fp.0[i][j] += h;
                    let mut fm = f;
                    fm.0[i][j] -= h;
                    let fd = (stress(&fp) - stress(&fm)).ddot(&g) / (2.0 * h);
                    assert!((fd - fb.0[i][j]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", fb.0[i][j]);
                }
            }
        }
    }

    #[test]
    fn neo_hookean_closed_form_example() {
        let f = Mat3::diag(Vec3::new(2.0, 1.0, 1.0));
        let tau = neo_hookean(1.0, 1.0, &f);
        let l2 = 2f64.ln();
        let expect = Mat3::diag(Vec3::new(3.0 + l2, l2, l2));
        assert!((tau - expect).max_abs() < 1e-15);
    }

    #[test]
    fn elastic_vjps_match_finite_differences() {
        check_vjp(|f| neo_hookean(1.3, 0.7, f), |f, g| neo_hookean_vjp(1.3, 0.7, f, g));
        check_vjp(|f| stvk(1.3, 0.7, f), |f, g| stvk_vjp(1.3, 0.7, f, g));
        check_vjp(|f| fixed_corotated(1.3, 0.7, f), |f, g| fixed_corotated_vjp(1.3, 0.7, f, g));
    }

    #[test]
    fn von_mises_example_lands_on_yield_surface() {
        let eps = Vec3::<f64>::new(0.2, -0.2, 0.0);
        let out = von_mises_return(eps, 1.0, 0.1);
        let (_, dev) = dev_split(out.eps);
        assert!((2.0 * dev.norm() - 0.1).abs() < 1e-15);
        assert!(!out.elastic);
    }

    #[test]
    fn log_return_vjps_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let eps = Vec3::<f64>::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.1));
            let gbar = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let vm = von_mises_return_vjp(eps, 1.0, 0.1, gbar);
            let dp = drucker_prager_return_vjp(eps, 30.0, 1.0, 1.0, gbar);
            let h = 1e-7;
            for k in 0..3 {
                let mut ep = eps;
                ep.0[k] += h;
                let mut em = eps;
                em.0[k] -= h;
                let fd_vm = (von_mises_return(ep, 1.0, 0.1).eps - von_mises_return(em, 1.0, 0.1).eps).dot(gbar) / (2.0 * h);
                assert!((fd_vm - vm.0[k]).abs() < 1e-6);
                let fd_dp = (drucker_prager_return(ep, 30.0, 1.0, 1.0).eps
                    - drucker_prager_return(em, 30.0, 1.0, 1.0).eps)
                    .dot(gbar)
                    / (2.0 * h);
                assert!((fd_dp - dp.0[k]).abs() < 1e-6, "{fd_dp} vs {}", dp.0[k]);
            }
        }
    }

    #[test]
    fn pair_ratio_is_consistent() {
        let eps = Vec3::<f64>::new(0.25, -0.1, -0.3);
        for out in [von_mises_return(eps, 1.0, 0.1), drucker_prager_return(eps, 30.0, 1.0, 1.0)] {
            let r = (out.eps.0[0] - out.eps.0[1]) / (eps.0[0] - eps.0[1]);
            assert!((r - out.pair_ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_divided_difference_limit() {
        assert!((exp_divided_difference(0.3, 0.3) - 0.3f64.exp()).abs() < 1e-15);
        let v = exp_divided_difference(0.3, 0.1);
        assert!((v - (0.3f64.exp() - 0.1f64.exp()) / 0.2).abs() < 1e-14);
    }
}
