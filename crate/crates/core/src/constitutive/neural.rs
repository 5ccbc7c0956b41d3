//! Neural stress laws and return mappings.
//!
//! The elastic network sees only the six independent entries of the Green
//! strain `E = (FᵀF - I)/2` and predicts a second Piola-Kirchhoff stress `S`,
//! so `τ = F S Fᵀ` rotates with the deformation. Subtracting the network's
//! output at `E = 0` pins the undeformed state to zero stress.
//!
//! The plastic network acts on principal log-stretches `ε = ln σ(F)`. It is
//! evaluated once per principal direction on `(ε_i, Σε, Σε²)`, which makes the
//! correction permutation-equivariant and keeps `U exp(ε') Vᵀ` a well-defined
//! function of `F` at repeated singular values.

use super::analytic::exp_divided_difference;
use super::lora::LowRankAdapter;
use super::nn::{Mlp, MlpCache, MlpGrad};
use crate::error::{Error, Result};
use crate::linalg::{Mat3, Svd3, Vec3};
use crate::scalar::Real;

pub const ELASTIC_FEATURES: usize = 6;
pub const PLASTIC_FEATURES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralElastic<T> {
    pub net: Mlp<T>,
    pub adapter: Option<LowRankAdapter<T>>,
    /// Composition weight `w` applied to the adapter update.
    pub weight: T,
    /// Stress unit of the network output (Pa).
    pub stress_scale: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralPlastic<T> {
    pub net: Mlp<T>,
    pub adapter: Option<LowRankAdapter<T>>,
    pub weight: T,
}

impl<T: Real> NeuralElastic<T> {
    pub fn effective_net(&self) -> Result<Mlp<T>> {
        match &self.adapter {
            Some(a) => a.compose(&self.net, self.weight),
            None => Ok(self.net.clone()),
        }
    }
}

impl<T: Real> NeuralPlastic<T> {
    pub fn effective_net(&self) -> Result<Mlp<T>> {
        match &self.adapter {
            Some(a) => a.compose(&self.net, self.weight),
            None => Ok(self.net.clone()),
        }
    }
}

/// Upper-triangular entries of the Green strain.
#[inline]
pub fn strain_features<T: Real>(f: &Mat3<T>) -> [T; 6] {
    let c = f.transpose() * *f;
    let h = T::lit(0.5);
    [
        h * (c.0[0][0] - T::one()),
        h * (c.0[1][1] - T::one()),
        h * (c.0[2][2] - T::one()),
        h * c.0[0][1],
        h * c.0[0][2],
        h * c.0[1][2],
    ]
}

#[inline]
fn sym_from_six<T: Real>(y: &[T]) -> Mat3<T> {
    Mat3([[y[0], y[3], y[4]], [y[3], y[1], y[5]], [y[4], y[5], y[2]]])
}

/// Evaluation-ready neural elastic law (adapter folded into the weights).
#[derive(Clone, Debug)]
pub struct PreparedNeuralElastic<T> {
    pub net: Mlp<T>,
    pub rest: Vec<T>,
    pub scale: T,
}

impl<T: Real> PreparedNeuralElastic<T> {
    pub fn new(model: &NeuralElastic<T>) -> Result<Self> {
        let net = model.effective_net()?;
        if net.input_dim() != ELASTIC_FEATURES || net.output_dim() != ELASTIC_FEATURES {
            return Err(Error::Composition(format!(
                "elastic network must map {ELASTIC_FEATURES} -> {ELASTIC_FEATURES}, got {} -> {}",
                net.input_dim(),
                net.output_dim()
            )));
        }
        let rest = net.forward(&[T::zero(); ELASTIC_FEATURES]);
        Ok(Self { net, rest, scale: model.stress_scale })
    }

    fn features(f: &[Mat3<T>]) -> Vec<T> {
        f.iter().flat_map(strain_features).collect()
    }

    pub fn stress_batch(&self, f: &[Mat3<T>]) -> Vec<Mat3<T>> {
        let x = Self::features(f);
        let y = self.net.forward_batch(&x, f.len(), None);
        f.iter()
            .zip(y.chunks_exact(ELASTIC_FEATURES))
            .map(|(fi, yi)| {
                let d: [T; 6] = std::array::from_fn(|k| (yi[k] - self.rest[k]) * self.scale);
                *fi * sym_from_six(&d) * fi.transpose()
            })
            .collect()
    }

    /// Returns `F̄` for every input and accumulates the weight gradient.
    pub fn stress_vjp_batch(&self, f: &[Mat3<T>], g: &[Mat3<T>], grad: Option<&mut MlpGrad<T>>) -> Vec<Mat3<T>> {
        let n = f.len();
        let x = Self::features(f);
        let mut cache = MlpCache::default();
        let y = self.net.forward_batch(&x, n, Some(&mut cache));
        let mut y_bar = vec![T::zero(); n * ELASTIC_FEATURES];
        let mut rest_bar = [T::zero(); ELASTIC_FEATURES];
        for i in 0..n {
            let s_bar = f[i].transpose() * g[i] * f[i];
            let yb = &mut y_bar[i * 6..(i + 1) * 6];
            yb[0] = s_bar.0[0][0] * self.scale;
            yb[1] = s_bar.0[1][1] * self.scale;
            yb[2] = s_bar.0[2][2] * self.scale;
            yb[3] = (s_bar.0[0][1] + s_bar.0[1][0]) * self.scale;
            yb[4] = (s_bar.0[0][2] + s_bar.0[2][0]) * self.scale;
            yb[5] = (s_bar.0[1][2] + s_bar.0[2][1]) * self.scale;
            for k in 0..6 {
                rest_bar[k] -= yb[k];
            }
        }
        let mut grad = grad;
        let x_bar = self
            .net
            .backward_batch(&cache, &y_bar, grad.as_deref_mut(), true)
            .expect("input gradient requested");
        if let Some(gr) = grad {
            let mut rest_cache = MlpCache::default();
            self.net.forward_batch(&[T::zero(); ELASTIC_FEATURES], 1, Some(&mut rest_cache));
            self.net.backward_batch(&rest_cache, &rest_bar, Some(gr), false);
        }
        let half = T::lit(0.5);
        (0..n)
            .map(|i| {
                let yi = &y[i * 6..(i + 1) * 6];
                let d: [T; 6] = std::array::from_fn(|k| (yi[k] - self.rest[k]) * self.scale);
                let s = sym_from_six(&d);
                let xb = &x_bar[i * 6..(i + 1) * 6];
                let e_bar = Mat3([
                    [xb[0], half * xb[3], half * xb[4]],
                    [half * xb[3], xb[1], half * xb[5]],
                    [half * xb[4], half * xb[5], xb[2]],
                ]);
                (g[i] + g[i].transpose()) * f[i] * s + f[i] * e_bar
            })
            .collect()
    }
}

/// Evaluation-ready neural return mapping.
#[derive(Clone, Debug)]
pub struct PreparedNeuralPlastic<T> {
    pub net: Mlp<T>,
    pub rest: T,
}

struct PlasticEval<T> {
    svd: Vec<Svd3<T>>,
    eps: Vec<Vec3<T>>,
    delta: Vec<Vec3<T>>,
    rows: Vec<T>,
}

impl<T: Real> PreparedNeuralPlastic<T> {
    pub fn new(model: &NeuralPlastic<T>) -> Result<Self> {
        let net = model.effective_net()?;
        if net.input_dim() != PLASTIC_FEATURES || net.output_dim() != 1 {
            return Err(Error::Composition(format!(
                "plastic network must map {PLASTIC_FEATURES} -> 1, got {} -> {}",
                net.input_dim(),
                net.output_dim()
            )));
        }
        let rest = net.forward(&[T::zero(); PLASTIC_FEATURES])[0];
        Ok(Self { net, rest })
    }

    fn rows_for(eps: Vec3<T>, out: &mut Vec<T>) {
        let s1 = eps.0[0] + eps.0[1] + eps.0[2];
        let s2 = eps.norm_squared();
        for k in 0..3 {
            out.extend_from_slice(&[eps.0[k], s1, s2]);
        }
    }

    /// Correction `δ(ε)` for a batch of log-stretch triples.
    pub fn correction_batch(&self, eps: &[Vec3<T>]) -> Vec<Vec3<T>> {
        let mut rows = Vec::with_capacity(eps.len() * 9);
        for e in eps {
            Self::rows_for(*e, &mut rows);
        }
        let y = self.net.forward_batch(&rows, eps.len() * 3, None);
        y.chunks_exact(3).map(|c| Vec3([c[0] - self.rest, c[1] - self.rest, c[2] - self.rest])).collect()
    }

    fn evaluate(&self, f: &[Mat3<T>], cache: Option<&mut MlpCache<T>>) -> PlasticEval<T> {
        let svd: Vec<Svd3<T>> = f.iter().map(|m| m.svd_rotations()).collect();
        let eps: Vec<Vec3<T>> =
            svd.iter().map(|s| Vec3([s.sigma.0[0].ln(), s.sigma.0[1].ln(), s.sigma.0[2].ln()])).collect();
        let mut rows = Vec::with_capacity(f.len() * 9);
        for e in &eps {
            Self::rows_for(*e, &mut rows);
        }
        let y = self.net.forward_batch(&rows, f.len() * 3, cache);
        let delta = y.chunks_exact(3).map(|c| Vec3([c[0] - self.rest, c[1] - self.rest, c[2] - self.rest])).collect();
        PlasticEval { svd, eps, delta, rows }
    }

    pub fn project_batch(&self, f: &[Mat3<T>]) -> Vec<Mat3<T>> {
        let ev = self.evaluate(f, None);
        (0..f.len())
            .map(|i| {
                let e = ev.eps[i] + ev.delta[i];
                ev.svd[i].recompose(Vec3([e.0[0].exp(), e.0[1].exp(), e.0[2].exp()]))
            })
            .collect()
    }

    pub fn project_vjp_batch(&self, f: &[Mat3<T>], g: &[Mat3<T>], grad: Option<&mut MlpGrad<T>>) -> Vec<Mat3<T>> {
        let n = f.len();
        let mut cache = MlpCache::default();
        let ev = self.evaluate(f, Some(&mut cache));
        let mut y_bar = vec![T::zero(); 3 * n];
        let mut outs = Vec::with_capacity(n);
        let mut rest_bar = T::zero();
        for i in 0..n {
            let e_out = ev.eps[i] + ev.delta[i];
            let gv = Vec3([e_out.0[0].exp(), e_out.0[1].exp(), e_out.0[2].exp()]);
            let m = ev.svd[i].u.transpose() * g[i] * ev.svd[i].v;
            for k in 0..3 {
                let eb = m.0[k][k] * gv.0[k];
                y_bar[3 * i + k] = eb;
                rest_bar -= eb;
            }
            outs.push((gv, e_out));
        }
        let mut grad = grad;
        let x_bar = self
            .net
            .backward_batch(&cache, &y_bar, grad.as_deref_mut(), true)
            .expect("input gradient requested");
        if let Some(gr) = grad {
            let mut rest_cache = MlpCache::default();
            self.net.forward_batch(&[T::zero(); PLASTIC_FEATURES], 1, Some(&mut rest_cache));
            self.net.backward_batch(&rest_cache, &[rest_bar], Some(gr), false);
        }
        let tie = T::epsilon().sqrt() * T::lit(10.0);
        // Near-equal log-stretches use the slope at the midpoint instead of
        // the divided difference; gather those pairs into one batched JVP.
        let mut tie_rows = Vec::new();
        let mut tie_pairs = Vec::new();
        for i in 0..n {
            let eps = ev.eps[i];
            for (a, b) in [(0, 1), (0, 2), (1, 2)] {
                if (eps.0[a] - eps.0[b]).abs() <= tie {
                    let rows = &ev.rows[9 * i..9 * i + 9];
                    tie_rows.extend_from_slice(&[(eps.0[a] + eps.0[b]) * T::lit(0.5), rows[1], rows[2]]);
                    tie_pairs.push((i, a, b));
                }
            }
        }
        let tangents: Vec<T> = (0..tie_pairs.len()).flat_map(|_| [T::one(), T::zero(), T::zero()]).collect();
        let slopes = if tie_pairs.is_empty() {
            Vec::new()
        } else {
            self.net.jvp_batch(&tie_rows, &tangents, tie_pairs.len())
        };
        let mut next_tie = 0;
        (0..n)
            .map(|i| {
                let eps = ev.eps[i];
                let (gv, e_out) = outs[i];
                let xb = &x_bar[9 * i..9 * i + 9];
                let b_sum = xb[1] + xb[4] + xb[7];
                let c_sum = xb[2] + xb[5] + xb[8];
                let mut sigma_bar = Vec3::zero();
                for j in 0..3 {
                    let eps_bar = y_bar[3 * i + j] + xb[3 * j] + b_sum + T::lit(2.0) * eps.0[j] * c_sum;
                    sigma_bar.0[j] = eps_bar / ev.svd[i].sigma.0[j];
                }
                let delta = ev.delta[i];
                let mut ratios = [T::one(); 3];
                for (slot, (a, b)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
                    let gap = eps.0[a] - eps.0[b];
                    ratios[slot] = if gap.abs() > tie {
                        T::one() + (delta.0[a] - delta.0[b]) / gap
                    } else {
                        debug_assert_eq!(tie_pairs[next_tie], (i, a, b));
                        next_tie += 1;
                        T::one() + slopes[next_tie - 1]
                    };
                }
                ev.svd[i].spectral_vjp(gv, &g[i], sigma_bar, |a, b| {
                    let slot = match (a.min(b), a.max(b)) {
                        (0, 1) => 0,
                        (0, 2) => 1,
                        _ => 2,
                    };
                    exp_divided_difference(e_out.0[a], e_out.0[b]) * ratios[slot]
                        / exp_divided_difference(eps.0[a], eps.0[b])
                })
            })
            .collect()
    }
}
