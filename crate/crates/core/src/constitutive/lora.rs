//! Low-rank residual adapters for dense layers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::nn::{DenseLayer, Mlp, MlpGrad};
use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Real};

pub const DEFAULT_RANK: usize = 16;
pub const DEFAULT_ALPHA: f64 = 16.0;
const A_INIT_STD: f64 = 0.01;

/// Factors of one layer's update `ΔW = B A`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraLayer<T> {
    /// `rank x in`, row-major.
    pub a: Vec<T>,
    /// `out x rank`, row-major.
    pub b: Vec<T>,
    pub rows: usize,
    pub cols: usize,
}

/// Per-layer low-rank adapter for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankAdapter<T> {
    pub rank: usize,
    pub alpha: T,
    pub layers: Vec<LoraLayer<T>>,
}

impl<T: Real> LowRankAdapter<T> {
    /// Gaussian `A`, zero `B`: the adapter starts as an exact no-op.
    pub fn new<R: Rng + ?Sized>(net: &Mlp<T>, rank: usize, alpha: T, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, A_INIT_STD).expect("valid std");
        let layers = net
            .layers
            .iter()
            .map(|l| LoraLayer {
                a: (0..rank * l.cols).map(|_| T::lit(normal.sample(rng))).collect(),
                b: vec![T::zero(); l.rows * rank],
                rows: l.rows,
                cols: l.cols,
            })
            .collect();
        Self { rank, alpha, layers }
    }

    /// Default composition weight `alpha / rank`.
    pub fn default_weight(&self) -> T {
        self.alpha / T::lit(self.rank as f64)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.a.len() + l.b.len()).sum()
    }

    pub fn check_compatible(&self, net: &Mlp<T>) -> Result<()> {
        if self.layers.len() != net.layers.len() {
            return Err(Error::Composition(format!(
                "adapter has {} layers, network has {}",
                self.layers.len(),
                net.layers.len()
            )));
        }
        for (i, (a, l)) in self.layers.iter().zip(&net.layers).enumerate() {
            if a.rows != l.rows || a.cols != l.cols {
                return Err(Error::Composition(format!(
                    "layer {i}: adapter is {}x{}, network is {}x{}",
                    a.rows, a.cols, l.rows, l.cols
                )));
            }
            if a.a.len() != self.rank * a.cols || a.b.len() != a.rows * self.rank {
                return Err(Error::Composition(format!("layer {i}: factor sizes disagree with rank")));
            }
        }
        Ok(())
    }

    /// `W + w B A` for every layer.
    pub fn compose(&self, net: &Mlp<T>, weight: T) -> Result<Mlp<T>> {
        self.check_compatible(net)?;
        let mut out = net.clone();
        for (layer, ad) in out.layers.iter_mut().zip(&self.layers) {
            gemm(
                weight,
                MatRef::row_major(&ad.b, ad.rows, self.rank),
                MatRef::row_major(&ad.a, self.rank, ad.cols),
                T::one(),
                &mut layer.weight,
            );
        }
        Ok(out)
    }

    /// Maps a gradient with respect to the composed weights onto `A` and `B`:
    /// `Ā = w Bᵀ W̄`, `B̄ = w W̄ Aᵀ`.
    pub fn pull_back(&self, grad: &MlpGrad<T>, weight: T) -> AdapterGrad<T> {
        let layers = self
            .layers
            .iter()
            .zip(&grad.layers)
            .map(|(ad, g)| {
                let mut ga = vec![T::zero(); ad.a.len()];
                gemm(
                    weight,
                    MatRef::transposed(&ad.b, self.rank, ad.rows),
                    MatRef::row_major(&g.weight, ad.rows, ad.cols),
                    T::zero(),
                    &mut ga,
                );
                let mut gb = vec![T::zero(); ad.b.len()];
                gemm(
                    weight,
                    MatRef::row_major(&g.weight, ad.rows, ad.cols),
                    MatRef::transposed(&ad.a, ad.cols, self.rank),
                    T::zero(),
                    &mut gb,
                );
                LoraLayer { a: ga, b: gb, rows: ad.rows, cols: ad.cols }
            })
            .collect();
        AdapterGrad { layers }
    }

    pub fn cast<U: Real>(&self) -> LowRankAdapter<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect();
        LowRankAdapter {
            rank: self.rank,
            alpha: U::lit(self.alpha.to_f64_lossy()),
            layers: self
                .layers
                .iter()
                .map(|l| LoraLayer { a: c(&l.a), b: c(&l.b), rows: l.rows, cols: l.cols })
                .collect(),
        }
    }

    /// All factor entries in a fixed order (per layer: `A` then `B`).
    pub fn flatten(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.a.iter().chain(&l.b).copied()).collect()
    }

    pub fn unflatten(&mut self, flat: &[T]) {
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for v in l.a.iter_mut().chain(l.b.iter_mut()) {
                *v = it.next().expect("flat parameter vector too short");
            }
        }
    }
}

/// Gradient with the same layout as [`LowRankAdapter`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterGrad<T> {
    pub layers: Vec<LoraLayer<T>>,
}

impl<T: Real> AdapterGrad<T> {
    pub fn flatten(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.a.iter().chain(&l.b).copied()).collect()
    }

    pub fn norm(&self) -> T {
        self.flatten().iter().fold(T::zero(), |s, &v| s + v * v).sqrt()
    }
}

/// Flattens a network's weights and biases (per layer: weight then bias).
pub fn flatten_net<T: Real>(net: &Mlp<T>) -> Vec<T> {
    net.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias).copied()).collect()
}

pub fn unflatten_net<T: Real>(net: &mut Mlp<T>, flat: &[T]) {
    let mut it = flat.iter().copied();
    for l in &mut net.layers {
        for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            *v = it.next().expect("flat parameter vector too short");
        }
    }
}

pub fn flatten_grad<T: Real>(grad: &MlpGrad<T>) -> Vec<T> {
    grad.layers.iter().flat_map(|l: &DenseLayer<T>| l.weight.iter().chain(&l.bias).copied()).collect()
}
