//! Dense multilayer perceptrons with SiLU activations, evaluated in batches.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Real};

/// One affine layer, `y = W x + b`, with `W` stored row-major (`rows = out`).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DenseLayer<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, weight: vec![T::zero(); rows * cols], bias: vec![T::zero(); rows] }
    }

    /// Xavier-normal weights, zero bias.
    pub fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let std = (2.0 / (rows + cols) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let weight = (0..rows * cols).map(|_| T::lit(normal.sample(rng))).collect();
        Self { rows, cols, weight, bias: vec![T::zero(); rows] }
    }

    pub fn cast<U: Real>(&self) -> DenseLayer<U> {
        DenseLayer {
            rows: self.rows,
            cols: self.cols,
            weight: self.weight.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            bias: self.bias.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

#[inline]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = T::one() / (T::one() + (-x).exp());
    s * (T::one() + x * (T::one() - s))
}

/// Chain of dense layers with SiLU between consecutive layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<DenseLayer<T>>,
}

/// Activations retained by [`Mlp::forward_batch`] for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpCache<T> {
    pub batch: usize,
    pub input: Vec<T>,
    /// Logistic sigmoid of every hidden pre-activation.
    pub sig: Vec<Vec<T>>,
    /// Post-activation of every hidden layer.
    pub post: Vec<Vec<T>>,
}

/// Gradient with respect to every layer's weight and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad<T> {
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Real> MlpGrad<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self { layers: net.layers.iter().map(|l| DenseLayer::zeros(l.rows, l.cols)).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += *y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += *y);
        }
    }

    pub fn norm_squared(&self) -> T {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias))
            .fold(T::zero(), |s, &v| s + v * v)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias)).all(|v| v.is_finite())
    }
}

impl<T: Real> Mlp<T> {
    /// Random network with the given layer widths, e.g. `[6, 64, 64, 6]`.
    pub fn new_random<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2);
        let layers = widths.windows(2).map(|w| DenseLayer::xavier(w[1], w[0], rng)).collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("network needs at least one layer".into()));
        }
        for l in &layers {
            if l.weight.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::Argument("layer buffer sizes do not match its shape".into()));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].rows != pair[1].cols {
                return Err(Error::Argument(format!(
                    "layer shapes do not chain: {} outputs feed {} inputs",
                    pair[0].rows, pair[1].cols
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.rows).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp { layers: self.layers.iter().map(|l| l.cast()).collect() }
    }

    /// Evaluates `batch` row-major inputs; returns row-major outputs.
    pub fn forward_batch(&self, input: &[T], batch: usize, cache: Option<&mut MlpCache<T>>) -> Vec<T> {
        assert_eq!(input.len(), batch * self.input_dim());
        let last = self.layers.len() - 1;
        let mut current: Vec<T> = input.to_vec();
        let mut sig_store = Vec::new();
        let mut post_store = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = vec![T::zero(); batch * layer.rows];
            for row in out.chunks_exact_mut(layer.rows) {
                row.copy_from_slice(&layer.bias);
            }
            gemm(
                T::one(),
                MatRef::row_major(&current, batch, layer.cols),
                MatRef::transposed(&layer.weight, layer.cols, layer.rows),
                T::one(),
                &mut out,
            );
            if li < last {
                if cache.is_some() {
                    let sig: Vec<T> = out.iter().map(|&z| T::one() / (T::one() + (-z).exp())).collect();
                    out.iter_mut().zip(&sig).for_each(|(z, &s)| *z *= s);
                    sig_store.push(sig);
                    post_store.push(out.clone());
                } else {
                    out.iter_mut().for_each(|z| *z = silu(*z));
                }
                current = out;
            } else {
                current = out;
            }
        }
        if let Some(c) = cache {
            c.batch = batch;
            c.input = input.to_vec();
            c.sig = sig_store;
            c.post = post_store;
        }
        current
    }

    /// Single-input convenience wrapper.
    pub fn forward(&self, input: &[T]) -> Vec<T> {
        self.forward_batch(input, 1, None)
    }

    /// Backpropagates `out_grad` (row-major, `batch x out`), accumulating
    /// parameter gradients into `grad` and returning the input gradient.
    pub fn backward_batch(
        &self,
        cache: &MlpCache<T>,
        out_grad: &[T],
        grad: Option<&mut MlpGrad<T>>,
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        let batch = cache.batch;
        assert_eq!(out_grad.len(), batch * self.output_dim());
        let mut grad = grad;
        let mut delta: Vec<T> = out_grad.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let layer_input: &[T] = if li == 0 { &cache.input } else { &cache.post[li - 1] };
            if let Some(g) = grad.as_deref_mut() {
                let gl = &mut g.layers[li];
                gemm(
                    T::one(),
                    MatRef::transposed(&delta, layer.rows, batch),
                    MatRef::row_major(layer_input, batch, layer.cols),
                    T::one(),
                    &mut gl.weight,
                );
                for row in delta.chunks_exact(layer.rows) {
                    gl.bias.iter_mut().zip(row).for_each(|(b, &d)| *b += d);
                }
            }
            if li == 0 && !want_input_grad {
                return None;
            }
            let mut prev = vec![T::zero(); batch * layer.cols];
            gemm(
                T::one(),
                MatRef::row_major(&delta, batch, layer.rows),
                MatRef::row_major(&layer.weight, layer.rows, layer.cols),
                T::zero(),
                &mut prev,
            );
            if li > 0 {
                // silu'(z) = s + silu(z) (1 - s)
                let sig = &cache.sig[li - 1];
                let post = &cache.post[li - 1];
                for ((d, &s), &y) in prev.iter_mut().zip(sig).zip(post) {
                    *d *= s + y * (T::one() - s);
                }
            }
            delta = prev;
        }
        Some(delta)
    }

    /// Forward-mode directional derivatives of the output for `batch`
    /// row-major inputs and tangents.
    pub fn jvp_batch(&self, input: &[T], tangent: &[T], batch: usize) -> Vec<T> {
        assert_eq!(input.len(), batch * self.input_dim());
        assert_eq!(tangent.len(), input.len());
        let last = self.layers.len() - 1;
        let mut x = input.to_vec();
        let mut dx = tangent.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let w = MatRef::transposed(&layer.weight, layer.cols, layer.rows);
            let mut z = vec![T::zero(); batch * layer.rows];
            for row in z.chunks_exact_mut(layer.rows) {
                row.copy_from_slice(&layer.bias);
            }
            gemm(T::one(), MatRef::row_major(&x, batch, layer.cols), w, T::one(), &mut z);
            let mut dz = vec![T::zero(); batch * layer.rows];
            gemm(T::one(), MatRef::row_major(&dx, batch, layer.cols), w, T::zero(), &mut dz);
            if li < last {
                for (zv, dv) in z.iter_mut().zip(dz.iter_mut()) {
                    let s = T::one() / (T::one() + (-*zv).exp());
                    *zv *= s;
                    *dv *= s + *zv * (T::one() - s);
                }
            }
            x = z;
            dx = dz;
        }
        dx
    }

    /// Forward-mode directional derivative for a single input.
    pub fn jvp(&self, input: &[T], tangent: &[T]) -> (Vec<T>, Vec<T>) {
        let last = self.layers.len() - 1;
        let mut x = input.to_vec();
        let mut dx = tangent.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.bias.clone();
            let mut dz = vec![T::zero(); layer.rows];
            for r in 0..layer.rows {
                let w = &layer.weight[r * layer.cols..(r + 1) * layer.cols];
                for c in 0..layer.cols {
                    z[r] += w[c] * x[c];
                    dz[r] += w[c] * dx[c];
                }
            }
            if li < last {
                for r in 0..layer.rows {
                    dz[r] *= silu_grad(z[r]);
                    z[r] = silu(z[r]);
                }
            }
            x = z;
            dx = dz;
        }
        (x, dx)
    }
}
