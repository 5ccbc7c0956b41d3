//! Floating-point scalar abstraction.
//!
//! Everything numeric in the crate is generic over [`Real`], implemented for
//! `f32` (fast mode) and `f64` (verification mode). The trait also carries the
//! dense matrix-product kernel used by the batched neural evaluations so that
//! each precision dispatches to its own tuned routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Short name used in logs and resolved-config snapshots.
    const NAME: &'static str;

    /// Converts an `f64` literal.
    #[inline(always)]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline(always)]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `C = alpha * A * B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// The pointers must be valid for the given shapes and strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Strided view of a dense matrix stored in a slice.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major `rows x cols`.
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, row_stride: cols, col_stride: 1 }
    }

    /// Transposed view of a row-major `cols x rows` buffer.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, row_stride: 1, col_stride: rows }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
        }
    }
}

/// Below this inner or outer size the packed kernel loses to plain loops.
const SMALL_DIM: usize = 8;

fn small_gemm<T: Real>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let at = |i: usize, l: usize| a.data[i * a.row_stride + l * a.col_stride];
    let bt = |l: usize, j: usize| b.data[l * b.row_stride + j * b.col_stride];
    for v in out[..m * n].iter_mut() {
        *v = if beta == T::zero() { T::zero() } else { *v * beta };
    }
    if n > SMALL_DIM {
        // Row updates: out[i, :] += a[i, l] * b[l, :].
        let mut bp = Vec::with_capacity(k * n);
        for l in 0..k {
            for j in 0..n {
                bp.push(bt(l, j));
            }
        }
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for l in 0..k {
                let ail = alpha * at(i, l);
                for (v, &bj) in row.iter_mut().zip(&bp[l * n..(l + 1) * n]) {
                    *v += ail * bj;
                }
            }
        }
    } else {
        // Dot products over contiguous copies of a's rows and b's columns.
        let mut bp = Vec::with_capacity(k * n);
        for j in 0..n {
            for l in 0..k {
                bp.push(bt(l, j));
            }
        }
        let mut ap = Vec::new();
        if a.col_stride != 1 {
            ap.reserve(m * k);
            for i in 0..m {
                for l in 0..k {
                    ap.push(at(i, l));
                }
            }
        }
        for i in 0..m {
            let arow = if a.col_stride == 1 {
                &a.data[i * a.row_stride..i * a.row_stride + k]
            } else {
                &ap[i * k..(i + 1) * k]
            };
            for j in 0..n {
                out[i * n + j] += alpha * dot(arow, &bp[j * k..(j + 1) * k]);
            }
        }
    }
}

fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let mut xc = x.chunks_exact(4);
    let mut yc = y.chunks_exact(4);
    for (a, b) in (&mut xc).zip(&mut yc) {
        for t in 0..4 {
            acc[t] += a[t] * b[t];
        }
    }
    let mut tail = T::zero();
    for (a, b) in xc.remainder().iter().zip(yc.remainder()) {
        tail += *a * *b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out = alpha * a * b + beta * out`, `out` row-major `a.rows x b.cols`.
pub fn gemm<T: Real>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(out.len() >= m * n, "gemm output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out[..m * n].iter_mut() {
            *v = if beta == T::zero() { T::zero() } else { *v * beta };
        }
        return;
    }
    assert!(a.max_offset() < a.data.len() && b.max_offset() < b.data.len());
    if m.min(k).min(n) <= SMALL_DIM {
        small_gemm(alpha, a, b, beta, out);
        return;
    }
    // SAFETY: bounds of both operands and the output were checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
