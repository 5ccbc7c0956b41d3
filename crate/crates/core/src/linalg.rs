//! Small fixed-size vectors and matrices.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, MulAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Vec3<T>(pub [T; 3]);

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Mat3<T>(pub [[T; 3]; 3]);

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3([x, y, z])
    }

    #[inline]
    pub fn zero() -> Self {
        Vec3([T::zero(); 3])
    }

    #[inline]
    pub fn splat(v: T) -> Self {
        Vec3([v; 3])
    }

    pub fn from_f64(v: [f64; 3]) -> Self {
        Vec3([T::lit(v[0]), T::lit(v[1]), T::lit(v[2])])
    }

    pub fn to_f64(self) -> [f64; 3] {
        [self.0[0].to_f64_lossy(), self.0[1].to_f64_lossy(), self.0[2].to_f64_lossy()]
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::from_f64(self.to_f64())
    }

    #[inline]
    pub fn x(self) -> T {
        self.0[0]
    }
    #[inline]
    pub fn y(self) -> T {
        self.0[1]
    }
    #[inline]
    pub fn z(self) -> T {
        self.0[2]
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        let [a, b, c] = self.0;
        let [d, e, f] = o.0;
        Vec3([b * f - c * e, c * d - a * f, a * e - b * d])
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    #[inline]
    pub fn scale(self, s: T) -> Self {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    /// `self ⊗ o`, i.e. `self * oᵀ`.
    #[inline]
    pub fn outer(self, o: Self) -> Mat3<T> {
        let mut m = [[T::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.0[i] * o.0[j];
            }
        }
        Mat3(m)
    }

    pub fn max_abs(self) -> T {
        self.0.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn component_min(self, o: Self) -> Self {
        Vec3([self.0[0].min(o.0[0]), self.0[1].min(o.0[1]), self.0[2].min(o.0[2])])
    }

    pub fn component_max(self, o: Self) -> Self {
        Vec3([self.0[0].max(o.0[0]), self.0[1].max(o.0[1]), self.0[2].max(o.0[2])])
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        for i in 0..3 {
            self.0[i] += o.0[i];
        }
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        for i in 0..3 {
            self.0[i] -= o.0[i];
        }
    }
}

impl<T: Real> MulAssign<T> for Vec3<T> {
    #[inline]
    fn mul_assign(&mut self, s: T) {
        for i in 0..3 {
            self.0[i] *= s;
        }
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    #[inline]
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T> IndexMut<usize> for Vec3<T> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

impl<T: Real> Mat3<T> {
    #[inline]
    pub fn zero() -> Self {
        Mat3([[T::zero(); 3]; 3])
    }

    #[inline]
    pub fn identity() -> Self {
        Self::diag(Vec3::splat(T::one()))
    }

    #[inline]
    pub fn diag(d: Vec3<T>) -> Self {
        let z = T::zero();
        Mat3([[d.0[0], z, z], [z, d.0[1], z], [z, z, d.0[2]]])
    }

    pub fn scaled_identity(s: T) -> Self {
        Self::diag(Vec3::splat(s))
    }

    pub fn from_rows(r0: Vec3<T>, r1: Vec3<T>, r2: Vec3<T>) -> Self {
        Mat3([r0.0, r1.0, r2.0])
    }

    pub fn from_cols(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Self::from_rows(c0, c1, c2).transpose()
    }

    pub fn from_f64(m: [[f64; 3]; 3]) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = T::lit(m[i][j]);
            }
        }
        out
    }

    pub fn to_f64(self) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = self.0[i][j].to_f64_lossy();
            }
        }
        out
    }

    pub fn cast<U: Real>(self) -> Mat3<U> {
        Mat3::from_f64(self.to_f64())
    }

    #[inline]
    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3(self.0[i])
    }

    #[inline]
    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat3([[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]])
    }

    #[inline]
    pub fn trace(&self) -> T {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    #[inline]
    pub fn det(&self) -> T {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Cofactor matrix, `det(F) F⁻ᵀ`.
    pub fn cofactor(&self) -> Self {
        let m = &self.0;
        Mat3([
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
            ],
            [
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
            ],
            [
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ])
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == T::zero() || !d.is_finite() {
            return None;
        }
        Some(self.cofactor().transpose().scale(T::one() / d))
    }

    #[inline]
    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for row in out.0.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3([self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v)])
    }

    /// `selfᵀ v`.
    #[inline]
    pub fn tr_mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3([self.col(0).dot(v), self.col(1).dot(v), self.col(2).dot(v)])
    }

    /// Frobenius inner product.
    #[inline]
    pub fn ddot(&self, o: &Self) -> T {
        let mut s = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                s += self.0[i][j] * o.0[i][j];
            }
        }
        s
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.ddot(self).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().flatten().fold(T::zero(), |a, &b| a.max(b.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    #[inline]
    pub fn sym(&self) -> Self {
        (*self + self.transpose()).scale(T::lit(0.5))
    }

    pub fn diagonal(&self) -> Vec3<T> {
        Vec3([self.0[0][0], self.0[1][1], self.0[2][2]])
    }

    /// Row-major flattening.
    pub fn to_array(&self) -> [T; 9] {
        let m = &self.0;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    pub fn from_array(a: &[T]) -> Self {
        Mat3([[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]])
    }

    /// Lower Cholesky factor of a symmetric positive definite matrix.
    pub fn cholesky(&self) -> Option<Self> {
        let a = &self.0;
        let mut l = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..=i {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if !(s > T::zero()) || !s.is_finite() {
                        return None;
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        Some(Mat3(l))
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    /// Returns eigenvalues and an orthonormal eigenvector matrix (columns).
    pub fn sym_eigen(&self) -> (Vec3<T>, Mat3<T>) {
        let mut a = self.sym().0;
        let mut v = Self::identity().0;
        let tiny = T::epsilon() * T::epsilon();
        for _sweep in 0..50 {
            let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
            let diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
            if off <= tiny * diag || off == T::zero() {
                break;
            }
            for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
                let apq = a[p][q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..3 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
        (Vec3([a[0][0], a[1][1], a[2][2]]), Mat3(v))
    }

    /// Rotation-proper singular value decomposition `F = U diag(σ) Vᵀ` with
    /// `U, V ∈ SO(3)`. Requires `det F > 0`; singular values come back
    /// positive but unsorted.
    pub fn svd_rotations(&self) -> Svd3<T> {
        let c = self.transpose() * *self;
        let (lambda, mut v) = c.sym_eigen();
        if v.det() < T::zero() {
            for row in v.0.iter_mut() {
                row[2] = -row[2];
            }
        }
        let mut sigma = Vec3::zero();
        for i in 0..3 {
            sigma.0[i] = lambda.0[i].max(T::zero()).sqrt();
        }
        let fv = *self * v;
        // Columns of F V have norms σ_i and are mutually orthogonal.
        let mut u0 = fv.col(0);
        let n0 = u0.norm();
        u0 = u0.scale(T::one() / n0);
        let mut u1 = fv.col(1);
        u1 -= u0.scale(u0.dot(u1));
        let n1 = u1.norm();
        u1 = u1.scale(T::one() / n1);
        let u2 = u0.cross(u1);
        let u = Mat3::from_cols(u0, u1, u2);
        // σ_2 carries the sign consistent with det F; it is positive for det F > 0.
        sigma.0[2] = fv.col(2).dot(u2);
        Svd3 { u, sigma, v }
    }

    pub fn exp_diag(d: Vec3<T>) -> Self {
        Self::diag(Vec3([d.0[0].exp(), d.0[1].exp(), d.0[2].exp()]))
    }
}

/// Result of [`Mat3::svd_rotations`].
#[derive(Clone, Copy, Debug)]
pub struct Svd3<T> {
    pub u: Mat3<T>,
    pub sigma: Vec3<T>,
    pub v: Mat3<T>,
}

impl<T: Real> Svd3<T> {
    /// `U diag(s) Vᵀ`.
    pub fn recompose(&self, s: Vec3<T>) -> Mat3<T> {
        self.u * Mat3::diag(s) * self.v.transpose()
    }

    /// Reverse-mode derivative of `G = U diag(g) Vᵀ` where `g = h(σ)` is a
    /// permutation-equivariant spectral map.
    ///
    /// `sigma_bar_from_g` maps `ḡ` (the diagonal of `Uᵀ Ḡ V` weighted
    /// appropriately) to `σ̄`; `divided_diff(i, j)` returns
    /// `(g_i - g_j) / (σ_i - σ_j)` including its limit at ties.
    pub fn spectral_vjp(
        &self,
        g: Vec3<T>,
        g_bar_out: &Mat3<T>,
        sigma_bar: Vec3<T>,
        mut divided_diff: impl FnMut(usize, usize) -> T,
    ) -> Mat3<T> {
        let m = self.u.transpose() * *g_bar_out * self.v;
        let mut k = Mat3::zero();
        for i in 0..3 {
            k.0[i][i] = sigma_bar.0[i];
        }
        let half = T::lit(0.5);
        for &(i, j) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let d = divided_diff(i, j);
            let s = (g.0[i] + g.0[j]) / (self.sigma.0[i] + self.sigma.0[j]);
            let a = half * (d + s);
            let b = half * (d - s);
            k.0[i][j] = a * m.0[i][j] + b * m.0[j][i];
            k.0[j][i] = a * m.0[j][i] + b * m.0[i][j];
        }
        self.u * k * self.v.transpose()
    }
}

impl<T: Real> Add for Mat3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut out = self;
        out += o;
        out
    }
}

impl<T: Real> Sub for Mat3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut out = self;
        out -= o;
        out
    }
}

impl<T: Real> Neg for Mat3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}

impl<T: Real> AddAssign for Mat3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += o.0[i][j];
            }
        }
    }
}

impl<T: Real> SubAssign for Mat3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] -= o.0[i][j];
            }
        }
    }
}

impl<T: Real> Mul for Mat3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut out = Mat3::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j] + self.0[i][2] * o.0[2][j];
            }
        }
        out
    }
}

impl<T: Real> Mul<Vec3<T>> for Mat3<T> {
    type Output = Vec3<T>;
    #[inline]
    fn mul(self, v: Vec3<T>) -> Vec3<T> {
        self.mul_vec(v)
    }
}

impl<T: Real> Mul<T> for Mat3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

/// Rotation matrix from a (not necessarily normalized) quaternion `(w, x, y, z)`.
pub fn rotation_from_quaternion<T: Real>(q: [T; 4]) -> Mat3<T> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let one = T::one();
    let two = T::lit(2.0);
    Mat3([
        [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
        [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
        [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
    ])
}

/// Uniformly distributed rotation.
pub fn random_rotation<T: Real, R: rand::Rng + ?Sized>(rng: &mut R) -> Mat3<T> {
    use rand_distr::{Distribution, StandardNormal};
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    rotation_from_quaternion([T::lit(q[0]), T::lit(q[1]), T::lit(q[2]), T::lit(q[3])])
}
