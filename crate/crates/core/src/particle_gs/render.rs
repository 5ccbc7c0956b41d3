//! Front-to-back Gaussian splatting with a hand-written backward pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;
use crate::scene::GaussianKernelSet;

/// Kernels closer than this to a pinhole camera plane are culled.
const NEAR: f64 = 1e-3;
/// Kernels contribute only within this Mahalanobis radius (3σ).
const CUTOFF_SQ: f64 = 9.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Camera {
    /// Looks down `-z`; `scale` is pixels per world unit and `center` maps
    /// to the image middle.
    Orthographic { center: [f64; 3], scale: f64, width: usize, height: usize },
    /// `intrinsics` = `[[fx, 0, cx], [0, fy, cy], [0, 0, 1]]`, `extrinsics` =
    /// world-to-camera `[R | t]`; the camera looks down `+z`.
    Pinhole { intrinsics: [[f64; 3]; 3], extrinsics: [[f64; 4]; 3], width: usize, height: usize },
}

impl Camera {
    /// Orthographic camera framing the unit cube from the front.
    pub fn front(width: usize, height: usize) -> Self {
        Camera::Orthographic { center: [0.5, 0.5, 0.5], scale: width.min(height) as f64, width, height }
    }

    pub fn size(&self) -> (usize, usize) {
        match *self {
            Camera::Orthographic { width, height, .. } | Camera::Pinhole { width, height, .. } => (width, height),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.size();
        if w == 0 || h == 0 {
            return Err(Error::Argument("image dimensions must be at least 1x1".into()));
        }
        match self {
            Camera::Orthographic { scale, center, .. } => {
                if !(*scale > 0.0) || !center.iter().all(|c| c.is_finite()) {
                    return Err(Error::Argument("orthographic camera needs a positive scale".into()));
                }
            }
            Camera::Pinhole { intrinsics: k, extrinsics: e, .. } => {
                if !(k[0][0] > 0.0 && k[1][1] > 0.0) || k[0][1] != 0.0 || k[1][0] != 0.0 || k[2] != [0.0, 0.0, 1.0] {
                    return Err(Error::Argument("intrinsics must be [[fx,0,cx],[0,fy,cy],[0,0,1]]".into()));
                }
                let r = Mat3::<f64>::from_f64([[e[0][0], e[0][1], e[0][2]], [e[1][0], e[1][1], e[1][2]], [e[2][0], e[2][1], e[2][2]]]);
                let err = (r.transpose() * r - Mat3::identity()).max_abs();
                if err > 1e-6 || r.det() <= 0.0 {
                    return Err(Error::Argument("extrinsic rotation is not rigid".into()));
                }
            }
        }
        Ok(())
    }

    fn rotation<T: Real>(&self) -> Mat3<T> {
        match self {
            Camera::Orthographic { .. } => Mat3::identity(),
            Camera::Pinhole { extrinsics: e, .. } => {
                Mat3::from_f64([[e[0][0], e[0][1], e[0][2]], [e[1][0], e[1][1], e[1][2]], [e[2][0], e[2][1], e[2][2]]])
            }
        }
    }

    /// Image position, depth and the 2×3 Jacobian of the image position
    /// with respect to the world point. `None` when culled.
    fn project<T: Real>(&self, x: Vec3<T>) -> Option<Projection<T>> {
        match self {
            Camera::Orthographic { center, scale, width, height } => {
                let s = T::lit(*scale);
                let c = Vec3::<T>::from_f64(*center);
                Some(Projection {
                    mean: [
                        (x.0[0] - c.0[0]) * s + T::lit(*width as f64 * 0.5),
                        (c.0[1] - x.0[1]) * s + T::lit(*height as f64 * 0.5),
                    ],
                    depth: -x.0[2],
                    jac: [[s, T::zero(), T::zero()], [T::zero(), -s, T::zero()]],
                    cam: Vec3::zero(),
                })
            }
            Camera::Pinhole { intrinsics: k, extrinsics: e, .. } => {
                let r = self.rotation::<T>();
                let xc = r.mul_vec(x) + Vec3::from_f64([e[0][3], e[1][3], e[2][3]]);
                let z = xc.0[2];
                if !(z > T::lit(NEAR)) {
                    return None;
                }
                let (fx, fy) = (T::lit(k[0][0]), T::lit(k[1][1]));
                let jc = [[fx / z, T::zero(), -fx * xc.0[0] / (z * z)], [T::zero(), fy / z, -fy * xc.0[1] / (z * z)]];
                // Jacobian with respect to world coordinates: Jc R.
                let mut jac = [[T::zero(); 3]; 2];
                for a in 0..2 {
                    for b in 0..3 {
                        jac[a][b] = (0..3).map(|m| jc[a][m] * r.0[m][b]).sum();
                    }
                }
                Some(Projection {
                    mean: [fx * xc.0[0] / z + T::lit(k[0][2]), fy * xc.0[1] / z + T::lit(k[1][2])],
                    depth: z,
                    jac,
                    cam: xc,
                })
            }
        }
    }
}

struct Projection<T> {
    mean: [T; 2],
    depth: T,
    jac: [[T; 3]; 2],
    /// Camera-space position (pinhole only).
    cam: Vec3<T>,
}

/// Projected kernel with inverse 2D covariance and pixel bounding box.
struct Splat<T> {
    mean: [T; 2],
    /// Inverse covariance `[a, b, c]` of `[[a, b], [b, c]]`.
    conic: [T; 3],
    bbox: [usize; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB.
    pub pixels: Vec<[T; 3]>,
    pub background: [T; 3],
}

impl<T: Real> Image<T> {
    pub fn filled(width: usize, height: usize, background: [T; 3]) -> Self {
        Self { width, height, pixels: vec![background; width * height], background }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        let c = |p: [T; 3]| p.map(|v| U::lit(v.to_f64_lossy()));
        Image { width: self.width, height: self.height, pixels: self.pixels.iter().map(|&p| c(p)).collect(), background: c(self.background) }
    }
}

fn cov2<T: Real>(jac: &[[T; 3]; 2], a: &Mat3<T>) -> [[T; 2]; 2] {
    let mut out = [[T::zero(); 2]; 2];
    for i in 0..2 {
        let ja = a.tr_mul_vec(Vec3(jac[i]));
        for j in 0..2 {
            out[i][j] = (0..3).map(|m| ja.0[m] * jac[j][m]).sum();
        }
    }
    out
}

fn prepare<T: Real>(kernels: &GaussianKernelSet<T>, camera: &Camera) -> (Vec<usize>, Vec<Option<Splat<T>>>, Vec<Option<Projection<T>>>) {
    let (w, h) = camera.size();
    let mut projs = Vec::with_capacity(kernels.len());
    let mut splats = Vec::with_capacity(kernels.len());
    for k in 0..kernels.len() {
        let p = camera.project(kernels.centers[k]);
        let s = p.as_ref().and_then(|p| {
            let c = cov2(&p.jac, &kernels.covariances[k]);
            let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
            if !(det > T::zero()) || !det.is_finite() {
                return None;
            }
            let conic = [c[1][1] / det, -c[0][1] / det, c[0][0] / det];
            let half_tr = (c[0][0] + c[1][1]) * T::lit(0.5);
            let lmax = half_tr + (half_tr * half_tr - det).max(T::zero()).sqrt();
            let r = T::lit(CUTOFF_SQ).sqrt() * lmax.sqrt();
            let lo = |m: T| (m - r - T::lit(0.5)).floor().to_f64_lossy();
            let hi = |m: T| (m + r - T::lit(0.5)).ceil().to_f64_lossy();
            let (x0, x1, y0, y1) = (lo(p.mean[0]), hi(p.mean[0]), lo(p.mean[1]), hi(p.mean[1]));
            if x1 < 0.0 || y1 < 0.0 || x0 >= w as f64 || y0 >= h as f64 {
                return None;
            }
            let clamp = |v: f64, n: usize| v.max(0.0).min(n as f64 - 1.0) as usize;
            Some(Splat { mean: p.mean, conic, bbox: [clamp(x0, w), clamp(x1, w), clamp(y0, h), clamp(y1, h)] })
        });
        projs.push(p);
        splats.push(s);
    }
    let mut order: Vec<usize> = (0..kernels.len()).filter(|&k| splats[k].is_some()).collect();
    order.sort_by(|&a, &b| {
        let da = projs[a].as_ref().unwrap().depth;
        let db = projs[b].as_ref().unwrap().depth;
        da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    (order, splats, projs)
}

/// Per-pixel front-to-back lists of `(kernel, alpha, d)`.
fn pixel_lists<T: Real>(
    kernels: &GaussianKernelSet<T>,
    order: &[usize],
    splats: &[Option<Splat<T>>],
    width: usize,
    height: usize,
) -> Vec<Vec<(u32, T, [T; 2])>> {
    // Rows are independent; each keeps the global depth order.
    let rows: Vec<Vec<Vec<(u32, T, [T; 2])>>> = (0..height)
        .into_par_iter()
        .map(|py| {
            let mut row = vec![Vec::new(); width];
            for &k in order {
                let s = splats[k].as_ref().unwrap();
                if py < s.bbox[2] || py > s.bbox[3] {
                    continue;
                }
                for px in s.bbox[0]..=s.bbox[1] {
                    let d = [T::lit(px as f64 + 0.5) - s.mean[0], T::lit(py as f64 + 0.5) - s.mean[1]];
                    let q = s.conic[0] * d[0] * d[0] + T::lit(2.0) * s.conic[1] * d[0] * d[1] + s.conic[2] * d[1] * d[1];
                    if q > T::lit(CUTOFF_SQ) {
                        continue;
                    }
                    let alpha = kernels.opacities[k] * (T::lit(-0.5) * q).exp();
                    row[px].push((k as u32, alpha, d));
                }
            }
            row
        })
        .collect();
    rows.into_iter().flatten().collect()
}

/// Renders `kernels` by alpha compositing in order of increasing depth.
pub fn splat<T: Real>(kernels: &GaussianKernelSet<T>, camera: &Camera, background: [T; 3]) -> Image<T> {
    let (w, h) = camera.size();
    let (order, splats, _) = prepare(kernels, camera);
    let lists = pixel_lists(kernels, &order, &splats, w, h);
    let mut img = Image::filled(w, h, background);
    for (pix, list) in img.pixels.iter_mut().zip(&lists) {
        let mut t = T::one();
        let mut c = [T::zero(); 3];
        for &(k, alpha, _) in list {
            let col = kernels.colors[k as usize];
            for ch in 0..3 {
                c[ch] += col[ch] * alpha * t;
            }
            t *= T::one() - alpha;
        }
        for ch in 0..3 {
            c[ch] += background[ch] * t;
        }
        *pix = c;
    }
    img
}

/// Gradients with respect to kernel centers and covariances.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrad<T> {
    pub centers: Vec<Vec3<T>>,
    pub covariances: Vec<Mat3<T>>,
}

/// Reverse of [`splat`] for the pixel cotangent `pixel_grad`.
pub fn splat_backward<T: Real>(
    kernels: &GaussianKernelSet<T>,
    camera: &Camera,
    background: [T; 3],
    pixel_grad: &[[T; 3]],
) -> KernelGrad<T> {
    let (w, h) = camera.size();
    let (order, splats, projs) = prepare(kernels, camera);
    let lists = pixel_lists(kernels, &order, &splats, w, h);
    let n = kernels.len();
    let mut mean_bar = vec![[T::zero(); 2]; n];
    let mut conic_bar = vec![[T::zero(); 3]; n];
    let mut trans = Vec::new();
    for (list, gp) in lists.iter().zip(pixel_grad) {
        if list.is_empty() {
            continue;
        }
        trans.clear();
        let mut t = T::one();
        for &(_, alpha, _) in list {
            trans.push(t);
            t *= T::one() - alpha;
        }
        // Color seen behind the current kernel, relative to the light that
        // reaches it.
        let mut behind = background;
        for (idx, &(k, alpha, d)) in list.iter().enumerate().rev() {
            let k = k as usize;
            let col = kernels.colors[k];
            let a_bar: T = (0..3).map(|ch| gp[ch] * trans[idx] * (col[ch] - behind[ch])).sum();
            for ch in 0..3 {
                behind[ch] = col[ch] * alpha + (T::one() - alpha) * behind[ch];
            }
            // alpha = o exp(-q/2), q = dᵀ Q d, d = pixel - mean.
            let s = splats[k].as_ref().unwrap();
            let qd = [s.conic[0] * d[0] + s.conic[1] * d[1], s.conic[1] * d[0] + s.conic[2] * d[1]];
            let g = a_bar * alpha;
            mean_bar[k][0] += g * qd[0];
            mean_bar[k][1] += g * qd[1];
            let half = T::lit(-0.5) * g;
            conic_bar[k][0] += half * d[0] * d[0];
            conic_bar[k][1] += half * T::lit(2.0) * d[0] * d[1];
            conic_bar[k][2] += half * d[1] * d[1];
        }
    }

    let mut out = KernelGrad { centers: vec![Vec3::zero(); n], covariances: vec![Mat3::zero(); n] };
    let rot = camera.rotation::<T>();
    for k in 0..n {
        let (Some(s), Some(p)) = (splats[k].as_ref(), projs[k].as_ref()) else { continue };
        // Symmetric cotangent of Q from the packed [a, 2b, c] form.
        let qb = [[conic_bar[k][0], conic_bar[k][1] * T::lit(0.5)], [conic_bar[k][1] * T::lit(0.5), conic_bar[k][2]]];
        let q = [[s.conic[0], s.conic[1]], [s.conic[1], s.conic[2]]];
        // Σ̄ = -Q Q̄ Q
        let mut sb = [[T::zero(); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = T::zero();
                for a in 0..2 {
                    for b in 0..2 {
                        acc += q[i][a] * qb[a][b] * q[b][j];
                    }
                }
                sb[i][j] = -acc;
            }
        }
        let jac = &p.jac;
        let mut abar = Mat3::zero();
        for a in 0..3 {
            for b in 0..3 {
                abar.0[a][b] = (0..2).map(|i| (0..2).map(|j| jac[i][a] * sb[i][j] * jac[j][b]).sum::<T>()).sum();
            }
        }
        out.covariances[k] = abar;
        let mut xb = Vec3::zero();
        for a in 0..3 {
            xb.0[a] = jac[0][a] * mean_bar[k][0] + jac[1][a] * mean_bar[k][1];
        }
        if let Camera::Pinhole { intrinsics, .. } = camera {
            // J̄ = 2 Σ̄ J A, then through the camera-space Jacobian.
            let amat = kernels.covariances[k];
            let mut jbar = [[T::zero(); 3]; 2];
            for i in 0..2 {
                for b in 0..3 {
                    let mut acc = T::zero();
                    for j in 0..2 {
                        for m in 0..3 {
                            acc += sb[i][j] * jac[j][m] * amat.0[m][b];
                        }
                    }
                    jbar[i][b] = T::lit(2.0) * acc;
                }
            }
            // J = Jc R  =>  J̄c = J̄ Rᵀ
            let mut jcb = [[T::zero(); 3]; 2];
            for i in 0..2 {
                for m in 0..3 {
                    jcb[i][m] = (0..3).map(|b| jbar[i][b] * rot.0[m][b]).sum();
                }
            }
            let (fx, fy) = (T::lit(intrinsics[0][0]), T::lit(intrinsics[1][1]));
            let (x, y, z) = (p.cam.0[0], p.cam.0[1], p.cam.0[2]);
            let z2 = z * z;
            let z3 = z2 * z;
            let xcb = Vec3([
                -jcb[0][2] * fx / z2,
                -jcb[1][2] * fy / z2,
                -jcb[0][0] * fx / z2 + jcb[0][2] * T::lit(2.0) * fx * x / z3 - jcb[1][1] * fy / z2
                    + jcb[1][2] * T::lit(2.0) * fy * y / z3,
            ]);
            xb += rot.tr_mul_vec(xcb);
        }
        out.centers[k] = xb;
    }
    out
}

fn check_dims<T>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.width != b.width || a.height != b.height || a.pixels.len() != b.pixels.len() {
        return Err(Error::Argument(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean squared per-channel difference.
pub fn image_loss<T: Real>(pred: &Image<T>, gt: &Image<T>) -> Result<T> {
    check_dims(pred, gt)?;
    let n = T::lit((pred.pixels.len() * 3).max(1) as f64);
    let mut s = T::zero();
    for (a, b) in pred.pixels.iter().zip(&gt.pixels) {
        for ch in 0..3 {
            let d = a[ch] - b[ch];
            s += d * d;
        }
    }
    Ok(s / n)
}

pub fn image_loss_grad<T: Real>(pred: &Image<T>, gt: &Image<T>) -> Result<Vec<[T; 3]>> {
    check_dims(pred, gt)?;
    let scale = T::lit(2.0) / T::lit((pred.pixels.len() * 3).max(1) as f64);
    Ok(pred.pixels.iter().zip(&gt.pixels).map(|(a, b)| std::array::from_fn(|ch| (a[ch] - b[ch]) * scale)).collect())
}
