//! Elastic stress laws, plastic return mappings, and their neural,
//! adapter-augmented counterparts.

pub mod analytic;
pub mod lora;
pub mod neural;
pub mod nn;
pub mod pretrain;

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

use analytic::{exp_divided_difference, LogReturn};
pub use lora::{AdapterGrad, LowRankAdapter};
pub use neural::{NeuralElastic, NeuralPlastic, PreparedNeuralElastic, PreparedNeuralPlastic};
pub use nn::{Mlp, MlpGrad};

/// Hidden width and depth of the default networks.
pub const HIDDEN_WIDTH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub enum ElasticModel<T> {
    NeoHookean { mu: T, lambda: T },
    StVK { mu: T, lambda: T },
    FixedCorotated { mu: T, lambda: T },
    Neural(NeuralElastic<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum PlasticModel<T> {
    Identity,
    /// Radial return bounding `‖2μ dev ln Σ‖` by `yield_stress`.
    VonMises { yield_stress: T, mu: T },
    /// Cone projection; `friction_angle` in degrees.
    DruckerPrager { friction_angle: T, mu: T, lambda: T },
    Neural(NeuralPlastic<T>),
}

/// Elastic law paired with a return mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialModel<T> {
    pub elastic: ElasticModel<T>,
    pub plastic: PlasticModel<T>,
}

/// Adapters for the two networks of a neural material.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaterialAdapter<T> {
    pub elastic: Option<LowRankAdapter<T>>,
    pub plastic: Option<LowRankAdapter<T>>,
}

impl<T: Real> MaterialAdapter<T> {
    /// Fresh adapters for every neural network in `base`.
    pub fn for_material<R: rand::Rng + ?Sized>(base: &MaterialModel<T>, rank: usize, alpha: T, rng: &mut R) -> Self {
        let elastic = match &base.elastic {
            ElasticModel::Neural(n) => Some(LowRankAdapter::new(&n.net, rank, alpha, rng)),
            _ => None,
        };
        let plastic = match &base.plastic {
            PlasticModel::Neural(n) => Some(LowRankAdapter::new(&n.net, rank, alpha, rng)),
            _ => None,
        };
        Self { elastic, plastic }
    }

    pub fn default_weight(&self) -> Option<T> {
        self.elastic.as_ref().or(self.plastic.as_ref()).map(|a| a.default_weight())
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        if let Some(a) = &self.elastic {
            out.extend(a.flatten());
        }
        if let Some(a) = &self.plastic {
            out.extend(a.flatten());
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[T]) {
        let mut offset = 0;
        if let Some(a) = &mut self.elastic {
            let n = a.param_count();
            a.unflatten(&flat[offset..offset + n]);
            offset += n;
        }
        if let Some(a) = &mut self.plastic {
            let n = a.param_count();
            a.unflatten(&flat[offset..offset + n]);
        }
    }
}

impl<T: Real> ElasticModel<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            ElasticModel::NeoHookean { mu, lambda }
            | ElasticModel::StVK { mu, lambda }
            | ElasticModel::FixedCorotated { mu, lambda } => check_lame(*mu, *lambda),
            ElasticModel::Neural(n) => {
                if !(n.stress_scale > T::zero()) {
                    return Err(Error::Argument("neural stress scale must be positive".into()));
                }
                PreparedNeuralElastic::new(n).map(|_| ())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ElasticModel::NeoHookean { .. } => "neo_hookean",
            ElasticModel::StVK { .. } => "stvk",
            ElasticModel::FixedCorotated { .. } => "fixed_corotated",
            ElasticModel::Neural(_) => "neural",
        }
    }
}

impl<T: Real> PlasticModel<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            PlasticModel::Identity => Ok(()),
            PlasticModel::VonMises { yield_stress, mu } => {
                if !(*yield_stress > T::zero()) {
                    return Err(Error::Argument("yield stress must be positive".into()));
                }
                check_lame(*mu, T::zero())
            }
            PlasticModel::DruckerPrager { friction_angle, mu, lambda } => {
                if !(*friction_angle > T::zero() && *friction_angle < T::lit(90.0)) {
                    return Err(Error::Argument("friction angle must lie in (0°, 90°)".into()));
                }
                check_lame(*mu, *lambda)
            }
            PlasticModel::Neural(n) => PreparedNeuralPlastic::new(n).map(|_| ()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PlasticModel::Identity => "identity",
            PlasticModel::VonMises { .. } => "von_mises",
            PlasticModel::DruckerPrager { .. } => "drucker_prager",
            PlasticModel::Neural(_) => "neural",
        }
    }
}

fn check_lame<T: Real>(mu: T, lambda: T) -> Result<()> {
    if !(mu > T::zero()) || !(lambda >= T::zero()) {
        return Err(Error::Argument(format!("Lamé parameters need mu > 0 and lambda >= 0 (got {mu}, {lambda})")));
    }
    Ok(())
}

impl<T: Real> MaterialModel<T> {
    pub fn new(elastic: ElasticModel<T>, plastic: PlasticModel<T>) -> Self {
        Self { elastic, plastic }
    }

    pub fn validate(&self) -> Result<()> {
        self.elastic.validate()?;
        self.plastic.validate()
    }

    pub fn prepare(&self) -> Result<PreparedMaterial<T>> {
        let elastic = match &self.elastic {
            ElasticModel::NeoHookean { mu, lambda } => PreparedElastic::NeoHookean { mu: *mu, lambda: *lambda },
            ElasticModel::StVK { mu, lambda } => PreparedElastic::StVK { mu: *mu, lambda: *lambda },
            ElasticModel::FixedCorotated { mu, lambda } => PreparedElastic::FixedCorotated { mu: *mu, lambda: *lambda },
            ElasticModel::Neural(n) => PreparedElastic::Neural(PreparedNeuralElastic::new(n)?),
        };
        let plastic = match &self.plastic {
            PlasticModel::Identity => PreparedPlastic::Identity,
            PlasticModel::VonMises { yield_stress, mu } => {
                PreparedPlastic::VonMises { yield_stress: *yield_stress, mu: *mu }
            }
            PlasticModel::DruckerPrager { friction_angle, mu, lambda } => {
                PreparedPlastic::DruckerPrager { friction_angle: *friction_angle, mu: *mu, lambda: *lambda }
            }
            PlasticModel::Neural(n) => PreparedPlastic::Neural(PreparedNeuralPlastic::new(n)?),
        };
        Ok(PreparedMaterial { elastic, plastic })
    }

    /// Adapters currently attached to the neural networks.
    pub fn adapter(&self) -> MaterialAdapter<T> {
        MaterialAdapter {
            elastic: match &self.elastic {
                ElasticModel::Neural(n) => n.adapter.clone(),
                _ => None,
            },
            plastic: match &self.plastic {
                PlasticModel::Neural(n) => n.adapter.clone(),
                _ => None,
            },
        }
    }

    pub fn cast<U: Real>(&self) -> MaterialModel<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        let elastic = match &self.elastic {
            ElasticModel::NeoHookean { mu, lambda } => ElasticModel::NeoHookean { mu: c(*mu), lambda: c(*lambda) },
            ElasticModel::StVK { mu, lambda } => ElasticModel::StVK { mu: c(*mu), lambda: c(*lambda) },
            ElasticModel::FixedCorotated { mu, lambda } => {
                ElasticModel::FixedCorotated { mu: c(*mu), lambda: c(*lambda) }
            }
            ElasticModel::Neural(n) => ElasticModel::Neural(NeuralElastic {
                net: n.net.cast(),
                adapter: n.adapter.as_ref().map(|a| a.cast()),
                weight: c(n.weight),
                stress_scale: c(n.stress_scale),
            }),
        };
        let plastic = match &self.plastic {
            PlasticModel::Identity => PlasticModel::Identity,
            PlasticModel::VonMises { yield_stress, mu } => {
                PlasticModel::VonMises { yield_stress: c(*yield_stress), mu: c(*mu) }
            }
            PlasticModel::DruckerPrager { friction_angle, mu, lambda } => PlasticModel::DruckerPrager {
                friction_angle: c(*friction_angle),
                mu: c(*mu),
                lambda: c(*lambda),
            },
            PlasticModel::Neural(n) => PlasticModel::Neural(NeuralPlastic {
                net: n.net.cast(),
                adapter: n.adapter.as_ref().map(|a| a.cast()),
                weight: c(n.weight),
            }),
        };
        MaterialModel { elastic, plastic }
    }
}

/// Attaches `adapter` to the networks of `base` with composition weight `w`.
///
/// `w = 0`, or an adapter whose `B` factors are zero, reproduces `base`
/// exactly.
pub fn compose_material<T: Real>(
    base: &MaterialModel<T>,
    adapter: &MaterialAdapter<T>,
    w: T,
) -> Result<MaterialModel<T>> {
    let mut out = base.clone();
    match (&mut out.elastic, &adapter.elastic) {
        (ElasticModel::Neural(n), Some(a)) => {
            a.check_compatible(&n.net)?;
            n.adapter = Some(a.clone());
            n.weight = w;
        }
        (ElasticModel::Neural(n), None) => n.weight = w,
        (_, Some(_)) => return Err(Error::Composition("elastic adapter given for an analytic elastic law".into())),
        _ => {}
    }
    match (&mut out.plastic, &adapter.plastic) {
        (PlasticModel::Neural(n), Some(a)) => {
            a.check_compatible(&n.net)?;
            n.adapter = Some(a.clone());
            n.weight = w;
        }
        (PlasticModel::Neural(n), None) => n.weight = w,
        (_, Some(_)) => return Err(Error::Composition("plastic adapter given for an analytic return mapping".into())),
        _ => {}
    }
    Ok(out)
}

/// Elastic law with adapters folded in, ready for batched evaluation.
#[derive(Clone, Debug)]
pub enum PreparedElastic<T> {
    NeoHookean { mu: T, lambda: T },
    StVK { mu: T, lambda: T },
    FixedCorotated { mu: T, lambda: T },
    Neural(PreparedNeuralElastic<T>),
}

#[derive(Clone, Debug)]
pub enum PreparedPlastic<T> {
    Identity,
    VonMises { yield_stress: T, mu: T },
    DruckerPrager { friction_angle: T, mu: T, lambda: T },
    Neural(PreparedNeuralPlastic<T>),
}

#[derive(Clone, Debug)]
pub struct PreparedMaterial<T> {
    pub elastic: PreparedElastic<T>,
    pub plastic: PreparedPlastic<T>,
}

/// Gradients with respect to the composed network weights of one material.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialGrad<T> {
    pub elastic: Option<MlpGrad<T>>,
    pub plastic: Option<MlpGrad<T>>,
}

impl<T: Real> MaterialGrad<T> {
    pub fn zeros_for(m: &PreparedMaterial<T>) -> Self {
        Self {
            elastic: match &m.elastic {
                PreparedElastic::Neural(n) => Some(MlpGrad::zeros_like(&n.net)),
                _ => None,
            },
            plastic: match &m.plastic {
                PreparedPlastic::Neural(n) => Some(MlpGrad::zeros_like(&n.net)),
                _ => None,
            },
        }
    }

    pub fn add_assign(&mut self, o: &Self) {
        if let (Some(a), Some(b)) = (&mut self.elastic, &o.elastic) {
            a.add_assign(b);
        }
        if let (Some(a), Some(b)) = (&mut self.plastic, &o.plastic) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.elastic.as_ref().map_or(true, |g| g.is_finite()) && self.plastic.as_ref().map_or(true, |g| g.is_finite())
    }
}

fn check_det<T: Real>(f: &[Mat3<T>], index: &dyn Fn(usize) -> usize) -> Result<()> {
    for (i, m) in f.iter().enumerate() {
        let d = m.det();
        if !(d > T::zero()) {
            return Err(Error::Inversion { index: index(i), det: d.to_f64_lossy() });
        }
    }
    Ok(())
}

fn log_stretch<T: Real>(sigma: Vec3<T>) -> Vec3<T> {
    Vec3([sigma.0[0].ln(), sigma.0[1].ln(), sigma.0[2].ln()])
}

impl<T: Real> PreparedElastic<T> {
    /// Kirchhoff stress for every deformation gradient.
    pub fn stress_batch(&self, f: &[Mat3<T>], index: &dyn Fn(usize) -> usize) -> Result<Vec<Mat3<T>>> {
        check_det(f, index)?;
        Ok(match self {
            PreparedElastic::NeoHookean { mu, lambda } => f.iter().map(|m| analytic::neo_hookean(*mu, *lambda, m)).collect(),
            PreparedElastic::StVK { mu, lambda } => f.iter().map(|m| analytic::stvk(*mu, *lambda, m)).collect(),
            PreparedElastic::FixedCorotated { mu, lambda } => {
                f.iter().map(|m| analytic::fixed_corotated(*mu, *lambda, m)).collect()
            }
            PreparedElastic::Neural(n) => n.stress_batch(f),
        })
    }

    pub fn stress_vjp_batch(&self, f: &[Mat3<T>], g: &[Mat3<T>], grad: Option<&mut MlpGrad<T>>) -> Vec<Mat3<T>> {
        match self {
            PreparedElastic::NeoHookean { mu, lambda } => {
                f.iter().zip(g).map(|(m, gi)| analytic::neo_hookean_vjp(*mu, *lambda, m, gi)).collect()
            }
            PreparedElastic::StVK { mu, lambda } => {
                f.iter().zip(g).map(|(m, gi)| analytic::stvk_vjp(*mu, *lambda, m, gi)).collect()
            }
            PreparedElastic::FixedCorotated { mu, lambda } => {
                f.iter().zip(g).map(|(m, gi)| analytic::fixed_corotated_vjp(*mu, *lambda, m, gi)).collect()
            }
            PreparedElastic::Neural(n) => n.stress_vjp_batch(f, g, grad),
        }
    }
}

impl<T: Real> PreparedPlastic<T> {
    fn log_return(&self, eps: Vec3<T>) -> Option<LogReturn<T>> {
        match self {
            PreparedPlastic::VonMises { yield_stress, mu } => Some(analytic::von_mises_return(eps, *mu, *yield_stress)),
            PreparedPlastic::DruckerPrager { friction_angle, mu, lambda } => {
                Some(analytic::drucker_prager_return(eps, *friction_angle, *mu, *lambda))
            }
            _ => None,
        }
    }

    fn log_return_vjp(&self, eps: Vec3<T>, bar: Vec3<T>) -> Vec3<T> {
        match self {
            PreparedPlastic::VonMises { yield_stress, mu } => analytic::von_mises_return_vjp(eps, *mu, *yield_stress, bar),
            PreparedPlastic::DruckerPrager { friction_angle, mu, lambda } => {
                analytic::drucker_prager_return_vjp(eps, *friction_angle, *mu, *lambda, bar)
            }
            _ => bar,
        }
    }

    /// Correction `ε' - ε` applied to principal log-stretches.
    pub fn log_correction_batch(&self, eps: &[Vec3<T>]) -> Vec<Vec3<T>> {
        match self {
            PreparedPlastic::Identity => vec![Vec3::zero(); eps.len()],
            PreparedPlastic::Neural(n) => n.correction_batch(eps),
            _ => eps.iter().map(|e| self.log_return(*e).expect("analytic return").eps - *e).collect(),
        }
    }

    /// Projects trial deformation gradients onto the admissible set.
    pub fn project_batch(&self, f: &[Mat3<T>], index: &dyn Fn(usize) -> usize) -> Result<Vec<Mat3<T>>> {
        check_det(f, index)?;
        Ok(match self {
            PreparedPlastic::Identity => f.to_vec(),
            PreparedPlastic::Neural(n) => n.project_batch(f),
            _ => f
                .iter()
                .map(|m| {
                    let svd = m.svd_rotations();
                    let ret = self.log_return(log_stretch(svd.sigma)).expect("analytic return");
                    if ret.elastic {
                        *m
                    } else {
                        svd.recompose(Vec3([ret.eps.0[0].exp(), ret.eps.0[1].exp(), ret.eps.0[2].exp()]))
                    }
                })
                .collect(),
        })
    }

    pub fn project_vjp_batch(&self, f: &[Mat3<T>], g: &[Mat3<T>], grad: Option<&mut MlpGrad<T>>) -> Vec<Mat3<T>> {
        match self {
            PreparedPlastic::Identity => g.to_vec(),
            PreparedPlastic::Neural(n) => n.project_vjp_batch(f, g, grad),
            _ => f
                .iter()
                .zip(g)
                .map(|(m, gi)| {
                    let svd = m.svd_rotations();
                    let eps = log_stretch(svd.sigma);
                    let ret = self.log_return(eps).expect("analytic return");
                    if ret.elastic {
                        return *gi;
                    }
                    let gv = Vec3([ret.eps.0[0].exp(), ret.eps.0[1].exp(), ret.eps.0[2].exp()]);
                    let mm = svd.u.transpose() * *gi * svd.v;
                    let e_bar = Vec3(std::array::from_fn(|k| mm.0[k][k] * gv.0[k]));
                    let eps_bar = self.log_return_vjp(eps, e_bar);
                    let sigma_bar = Vec3(std::array::from_fn(|k| eps_bar.0[k] / svd.sigma.0[k]));
                    svd.spectral_vjp(gv, gi, sigma_bar, |a, b| {
                        exp_divided_difference(ret.eps.0[a], ret.eps.0[b]) * ret.pair_ratio
                            / exp_divided_difference(eps.0[a], eps.0[b])
                    })
                })
                .collect(),
        }
    }
}

/// Kirchhoff stress `τ = P Fᵀ` of a single deformation gradient.
pub fn elastic_stress<T: Real>(model: &ElasticModel<T>, f: &Mat3<T>) -> Result<Mat3<T>> {
    let prepared = MaterialModel { elastic: model.clone(), plastic: PlasticModel::Identity }.prepare()?;
    Ok(prepared.elastic.stress_batch(std::slice::from_ref(f), &|i| i)?[0])
}

/// Return mapping of a single trial deformation gradient.
pub fn plastic_project<T: Real>(model: &PlasticModel<T>, f: &Mat3<T>) -> Result<Mat3<T>> {
    let prepared = MaterialModel {
        elastic: ElasticModel::NeoHookean { mu: T::one(), lambda: T::zero() },
        plastic: model.clone(),
    }
    .prepare()?;
    Ok(prepared.plastic.project_batch(std::slice::from_ref(f), &|i| i)?[0])
}

/// Builds the default neural material: a `6→64→64→6` elastic network and a
/// `3→64→64→1` plastic network with the given initialization seed.
pub fn random_neural_material<T: Real, R: rand::Rng + ?Sized>(stress_scale: T, rng: &mut R) -> MaterialModel<T> {
    let elastic = Mlp::new_random(&[neural::ELASTIC_FEATURES, HIDDEN_WIDTH, HIDDEN_WIDTH, neural::ELASTIC_FEATURES], rng);
    let plastic = Mlp::new_random(&[neural::PLASTIC_FEATURES, HIDDEN_WIDTH, HIDDEN_WIDTH, 1], rng);
    MaterialModel {
        elastic: ElasticModel::Neural(NeuralElastic { net: elastic, adapter: None, weight: T::one(), stress_scale }),
        plastic: PlasticModel::Neural(NeuralPlastic { net: plastic, adapter: None, weight: T::one() }),
    }
}

#[cfg(test)]
mod tests;
