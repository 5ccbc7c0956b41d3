//! Regression of the neural base models onto analytic targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;

use super::lora::{flatten_grad, flatten_net, unflatten_net};
use super::neural::{strain_features, NeuralElastic, NeuralPlastic, ELASTIC_FEATURES, PLASTIC_FEATURES};
use super::nn::{Mlp, MlpCache, MlpGrad};
use super::{ElasticModel, MaterialModel, PlasticModel, HIDDEN_WIDTH};
use crate::error::{Error, Result};
use crate::linalg::{random_rotation, Mat3, Vec3};
use crate::optim::{cosine_lr, Adam};
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct PretrainConfig {
    pub samples: usize,
    /// Held-out samples used for the reported error.
    pub holdout: usize,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Log-stretches are drawn uniformly from `[-max_log_stretch, max_log_stretch]`.
    pub max_log_stretch: f64,
    pub seed: u64,
    /// Batches whose loss is at or below this value skip the update.
    pub tolerance: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            samples: 50_000,
            holdout: 5_000,
            epochs: 40,
            batch: 256,
            learning_rate: 3e-3,
            max_log_stretch: 0.3,
            seed: 0,
            tolerance: 1e-20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    /// `sqrt(Σ‖τ - τ*‖²) / sqrt(Σ‖τ*‖²)` on the held-out set.
    pub elastic_relative_rmse: f64,
    /// RMS error of the log-stretch correction on the held-out set.
    pub plastic_rmse: f64,
    pub elastic_loss_history: Vec<f64>,
    pub plastic_loss_history: Vec<f64>,
}

/// Random deformation `R₁ exp(diag ε) R₂ᵀ`.
pub fn random_deformation<T: Real, R: Rng + ?Sized>(max_log_stretch: f64, rng: &mut R) -> Mat3<T> {
    let r1: Mat3<T> = random_rotation(rng);
    let r2: Mat3<T> = random_rotation(rng);
    let eps = Vec3(std::array::from_fn(|_| T::lit(rng.gen_range(-max_log_stretch..=max_log_stretch))));
    r1 * Mat3::exp_diag(eps) * r2.transpose()
}

/// Pretrains neural elastic and plastic networks against `target`.
///
/// `init` warm-starts from an existing neural material; otherwise fresh
/// networks are drawn from the seed. Targets may themselves be neural, which
/// makes the routine usable for distillation.
pub fn pretrain_base<T: Real>(
    target: &MaterialModel<T>,
    cfg: &PretrainConfig,
    init: Option<&MaterialModel<T>>,
) -> Result<(MaterialModel<T>, PretrainReport)> {
    target.validate()?;
    if cfg.samples == 0 || cfg.batch == 0 {
        return Err(Error::Argument("pretraining needs samples and a positive batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prepared_target = target.prepare()?;

    let (elastic_init, plastic_init) = match init {
        Some(MaterialModel { elastic: ElasticModel::Neural(e), plastic: PlasticModel::Neural(p) }) => {
            (Some(e.clone()), Some(p.clone()))
        }
        Some(_) => return Err(Error::Argument("warm start must be a fully neural material".into())),
        None => (None, None),
    };

    // Elastic data.
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Mat3<T>> {
        (0..n).map(|_| random_deformation(cfg.max_log_stretch, rng)).collect()
    };
    let train_f = draw(cfg.samples, &mut rng);
    let test_f = draw(cfg.holdout.max(1), &mut rng);
    let train_tau = prepared_target.elastic.stress_batch(&train_f, &|i| i)?;
    let test_tau = prepared_target.elastic.stress_batch(&test_f, &|i| i)?;
    let train_s: Vec<[T; 6]> = train_f
        .iter()
        .zip(&train_tau)
        .map(|(f, tau)| {
            let fi = f.inverse().expect("sampled deformations are invertible");
            let s = fi * *tau * fi.transpose();
            [s.0[0][0], s.0[1][1], s.0[2][2], s.0[0][1], s.0[0][2], s.0[1][2]]
        })
        .collect();

    let mut elastic = match elastic_init {
        Some(e) => e,
        None => {
            let rms = (train_s.iter().flat_map(|s| s.iter()).map(|v| v.to_f64_lossy().powi(2)).sum::<f64>()
                / (6 * train_s.len()) as f64)
                .sqrt();
            NeuralElastic {
                net: Mlp::new_random(&[ELASTIC_FEATURES, HIDDEN_WIDTH, HIDDEN_WIDTH, ELASTIC_FEATURES], &mut rng),
                adapter: None,
                weight: T::one(),
                stress_scale: T::lit(if rms > 0.0 { rms } else { 1.0 }),
            }
        }
    };
    let features: Vec<[T; 6]> = train_f.iter().map(strain_features).collect();
    let inv_scale = T::one() / elastic.stress_scale;
    let targets: Vec<[T; 6]> = train_s.iter().map(|s| s.map(|v| v * inv_scale)).collect();
    let entry_weight = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0].map(T::lit);
    let elastic_loss_history = regress(
        &mut elastic.net,
        &features,
        &targets,
        &entry_weight,
        cfg,
        &mut rng,
        "elastic",
    )?;

    let prepared = super::neural::PreparedNeuralElastic::new(&elastic)?;
    let pred = prepared.stress_batch(&test_f);
    let (num, den) = pred.iter().zip(&test_tau).fold((0.0, 0.0), |(n, d), (p, t)| {
        (n + (*p - *t).norm().to_f64_lossy().powi(2), d + t.norm().to_f64_lossy().powi(2))
    });
    let elastic_relative_rmse = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };

    // Plastic data: per-direction corrections of the target return mapping.
    let sample_eps = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec3<T>> {
        (0..n)
            .map(|_| Vec3(std::array::from_fn(|_| T::lit(rng.gen_range(-cfg.max_log_stretch..=cfg.max_log_stretch)))))
            .collect()
    };
    let train_eps = sample_eps(cfg.samples, &mut rng);
    let test_eps = sample_eps(cfg.holdout.max(1), &mut rng);
    let target_delta = |eps: &[Vec3<T>]| prepared_target.plastic.log_correction_batch(eps);
    let train_delta = target_delta(&train_eps);
    let test_delta = target_delta(&test_eps);

    let mut plastic = match plastic_init {
        Some(p) => p,
        None => {
            let mut net = Mlp::new_random(&[PLASTIC_FEATURES, HIDDEN_WIDTH, HIDDEN_WIDTH, 1], &mut rng);
            // A zero output layer starts the correction at exactly zero.
            let last = net.layers.last_mut().expect("non-empty network");
            last.weight.iter_mut().for_each(|w| *w = T::zero());
            NeuralPlastic { net, adapter: None, weight: T::one() }
        }
    };
    let mut rows = Vec::with_capacity(train_eps.len() * 3);
    let mut row_targets = Vec::with_capacity(train_eps.len() * 3);
    for (e, d) in train_eps.iter().zip(&train_delta) {
        let s1 = e.0[0] + e.0[1] + e.0[2];
        let s2 = e.norm_squared();
        for k in 0..3 {
            rows.push([e.0[k], s1, s2]);
            row_targets.push([d.0[k]]);
        }
    }
    let plastic_loss_history = regress(&mut plastic.net, &rows, &row_targets, &[T::one()], cfg, &mut rng, "plastic")?;
    let prepared_plastic = super::neural::PreparedNeuralPlastic::new(&plastic)?;
    let pred = prepared_plastic.correction_batch(&test_eps);
    let sq: f64 = pred.iter().zip(&test_delta).map(|(p, t)| (*p - *t).norm_squared().to_f64_lossy()).sum();
    let plastic_rmse = (sq / (3 * test_eps.len()) as f64).sqrt();

    let model = MaterialModel { elastic: ElasticModel::Neural(elastic), plastic: PlasticModel::Neural(plastic) };
    let report = PretrainReport { elastic_relative_rmse, plastic_rmse, elastic_loss_history, plastic_loss_history };
    log::info!(
        "pretraining done: elastic relative RMSE {:.4}, plastic RMSE {:.3e}",
        report.elastic_relative_rmse,
        report.plastic_rmse
    );
    Ok((model, report))
}

/// Minibatch Adam on `Σ w_k (N(x)_k - N(0)_k - y_k)²`; returns per-epoch mean loss.
fn regress<T: Real, const I: usize, const O: usize>(
    net: &mut Mlp<T>,
    inputs: &[[T; I]],
    targets: &[[T; O]],
    entry_weight: &[T],
    cfg: &PretrainConfig,
    rng: &mut ChaCha8Rng,
    label: &str,
) -> Result<Vec<f64>> {
    let n = inputs.len();
    let mut params = flatten_net(net);
    let mut opt = Adam::new(params.len());
    let mut order: Vec<usize> = (0..n).collect();
    let batches_per_epoch = n.div_ceil(cfg.batch);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    let zero = [T::zero(); I];
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let b = chunk.len();
            let x: Vec<T> = chunk.iter().flat_map(|&i| inputs[i]).collect();
            let mut cache = MlpCache::default();
            let y = net.forward_batch(&x, b, Some(&mut cache));
            let mut rest_cache = MlpCache::default();
            let rest = net.forward_batch(&zero, 1, Some(&mut rest_cache));
            let norm = T::one() / T::lit(b as f64);
            let mut y_bar = vec![T::zero(); b * O];
            let mut rest_bar = vec![T::zero(); O];
            let mut loss = T::zero();
            for (r, &i) in chunk.iter().enumerate() {
                for k in 0..O {
                    let diff = y[r * O + k] - rest[k] - targets[i][k];
                    loss += entry_weight[k] * diff * diff * norm;
                    let g = T::lit(2.0) * entry_weight[k] * diff * norm;
                    y_bar[r * O + k] = g;
                    rest_bar[k] -= g;
                }
            }
            if !loss.is_finite() {
                return Err(Error::Training(format!("{label} pretraining loss became {loss} in epoch {epoch}")));
            }
            epoch_loss += loss.to_f64_lossy() * b as f64;
            if loss.to_f64_lossy() <= cfg.tolerance {
                step += 1;
                continue;
            }
            let mut grad = MlpGrad::zeros_like(net);
            net.backward_batch(&cache, &y_bar, Some(&mut grad), false);
            net.backward_batch(&rest_cache, &rest_bar, Some(&mut grad), false);
            let lr = T::lit(cosine_lr(cfg.learning_rate, step, total_steps, 0.01));
            opt.step(&mut params, &flatten_grad(&grad), lr);
            unflatten_net(net, &params);
            step += 1;
        }
        history.push(epoch_loss / n as f64);
        log::debug!("{label} pretraining epoch {epoch}: loss {:.3e}", epoch_loss / n as f64);
    }
    Ok(history)
}
