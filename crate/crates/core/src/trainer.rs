//! The training loop: alternate between refreshing the detection state
//! (mixtures and per-sample clean weights) and optimizing the network on
//! augmented mini-batches with bootstrapped targets.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{self, Dataset, ViewTriple};
use crate::eval::{self, DetectionRecord};
use crate::mixture::{self, BinaryGmm, GmmState};
use crate::model::{self, ForwardResult, ModelParams, OptimizerState};
use crate::objectives::{self, LossBreakdown, SoftTarget};
use crate::{Error, Result};

/// Global gradient-norm cap per optimizer step.
const MAX_GRAD_NORM: f64 = 100.0;

/// Everything a run needs besides the data. `Default` gives the desk-scale
/// settings; the optimizer/loss values mirror common practice for this kind
/// of setup (momentum 0.9, weight decay 0.001, temperature 0.25, mixup 1.0).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub mixup_alpha: f64,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub aug_strength: f64,
    /// Epochs between detection-state refreshes.
    pub update_frequency: usize,
    /// When false, clean weights stay pinned at 1 (no label correction);
    /// used for ablation baselines.
    pub detect_noise: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            warmup_epochs: 6,
            batch_size: 256,
            base_lr: 0.03,
            momentum: 0.9,
            weight_decay: 0.001,
            tau: 0.25,
            mixup_alpha: 1.0,
            embedding_dim: 16,
            hidden_dim: 64,
            aug_strength: 0.25,
            update_frequency: 1,
            detect_noise: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be >= 2"));
        }
        if self.update_frequency == 0 {
            return Err(Error::invalid("update_frequency must be >= 1"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::invalid(format!(
                "mixup_alpha must be positive, got {}",
                self.mixup_alpha
            )));
        }
        if !(self.aug_strength >= 0.0) {
            return Err(Error::invalid(format!(
                "aug_strength must be >= 0, got {}",
                self.aug_strength
            )));
        }
        if self.embedding_dim < 2 {
            return Err(Error::invalid("embedding_dim must be >= 2"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.weight_decay) {
            return Err(Error::invalid("weight_decay must be in [0, 1)"));
        }
        if !(self.base_lr >= 0.0) {
            return Err(Error::invalid("base_lr must be >= 0"));
        }
        Ok(())
    }
}

/// Snapshot of the detection side of training: the embedding mixture, the
/// clean/noisy separator, and the per-sample scores they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochState {
    pub gmm: GmmState,
    pub binary: BinaryGmm,
    /// Per-sample w_i = p(label clean | clean probability), in [0, 1].
    pub clean_weights: Vec<f64>,
    /// Per-sample clean probability γ from the embedding mixture, in [0, 1].
    pub clean_probs: Vec<f64>,
}

fn features_matrix(ds: &Dataset) -> Array2<f64> {
    let n = ds.len();
    let d = ds.dim();
    let mut x = Array2::zeros((n, d));
    for (i, s) in ds.samples.iter().enumerate() {
        for (j, &f) in s.features.iter().enumerate() {
            x[(i, j)] = f;
        }
    }
    x
}

/// Refresh the detection state: forward every sample without augmentation,
/// refit the embedding mixture from the predictions, score each sample's
/// label, and refit the clean/noisy separator over those scores.
///
/// Degenerate pieces fall back to `previous` when it is given: a starved
/// mixture class keeps its old parameters, and a failed separator fit keeps
/// the old separator and weights (with a warning).
pub fn e_step(
    ds: &Dataset,
    params: &ModelParams,
    previous: Option<&EpochState>,
) -> Result<EpochState> {
    if ds.is_empty() {
        return Err(Error::invalid("detection refresh on empty dataset"));
    }
    if ds.num_classes != params.num_classes() {
        return Err(Error::shape(format!(
            "dataset has K={} but model has K={}",
            ds.num_classes,
            params.num_classes()
        )));
    }
    let x = features_matrix(ds);
    let fwd = model::forward(params, x.view())?;

    let gmm = mixture::update_gmm(
        fwd.embedding.view(),
        fwd.class_probs.view(),
        previous.map(|p| &p.gmm),
    )?;

    let mut clean_probs = Vec::with_capacity(ds.len());
    for (i, s) in ds.samples.iter().enumerate() {
        clean_probs.push(mixture::clean_prob(&gmm, fwd.embedding.row(i), s.noisy_label)?);
    }

    match mixture::fit_binary_gmm(&clean_probs) {
        Ok(binary) => {
            let clean_weights = clean_probs
                .iter()
                .map(|&g| mixture::clean_posterior(&binary, g))
                .collect();
            Ok(EpochState {
                gmm,
                binary,
                clean_weights,
                clean_probs,
            })
        }
        Err(err) => match previous {
            Some(prev) if prev.clean_weights.len() == ds.len() => {
                eprintln!(
                    "warning: clean/noisy separator fit failed ({err}); keeping previous weights"
                );
                Ok(EpochState {
                    gmm,
                    binary: prev.binary,
                    clean_weights: prev.clean_weights.clone(),
                    clean_probs,
                })
            }
            _ => Err(err),
        },
    }
}

/// The three stochastic views of one mini-batch, as matrices plus the mixup
/// bookkeeping needed to mix targets with the same coefficients.
struct BatchViews {
    x1: Array2<f64>,
    x2: Array2<f64>,
    xm: Array2<f64>,
    lambdas: Vec<f64>,
    /// Partner position within the batch (not sample_id).
    partners: Vec<usize>,
}

fn build_views(
    ds: &Dataset,
    batch: &[usize],
    strength: f64,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<ViewTriple>, BatchViews)> {
    let b = batch.len();
    let d = ds.dim();
    let mut x1 = Array2::zeros((b, d));
    let mut x2 = Array2::zeros((b, d));
    let mut xm = Array2::zeros((b, d));
    let mut lambdas = Vec::with_capacity(b);
    let mut partners = Vec::with_capacity(b);
    let mut triples = Vec::with_capacity(b);

    for (row, &idx) in batch.iter().enumerate() {
        let x = &ds.samples[idx].features;
        let view1 = data::augment(x, strength, rng)?;
        let view2 = data::augment(x, strength, rng)?;
        // Mixup partner drawn within the batch, with replacement; both mixup
        // inputs get the weaker jitter-only augmentation at half strength.
        let partner_pos = rng.random_range(0..b);
        let partner_idx = batch[partner_pos];
        let lambda = data::sample_beta(alpha, rng)?;
        let weak_self = data::jitter(x, strength / 2.0, rng)?;
        let weak_partner = data::jitter(&ds.samples[partner_idx].features, strength / 2.0, rng)?;
        let mix_view: Vec<f64> = weak_self
            .iter()
            .zip(&weak_partner)
            .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
            .collect();

        for j in 0..d {
            x1[(row, j)] = view1[j];
            x2[(row, j)] = view2[j];
            xm[(row, j)] = mix_view[j];
        }
        lambdas.push(lambda);
        partners.push(partner_pos);
        triples.push(ViewTriple {
            view1,
            view2,
            mix_view,
            mix_lambda: lambda,
            mix_partner: ds.samples[partner_idx].sample_id,
        });
    }

    Ok((
        triples,
        BatchViews {
            x1,
            x2,
            xm,
            lambdas,
            partners,
        },
    ))
}

fn batch_losses(
    fwd1: &ForwardResult,
    fwd2: &ForwardResult,
    fwdm: &ForwardResult,
    targets: &[SoftTarget],
    views: &BatchViews,
    gmm: &GmmState,
    tau: f64,
) -> Result<(LossBreakdown, ModelBackwardInputs)> {
    let b = targets.len();
    let k = fwd1.class_probs.ncols();

    let (cross_v, d_logits1_cross, d_logits2_cross) =
        objectives::cross_loss(fwd1.class_probs.view(), fwd2.class_probs.view(), targets)?;

    // The entropy regularizer sees both views' predictions as one batch.
    let stacked = ndarray::concatenate(
        Axis(0),
        &[fwd1.class_probs.view(), fwd2.class_probs.view()],
    )
    .expect("views have equal widths");
    let (reg_v, d_logits_reg) = objectives::reg_loss(stacked.view())?;

    let (ctr_v, d_z1, d_z2) =
        objectives::ctr_loss(fwd1.embedding.view(), fwd2.embedding.view(), tau)?;

    // Mixed targets reuse each sample's drawn coefficient.
    let mut t_mix = Array2::zeros((b, k));
    for i in 0..b {
        let lam = views.lambdas[i];
        let t_i = &targets[i].avg;
        let t_j = &targets[views.partners[i]].avg;
        for c in 0..k {
            t_mix[(i, c)] = lam * t_i[c] + (1.0 - lam) * t_j[c];
        }
    }
    let (align_v, d_logits_m, d_embed_m) = objectives::align_loss_grads(
        fwdm.class_probs.view(),
        fwdm.embedding.view(),
        gmm,
        t_mix.view(),
    )?;

    let breakdown = objectives::total_loss(cross_v, reg_v, ctr_v, align_v)?;

    let d_logits1 = d_logits1_cross + d_logits_reg.slice(ndarray::s![..b, ..]);
    let d_logits2 = d_logits2_cross + d_logits_reg.slice(ndarray::s![b.., ..]);

    Ok((
        breakdown,
        ModelBackwardInputs {
            d_logits1,
            d_logits2,
            d_logits_m,
            d_z1,
            d_z2,
            d_embed_m,
        },
    ))
}

struct ModelBackwardInputs {
    d_logits1: Array2<f64>,
    d_logits2: Array2<f64>,
    d_logits_m: Array2<f64>,
    d_z1: Array2<f64>,
    d_z2: Array2<f64>,
    d_embed_m: Array2<f64>,
}

/// One optimization epoch over shuffled mini-batches. Returns the per-batch
/// loss record. Batches that shrink below 2 samples (the tail of the
/// shuffle) are dropped because the contrastive term needs a negative.
pub fn m_step_epoch(
    ds: &Dataset,
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    state: &EpochState,
    epoch: usize,
    config: &TrainConfig,
) -> Result<Vec<LossBreakdown>> {
    let n = ds.len();
    if state.clean_weights.len() != n {
        return Err(Error::shape(format!(
            "epoch state holds {} weights for {n} samples",
            state.clean_weights.len()
        )));
    }
    let lr = model::lr_schedule(epoch, opt)?;

    // Stream 0 seeds the model; every epoch gets its own stream for the
    // shuffle and all augmentation draws.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1 + epoch as u64);

    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }

    let mut history = Vec::new();
    for (step, batch) in order.chunks(config.batch_size).enumerate() {
        if batch.len() < 2 {
            continue;
        }
        let (_triples, views) =
            build_views(ds, batch, config.aug_strength, config.mixup_alpha, &mut rng)?;

        let fwd1 = model::forward(params, views.x1.view())?;
        let fwd2 = model::forward(params, views.x2.view())?;
        let fwdm = model::forward(params, views.xm.view())?;

        let targets: Vec<SoftTarget> = batch
            .iter()
            .enumerate()
            .map(|(row, &idx)| {
                objectives::correct_targets(
                    ds.samples[idx].noisy_label,
                    ds.num_classes,
                    state.clean_weights[idx],
                    fwd1.class_probs.row(row),
                    fwd2.class_probs.row(row),
                )
            })
            .collect::<Result<_>>()?;

        let (breakdown, back) =
            batch_losses(&fwd1, &fwd2, &fwdm, &targets, &views, &state.gmm, config.tau)
                .map_err(|e| {
                    Error::NonFinite(format!("epoch {epoch}, batch {step}: {e}"))
                })?;
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "epoch {epoch}, batch {step}: total={} (cross={}, reg={}, ctr={}, align={})",
                breakdown.total, breakdown.cross, breakdown.reg, breakdown.ctr, breakdown.align
            )));
        }

        let mut grads = model::backward(params, &fwd1, back.d_z1.view(), back.d_logits1.view())?;
        grads.add_assign(&model::backward(
            params,
            &fwd2,
            back.d_z2.view(),
            back.d_logits2.view(),
        )?);
        grads.add_assign(&model::backward(
            params,
            &fwdm,
            back.d_embed_m.view(),
            back.d_logits_m.view(),
        )?);

        // Rescale runaway batches. Healthy desk-scale steps stay well under
        // the cap; without it a single saturated-posterior batch (tiny
        // mixture variances make the alignment gradient scale like 1/σ) can
        // blow the trunk past recovery.
        let norm = grads.global_norm();
        if norm > MAX_GRAD_NORM {
            grads.scale(MAX_GRAD_NORM / norm);
        }
        model::sgd_step(params, &grads, opt, lr)?;
        history.push(breakdown);
    }
    Ok(history)
}

/// One row of the per-epoch metrics CSV. Undefined entries (no test set, or
/// a detection score group missing) are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub acc_train: f64,
    pub acc_test: f64,
    pub auc_detect: f64,
    pub mean_w_clean: f64,
    pub mean_w_noisy: f64,
    pub cross: f64,
    pub reg: f64,
    pub ctr: f64,
    pub align: f64,
    pub total: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str =
        "epoch,lr,acc_train,acc_test,auc_detect,mean_w_clean,mean_w_noisy,cross,reg,ctr,align,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.acc_train,
            self.acc_test,
            self.auc_detect,
            self.mean_w_clean,
            self.mean_w_noisy,
            self.cross,
            self.reg,
            self.ctr,
            self.align,
            self.total
        )
    }
}

/// A finished run: final parameters, per-epoch metrics, per-step losses,
/// and the last detection state (absent when no epoch ran).
pub struct TrainOutput {
    pub params: ModelParams,
    pub metrics: Vec<EpochMetrics>,
    pub losses: Vec<(usize, usize, LossBreakdown)>,
    pub final_state: Option<EpochState>,
}

/// Post-epoch callback receiving the epoch index and current parameters.
pub type EpochHook<'a> = dyn FnMut(usize, &ModelParams) -> Result<()> + 'a;

fn group_mean(values: &[f64], mask: impl Fn(usize) -> bool) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &v) in values.iter().enumerate() {
        if mask(i) {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Run the full loop. The detection state refreshes on the update-frequency
/// cadence, re-anchored at the end of warmup so the first fitted weights
/// apply exactly then; during warmup every sample keeps weight 1 (labels are
/// trusted while the representation is still forming). `on_epoch` fires
/// after each epoch with the current parameters (checkpoint hook).
pub fn train(
    config: &TrainConfig,
    ds: &Dataset,
    test: Option<&Dataset>,
    mut on_epoch: Option<&mut EpochHook>,
) -> Result<TrainOutput> {
    config.validate()?;
    if ds.len() < 2 {
        return Err(Error::invalid("training needs at least 2 samples"));
    }
    if ds.num_classes < 2 {
        return Err(Error::invalid("training needs at least 2 classes"));
    }
    if let Some(t) = test {
        if !t.is_empty() && t.dim() != ds.dim() {
            return Err(Error::shape("test set dimension differs from train"));
        }
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(0);
    let mut params = ModelParams::init(
        ds.dim(),
        config.hidden_dim,
        config.embedding_dim,
        ds.num_classes,
        &mut init_rng,
    )?;
    let mut opt = OptimizerState::new(
        &params,
        config.momentum,
        config.weight_decay,
        config.base_lr,
        config.warmup_epochs,
        config.epochs,
    )?;

    let train_x = features_matrix(ds);
    let train_truth: Vec<usize> = ds.samples.iter().map(|s| s.true_label).collect();
    let is_clean: Vec<bool> = ds
        .samples
        .iter()
        .map(|s| s.noisy_label == s.true_label)
        .collect();
    let test_data = test.filter(|t| !t.is_empty()).map(|t| {
        (
            features_matrix(t),
            t.samples.iter().map(|s| s.true_label).collect::<Vec<_>>(),
        )
    });

    let mut state: Option<EpochState> = None;
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut losses = Vec::new();

    for epoch in 0..config.epochs {
        let in_warmup = epoch < config.warmup_epochs;
        let refresh = if in_warmup {
            epoch.is_multiple_of(config.update_frequency)
        } else {
            (epoch - config.warmup_epochs).is_multiple_of(config.update_frequency)
        };
        if refresh || state.is_none() {
            let next = e_step(ds, &params, state.as_ref())
                .map_err(|e| Error::invalid(format!("epoch {epoch}: {e}")))?;
            state = Some(next);
        }
        let fitted = state.as_ref().unwrap();

        // Labels are trusted outright during warmup or when detection is
        // ablated; the mixtures above still feed the alignment loss.
        let pin_weights = in_warmup || !config.detect_noise;
        let effective;
        let active: &EpochState = if pin_weights {
            effective = EpochState {
                gmm: fitted.gmm.clone(),
                binary: fitted.binary,
                clean_weights: vec![1.0; ds.len()],
                clean_probs: fitted.clean_probs.clone(),
            };
            &effective
        } else {
            fitted
        };

        let history = m_step_epoch(ds, &mut params, &mut opt, active, epoch, config)?;
        for (step, b) in history.iter().enumerate() {
            losses.push((epoch, step, *b));
        }

        let batch_count = history.len().max(1) as f64;
        let mean =
            |f: fn(&LossBreakdown) -> f64| history.iter().map(f).sum::<f64>() / batch_count;

        let acc_train = eval::accuracy(&predict_batch(&params, train_x.view())?, &train_truth)?;
        let acc_test = match &test_data {
            Some((x, truth)) => eval::accuracy(&predict_batch(&params, x.view())?, truth)?,
            None => f64::NAN,
        };
        let records: Vec<DetectionRecord> = active
            .clean_probs
            .iter()
            .enumerate()
            .map(|(i, &score)| DetectionRecord {
                sample_id: ds.samples[i].sample_id,
                score,
                is_clean: is_clean[i],
            })
            .collect();
        let auc_detect = eval::detection_auc(&records).unwrap_or(f64::NAN);

        metrics.push(EpochMetrics {
            epoch,
            lr: model::lr_schedule(epoch, &opt)?,
            acc_train,
            acc_test,
            auc_detect,
            mean_w_clean: group_mean(&active.clean_weights, |i| is_clean[i]),
            mean_w_noisy: group_mean(&active.clean_weights, |i| !is_clean[i]),
            cross: mean(|b| b.cross),
            reg: mean(|b| b.reg),
            ctr: mean(|b| b.ctr),
            align: mean(|b| b.align),
            total: mean(|b| b.total),
        });

        if let Some(hook) = on_epoch.as_deref_mut() {
            hook(epoch, &params)?;
        }
    }

    Ok(TrainOutput {
        params,
        metrics,
        losses,
        final_state: state,
    })
}

/// Argmax class for one raw feature vector (no augmentation at inference).
pub fn predict(params: &ModelParams, features: &[f64]) -> Result<usize> {
    let x = Array1::from_vec(features.to_vec()).insert_axis(Axis(0));
    let fwd = model::forward(params, x.view())?;
    Ok(model::argmax(fwd.class_probs.row(0)))
}

/// Argmax classes for a feature matrix.
pub fn predict_batch(params: &ModelParams, x: ArrayView2<f64>) -> Result<Vec<usize>> {
    let fwd = model::forward(params, x)?;
    Ok(fwd
        .class_probs
        .rows()
        .into_iter()
        .map(|row| model::argmax(row.view()))
        .collect())
}
