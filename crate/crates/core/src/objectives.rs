//! Loss terms and target bootstrapping.
//!
//! Every loss here returns its scalar value together with hand-derived
//! gradients with respect to the tensors the model's backward pass accepts:
//! pre-softmax logits and/or normalized embeddings. All values are averaged
//! over the mini-batch, so magnitudes are batch-size invariant. Targets and
//! mixture parameters enter as constants — bootstrapped targets are built
//! from prediction snapshots (stop-gradient), and the embedding mixture's
//! (μ, σ) are refreshed only between epochs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::mixture::{self, GmmState};
use crate::{Error, Result};

const LOG_GUARD: f64 = 1e-12;

/// Bootstrapped per-sample targets for the two augmented views.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTarget {
    pub t1: Array1<f64>,
    pub t2: Array1<f64>,
    /// Exactly (t1 + t2) / 2.
    pub avg: Array1<f64>,
}

fn check_simplex(v: ArrayView1<f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &x in v {
        if !(x >= -1e-12) {
            return Err(Error::invalid(format!(
                "{what} has negative entry {x}"
            )));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

/// Blend the given (possibly wrong) label with the model's own predictions:
/// `t_v = w·onehot(y) + (1−w)·g_v` for each view. The predictions are taken
/// as constant snapshots; no gradient flows back through them.
pub fn correct_targets(
    y: usize,
    num_classes: usize,
    w: f64,
    g1: ArrayView1<f64>,
    g2: ArrayView1<f64>,
) -> Result<SoftTarget> {
    if y >= num_classes {
        return Err(Error::invalid(format!(
            "label {y} out of range for K={num_classes}"
        )));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("clean weight {w} outside [0, 1]")));
    }
    if g1.len() != num_classes || g2.len() != num_classes {
        return Err(Error::shape("correct_targets: prediction length"));
    }
    check_simplex(g1, "view-1 prediction")?;
    check_simplex(g2, "view-2 prediction")?;

    let mut t1 = g1.to_owned() * (1.0 - w);
    t1[y] += w;
    let mut t2 = g2.to_owned() * (1.0 - w);
    t2[y] += w;
    let avg = (&t1 + &t2) / 2.0;
    Ok(SoftTarget { t1, t2, avg })
}

fn cross_entropy_row(p: ArrayView1<f64>, t: ArrayView1<f64>) -> f64 {
    p.iter()
        .zip(t)
        .map(|(&pk, &tk)| -tk * pk.max(LOG_GUARD).ln())
        .sum()
}

/// Cross-supervision: each view is trained on the *other* view's target,
/// `mean_i ℓ(p1_i, t2_i) + mean_i ℓ(p2_i, t1_i)`.
///
/// Returns the value and the gradients w.r.t. the two views' logits
/// (softmax + cross-entropy shortcut `(p − t)/n`; the log guard in the value
/// is protective only and never binds for softmax outputs in range).
pub fn cross_loss(
    p1: ArrayView2<f64>,
    p2: ArrayView2<f64>,
    targets: &[SoftTarget],
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let n = targets.len();
    if p1.nrows() != n || p2.nrows() != n {
        return Err(Error::shape(format!(
            "cross loss: {} and {} prediction rows vs {n} targets",
            p1.nrows(),
            p2.nrows()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("cross loss on empty batch"));
    }

    let mut value = 0.0;
    let mut d1 = p1.to_owned();
    let mut d2 = p2.to_owned();
    for (i, t) in targets.iter().enumerate() {
        value += cross_entropy_row(p1.row(i), t.t2.view());
        value += cross_entropy_row(p2.row(i), t.t1.view());
        let mut r1 = d1.row_mut(i);
        r1 -= &t.t2;
        let mut r2 = d2.row_mut(i);
        r2 -= &t.t1;
    }
    let scale = 1.0 / n as f64;
    Ok((value * scale, d1 * scale, d2 * scale))
}

/// Convert a gradient w.r.t. softmax outputs into one w.r.t. logits:
/// `dz_j = p_j·(dp_j − Σ_k dp_k·p_k)` row by row.
fn softmax_jacobian(probs: ArrayView2<f64>, d_probs: &Array2<f64>) -> Array2<f64> {
    let mut d_logits = d_probs.clone();
    for (mut dz, p) in d_logits.rows_mut().into_iter().zip(probs.rows()) {
        let inner: f64 = dz.dot(&p);
        for (z, &pk) in dz.iter_mut().zip(&p) {
            *z = pk * (*z - inner);
        }
    }
    d_logits
}

/// Prediction-entropy regularizer: `−H(mean_i p_i) + mean_i H(p_i)`.
/// Negative values reward batches that are individually confident yet
/// balanced on average; the range is [−ln K, ln K].
pub fn reg_loss(preds: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    let n = preds.nrows();
    if n == 0 {
        return Err(Error::invalid("entropy regularizer on empty batch"));
    }
    let mean = preds.mean_axis(Axis(0)).unwrap();
    let neg_h_mean: f64 = mean.iter().map(|&m| m * m.max(LOG_GUARD).ln()).sum();
    let mean_h: f64 = preds
        .rows()
        .into_iter()
        .map(|row| -row.iter().map(|&p| p * p.max(LOG_GUARD).ln()).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    let value = neg_h_mean + mean_h;

    // d/dp_ik = (ln mean_k − ln p_ik)/n; the ±1 terms cancel.
    let scale = 1.0 / n as f64;
    let log_mean: Vec<f64> = mean.iter().map(|&m| m.max(LOG_GUARD).ln()).collect();
    let mut d_probs = preds.to_owned();
    for mut row in d_probs.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = (log_mean[k] - v.max(LOG_GUARD).ln()) * scale;
        }
    }
    let d_logits = softmax_jacobian(preds, &d_probs);
    Ok((value, d_logits))
}

/// In-batch contrastive loss over the two views' embeddings.
///
/// All 2N view embeddings form one pool; for each anchor the positive is the
/// other view of the same sample and the denominator runs over the 2N−1
/// non-anchor embeddings (positive included). Both views anchor, and the
/// per-anchor losses are averaged.
pub fn ctr_loss(
    z1: ArrayView2<f64>,
    z2: ArrayView2<f64>,
    tau: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let n = z1.nrows();
    let e = z1.ncols();
    if z2.dim() != (n, e) {
        return Err(Error::shape("contrastive loss: view shapes differ"));
    }
    if n < 2 {
        return Err(Error::invalid(format!(
            "contrastive loss needs a batch of >= 2, got {n}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {tau}"
        )));
    }

    let m = 2 * n;
    let mut pool = Array2::zeros((m, e));
    pool.slice_mut(ndarray::s![..n, ..]).assign(&z1);
    pool.slice_mut(ndarray::s![n.., ..]).assign(&z2);
    let sims = pool.dot(&pool.t()) / tau;

    let mut value = 0.0;
    let mut d_pool = Array2::<f64>::zeros((m, e));
    let anchor_scale = 1.0 / m as f64;

    for a in 0..m {
        let pos = (a + n) % m;
        // Log-sum-exp over every non-anchor entry, positive included.
        let mut max = f64::NEG_INFINITY;
        for b in 0..m {
            if b != a {
                max = max.max(sims[(a, b)]);
            }
        }
        let mut denom = 0.0;
        for b in 0..m {
            if b != a {
                denom += (sims[(a, b)] - max).exp();
            }
        }
        value += -(sims[(a, pos)] - max) + denom.ln();

        // dloss_a/ds_ab = q_b − [b = pos]; each s_ab feeds both endpoints.
        for b in 0..m {
            if b == a {
                continue;
            }
            let q = (sims[(a, b)] - max).exp() / denom;
            let coeff = (q - if b == pos { 1.0 } else { 0.0 }) * anchor_scale / tau;
            let (row_b, row_a) = (pool.row(b).to_owned(), pool.row(a).to_owned());
            d_pool.row_mut(a).scaled_add(coeff, &row_b);
            d_pool.row_mut(b).scaled_add(coeff, &row_a);
        }
    }

    let d_z1 = d_pool.slice(ndarray::s![..n, ..]).to_owned();
    let d_z2 = d_pool.slice(ndarray::s![n.., ..]).to_owned();
    Ok((value * anchor_scale, d_z1, d_z2))
}

/// Alignment loss on the mixup view: cross-entropy of both the classifier
/// output and the mixture posterior against the mixed target,
/// `mean_i [ℓ(g_i, t_i) + ℓ(γ_i, t_i)]`.
pub fn align_loss(
    g_mix: ArrayView2<f64>,
    gmm_post: ArrayView2<f64>,
    t_mix: ArrayView2<f64>,
) -> Result<f64> {
    let n = g_mix.nrows();
    if gmm_post.dim() != g_mix.dim() || t_mix.dim() != g_mix.dim() {
        return Err(Error::shape("alignment loss: shape mismatch"));
    }
    if n == 0 {
        return Err(Error::invalid("alignment loss on empty batch"));
    }
    for row in t_mix.rows() {
        check_simplex(row, "mixed target")?;
    }
    let mut value = 0.0;
    for i in 0..n {
        value += cross_entropy_row(g_mix.row(i), t_mix.row(i));
        value += cross_entropy_row(gmm_post.row(i), t_mix.row(i));
    }
    Ok(value / n as f64)
}

/// [`align_loss`] plus its gradients for training: w.r.t. the mixup view's
/// logits and w.r.t. its embeddings. The mixture posterior is recomputed
/// here from the embeddings; (μ_k, σ_k) are treated as constants, so the
/// embedding gradient is `Σ_k (γ_k − t_k)·μ_k/σ_k` per row.
pub fn align_loss_grads(
    class_probs: ArrayView2<f64>,
    embeddings: ArrayView2<f64>,
    gmm: &GmmState,
    t_mix: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let n = embeddings.nrows();
    let k = gmm.num_components();
    if class_probs.dim() != (n, k) {
        return Err(Error::shape("alignment loss: class prob shape"));
    }
    let mut posts = Array2::zeros((n, k));
    for i in 0..n {
        posts
            .row_mut(i)
            .assign(&mixture::posterior(gmm, embeddings.row(i))?);
    }
    let value = align_loss(class_probs, posts.view(), t_mix)?;

    let scale = 1.0 / n as f64;
    let d_logits = (&class_probs - &t_mix) * scale;
    let mut d_embed = Array2::zeros((n, gmm.embedding_dim()));
    for i in 0..n {
        for c in 0..k {
            let coeff = (posts[(i, c)] - t_mix[(i, c)]) * scale / gmm.variances[c];
            d_embed.row_mut(i).scaled_add(coeff, &gmm.means.row(c));
        }
    }
    Ok((value, d_logits, d_embed))
}

/// Per-step loss record; `total` is the plain unweighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub cross: f64,
    pub reg: f64,
    pub ctr: f64,
    pub align: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "epoch,step,cross,reg,ctr,align,total";

    pub fn csv_row(&self, epoch: usize, step: usize) -> String {
        format!(
            "{epoch},{step},{},{},{},{},{}",
            self.cross, self.reg, self.ctr, self.align, self.total
        )
    }
}

/// Sum the four parts; every part must be finite.
pub fn total_loss(cross: f64, reg: f64, ctr: f64, align: f64) -> Result<LossBreakdown> {
    for (name, v) in [("cross", cross), ("reg", reg), ("ctr", ctr), ("align", align)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss = {v}")));
        }
    }
    Ok(LossBreakdown {
        cross,
        reg,
        ctr,
        align,
        total: cross + reg + ctr + align,
    })
}
