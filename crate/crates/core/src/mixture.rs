//! The two mixture models behind wrong-label detection.
//!
//! A K-component spherical Gaussian mixture lives on the unit sphere of
//! embedding space. Its assignment step is not unsupervised: per-sample
//! responsibilities are taken from the classifier's softmax predictions, so
//! fitting reduces to one weighted M-step per refresh. Cluster posteriors
//! evaluated at a sample's embedding then score how compatible the sample's
//! given label is with the geometry; a second, ordinary two-component 1-D
//! Gaussian mixture over those scores separates clean from wrong labels.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::{Error, Result};

const SIGMA_FLOOR: f64 = 1e-8;
const BINARY_VAR_FLOOR: f64 = 1e-6;
const MASS_FLOOR: f64 = 1e-8;

/// Spherical mixture over unit embeddings: one unit-norm mean and one scalar
/// deviation per class.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmState {
    /// K x e, each row unit norm.
    pub means: Array2<f64>,
    /// K positive scalars.
    pub variances: Array1<f64>,
}

impl GmmState {
    pub fn num_components(&self) -> usize {
        self.means.nrows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.means.ncols()
    }

    /// Text export, one line per class: `k,sigma_k,mu_0,...,mu_{e-1}` in the
    /// same shortest-round-trip decimal convention as the dataset files.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in 0..self.num_components() {
            let _ = write!(out, "{k},{}", self.variances[k]);
            for v in self.means.row(k) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// One weighted M-step of the embedding mixture, with the classifier's
/// predictions standing in for responsibilities.
///
/// For each class k with predicted mass `m_k = Σ_i p_ik`:
/// the mean is the ℓ2-normalized weighted average of embeddings, and the
/// deviation is the weighted mean squared distance to that (normalized)
/// mean, reduced to a scalar and floored at 1e-8. On unit vectors the
/// squared distance is computed as `2 − 2·vᵀμ`.
///
/// A class whose predicted mass falls below 1e-8 keeps its entry from
/// `previous`; without a previous state this is an error.
pub fn update_gmm(
    embeddings: ArrayView2<f64>,
    predictions: ArrayView2<f64>,
    previous: Option<&GmmState>,
) -> Result<GmmState> {
    let n = embeddings.nrows();
    let e = embeddings.ncols();
    let k = predictions.ncols();
    if n == 0 {
        return Err(Error::invalid("mixture update on empty batch"));
    }
    if predictions.nrows() != n {
        return Err(Error::shape(format!(
            "mixture update: {n} embeddings vs {} prediction rows",
            predictions.nrows()
        )));
    }
    if let Some(prev) = previous {
        if prev.num_components() != k || prev.embedding_dim() != e {
            return Err(Error::shape(
                "mixture update: previous state has different shape",
            ));
        }
    }

    let mass = predictions.sum_axis(ndarray::Axis(0)); // K
    let mut means = Array2::zeros((k, e));
    let mut variances = Array1::zeros(k);

    for class in 0..k {
        if mass[class] < MASS_FLOOR {
            match previous {
                Some(prev) => {
                    means.row_mut(class).assign(&prev.means.row(class));
                    variances[class] = prev.variances[class];
                    continue;
                }
                None => {
                    return Err(Error::DegenerateClass {
                        class,
                        mass: mass[class],
                    })
                }
            }
        }

        // Weighted mean, then project to the sphere.
        let mut mu = Array1::<f64>::zeros(e);
        for i in 0..n {
            let w = predictions[(i, class)];
            mu.scaled_add(w, &embeddings.row(i));
        }
        mu /= mass[class];
        let norm = mu.dot(&mu).sqrt();
        if norm < 1e-12 {
            match previous {
                Some(prev) => {
                    means.row_mut(class).assign(&prev.means.row(class));
                    variances[class] = prev.variances[class];
                    continue;
                }
                None => {
                    return Err(Error::DegenerateClass {
                        class,
                        mass: norm,
                    })
                }
            }
        }
        mu /= norm;

        let mut scatter = 0.0;
        for i in 0..n {
            let sq_dist = 2.0 - 2.0 * embeddings.row(i).dot(&mu);
            scatter += predictions[(i, class)] * sq_dist;
        }
        variances[class] = (scatter / mass[class]).max(SIGMA_FLOOR);
        means.row_mut(class).assign(&mu);
    }

    Ok(GmmState { means, variances })
}

/// Cluster membership probabilities for one embedding:
/// `γ_k ∝ exp(vᵀμ_k / σ_k)`, normalized over k with max-subtraction.
pub fn posterior(gmm: &GmmState, v: ArrayView1<f64>) -> Result<Array1<f64>> {
    if v.len() != gmm.embedding_dim() {
        return Err(Error::shape(format!(
            "posterior: embedding dim {} vs mixture dim {}",
            v.len(),
            gmm.embedding_dim()
        )));
    }
    let mut scores = Array1::zeros(gmm.num_components());
    for k in 0..gmm.num_components() {
        scores[k] = gmm.means.row(k).dot(&v) / gmm.variances[k];
    }
    let max = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    scores.mapv_inplace(|s| (s - max).exp());
    let total = scores.sum();
    scores /= total;
    Ok(scores)
}

/// The probability that the embedding belongs to the cluster of its given
/// label — the per-sample "this label looks clean" score. Its complement is
/// the wrong-label probability.
pub fn clean_prob(gmm: &GmmState, v: ArrayView1<f64>, y: usize) -> Result<f64> {
    if y >= gmm.num_components() {
        return Err(Error::invalid(format!(
            "class {y} out of range for {}-component mixture",
            gmm.num_components()
        )));
    }
    Ok(posterior(gmm, v)?[y])
}

/// Two-component 1-D Gaussian mixture over clean-probability scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryGmm {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub weights: [f64; 2],
    /// Index of the higher-mean component, read as "clean".
    pub clean_component: usize,
}

impl BinaryGmm {
    /// Total log-likelihood of `values` under the mixture.
    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        values.iter().map(|&x| {
            let l0 = self.weights[0].max(f64::MIN_POSITIVE).ln() + log_normal(x, self.means[0], self.variances[0]);
            let l1 = self.weights[1].max(f64::MIN_POSITIVE).ln() + log_normal(x, self.means[1], self.variances[1]);
            log_sum_exp(l0, l1)
        }).sum()
    }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - d * d / (2.0 * var)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Linear-interpolation percentile of a sorted slice (`p` in [0, 100]).
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let idx = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let frac = idx - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Classical EM fit of the two-component mixture.
///
/// Deterministic initialization: means at the 10th/90th percentiles, both
/// variances at the overall variance, weights 0.5/0.5. Iterates until the
/// largest mean movement drops below 1e-6 or 100 rounds; variances are
/// floored at 1e-6 throughout.
pub fn fit_binary_gmm(values: &[f64]) -> Result<BinaryGmm> {
    fit_binary_gmm_traced(values).map(|(bg, _)| bg)
}

/// Same fit, also returning the log-likelihood after initialization and
/// after every EM round (non-decreasing up to the variance floor).
pub fn fit_binary_gmm_traced(values: &[f64]) -> Result<(BinaryGmm, Vec<f64>)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "binary mixture needs at least 2 values, got {n}"
        )));
    }
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite("binary mixture input".into()));
        }
    }
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return Err(Error::DegenerateInput(
            "binary mixture input has no spread (all values equal)".into(),
        ));
    }

    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let overall_mean = values.iter().sum::<f64>() / n as f64;
    let overall_var = values
        .iter()
        .map(|&v| (v - overall_mean) * (v - overall_mean))
        .sum::<f64>()
        / n as f64;

    let mut means = [percentile(&sorted, 10.0), percentile(&sorted, 90.0)];
    let mut variances = [overall_var.max(BINARY_VAR_FLOOR); 2];
    let mut weights = [0.5, 0.5];

    let snapshot = |means: &[f64; 2], variances: &[f64; 2], weights: &[f64; 2]| BinaryGmm {
        means: *means,
        variances: *variances,
        weights: *weights,
        clean_component: if means[1] >= means[0] { 1 } else { 0 },
    };

    let mut trace = vec![snapshot(&means, &variances, &weights).log_likelihood(values)];
    let mut resp = vec![[0.0f64; 2]; n];

    for _ in 0..100 {
        // E-step in log space.
        for (i, &x) in values.iter().enumerate() {
            let l0 = weights[0].max(f64::MIN_POSITIVE).ln() + log_normal(x, means[0], variances[0]);
            let l1 = weights[1].max(f64::MIN_POSITIVE).ln() + log_normal(x, means[1], variances[1]);
            let z = log_sum_exp(l0, l1);
            resp[i] = [(l0 - z).exp(), (l1 - z).exp()];
        }

        // M-step.
        let mut max_shift = 0.0f64;
        for c in 0..2 {
            let mass: f64 = resp.iter().map(|r| r[c]).sum();
            if mass < 1e-12 {
                // Component lost all responsibility; keep its parameters.
                weights[c] = mass / n as f64;
                continue;
            }
            let new_mean = values
                .iter()
                .zip(&resp)
                .map(|(&x, r)| r[c] * x)
                .sum::<f64>()
                / mass;
            let new_var = values
                .iter()
                .zip(&resp)
                .map(|(&x, r)| r[c] * (x - new_mean) * (x - new_mean))
                .sum::<f64>()
                / mass;
            max_shift = max_shift.max((new_mean - means[c]).abs());
            means[c] = new_mean;
            variances[c] = new_var.max(BINARY_VAR_FLOOR);
            weights[c] = mass / n as f64;
        }

        trace.push(snapshot(&means, &variances, &weights).log_likelihood(values));
        if max_shift < 1e-6 {
            break;
        }
    }

    Ok((snapshot(&means, &variances, &weights), trace))
}

/// Posterior weight of the clean (higher-mean) component at `value`:
/// `w = π_c N(value|μ_c,σ²_c) / Σ_j π_j N(value|μ_j,σ²_j)`.
pub fn clean_posterior(bg: &BinaryGmm, value: f64) -> f64 {
    let c = bg.clean_component;
    let o = 1 - c;
    let lc = bg.weights[c].max(f64::MIN_POSITIVE).ln() + log_normal(value, bg.means[c], bg.variances[c]);
    let lo = bg.weights[o].max(f64::MIN_POSITIVE).ln() + log_normal(value, bg.means[o], bg.variances[o]);
    // Stable sigmoid of (lc - lo).
    if lc >= lo {
        1.0 / (1.0 + (lo - lc).exp())
    } else {
        let e = (lc - lo).exp();
        e / (1.0 + e)
    }
}
