//! Metrics: accuracy, wrong-label detection AUC, k-NN probing of the
//! embedding space, class imbalance, and the clean-probability histogram.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// One sample's detection outcome: the score the model assigned to "this
/// label is clean" and whether the label actually was clean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub sample_id: usize,
    /// Clean probability in [0, 1].
    pub score: f64,
    /// Ground truth: noisy_label == true_label.
    pub is_clean: bool,
}

/// Fraction of exact matches between two label vectors.
pub fn accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::shape(format!(
            "accuracy: {} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("accuracy: empty input"));
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Area under the ROC curve of `score` against `is_clean`, computed with the
/// rank statistic. Tied scores contribute 0.5 per (clean, noisy) pair, which
/// the averaged ranks encode exactly: every quantity is a multiple of 0.5,
/// so the result is bit-identical to brute-force pair enumeration.
pub fn detection_auc(records: &[DetectionRecord]) -> Result<f64> {
    let n_clean = records.iter().filter(|r| r.is_clean).count();
    let n_noisy = records.len() - n_clean;
    if n_clean == 0 || n_noisy == 0 {
        return Err(Error::DegenerateInput(format!(
            "detection AUC needs both groups (clean={n_clean}, noisy={n_noisy})"
        )));
    }
    for r in records {
        if !r.score.is_finite() {
            return Err(Error::NonFinite(format!(
                "detection score for sample {}",
                r.sample_id
            )));
        }
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].score.partial_cmp(&records[b].score).unwrap());

    // Average 1-based ranks over ties, accumulate the clean group's ranks.
    let mut rank_sum_clean = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && records[order[j]].score == records[order[i]].score {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1 ..= j
        rank_sum_clean += avg_rank
            * order[i..j]
                .iter()
                .filter(|&&idx| records[idx].is_clean)
                .count() as f64;
        i = j;
    }

    let offset = (n_clean * (n_clean + 1)) as f64 / 2.0;
    Ok((rank_sum_clean - offset) / (n_clean as f64 * n_noisy as f64))
}

/// Classify each test point by majority vote among its `k` most cosine-similar
/// training points (embeddings are unit norm, so similarity is the dot
/// product). Neighbor order is similarity descending, index ascending; a vote
/// tie goes to the class of the nearest neighbor among the tied classes.
/// Returns accuracy against `test_labels`.
pub fn knn_eval(
    train_embeddings: &[Vec<f64>],
    train_labels: &[usize],
    test_embeddings: &[Vec<f64>],
    test_labels: &[usize],
    k: usize,
) -> Result<f64> {
    if train_embeddings.len() != train_labels.len() {
        return Err(Error::shape("knn: train embeddings vs labels"));
    }
    if test_embeddings.len() != test_labels.len() {
        return Err(Error::shape("knn: test embeddings vs labels"));
    }
    if k == 0 || k > train_embeddings.len() {
        return Err(Error::invalid(format!(
            "knn: k={k} out of range for {} training points",
            train_embeddings.len()
        )));
    }
    let predictions: Vec<usize> = test_embeddings
        .iter()
        .map(|q| knn_predict(train_embeddings, train_labels, q, k))
        .collect();
    accuracy(&predictions, test_labels)
}

fn knn_predict(train: &[Vec<f64>], labels: &[usize], query: &[f64], k: usize) -> usize {
    let mut sims: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, e)| (dot(e, query), i))
        .collect();
    sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    sims.truncate(k);

    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut votes = vec![0usize; num_classes];
    for &(_, idx) in &sims {
        votes[labels[idx]] += 1;
    }
    let top = *votes.iter().max().unwrap();
    // First neighbor whose class is among the top-voted wins the tie.
    sims.iter()
        .map(|&(_, idx)| labels[idx])
        .find(|&c| votes[c] == top)
        .unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Default neighborhood size for embedding probes, shrunk with the dataset:
/// a tenth of the training set, capped at 200, floored at 1.
pub fn default_knn_k(n_train: usize) -> usize {
    (n_train / 10).clamp(1, 200)
}

/// Ratio of the largest to the smallest class count.
pub fn imbalance_ratio(labels: &[usize], num_classes: usize) -> Result<f64> {
    if num_classes == 0 {
        return Err(Error::invalid("imbalance ratio: no classes"));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::invalid(format!(
                "imbalance ratio: label {l} out of range for K={num_classes}"
            )));
        }
        counts[l] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateClass {
            class: missing,
            mass: 0.0,
        });
    }
    let max = *counts.iter().max().unwrap() as f64;
    let min = *counts.iter().min().unwrap() as f64;
    Ok(max / min)
}

/// Histogram of detection scores over `bins` uniform buckets of [0, 1],
/// counted separately for clean and noisy samples. A score of exactly 1.0
/// lands in the last bucket.
pub fn clean_histogram(
    records: &[DetectionRecord],
    bins: usize,
) -> Result<Vec<(f64, f64, usize, usize)>> {
    if bins < 2 {
        return Err(Error::invalid(format!(
            "histogram needs at least 2 bins, got {bins}"
        )));
    }
    let mut rows: Vec<(f64, f64, usize, usize)> = (0..bins)
        .map(|b| (b as f64 / bins as f64, (b + 1) as f64 / bins as f64, 0, 0))
        .collect();
    for r in records {
        if !(0.0..=1.0).contains(&r.score) {
            return Err(Error::invalid(format!(
                "detection score {} for sample {} outside [0, 1]",
                r.score, r.sample_id
            )));
        }
        let b = ((r.score * bins as f64) as usize).min(bins - 1);
        if r.is_clean {
            rows[b].2 += 1;
        } else {
            rows[b].3 += 1;
        }
    }
    Ok(rows)
}

/// Write the score histogram as CSV: `bin_lo,bin_hi,count_clean,count_noisy`.
pub fn export_clean_histogram(
    records: &[DetectionRecord],
    bins: usize,
    path: &Path,
) -> Result<()> {
    let rows = clean_histogram(records, bins)?;
    let mut out = String::from("bin_lo,bin_hi,count_clean,count_noisy\n");
    for (lo, hi, clean, noisy) in rows {
        let _ = writeln!(out, "{lo},{hi},{clean},{noisy}");
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(score: f64, is_clean: bool) -> DetectionRecord {
        DetectionRecord {
            sample_id: 0,
            score,
            is_clean,
        }
    }

    /// Independent oracle: enumerate every (clean, noisy) pair.
    fn pairwise_auc(records: &[DetectionRecord]) -> f64 {
        let clean: Vec<f64> = records.iter().filter(|r| r.is_clean).map(|r| r.score).collect();
        let noisy: Vec<f64> = records.iter().filter(|r| !r.is_clean).map(|r| r.score).collect();
        let mut total = 0.0;
        for &c in &clean {
            for &n in &noisy {
                total += if c > n {
                    1.0
                } else if c == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        total / (clean.len() * noisy.len()) as f64
    }

    #[test]
    fn accuracy_basics() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 3], &[0, 0, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(accuracy(&[1], &[1, 2]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn auc_perfect_ranking() {
        let records = vec![rec(0.9, true), rec(0.8, true), rec(0.3, false)];
        assert_eq!(detection_auc(&records).unwrap(), 1.0);
    }

    #[test]
    fn auc_constant_scores() {
        let records = vec![rec(0.5, true), rec(0.5, true), rec(0.5, false)];
        assert_eq!(detection_auc(&records).unwrap(), 0.5);
    }

    #[test]
    fn auc_interleaved_fixture() {
        // Two pairs: (0.9 > 0.85) scores 1, (0.8 < 0.85) scores 0, so the
        // statistic is 1/2. Kept pinned to the pairwise oracle.
        let records = vec![rec(0.9, true), rec(0.8, true), rec(0.85, false)];
        let auc = detection_auc(&records).unwrap();
        assert_eq!(auc, 0.5);
        assert_eq!(auc, pairwise_auc(&records));
    }

    #[test]
    fn auc_single_group_is_error() {
        assert!(detection_auc(&[rec(0.9, true)]).is_err());
        assert!(detection_auc(&[rec(0.9, false), rec(0.1, false)]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_oracle_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let n = rng.random_range(2..=500);
            let records: Vec<DetectionRecord> = (0..n)
                .map(|i| DetectionRecord {
                    sample_id: i,
                    // Quantized scores force plenty of ties.
                    score: (rng.random_range(0..=20) as f64) / 20.0,
                    is_clean: rng.random_bool(0.5),
                })
                .collect();
            let n_clean = records.iter().filter(|r| r.is_clean).count();
            if n_clean == 0 || n_clean == records.len() {
                continue;
            }
            let fast = detection_auc(&records).unwrap();
            let slow = pairwise_auc(&records);
            assert_eq!(fast.to_bits(), slow.to_bits());
        }
    }

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    #[test]
    fn knn_self_match() {
        let embs = vec![unit(vec![1.0, 0.0]), unit(vec![0.0, 1.0]), unit(vec![1.0, 1.0])];
        let labels = vec![0, 1, 0];
        let acc = knn_eval(&embs, &labels, &embs, &labels, 1).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn knn_single_class_train() {
        let train = vec![unit(vec![1.0, 0.0]), unit(vec![0.9, 0.1])];
        let train_labels = vec![2, 2];
        let test = vec![unit(vec![0.0, 1.0]), unit(vec![1.0, 0.0]), unit(vec![-1.0, 0.0])];
        let acc = knn_eval(&train, &train_labels, &test, &[2, 0, 2], 2).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn knn_k_out_of_range() {
        let embs = vec![unit(vec![1.0, 0.0])];
        assert!(knn_eval(&embs, &[0], &embs, &[0], 0).is_err());
        assert!(knn_eval(&embs, &[0], &embs, &[0], 2).is_err());
    }

    #[test]
    fn knn_vote_tie_goes_to_nearest() {
        // Two class-0 points and two class-1 points; the nearest neighbor of
        // the query is class 1, so a 2-2 vote resolves to 1.
        let train = vec![
            unit(vec![1.0, 0.02]),
            unit(vec![1.0, 0.01]),
            unit(vec![1.0, 0.08]),
            unit(vec![1.0, -0.3]),
        ];
        let labels = vec![0, 0, 1, 1];
        let query = vec![unit(vec![1.0, 0.05])];
        let acc = knn_eval(&train, &labels, &query, &[1], 4).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn knn_matches_exhaustive_oracle() {
        // Independent oracle: full pairwise distances on unit vectors
        // (squared Euclidean = 2 - 2 cos), stable selection of the k nearest,
        // same documented tie-breaks.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 300;
        let train: Vec<Vec<f64>> = (0..n)
            .map(|_| unit((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let test: Vec<Vec<f64>> = (0..50)
            .map(|_| unit((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();

        for q in &test {
            let fast = knn_predict(&train, &labels, q, 7);

            let mut by_dist: Vec<(f64, usize)> = train
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let d2: f64 = e.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2, i)
                })
                .collect();
            by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            by_dist.truncate(7);
            let mut votes = [0usize; 3];
            for &(_, i) in &by_dist {
                votes[labels[i]] += 1;
            }
            let top = *votes.iter().max().unwrap();
            let slow = by_dist
                .iter()
                .map(|&(_, i)| labels[i])
                .find(|&c| votes[c] == top)
                .unwrap();

            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn default_k_scales_with_n() {
        assert_eq!(default_knn_k(5), 1);
        assert_eq!(default_knn_k(2000), 200);
        assert_eq!(default_knn_k(50_000), 200);
        assert_eq!(default_knn_k(450), 45);
    }

    #[test]
    fn imbalance_ratio_basics() {
        assert_eq!(imbalance_ratio(&[0, 1, 0, 1], 2).unwrap(), 1.0);
        let labels: Vec<usize> = std::iter::repeat_n(0, 30)
            .chain(std::iter::repeat_n(1, 10))
            .collect();
        assert_eq!(imbalance_ratio(&labels, 2).unwrap(), 3.0);
        assert!(imbalance_ratio(&[0, 0], 2).is_err());
    }

    #[test]
    fn histogram_all_ones_land_in_last_bin() {
        let records: Vec<DetectionRecord> = (0..7).map(|_| rec(1.0, true)).collect();
        let rows = clean_histogram(&records, 10).unwrap();
        assert_eq!(rows.len(), 10);
        assert_eq!(rows[9].2, 7);
        assert_eq!(rows.iter().map(|r| r.2 + r.3).sum::<usize>(), 7);
    }

    #[test]
    fn histogram_uniform_scores_spread_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 100_000;
        let records: Vec<DetectionRecord> = (0..n)
            .map(|i| DetectionRecord {
                sample_id: i,
                score: rng.random_range(0.0..1.0),
                is_clean: i % 2 == 0,
            })
            .collect();
        let rows = clean_histogram(&records, 10).unwrap();
        for (lo, _, c, d) in rows {
            let total = (c + d) as f64;
            assert!(
                (total - n as f64 / 10.0).abs() < 0.05 * n as f64 / 10.0,
                "bin at {lo} holds {total}"
            );
        }
    }

    #[test]
    fn histogram_export_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hist.csv");
        export_clean_histogram(&[rec(0.05, true), rec(0.95, false)], 2, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "bin_lo,bin_hi,count_clean,count_noisy\n0,0.5,1,0\n0.5,1,0,1\n"
        );
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_invariant(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40;
            let mut records: Vec<DetectionRecord> = (0..n)
                .map(|i| DetectionRecord {
                    sample_id: i,
                    score: (rng.random_range(0..=10) as f64) / 10.0,
                    is_clean: i % 3 == 0,
                })
                .collect();
            let before = detection_auc(&records).unwrap();
            // Deterministic shuffle.
            for i in (1..records.len()).rev() {
                let j = rng.random_range(0..=i);
                records.swap(i, j);
            }
            let after = detection_auc(&records).unwrap();
            prop_assert_eq!(before.to_bits(), after.to_bits());
        }

        #[test]
        fn histogram_conserves_counts(scores in proptest::collection::vec(0.0f64..=1.0, 1..100)) {
            let records: Vec<DetectionRecord> = scores
                .iter()
                .enumerate()
                .map(|(i, &s)| DetectionRecord { sample_id: i, score: s, is_clean: i % 2 == 0 })
                .collect();
            let rows = clean_histogram(&records, 10).unwrap();
            let total: usize = rows.iter().map(|r| r.2 + r.3).sum();
            prop_assert_eq!(total, records.len());
        }
    }
}
