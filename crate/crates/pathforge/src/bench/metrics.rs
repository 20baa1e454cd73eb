//! Rank-based ROC AUC with the tie convention of the Mann-Whitney U
//! statistic: a tied (positive, negative) pair counts half a win.
//!
//! Ranks are accumulated in half-units as integers, so the result is the
//! exact rational `U / (n_pos * n_neg)` evaluated once in f64 — identical,
//! bit for bit, to an O(n^2) pairwise count.

use crate::error::{Error, Result};

/// AUC of `scores` against binary `labels`. O(n log n).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score at index {i}")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidInput(format!("label {l} is not binary")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!(
            "need both classes, got {n_pos} positives / {n_neg} negatives"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Sum of doubled average ranks over positives; doubling keeps tie
    // midpoints integral.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the doubled average (i + j + 2).
        let doubled_avg = (i + j + 2) as u128;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                doubled_rank_sum += doubled_avg;
            }
        }
        i = j + 1;
    }

    let doubled_u = doubled_rank_sum - u128::from(n_pos) * u128::from(n_pos + 1);
    Ok(doubled_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}
