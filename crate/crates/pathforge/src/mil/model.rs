//! Gated-attention aggregator with a linear classifier head.
//!
//! For a bag of tile features `h_1..h_n` (rows of an `n x d` matrix):
//!
//! ```text
//! e_k    = w' (tanh(V h_k) . sigmoid(U h_k))     gated attention score
//! a      = softmax(e)                            max-subtracted
//! z      = sum_k a_k h_k                         attention-pooled feature
//! logit  = c' z + b
//! ```
//!
//! The backward pass is a hand-derived exact reverse-mode sweep of the
//! binary cross-entropy-with-logits loss; everything runs in f64.

use crate::error::{Error, Result};

use super::{Bag, GmaParams};

/// Gradients (or any parameter-shaped tensor bundle) for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct GmaGrads {
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub c: Vec<f64>,
    pub b: f64,
}

impl GmaGrads {
    pub fn zeros(hidden: usize, dim: usize) -> Self {
        Self {
            v: vec![0.0; hidden * dim],
            u: vec![0.0; hidden * dim],
            w: vec![0.0; hidden],
            c: vec![0.0; dim],
            b: 0.0,
        }
    }

    fn clear(&mut self) {
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.u.iter_mut().for_each(|x| *x = 0.0);
        self.w.iter_mut().for_each(|x| *x = 0.0);
        self.c.iter_mut().for_each(|x| *x = 0.0);
        self.b = 0.0;
    }
}

/// Reused per-bag buffers; sized for the largest bag seen so far.
#[derive(Debug, Default)]
pub struct Scratch {
    tanh_vh: Vec<f64>,
    sig_uh: Vec<f64>,
    scores: Vec<f64>,
    attention: Vec<f64>,
    pooled: Vec<f64>,
    head_grad: Vec<f64>,
    tile_pull: Vec<f64>,
}

impl Scratch {
    fn ensure(&mut self, n: usize, hidden: usize, dim: usize) {
        self.tanh_vh.resize(n * hidden, 0.0);
        self.sig_uh.resize(n * hidden, 0.0);
        self.scores.resize(n, 0.0);
        self.attention.resize(n, 0.0);
        self.pooled.resize(dim, 0.0);
        self.head_grad.resize(dim, 0.0);
        self.tile_pull.resize(n, 0.0);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let quads = a.len() / 4;
    let mut acc = [0.0f64; 4];
    for i in 0..quads {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in quads * 4..a.len() {
        sum += a[j] * b[j];
    }
    sum
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically fused binary cross-entropy on a raw logit.
pub fn bce_with_logits(logit: f64, label: u8) -> f64 {
    logit.max(0.0) - logit * f64::from(label) + (-logit.abs()).exp().ln_1p()
}

fn check_shapes(params: &GmaParams, bag: &Bag) -> Result<()> {
    if bag.dim != params.dim {
        return Err(Error::ShapeMismatch(format!(
            "bag {} has dim {} but params expect {}",
            bag.slide_id, bag.dim, params.dim
        )));
    }
    Ok(())
}

/// Scores, attention, pooled feature, and logit for one bag.
fn forward_into(params: &GmaParams, bag: &Bag, scratch: &mut Scratch) -> f64 {
    let (n, d, l) = (bag.n_tiles, params.dim, params.hidden);
    scratch.ensure(n, l, d);

    for k in 0..n {
        let h = bag.row(k);
        let mut score = 0.0;
        for li in 0..l {
            let t = dot(&params.v[li * d..(li + 1) * d], h).tanh();
            let s = sigmoid(dot(&params.u[li * d..(li + 1) * d], h));
            scratch.tanh_vh[k * l + li] = t;
            scratch.sig_uh[k * l + li] = s;
            score += params.w[li] * t * s;
        }
        scratch.scores[k] = score;
    }

    // Max-subtracted softmax: finite for scores of any magnitude.
    let max = scratch.scores[..n].iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for k in 0..n {
        let e = (scratch.scores[k] - max).exp();
        scratch.attention[k] = e;
        sum += e;
    }
    for a in &mut scratch.attention[..n] {
        *a /= sum;
    }

    scratch.pooled[..d].iter_mut().for_each(|x| *x = 0.0);
    for k in 0..n {
        axpy(scratch.attention[k], bag.row(k), &mut scratch.pooled[..d]);
    }
    dot(&params.c, &scratch.pooled[..d]) + params.b
}

/// Forward pass: returns the logit and the attention weights (sum 1).
pub fn gma_forward(params: &GmaParams, bag: &Bag) -> Result<(f64, Vec<f64>)> {
    check_shapes(params, bag)?;
    let mut scratch = Scratch::default();
    let logit = forward_into(params, bag, &mut scratch);
    Ok((logit, scratch.attention[..bag.n_tiles].to_vec()))
}

/// Forward + exact reverse-mode sweep, writing gradients into `grads`.
///
/// Returns `(loss, logit)`. Gradients are overwritten, not accumulated.
pub fn backward_into(
    params: &GmaParams,
    bag: &Bag,
    scratch: &mut Scratch,
    grads: &mut GmaGrads,
) -> (f64, f64) {
    let (n, d, l) = (bag.n_tiles, params.dim, params.hidden);
    let logit = forward_into(params, bag, scratch);
    let loss = bce_with_logits(logit, bag.label);
    grads.clear();

    // d loss / d logit for BCE-with-logits.
    let g = sigmoid(logit) - f64::from(bag.label);
    grads.b = g;
    for j in 0..d {
        grads.c[j] = g * scratch.pooled[j];
        scratch.head_grad[j] = g * params.c[j];
    }

    // Pull of each tile on the pooled feature, then softmax backward.
    for k in 0..n {
        scratch.tile_pull[k] = dot(&scratch.head_grad[..d], bag.row(k));
    }
    let mean_pull = (0..n).map(|k| scratch.attention[k] * scratch.tile_pull[k]).sum::<f64>();

    for k in 0..n {
        let de = scratch.attention[k] * (scratch.tile_pull[k] - mean_pull);
        let h = bag.row(k);
        for li in 0..l {
            let t = scratch.tanh_vh[k * l + li];
            let s = scratch.sig_uh[k * l + li];
            grads.w[li] += de * t * s;
            let shared = de * params.w[li];
            let dvh = shared * (1.0 - t * t) * s;
            let duh = shared * t * s * (1.0 - s);
            axpy(dvh, h, &mut grads.v[li * d..(li + 1) * d]);
            axpy(duh, h, &mut grads.u[li * d..(li + 1) * d]);
        }
    }
    (loss, logit)
}

/// Gradients of the BCE-with-logits loss w.r.t. every parameter.
pub fn gma_backward(params: &GmaParams, bag: &Bag) -> Result<(GmaGrads, f64)> {
    check_shapes(params, bag)?;
    let mut scratch = Scratch::default();
    let mut grads = GmaGrads::zeros(params.hidden, params.dim);
    let (loss, _) = backward_into(params, bag, &mut scratch, &mut grads);
    Ok((grads, loss))
}

/// Loss/logit without gradients; used for validation passes.
pub fn evaluate(params: &GmaParams, bag: &Bag, scratch: &mut Scratch) -> Result<(f64, f64)> {
    check_shapes(params, bag)?;
    let logit = forward_into(params, bag, scratch);
    Ok((bce_with_logits(logit, bag.label), logit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn random_bag(n: usize, dim: usize, label: u8, seed_val: u64) -> Bag {
        let mut rng = seed::rng(seed_val);
        let features: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
        Bag::new(format!("bag{seed_val}"), n, dim, features, label).unwrap()
    }

    #[test]
    fn singleton_bag_has_unit_attention_and_linear_logit() {
        let params = GmaParams::init(16, 8, 1);
        let bag = random_bag(1, 8, 1, 2);
        let (logit, attention) = gma_forward(&params, &bag).unwrap();
        assert_eq!(attention, vec![1.0]);
        let expected = bag.row(0).iter().zip(&params.c).map(|(h, c)| h * c).sum::<f64>() + params.b;
        assert!((logit - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_tiles_share_attention_uniformly() {
        let dim = 6;
        let single = random_bag(1, dim, 0, 3);
        let m = 5;
        let features: Vec<f64> = (0..m).flat_map(|_| single.features.clone()).collect();
        let repeated = Bag::new("rep", m, dim, features, 0).unwrap();

        let params = GmaParams::init(8, dim, 4);
        let (logit_one, _) = gma_forward(&params, &single).unwrap();
        let (logit_m, attention) = gma_forward(&params, &repeated).unwrap();
        for a in &attention {
            assert!((a - 1.0 / m as f64).abs() < 1e-12);
        }
        assert!((logit_one - logit_m).abs() < 1e-9);
    }

    #[test]
    fn zero_params_give_uniform_attention_and_bias_logit() {
        let mut params = GmaParams::init(4, 5, 7);
        params.v.iter_mut().for_each(|x| *x = 0.0);
        params.u.iter_mut().for_each(|x| *x = 0.0);
        params.w.iter_mut().for_each(|x| *x = 0.0);
        params.c.iter_mut().for_each(|x| *x = 0.0);
        params.b = 0.375;
        let bag = random_bag(9, 5, 1, 8);
        let (logit, attention) = gma_forward(&params, &bag).unwrap();
        assert!((logit - 0.375).abs() < 1e-15);
        for a in attention {
            assert!((a - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_sums_to_one() {
        for seed_val in 0..20 {
            let params = GmaParams::init(8, 12, seed_val);
            let bag = random_bag(1 + (seed_val as usize * 7) % 50, 12, 0, seed_val + 100);
            let (_, attention) = gma_forward(&params, &bag).unwrap();
            let total: f64 = attention.iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_survives_huge_scores() {
        // Scale weights until attention scores reach ~1e4 in magnitude.
        let dim = 4;
        let mut params = GmaParams::init(2, dim, 3);
        params.w.iter_mut().for_each(|x| *x = 1e4);
        let bag = random_bag(16, dim, 1, 4);
        let (logit, attention) = gma_forward(&params, &bag).unwrap();
        assert!(logit.is_finite());
        assert!(attention.iter().all(|a| a.is_finite()));
        assert!((attention.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn bias_gradient_at_zero_logit_is_minus_half() {
        // sigma(0) - 1 = -0.5 for a positive label.
        let mut params = GmaParams::init(4, 3, 5);
        params.v.iter_mut().for_each(|x| *x = 0.0);
        params.u.iter_mut().for_each(|x| *x = 0.0);
        params.w.iter_mut().for_each(|x| *x = 0.0);
        params.c.iter_mut().for_each(|x| *x = 0.0);
        params.b = 0.0;
        let bag = random_bag(5, 3, 1, 6);
        let (grads, loss) = gma_backward(&params, &bag).unwrap();
        assert!((grads.b - (-0.5)).abs() < 1e-15);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn permuting_tiles_leaves_gradients_unchanged() {
        use rand::seq::SliceRandom;
        let dim = 10;
        let n = 24;
        let params = GmaParams::init(12, dim, 9);
        let bag = random_bag(n, dim, 1, 10);

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(11));
        let mut permuted_features = Vec::with_capacity(n * dim);
        for &k in &order {
            permuted_features.extend_from_slice(bag.row(k));
        }
        let permuted = Bag::new("perm", n, dim, permuted_features, 1).unwrap();

        let (g1, loss1) = gma_backward(&params, &bag).unwrap();
        let (g2, loss2) = gma_backward(&params, &permuted).unwrap();
        assert!((loss1 - loss2).abs() <= 1e-12);
        assert!((g1.b - g2.b).abs() <= 1e-12);
        for (a, b) in g1.v.iter().zip(&g2.v) {
            assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in g1.c.iter().zip(&g2.c) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    /// Central finite differences over every parameter of a small model.
    #[test]
    fn gradients_match_central_differences_on_small_models() {
        let configs = [(1usize, 3usize, 2usize), (4, 5, 3), (7, 8, 4)];
        for (i, &(n, dim, hidden)) in configs.iter().enumerate() {
            let params = GmaParams::init(hidden, dim, 20 + i as u64);
            let bag = random_bag(n, dim, (i % 2) as u8, 30 + i as u64);
            let (grads, _) = gma_backward(&params, &bag).unwrap();
            let max_err = finite_difference_max_rel_err(&params, &bag, &grads, None);
            assert!(max_err <= 1e-4, "config {i}: max rel err {max_err}");
        }
    }

    /// Numeric-vs-analytic comparison used by the test suites.
    ///
    /// Perturbs parameters one at a time with a central difference of step
    /// 1e-5. `sample_every` thins the checked indices for large models; the
    /// analytic side is always exact, only the comparison is sampled.
    pub(crate) fn finite_difference_max_rel_err(
        params: &GmaParams,
        bag: &Bag,
        grads: &GmaGrads,
        sample_every: Option<usize>,
    ) -> f64 {
        const STEP: f64 = 1e-5;
        let stride = sample_every.unwrap_or(1).max(1);
        let mut max_rel = 0.0f64;

        let loss_with = |p: &GmaParams| -> f64 {
            let mut scratch = Scratch::default();
            let logit = forward_into(p, bag, &mut scratch);
            bce_with_logits(logit, bag.label)
        };

        let mut check = |analytic: f64, probe: &mut dyn FnMut(f64) -> f64| {
            let plus = probe(STEP);
            let minus = probe(-STEP);
            let numeric = (plus - minus) / (2.0 * STEP);
            let denom = analytic.abs().max(numeric.abs());
            if denom > 1e-7 {
                max_rel = max_rel.max((analytic - numeric).abs() / denom);
            }
        };

        let mut work = params.clone();
        for idx in (0..params.v.len()).step_by(stride) {
            check(grads.v[idx], &mut |eps| {
                work.v[idx] = params.v[idx] + eps;
                let l = loss_with(&work);
                work.v[idx] = params.v[idx];
                l
            });
        }
        for idx in (0..params.u.len()).step_by(stride) {
            check(grads.u[idx], &mut |eps| {
                work.u[idx] = params.u[idx] + eps;
                let l = loss_with(&work);
                work.u[idx] = params.u[idx];
                l
            });
        }
        for idx in (0..params.w.len()).step_by(stride.min(params.w.len()).max(1)) {
            check(grads.w[idx], &mut |eps| {
                work.w[idx] = params.w[idx] + eps;
                let l = loss_with(&work);
                work.w[idx] = params.w[idx];
                l
            });
        }
        for idx in (0..params.c.len()).step_by(stride.min(params.c.len()).max(1)) {
            check(grads.c[idx], &mut |eps| {
                work.c[idx] = params.c[idx] + eps;
                let l = loss_with(&work);
                work.c[idx] = params.c[idx];
                l
            });
        }
        check(grads.b, &mut |eps| {
            work.b = params.b + eps;
            let l = loss_with(&work);
            work.b = params.b;
            l
        });
        max_rel
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let params = GmaParams::init(4, 8, 0);
        let bag = random_bag(3, 7, 0, 1);
        assert!(matches!(gma_forward(&params, &bag), Err(Error::ShapeMismatch(_))));
    }
}
