//! AdamW with decoupled weight decay and the cosine-with-warmup schedule.

use crate::error::{Error, Result};

use super::model::GmaGrads;
use super::GmaParams;

/// Schedule value at `step` of `total_steps`.
///
/// Linear from `start_value` to `base_value` over the warmup window, then
/// `final + 0.5 (base - final)(1 + cos(pi * progress))` over the rest. The
/// endpoints are exact: `base_value` at the end of warmup, `final_value` at
/// `total_steps`.
pub fn cosine_warmup(
    step: u64,
    total_steps: u64,
    warmup_steps: u64,
    start_value: f64,
    base_value: f64,
    final_value: f64,
) -> f64 {
    debug_assert!(step <= total_steps);
    debug_assert!(warmup_steps < total_steps.max(1));
    if step < warmup_steps {
        let progress = step as f64 / warmup_steps as f64;
        return start_value + (base_value - start_value) * progress;
    }
    if step == warmup_steps {
        return base_value;
    }
    if step >= total_steps {
        return final_value;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    final_value + 0.5 * (base_value - final_value) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First/second moments and step counter, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: GmaGrads,
    pub v: GmaGrads,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(hidden: usize, dim: usize) -> Self {
        Self {
            m: GmaGrads::zeros(hidden, dim),
            v: GmaGrads::zeros(hidden, dim),
            t: 0,
        }
    }
}

/// AdamW hyperparameters (the schedule supplies lr and weight decay).
#[derive(Debug, Clone, Copy)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < beta && beta < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0,1), got {beta}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }

    /// One update:
    /// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, bias-corrected,
    /// then `theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)`.
    /// Weight decay is decoupled from the adaptive term.
    pub fn step(
        &self,
        params: &mut GmaParams,
        grads: &GmaGrads,
        state: &mut OptimizerState,
        lr: f64,
        wd: f64,
    ) {
        state.t += 1;
        let bc1 = 1.0 - self.beta1.powi(state.t as i32);
        let bc2 = 1.0 - self.beta2.powi(state.t as i32);

        self.update(&mut params.v, &grads.v, &mut state.m.v, &mut state.v.v, lr, wd, bc1, bc2);
        self.update(&mut params.u, &grads.u, &mut state.m.u, &mut state.v.u, lr, wd, bc1, bc2);
        self.update(&mut params.w, &grads.w, &mut state.m.w, &mut state.v.w, lr, wd, bc1, bc2);
        self.update(&mut params.c, &grads.c, &mut state.m.c, &mut state.v.c, lr, wd, bc1, bc2);

        let g = grads.b;
        state.m.b = self.beta1 * state.m.b + (1.0 - self.beta1) * g;
        state.v.b = self.beta2 * state.v.b + (1.0 - self.beta2) * g * g;
        let m_hat = state.m.b / bc1;
        let v_hat = state.v.b / bc2;
        params.b -= lr * (m_hat / (v_hat.sqrt() + self.eps) + wd * params.b);
    }

    #[allow(clippy::too_many_arguments)]
    fn update(
        &self,
        theta: &mut [f64],
        grad: &[f64],
        m: &mut [f64],
        v: &mut [f64],
        lr: f64,
        wd: f64,
        bc1: f64,
        bc2: f64,
    ) {
        for i in 0..theta.len() {
            let g = grad[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + wd * theta[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_endpoint_is_exact() {
        let v = cosine_warmup(100, 1000, 100, 0.0, 3e-4, 1e-6);
        assert_eq!(v, 3e-4);
    }

    #[test]
    fn final_endpoint_is_exact() {
        let v = cosine_warmup(1000, 1000, 100, 0.0, 3e-4, 1e-6);
        assert_eq!(v, 1e-6);
    }

    #[test]
    fn decay_midpoint_is_average_of_endpoints() {
        // cos(pi/2) = 0 up to f64 rounding.
        let base = 2e-3;
        let fin = 4e-4;
        let v = cosine_warmup(550, 1000, 100, 0.0, base, fin);
        assert!((v - (base + fin) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn warmup_is_linear_from_start_value() {
        let v = cosine_warmup(25, 1000, 100, 1e-5, 1e-4, 0.0);
        assert!((v - (1e-5 + 0.25 * (1e-4 - 1e-5))).abs() < 1e-18);
        assert_eq!(cosine_warmup(0, 10, 0, 0.5, 0.25, 0.1), 0.25);
    }

    fn tiny(hidden: usize, dim: usize, fill: f64) -> GmaParams {
        let mut p = GmaParams::init(hidden, dim, 0);
        p.v.iter_mut().for_each(|x| *x = fill);
        p.u.iter_mut().for_each(|x| *x = fill);
        p.w.iter_mut().for_each(|x| *x = fill);
        p.c.iter_mut().for_each(|x| *x = fill);
        p.b = fill;
        p
    }

    #[test]
    fn first_step_from_zero_state_is_signed_unit_step() {
        // At t=1 the bias corrections cancel: update = -lr * g / (|g| + eps).
        let mut params = tiny(2, 3, 0.0);
        let mut grads = GmaGrads::zeros(2, 3);
        grads.v.iter_mut().for_each(|x| *x = 0.7);
        grads.w[0] = -2.5;
        let mut state = OptimizerState::new(2, 3);
        let opt = AdamW::default();
        let lr = 1e-3;
        opt.step(&mut params, &grads, &mut state, lr, 0.0);

        for &v in &params.v {
            let expected = -lr * 0.7 / (0.7 + opt.eps);
            assert!((v - expected).abs() < 1e-15);
        }
        let expected_w0 = -lr * (-2.5) / (2.5 + opt.eps);
        assert!((params.w[0] - expected_w0).abs() < 1e-15);
        assert_eq!(params.w[1], 0.0);
        assert_eq!(params.b, 0.0);
    }

    #[test]
    fn zero_gradient_zero_decay_is_a_fixed_point() {
        let mut params = tiny(2, 2, 1.5);
        let reference = params.clone();
        let grads = GmaGrads::zeros(2, 2);
        let mut state = OptimizerState::new(2, 2);
        AdamW::default().step(&mut params, &grads, &mut state, 1e-2, 0.0);
        assert_eq!(params, reference);
    }

    #[test]
    fn decoupled_decay_scales_parameters_exactly() {
        let mut params = tiny(2, 2, 2.0);
        let grads = GmaGrads::zeros(2, 2);
        let mut state = OptimizerState::new(2, 2);
        let (lr, wd) = (1e-2, 0.1);
        AdamW::default().step(&mut params, &grads, &mut state, lr, wd);
        let factor = 1.0 - lr * wd;
        for &v in params.v.iter().chain(&params.u).chain(&params.w).chain(&params.c) {
            assert_eq!(v, 2.0 * factor);
        }
        assert_eq!(params.b, 2.0 * factor);
    }

    #[test]
    fn betas_are_validated() {
        assert!(AdamW { beta1: 1.0, ..AdamW::default() }.validate().is_err());
        assert!(AdamW { beta2: 0.0, ..AdamW::default() }.validate().is_err());
        assert!(AdamW::default().validate().is_ok());
    }
}
