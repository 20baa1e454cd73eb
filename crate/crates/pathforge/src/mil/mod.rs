//! Gated-attention multiple-instance learning: model, optimizer, training.

pub mod io;
pub mod model;
pub mod optim;
mod train;

pub use model::{bce_with_logits, evaluate, gma_backward, gma_forward, sigmoid, GmaGrads, Scratch};
pub use optim::{cosine_warmup, AdamW, OptimizerState};
pub use train::{train_gma, EpochRecord, TrainConfig};

use crate::error::{Error, Result};
use crate::seed::{self, stream};

use rand::Rng;

/// One slide's tile features (f64, row-major `n_tiles x dim`) and label.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub slide_id: String,
    pub n_tiles: usize,
    pub dim: usize,
    pub features: Vec<f64>,
    pub label: u8,
}

impl Bag {
    pub fn new(
        slide_id: impl Into<String>,
        n_tiles: usize,
        dim: usize,
        features: Vec<f64>,
        label: u8,
    ) -> Result<Self> {
        let slide_id = slide_id.into();
        if n_tiles == 0 {
            return Err(Error::InvalidInput(format!("bag {slide_id} has no tiles")));
        }
        if features.len() != n_tiles * dim {
            return Err(Error::ShapeMismatch(format!(
                "bag {slide_id}: {} features for {n_tiles} x {dim}",
                features.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("bag {slide_id} has non-finite features")));
        }
        if label > 1 {
            return Err(Error::InvalidInput(format!("bag {slide_id}: label {label} not binary")));
        }
        Ok(Self { slide_id, n_tiles, dim, features, label })
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.features[k * self.dim..(k + 1) * self.dim]
    }
}

/// Aggregator weights: gated attention (`v`, `u`, `w`) over a hidden width,
/// plus the linear head (`c`, `b`).
#[derive(Debug, Clone, PartialEq)]
pub struct GmaParams {
    pub hidden: usize,
    pub dim: usize,
    /// `hidden x dim`, tanh branch.
    pub v: Vec<f64>,
    /// `hidden x dim`, sigmoid gate branch.
    pub u: Vec<f64>,
    /// `hidden`, attention projection.
    pub w: Vec<f64>,
    /// `dim`, classifier weight.
    pub c: Vec<f64>,
    /// Classifier bias.
    pub b: f64,
}

impl GmaParams {
    /// Symmetric uniform init with scale `1/sqrt(fan_in)` per tensor.
    pub fn init(hidden: usize, dim: usize, init_seed: u64) -> Self {
        let mut rng = seed::rng(seed::mix(init_seed, &[stream::INIT]));
        let mut uniform = |count: usize, fan_in: usize| -> Vec<f64> {
            let scale = 1.0 / (fan_in as f64).sqrt();
            (0..count).map(|_| rng.random_range(-scale..scale)).collect()
        };
        let v = uniform(hidden * dim, dim);
        let u = uniform(hidden * dim, dim);
        let w = uniform(hidden, hidden);
        let c = uniform(dim, dim);
        Self { hidden, dim, v, u, w, c, b: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.v.len() != self.hidden * self.dim
            || self.u.len() != self.hidden * self.dim
            || self.w.len() != self.hidden
            || self.c.len() != self.dim
        {
            return Err(Error::ShapeMismatch("parameter shapes inconsistent".into()));
        }
        let finite = self
            .v
            .iter()
            .chain(&self.u)
            .chain(&self.w)
            .chain(&self.c)
            .all(|x| x.is_finite())
            && self.b.is_finite();
        if !finite {
            return Err(Error::InvalidInput("parameters contain non-finite values".into()));
        }
        Ok(())
    }
}
