//! Single-run training loop: one optimizer step per bag, schedules advanced
//! per step, strictly single-threaded and deterministic in the seed.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::bench::auc;
use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};
use crate::seed::{self, stream};

use super::model::{backward_into, evaluate, GmaGrads, Scratch};
use super::optim::{cosine_warmup, AdamW, OptimizerState};
use super::{Bag, GmaParams};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub base_lr: f64,
    pub final_lr: f64,
    pub base_wd: f64,
    pub final_wd: f64,
    pub warmup_epochs: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Cap on tiles per bag; `None` keeps every tile.
    pub max_tiles_per_bag: Option<usize>,
    /// Attention bottleneck width.
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            base_lr: 1e-4,
            final_lr: 1e-6,
            base_wd: 1e-2,
            final_wd: 1e-1,
            warmup_epochs: 5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            max_tiles_per_bag: None,
            hidden: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(Error::InvalidConfig(format!(
                "warmup_epochs {} must be below epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        for (name, value) in [
            ("base_lr", self.base_lr),
            ("final_lr", self.final_lr),
            ("base_wd", self.base_wd),
            ("final_wd", self.final_wd),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden must be positive".into()));
        }
        self.optimizer().validate()
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW { beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: f64,
}

fn build_bag(dataset: &EmbeddingSet, id: &str, config: &TrainConfig) -> Result<Bag> {
    let matrix = dataset
        .slides
        .get(id)
        .ok_or_else(|| Error::InvalidInput(format!("slide {id} not in dataset")))?;
    let label = *dataset
        .labels
        .get(id)
        .ok_or_else(|| Error::InvalidInput(format!("slide {id} has no label")))?;
    let d = matrix.dim as usize;

    let keep: Vec<usize> = match config.max_tiles_per_bag {
        Some(cap) if matrix.n_tiles() > cap => {
            // Fixed per-slide subsample so train and validation see the same
            // tiles on every epoch.
            let mut order: Vec<usize> = (0..matrix.n_tiles()).collect();
            order.shuffle(&mut seed::rng(seed::mix_str(
                seed::mix(config.seed, &[stream::BAG_CAP]),
                id,
            )));
            let mut kept = order[..cap].to_vec();
            kept.sort_unstable();
            kept
        }
        _ => (0..matrix.n_tiles()).collect(),
    };

    let mut features = Vec::with_capacity(keep.len() * d);
    for &k in &keep {
        features.extend(matrix.row(k).iter().map(|&v| f64::from(v)));
    }
    Bag::new(id, keep.len(), d, features, label)
}

/// Train the aggregator on `train_ids`, tracking loss and AUC on `val_ids`
/// after every epoch.
///
/// One optimizer step per bag; the bag order is reshuffled per epoch from
/// `(seed, epoch)`. Identical inputs and seed give a bit-identical parameter
/// trajectory.
pub fn train_gma(
    dataset: &EmbeddingSet,
    train_ids: &[String],
    val_ids: &[String],
    config: &TrainConfig,
) -> Result<(GmaParams, Vec<EpochRecord>)> {
    config.validate()?;
    if train_ids.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let train_set: BTreeSet<&String> = train_ids.iter().collect();
    if val_ids.iter().any(|id| train_set.contains(id)) {
        return Err(Error::InvalidInput("train and validation sets overlap".into()));
    }

    let train_bags: Vec<Bag> = train_ids
        .iter()
        .map(|id| build_bag(dataset, id, config))
        .collect::<Result<_>>()?;
    let val_bags: Vec<Bag> = val_ids
        .iter()
        .map(|id| build_bag(dataset, id, config))
        .collect::<Result<_>>()?;

    let val_labels: Vec<u8> = val_bags.iter().map(|b| b.label).collect();
    if !val_labels.contains(&0) || !val_labels.contains(&1) {
        return Err(Error::UndefinedAuc(
            "validation set needs at least one sample of each class".into(),
        ));
    }

    let dim = dataset.profile.dim as usize;
    let mut params = GmaParams::init(config.hidden, dim, config.seed);
    let mut state = OptimizerState::new(config.hidden, dim);
    let optimizer = config.optimizer();
    let mut scratch = Scratch::default();
    let mut grads = GmaGrads::zeros(config.hidden, dim);

    let n_train = train_bags.len() as u64;
    let total_steps = u64::from(config.epochs) * n_train;
    // Schedules are evaluated on [0, total_steps - 1] so the last step lands
    // exactly on the final value.
    let sched_total = total_steps.saturating_sub(1).max(1);
    let warmup_steps = u64::from(config.warmup_epochs) * n_train;

    let mut records = Vec::with_capacity(config.epochs as usize);
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..train_bags.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut seed::rng(seed::mix(
            config.seed,
            &[stream::ORDER, u64::from(epoch)],
        )));

        let mut loss_sum = 0.0;
        for &i in &order {
            let lr = cosine_warmup(step, sched_total, warmup_steps, 0.0, config.base_lr, config.final_lr);
            let wd = cosine_warmup(step, sched_total, 0, config.base_wd, config.base_wd, config.final_wd);
            let (loss, _) = backward_into(&params, &train_bags[i], &mut scratch, &mut grads);
            optimizer.step(&mut params, &grads, &mut state, lr, wd);
            loss_sum += loss;
            step += 1;
        }

        let mut val_loss = 0.0;
        let mut scores = Vec::with_capacity(val_bags.len());
        for bag in &val_bags {
            let (loss, logit) = evaluate(&params, bag, &mut scratch)?;
            val_loss += loss;
            scores.push(logit);
        }
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_bags.len() as f64,
            val_loss: val_loss / val_bags.len() as f64,
            val_auc: auc(&scores, &val_labels)?,
        });
    }

    Ok((params, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::synth_embedding_dataset;

    fn quick_config(epochs: u32, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            warmup_epochs: if epochs > 2 { 2 } else { 0 },
            hidden: 16,
            seed,
            ..TrainConfig::default()
        }
    }

    fn split_ids(dataset: &EmbeddingSet, n_val: usize) -> (Vec<String>, Vec<String>) {
        let ids = dataset.labeled_ids();
        // Alternating labels make any prefix/suffix split class-balanced.
        let (val, train) = ids.split_at(n_val);
        (train.to_vec(), val.to_vec())
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let dataset = synth_embedding_dataset(12, (4, 8), 6, 1.0, 2.0, 1).unwrap();
        let (train, val) = split_ids(&dataset, 4);
        let config = quick_config(0, 3);
        let (params, records) = train_gma(&dataset, &train, &val, &config).unwrap();
        assert!(records.is_empty());
        assert_eq!(params, GmaParams::init(config.hidden, 6, config.seed));
    }

    #[test]
    fn training_is_bit_deterministic() {
        let dataset = synth_embedding_dataset(16, (5, 10), 8, 0.5, 1.0, 2).unwrap();
        let (train, val) = split_ids(&dataset, 6);
        let config = quick_config(3, 9);
        let (p1, r1) = train_gma(&dataset, &train, &val, &config).unwrap();
        let (p2, r2) = train_gma(&dataset, &train, &val, &config).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1, r2);

        let other = TrainConfig { seed: 10, ..config };
        let (p3, _) = train_gma(&dataset, &train, &val, &other).unwrap();
        assert_ne!(p1, p3);
    }

    #[test]
    fn separable_dataset_reaches_perfect_auc() {
        let dataset = synth_embedding_dataset(60, (8, 16), 8, 1.0, 10.0, 4).unwrap();
        let (train, val) = split_ids(&dataset, 16);
        let config = TrainConfig { epochs: 20, warmup_epochs: 2, hidden: 32, seed: 5, ..TrainConfig::default() };
        let (_, records) = train_gma(&dataset, &train, &val, &config).unwrap();
        let final_auc = records.last().unwrap().val_auc;
        assert!((final_auc - 1.0).abs() <= 1e-9, "final AUC {final_auc}");
    }

    #[test]
    fn single_class_validation_is_rejected_upfront() {
        let dataset = synth_embedding_dataset(10, (4, 6), 4, 1.0, 1.0, 6).unwrap();
        let ids = dataset.labeled_ids();
        let val: Vec<String> = ids
            .iter()
            .filter(|id| dataset.labels[*id] == 1)
            .take(2)
            .cloned()
            .collect();
        let train: Vec<String> = ids.iter().filter(|id| !val.contains(id)).cloned().collect();
        match train_gma(&dataset, &train, &val, &quick_config(2, 0)) {
            Err(Error::UndefinedAuc(_)) => {}
            other => panic!("expected undefined-AUC error, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let dataset = synth_embedding_dataset(8, (4, 6), 4, 1.0, 1.0, 7).unwrap();
        let ids = dataset.labeled_ids();
        let err = train_gma(&dataset, &ids, &ids[..2].to_vec(), &quick_config(2, 0));
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn bag_cap_subsamples_deterministically() {
        let dataset = synth_embedding_dataset(6, (20, 20), 4, 1.0, 1.0, 8).unwrap();
        let config = TrainConfig { max_tiles_per_bag: Some(7), ..quick_config(1, 1) };
        let bag1 = build_bag(&dataset, &dataset.labeled_ids()[0], &config).unwrap();
        let bag2 = build_bag(&dataset, &dataset.labeled_ids()[0], &config).unwrap();
        assert_eq!(bag1, bag2);
        assert_eq!(bag1.n_tiles, 7);

        let uncapped = build_bag(&dataset, &dataset.labeled_ids()[0], &quick_config(1, 1)).unwrap();
        assert_eq!(uncapped.n_tiles, 20);
    }

    #[test]
    fn learning_rate_trace_hits_schedule_endpoints() {
        // Mirrors the step arithmetic inside the training loop.
        let n_train = 7u64;
        let epochs = 4u64;
        let warmup_epochs = 1u64;
        let total = epochs * n_train;
        let sched_total = total - 1;
        let warmup = warmup_epochs * n_train;
        let base = 1e-3;
        let fin = 1e-5;
        let trace: Vec<f64> = (0..total)
            .map(|s| cosine_warmup(s, sched_total, warmup, 0.0, base, fin))
            .collect();
        assert_eq!(trace[warmup as usize], base);
        assert_eq!(*trace.last().unwrap(), fin);
    }
}
