//! Monte Carlo cross-validation plans: repeated random train/validation
//! splits, drawn once, persisted, and reused identically across experiments.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::schedule::hex_string;
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCCVPlan {
    pub n_splits: u32,
    pub train_frac: f64,
    pub replicas: u32,
    pub seed: u64,
    pub splits: Vec<Split>,
}

fn validate_ids(ids: &[String]) -> Result<()> {
    if ids.len() < 5 {
        return Err(Error::InvalidConfig(format!(
            "need at least 5 samples, got {}",
            ids.len()
        )));
    }
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::InvalidInput("duplicate sample ids".into()));
    }
    Ok(())
}

fn split_sizes(n: usize, train_frac: f64) -> Result<(usize, usize)> {
    if !(0.0 < train_frac && train_frac < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_frac must lie in (0,1), got {train_frac}"
        )));
    }
    let n_train = (train_frac * n as f64).floor() as usize;
    let n_val = n - n_train;
    if n_train == 0 || n_val == 0 {
        return Err(Error::InvalidConfig(format!(
            "train_frac {train_frac} makes a degenerate split of {n} samples ({n_train}/{n_val})"
        )));
    }
    Ok((n_train, n_val))
}

/// Draw `n_splits` independent splits: per split, a uniform sample without
/// replacement of `floor(train_frac * n)` ids trains, the rest validate.
/// Deterministic in `seed`; ids are canonicalized by sorting first.
pub fn make_mccv_plan(
    sample_ids: &[String],
    n_splits: u32,
    train_frac: f64,
    seed_val: u64,
) -> Result<MCCVPlan> {
    validate_ids(sample_ids)?;
    if n_splits == 0 {
        return Err(Error::InvalidConfig("n_splits must be positive".into()));
    }
    let (n_train, _) = split_sizes(sample_ids.len(), train_frac)?;

    let mut ids: Vec<String> = sample_ids.to_vec();
    ids.sort();

    let mut splits = Vec::with_capacity(n_splits as usize);
    for s in 0..n_splits {
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.shuffle(&mut seed::rng(seed::mix(seed_val, &[stream::SPLIT, u64::from(s)])));
        let mut train: Vec<String> = order[..n_train].iter().map(|&i| ids[i].clone()).collect();
        let mut val: Vec<String> = order[n_train..].iter().map(|&i| ids[i].clone()).collect();
        train.sort();
        val.sort();
        splits.push(Split { train, val });
    }
    Ok(MCCVPlan { n_splits, train_frac, replicas: 2, seed: seed_val, splits })
}

/// Class-stratified variant for small or imbalanced cohorts: each class is
/// sampled separately at `train_frac`, topped up by largest remainder so the
/// total train size still equals `floor(train_frac * n)`.
pub fn make_mccv_plan_stratified(
    labeled_ids: &[(String, u8)],
    n_splits: u32,
    train_frac: f64,
    seed_val: u64,
) -> Result<MCCVPlan> {
    let ids: Vec<String> = labeled_ids.iter().map(|(id, _)| id.clone()).collect();
    validate_ids(&ids)?;
    if n_splits == 0 {
        return Err(Error::InvalidConfig("n_splits must be positive".into()));
    }
    let (n_train, _) = split_sizes(ids.len(), train_frac)?;

    let mut by_class: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    for (id, label) in labeled_ids {
        if *label > 1 {
            return Err(Error::InvalidInput(format!("label {label} is not binary")));
        }
        by_class[*label as usize].push(id.clone());
    }
    by_class.iter_mut().for_each(|c| c.sort());

    // Per-class train counts: floors, topped up by largest remainder (label
    // 1 wins ties) so the total still equals the global floor. The sum of
    // two floors falls short of floor(sum) by at most one unit.
    let exact: [f64; 2] = [
        train_frac * by_class[0].len() as f64,
        train_frac * by_class[1].len() as f64,
    ];
    let mut counts = [exact[0].floor() as usize, exact[1].floor() as usize];
    if counts[0] + counts[1] < n_train {
        let favored = usize::from(exact[1].fract() >= exact[0].fract());
        let class = if counts[favored] < by_class[favored].len() { favored } else { 1 - favored };
        counts[class] += 1;
    }

    let mut splits = Vec::with_capacity(n_splits as usize);
    for s in 0..n_splits {
        let mut rng = seed::rng(seed::mix(seed_val, &[stream::SPLIT, u64::from(s)]));
        let mut train = Vec::with_capacity(n_train);
        let mut val = Vec::new();
        for class in 0..2 {
            let mut order: Vec<usize> = (0..by_class[class].len()).collect();
            order.shuffle(&mut rng);
            for (rank, &i) in order.iter().enumerate() {
                if rank < counts[class] {
                    train.push(by_class[class][i].clone());
                } else {
                    val.push(by_class[class][i].clone());
                }
            }
        }
        if val.is_empty() {
            return Err(Error::InvalidConfig("stratified split leaves an empty validation set".into()));
        }
        train.sort();
        val.sort();
        splits.push(Split { train, val });
    }
    Ok(MCCVPlan { n_splits, train_frac, replicas: 2, seed: seed_val, splits })
}

impl MCCVPlan {
    pub fn with_replicas(mut self, replicas: u32) -> Self {
        self.replicas = replicas;
        self
    }

    /// All sample ids covered by the plan (sorted).
    pub fn sample_ids(&self) -> Vec<String> {
        let mut ids: BTreeSet<String> = BTreeSet::new();
        for split in &self.splits {
            ids.extend(split.train.iter().cloned());
            ids.extend(split.val.iter().cloned());
        }
        ids.into_iter().collect()
    }

    /// Serialize: one `#` header, then `split \t role \t sample_id` rows.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#n_splits={} train_frac={} replicas={} seed={}\n",
            self.n_splits, self.train_frac, self.replicas, self.seed
        );
        for (s, split) in self.splits.iter().enumerate() {
            for id in &split.train {
                let _ = writeln!(out, "{s}\ttrain\t{id}");
            }
            for id in &split.val {
                let _ = writeln!(out, "{s}\tval\t{id}");
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix('#'))
            .ok_or_else(|| Error::InvalidInput("plan must start with a '#' header".into()))?;
        let mut n_splits = None;
        let mut train_frac = None;
        let mut replicas = None;
        let mut seed_val = None;
        for token in header.split_whitespace() {
            let (k, v) = token
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("bad plan header token {token:?}")))?;
            match k {
                "n_splits" => n_splits = v.parse::<u32>().ok(),
                "train_frac" => train_frac = v.parse::<f64>().ok(),
                "replicas" => replicas = v.parse::<u32>().ok(),
                "seed" => seed_val = v.parse::<u64>().ok(),
                other => return Err(Error::InvalidInput(format!("unknown plan field {other:?}"))),
            }
        }
        let n_splits =
            n_splits.ok_or_else(|| Error::InvalidInput("plan header missing n_splits".into()))?;
        let mut splits = vec![Split { train: Vec::new(), val: Vec::new() }; n_splits as usize];
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next(), cols.next()) {
                (Some(s), Some(role), Some(id), None) => {
                    let s: usize = s
                        .parse()
                        .map_err(|e| Error::InvalidInput(format!("bad split index: {e}")))?;
                    if s >= splits.len() {
                        return Err(Error::InvalidInput(format!("split index {s} out of range")));
                    }
                    match role {
                        "train" => splits[s].train.push(id.to_string()),
                        "val" => splits[s].val.push(id.to_string()),
                        other => {
                            return Err(Error::InvalidInput(format!("unknown role {other:?}")))
                        }
                    }
                }
                _ => return Err(Error::InvalidInput(format!("bad plan line {line:?}"))),
            }
        }
        let plan = MCCVPlan {
            n_splits,
            train_frac: train_frac
                .ok_or_else(|| Error::InvalidInput("plan header missing train_frac".into()))?,
            replicas: replicas
                .ok_or_else(|| Error::InvalidInput("plan header missing replicas".into()))?,
            seed: seed_val.ok_or_else(|| Error::InvalidInput("plan header missing seed".into()))?,
            splits,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.splits.len() != self.n_splits as usize {
            return Err(Error::InvalidInput(format!(
                "plan declares {} splits but holds {}",
                self.n_splits,
                self.splits.len()
            )));
        }
        if self.replicas == 0 {
            return Err(Error::InvalidConfig("replicas must be positive".into()));
        }
        let universe = self.sample_ids();
        for (s, split) in self.splits.iter().enumerate() {
            if split.train.is_empty() || split.val.is_empty() {
                return Err(Error::InvalidInput(format!("split {s} has an empty side")));
            }
            let train: BTreeSet<&String> = split.train.iter().collect();
            let val: BTreeSet<&String> = split.val.iter().collect();
            if train.intersection(&val).next().is_some() {
                return Err(Error::InvalidInput(format!("split {s} overlaps train and val")));
            }
            if train.len() + val.len() != universe.len() {
                return Err(Error::InvalidInput(format!(
                    "split {s} does not cover the sample universe"
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the serialized plan; recorded by every downstream report.
    pub fn hash(&self) -> String {
        hex_string(&Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
