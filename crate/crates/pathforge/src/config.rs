//! Plain-text pipeline configuration.
//!
//! Grammar: `[section]` headers over `key = value` lines; `#` starts a
//! comment; blank lines are ignored. Sections are `tiling`, `schedule`,
//! `train`, `plan`, and `paths`. Unknown sections or keys are parse errors
//! (reported with their line number), so typos cannot silently fall back to
//! defaults. [`PipelineConfig::to_text`] emits the fully resolved
//! configuration in canonical form; every run embeds that echo in its
//! manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mil::TrainConfig;
use crate::schedule::ScheduleConfig;
use crate::tiling::{ThresholdMode, TilingParams};

/// MCCV plan parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub n_splits: u32,
    pub train_frac: f64,
    pub replicas: u32,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { n_splits: 20, train_frac: 0.8, replicas: 2, seed: 0, stratified: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub tiling: TilingParams,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub plan: PlanConfig,
    /// Default output root; overridden by `--out` and `PATHFORGE_OUT`.
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = PipelineConfig::default();
        let mut section: Option<String> = None;

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }

            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| parse_err(line_no, "unterminated section header"))?
                    .trim();
                if !matches!(name, "tiling" | "schedule" | "train" | "plan" | "paths") {
                    return Err(parse_err(line_no, &format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }

            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(line_no, "expected key = value"))?;
            let key = key.trim();
            let value = value.trim();
            let section = section
                .as_deref()
                .ok_or_else(|| parse_err(line_no, "key outside any [section]"))?;
            config.apply(section, key, value, line_no)?;
        }
        Ok(config)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str, line: usize) -> Result<()> {
        match section {
            "tiling" => match key {
                "tile_px" => self.tiling.tile_px = parse(value, line)?,
                "target_mpp" => self.tiling.target_mpp = parse(value, line)?,
                "min_tissue_frac" => self.tiling.min_tissue_frac = parse(value, line)?,
                "threshold_mode" => {
                    self.tiling.threshold_mode = match value {
                        "fixed-saturation" => ThresholdMode::FixedSaturation,
                        "otsu-saturation" => ThresholdMode::OtsuSaturation,
                        other => {
                            return Err(parse_err(line, &format!("unknown threshold_mode {other:?}")))
                        }
                    }
                }
                _ => return Err(unknown_key(line, section, key)),
            },
            "schedule" => match key {
                "n_pseudo_epochs" => self.schedule.n_pseudo_epochs = parse(value, line)?,
                "n_folds" => self.schedule.n_folds = parse(value, line)?,
                "tiles_per_epoch" => self.schedule.tiles_per_epoch = parse(value, line)?,
                "master_seed" => self.schedule.master_seed = parse(value, line)?,
                "imagenet_size" => self.schedule.imagenet_size = parse(value, line)?,
                _ => return Err(unknown_key(line, section, key)),
            },
            "train" => match key {
                "epochs" => self.train.epochs = parse(value, line)?,
                "base_lr" => self.train.base_lr = parse(value, line)?,
                "final_lr" => self.train.final_lr = parse(value, line)?,
                "base_wd" => self.train.base_wd = parse(value, line)?,
                "final_wd" => self.train.final_wd = parse(value, line)?,
                "warmup_epochs" => self.train.warmup_epochs = parse(value, line)?,
                "beta1" => self.train.beta1 = parse(value, line)?,
                "beta2" => self.train.beta2 = parse(value, line)?,
                "eps" => self.train.eps = parse(value, line)?,
                "seed" => self.train.seed = parse(value, line)?,
                "max_tiles_per_bag" => {
                    let cap: usize = parse(value, line)?;
                    self.train.max_tiles_per_bag = (cap > 0).then_some(cap);
                }
                "hidden" => self.train.hidden = parse(value, line)?,
                _ => return Err(unknown_key(line, section, key)),
            },
            "plan" => match key {
                "n_splits" => self.plan.n_splits = parse(value, line)?,
                "train_frac" => self.plan.train_frac = parse(value, line)?,
                "replicas" => self.plan.replicas = parse(value, line)?,
                "seed" => self.plan.seed = parse(value, line)?,
                "stratified" => self.plan.stratified = parse(value, line)?,
                _ => return Err(unknown_key(line, section, key)),
            },
            "paths" => match key {
                "out" => self.out = Some(PathBuf::from(value)),
                _ => return Err(unknown_key(line, section, key)),
            },
            _ => unreachable!("sections are validated at the header"),
        }
        Ok(())
    }

    /// Canonical serialization of every resolved value; `parse` of the
    /// output reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[tiling]");
        let _ = writeln!(s, "tile_px = {}", self.tiling.tile_px);
        let _ = writeln!(s, "target_mpp = {}", self.tiling.target_mpp);
        let _ = writeln!(s, "min_tissue_frac = {}", self.tiling.min_tissue_frac);
        let mode = match self.tiling.threshold_mode {
            ThresholdMode::FixedSaturation => "fixed-saturation",
            ThresholdMode::OtsuSaturation => "otsu-saturation",
        };
        let _ = writeln!(s, "threshold_mode = {mode}");

        let _ = writeln!(s, "\n[schedule]");
        let _ = writeln!(s, "n_pseudo_epochs = {}", self.schedule.n_pseudo_epochs);
        let _ = writeln!(s, "n_folds = {}", self.schedule.n_folds);
        let _ = writeln!(s, "tiles_per_epoch = {}", self.schedule.tiles_per_epoch);
        let _ = writeln!(s, "master_seed = {}", self.schedule.master_seed);
        let _ = writeln!(s, "imagenet_size = {}", self.schedule.imagenet_size);

        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "epochs = {}", self.train.epochs);
        let _ = writeln!(s, "base_lr = {}", self.train.base_lr);
        let _ = writeln!(s, "final_lr = {}", self.train.final_lr);
        let _ = writeln!(s, "base_wd = {}", self.train.base_wd);
        let _ = writeln!(s, "final_wd = {}", self.train.final_wd);
        let _ = writeln!(s, "warmup_epochs = {}", self.train.warmup_epochs);
        let _ = writeln!(s, "beta1 = {}", self.train.beta1);
        let _ = writeln!(s, "beta2 = {}", self.train.beta2);
        let _ = writeln!(s, "eps = {}", self.train.eps);
        let _ = writeln!(s, "seed = {}", self.train.seed);
        let _ = writeln!(s, "max_tiles_per_bag = {}", self.train.max_tiles_per_bag.unwrap_or(0));
        let _ = writeln!(s, "hidden = {}", self.train.hidden);

        let _ = writeln!(s, "\n[plan]");
        let _ = writeln!(s, "n_splits = {}", self.plan.n_splits);
        let _ = writeln!(s, "train_frac = {}", self.plan.train_frac);
        let _ = writeln!(s, "replicas = {}", self.plan.replicas);
        let _ = writeln!(s, "seed = {}", self.plan.seed);
        let _ = writeln!(s, "stratified = {}", self.plan.stratified);

        if let Some(out) = &self.out {
            let _ = writeln!(s, "\n[paths]");
            let _ = writeln!(s, "out = {}", out.display());
        }
        s
    }
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::ConfigParse { line, msg: msg.to_string() }
}

fn unknown_key(line: usize, section: &str, key: &str) -> Error {
    parse_err(line, &format!("unknown key {key:?} in section [{section}]"))
}

fn parse<T: std::str::FromStr>(value: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| parse_err(line, &format!("bad value {value:?}: {e}")))
}
