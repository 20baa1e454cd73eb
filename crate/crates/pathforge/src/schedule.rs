//! Hardcoded, organ-balanced pseudo-epoch training schedules.
//!
//! A slide corpus is partitioned into organ-stratified folds; each
//! pseudo-epoch draws a fixed tile budget from one fold, balancing tile
//! counts across organs by water-filling, and emits an ordered manifest of
//! (slide, tile) references whose order is the final training order.
//! Everything is a pure function of (corpus, config), so manifests carry
//! stable checksums.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// Per-epoch draws from one slide are capped at this multiple of its tile
/// count once sampling switches to replacement.
pub const REPLACEMENT_CAP_FACTOR: u64 = 4;

/// Default reference-epoch size used to express pseudo-epochs in familiar
/// units (ImageNet-1k training-set size).
pub const DEFAULT_IMAGENET_SIZE: u64 = 1_281_167;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlideEntry {
    pub slide_id: String,
    pub organ: String,
    pub n_tiles: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub n_pseudo_epochs: u32,
    pub n_folds: u32,
    pub tiles_per_epoch: u64,
    pub master_seed: u64,
    pub imagenet_size: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            n_pseudo_epochs: 50,
            n_folds: 5,
            tiles_per_epoch: 0,
            master_seed: 0,
            imagenet_size: DEFAULT_IMAGENET_SIZE,
        }
    }
}

impl ScheduleConfig {
    /// Check config invariants against a corpus. Returns non-fatal warnings
    /// (e.g. epoch count not divisible by fold count).
    pub fn validate(&self, corpus: &[SlideEntry]) -> Result<Vec<String>> {
        if self.n_pseudo_epochs == 0 {
            return Err(Error::InvalidConfig("n_pseudo_epochs must be positive".into()));
        }
        if self.n_folds == 0 {
            return Err(Error::InvalidConfig("n_folds must be positive".into()));
        }
        if self.tiles_per_epoch == 0 {
            return Err(Error::InvalidConfig("tiles_per_epoch must be positive".into()));
        }
        if self.imagenet_size == 0 {
            return Err(Error::InvalidConfig("imagenet_size must be positive".into()));
        }
        let organs: std::collections::BTreeSet<&str> =
            corpus.iter().map(|s| s.organ.as_str()).collect();
        if self.tiles_per_epoch < organs.len() as u64 {
            return Err(Error::InvalidConfig(format!(
                "tiles_per_epoch {} is below the organ count {}",
                self.tiles_per_epoch,
                organs.len()
            )));
        }
        let mut warnings = Vec::new();
        if self.n_pseudo_epochs % self.n_folds != 0 {
            warnings.push(format!(
                "n_pseudo_epochs {} is not a multiple of n_folds {}; folds get uneven pass counts",
                self.n_pseudo_epochs, self.n_folds
            ));
        }
        Ok(warnings)
    }
}

/// Disjoint organ-stratified fold assignment covering the whole corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub n_folds: u32,
    /// Fold index per corpus position.
    pub fold_of: Vec<u32>,
}

impl FoldAssignment {
    pub fn fold_members<'a>(&self, corpus: &'a [SlideEntry], fold: u32) -> Vec<&'a SlideEntry> {
        corpus
            .iter()
            .zip(&self.fold_of)
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s)
            .collect()
    }
}

/// One pseudo-epoch of training data in final order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoEpochManifest {
    pub epoch_index: u32,
    pub fold_index: u32,
    pub seed: u64,
    /// (slide_id, tile_index) in training order.
    pub entries: Vec<(String, u64)>,
    /// SHA-256 over the serialized entry lines.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleStats {
    pub imagenet_epochs_per_pseudo_epoch: f64,
    pub total_passes_through_corpus: f64,
    pub steps_per_epoch: u64,
    pub optimization_steps: u64,
}

fn check_unique_ids(corpus: &[SlideEntry]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for slide in corpus {
        if slide.organ.is_empty() {
            return Err(Error::InvalidInput(format!(
                "slide {} has an empty organ",
                slide.slide_id
            )));
        }
        if !seen.insert(slide.slide_id.as_str()) {
            return Err(Error::InvalidInput(format!(
                "duplicate slide_id {}",
                slide.slide_id
            )));
        }
    }
    Ok(())
}

/// Partition the corpus into `n_folds` organ-stratified folds.
///
/// Slides are grouped by organ, shuffled within each organ under a seed
/// derived from (master_seed, organ), and dealt to folds through one global
/// cyclic cursor. Fold sizes differ by at most one overall and within each
/// organ.
pub fn partition_slides(
    corpus: &[SlideEntry],
    n_folds: u32,
    master_seed: u64,
) -> Result<FoldAssignment> {
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("corpus is empty".into()));
    }
    if n_folds == 0 || n_folds as usize > corpus.len() {
        return Err(Error::InvalidConfig(format!(
            "n_folds {} must lie in [1, {}]",
            n_folds,
            corpus.len()
        )));
    }
    check_unique_ids(corpus)?;

    let mut by_organ: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, slide) in corpus.iter().enumerate() {
        by_organ.entry(slide.organ.as_str()).or_default().push(i);
    }

    let mut fold_of = vec![0u32; corpus.len()];
    let mut cursor = 0u64;
    for (organ, mut indices) in by_organ {
        indices.sort_by(|&a, &b| corpus[a].slide_id.cmp(&corpus[b].slide_id));
        let organ_seed = seed::mix_str(seed::mix(master_seed, &[stream::FOLD]), organ);
        indices.shuffle(&mut seed::rng(organ_seed));
        for i in indices {
            fold_of[i] = (cursor % u64::from(n_folds)) as u32;
            cursor += 1;
        }
    }
    Ok(FoldAssignment { n_folds, fold_of })
}

/// Water-filling allocation of the epoch tile budget across organs.
///
/// An organ's capacity is the sum of its slides' per-epoch draw caps
/// (`REPLACEMENT_CAP_FACTOR` times their tile counts). See [`water_fill`]
/// for the allocation itself.
pub fn organ_quotas(fold: &[&SlideEntry], tiles_per_epoch: u64) -> Result<BTreeMap<String, u64>> {
    if fold.is_empty() {
        return Err(Error::InvalidInput("fold is empty".into()));
    }
    let mut capacity: BTreeMap<String, u64> = BTreeMap::new();
    for slide in fold {
        *capacity.entry(slide.organ.clone()).or_insert(0) +=
            slide.n_tiles.saturating_mul(REPLACEMENT_CAP_FACTOR);
    }
    water_fill(&capacity, tiles_per_epoch)
}

/// Fixed-point cap-and-redistribute allocation.
///
/// Every organ starts from an equal share of the budget; organs whose
/// capacity falls below their share are pinned at capacity and the surplus
/// is split equally among the rest, repeating until no organ is over its
/// capacity. Largest-remainder rounding makes the result sum exactly to
/// `budget` (shares are equal, so the remainder goes one unit each to the
/// first open organs in name order).
pub fn water_fill(capacity: &BTreeMap<String, u64>, budget: u64) -> Result<BTreeMap<String, u64>> {
    let total_capacity: u64 = capacity.values().sum();
    if total_capacity == 0 {
        return Err(Error::InvalidInput("fold has zero total tiles".into()));
    }
    if total_capacity < budget {
        return Err(Error::InvalidInput(format!(
            "fold capacity {total_capacity} cannot fill a budget of {budget}"
        )));
    }

    let mut quotas: BTreeMap<String, u64> = BTreeMap::new();
    let mut open: Vec<&str> = capacity.keys().map(String::as_str).collect();
    let mut remaining = budget;

    loop {
        let share = remaining as f64 / open.len() as f64;
        let (pinned, still_open): (Vec<&str>, Vec<&str>) = open
            .iter()
            .partition(|&&organ| (capacity[organ] as f64) < share);
        for organ in &pinned {
            quotas.insert((*organ).to_string(), capacity[*organ]);
            remaining -= capacity[*organ];
        }
        open = still_open;
        if pinned.is_empty() || open.is_empty() {
            break;
        }
    }

    if !open.is_empty() {
        let base = remaining / open.len() as u64;
        let extra = (remaining % open.len() as u64) as usize;
        for (i, organ) in open.iter().enumerate() {
            quotas.insert((*organ).to_string(), base + u64::from(i < extra));
        }
    }

    debug_assert_eq!(quotas.values().sum::<u64>(), budget);
    Ok(quotas)
}

/// Lazily draws a uniform permutation of `0..n` one element at a time.
///
/// Sparse Fisher-Yates: memory scales with the number of draws, not `n`.
struct PartialShuffle {
    n: u64,
    drawn: u64,
    swaps: std::collections::HashMap<u64, u64>,
}

impl PartialShuffle {
    fn new(n: u64) -> Self {
        Self { n, drawn: 0, swaps: std::collections::HashMap::new() }
    }

    fn next(&mut self, rng: &mut impl Rng) -> Option<u64> {
        if self.drawn == self.n {
            return None;
        }
        let i = self.drawn;
        let j = rng.random_range(i..self.n);
        let vi = self.swaps.get(&i).copied().unwrap_or(i);
        let vj = self.swaps.get(&j).copied().unwrap_or(j);
        self.swaps.insert(j, vi);
        self.swaps.insert(i, vj);
        self.drawn += 1;
        Some(vj)
    }
}

/// Compile the full schedule: one manifest per pseudo-epoch.
///
/// Epoch `e` draws from fold `e mod n_folds`. Within each organ the quota is
/// dealt round-robin over that fold's slides of the organ (shuffled order),
/// taking unseen tiles first; once a slide's tiles run out further turns
/// draw with replacement, up to 4x its tile count. The entry list is then
/// shuffled into final training order.
pub fn compile_schedule(
    corpus: &[SlideEntry],
    config: &ScheduleConfig,
) -> Result<Vec<PseudoEpochManifest>> {
    config.validate(corpus)?;
    let folds = partition_slides(corpus, config.n_folds, config.master_seed)?;
    (0..config.n_pseudo_epochs)
        .map(|e| compile_epoch(corpus, config, &folds, e))
        .collect()
}

fn compile_epoch(
    corpus: &[SlideEntry],
    config: &ScheduleConfig,
    folds: &FoldAssignment,
    epoch: u32,
) -> Result<PseudoEpochManifest> {
    let fold_index = epoch % config.n_folds;
    let members = folds.fold_members(corpus, fold_index);
    let quotas = organ_quotas(&members, config.tiles_per_epoch)?;

    let epoch_seed = seed::mix(config.master_seed, &[stream::EPOCH, u64::from(epoch)]);
    let mut rng = seed::rng(epoch_seed);

    let mut by_organ: BTreeMap<&str, Vec<&SlideEntry>> = BTreeMap::new();
    for slide in &members {
        by_organ.entry(slide.organ.as_str()).or_default().push(slide);
    }

    let mut entries: Vec<(String, u64)> = Vec::with_capacity(config.tiles_per_epoch as usize);
    for (organ, mut slides) in by_organ {
        let quota = quotas[organ];
        slides.sort_by(|a, b| a.slide_id.cmp(&b.slide_id));
        slides.retain(|s| s.n_tiles > 0);
        slides.shuffle(&mut rng);

        let mut fresh: Vec<PartialShuffle> =
            slides.iter().map(|s| PartialShuffle::new(s.n_tiles)).collect();
        let mut taken: Vec<u64> = vec![0; slides.len()];
        let mut drawn = 0u64;

        while drawn < quota {
            let before = drawn;
            for (i, slide) in slides.iter().enumerate() {
                if drawn == quota {
                    break;
                }
                if taken[i] == slide.n_tiles * REPLACEMENT_CAP_FACTOR {
                    continue;
                }
                let tile = match fresh[i].next(&mut rng) {
                    Some(t) => t,
                    None => rng.random_range(0..slide.n_tiles),
                };
                entries.push((slide.slide_id.clone(), tile));
                taken[i] += 1;
                drawn += 1;
            }
            if drawn == before {
                // Unreachable while quotas respect capacities; guards the
                // loop against a violated invariant.
                return Err(Error::InvalidInput(format!(
                    "organ {organ} capacity exhausted before quota"
                )));
            }
        }
    }

    entries.shuffle(&mut rng);
    let checksum = entries_checksum(&entries);
    Ok(PseudoEpochManifest {
        epoch_index: epoch,
        fold_index,
        seed: epoch_seed,
        entries,
        checksum,
    })
}

fn entries_checksum(entries: &[(String, u64)]) -> String {
    let mut hasher = Sha256::new();
    for (slide, tile) in entries {
        hasher.update(slide.as_bytes());
        hasher.update(b"\t");
        hasher.update(tile.to_string().as_bytes());
        hasher.update(b"\n");
    }
    hex_string(&hasher.finalize())
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Derived schedule arithmetic for a given effective batch size.
pub fn schedule_stats(config: &ScheduleConfig, effective_batch: u64) -> Result<ScheduleStats> {
    if effective_batch == 0 {
        return Err(Error::InvalidConfig("effective_batch must be positive".into()));
    }
    if config.imagenet_size == 0 || config.n_folds == 0 {
        return Err(Error::InvalidConfig("imagenet_size and n_folds must be positive".into()));
    }
    let total_tiles = u128::from(config.n_pseudo_epochs) * u128::from(config.tiles_per_epoch);
    Ok(ScheduleStats {
        imagenet_epochs_per_pseudo_epoch: config.tiles_per_epoch as f64
            / config.imagenet_size as f64,
        total_passes_through_corpus: f64::from(config.n_pseudo_epochs)
            / f64::from(config.n_folds),
        steps_per_epoch: config.tiles_per_epoch / effective_batch,
        optimization_steps: (total_tiles / u128::from(effective_batch)) as u64,
    })
}

// ---------------------------------------------------------------------------
// File formats

impl PseudoEpochManifest {
    /// Serialize: one header line, then one `slide_id\ttile_index` line per
    /// entry.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#pseudo_epoch={} fold={} n={} seed={} checksum={}\n",
            self.epoch_index,
            self.fold_index,
            self.entries.len(),
            self.seed,
            self.checksum
        );
        for (slide, tile) in &self.entries {
            let _ = writeln!(out, "{slide}\t{tile}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty manifest".into()))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::InvalidInput("manifest header must start with '#'".into()))?;
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for token in header.split_whitespace() {
            let (k, v) = token
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("bad header token {token:?}")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("manifest header missing {k}")))
        };
        let epoch_index: u32 = parse_num(get("pseudo_epoch")?)?;
        let fold_index: u32 = parse_num(get("fold")?)?;
        let n: usize = parse_num(get("n")?)?;
        let seed: u64 = parse_num(get("seed")?)?;
        let checksum = get("checksum")?.to_string();

        let mut entries = Vec::with_capacity(n);
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let (slide, tile) = line
                .split_once('\t')
                .ok_or_else(|| Error::InvalidInput(format!("bad manifest line {line:?}")))?;
            entries.push((slide.to_string(), parse_num(tile)?));
        }
        if entries.len() != n {
            return Err(Error::InvalidInput(format!(
                "manifest declares {n} entries but holds {}",
                entries.len()
            )));
        }
        let recomputed = entries_checksum(&entries);
        if recomputed != checksum {
            return Err(Error::InvalidInput(format!(
                "manifest checksum mismatch: header {checksum}, contents {recomputed}"
            )));
        }
        Ok(Self { epoch_index, fold_index, seed, entries, checksum })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse()
        .map_err(|e| Error::InvalidInput(format!("bad number {s:?}: {e}")))
}

pub fn write_corpus(corpus: &[SlideEntry], path: &Path) -> Result<()> {
    let mut out = String::from("slide_id\torgan\tn_tiles\n");
    for slide in corpus {
        let _ = writeln!(out, "{}\t{}\t{}", slide.slide_id, slide.organ, slide.n_tiles);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<SlideEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || (i == 0 && line == "slide_id\torgan\tn_tiles") {
            continue;
        }
        let mut cols = line.split('\t');
        let (slide_id, organ, n_tiles) = (cols.next(), cols.next(), cols.next());
        match (slide_id, organ, n_tiles, cols.next()) {
            (Some(s), Some(o), Some(n), None) => corpus.push(SlideEntry {
                slide_id: s.to_string(),
                organ: o.to_string(),
                n_tiles: parse_num(n)?,
            }),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "corpus line {}: expected 3 tab-separated columns",
                    i + 1
                )))
            }
        }
    }
    check_unique_ids(&corpus)?;
    Ok(corpus)
}
