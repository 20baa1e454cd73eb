//! Benchmark execution: train every (split, replica) task, aggregate into
//! convergence curves with bootstrap bands, and persist plot-ready reports.
//!
//! Tasks are independent and run on the ambient rayon pool; aggregation is
//! single-threaded over the ordered results, so reports are byte-identical
//! across runs regardless of worker count.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};
use crate::mil::{train_gma, EpochRecord, TrainConfig};
use crate::seed::{self, stream};

use super::bootstrap::{bootstrap_mean_ci, CurveBand};
use super::plan::MCCVPlan;

pub const BOOTSTRAP_ITERS: usize = 1000;
pub const BOOTSTRAP_LEVEL: f64 = 0.95;

/// One trained (split, replica) task.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub split_index: u32,
    pub replica_index: u32,
    pub records: Vec<EpochRecord>,
    pub final_val_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub plan_hash: String,
    pub epochs: u32,
    /// Mean validation-AUC curve with its bootstrap band.
    pub curve: CurveBand,
    /// Replica-averaged final AUC per split.
    pub per_split_final: Vec<(u32, f64)>,
    pub overall_mean_final_auc: f64,
    pub final_auc_ci: (f64, f64),
    pub runs: Vec<RunRecord>,
}

fn check_plan_against_dataset(dataset: &EmbeddingSet, plan: &MCCVPlan) -> Result<()> {
    plan.validate()?;
    let labeled: BTreeSet<&String> = dataset.labels.keys().collect();
    for id in plan.sample_ids() {
        if !labeled.contains(&id) {
            return Err(Error::InvalidInput(format!(
                "plan sample {id} has no label in the dataset"
            )));
        }
    }
    Ok(())
}

/// Run the full protocol: `n_splits x replicas` independent trainings.
/// Replica `r` of split `s` trains under a seed derived from
/// `(config.seed, s, r)`; any failing task aborts the benchmark with its
/// (split, replica) identified.
pub fn run_benchmark(
    dataset: &EmbeddingSet,
    plan: &MCCVPlan,
    config: &TrainConfig,
) -> Result<BenchReport> {
    config.validate()?;
    if config.epochs == 0 {
        return Err(Error::InvalidConfig("benchmark needs at least one epoch".into()));
    }
    check_plan_against_dataset(dataset, plan)?;

    let tasks: Vec<(u32, u32)> = (0..plan.n_splits)
        .flat_map(|s| (0..plan.replicas).map(move |r| (s, r)))
        .collect();

    let results: Vec<Result<RunRecord>> = tasks
        .par_iter()
        .map(|&(split_index, replica_index)| {
            let split = &plan.splits[split_index as usize];
            let run_config = TrainConfig {
                seed: seed::mix(
                    config.seed,
                    &[stream::RUN, u64::from(split_index), u64::from(replica_index)],
                ),
                ..config.clone()
            };
            let (_, records) = train_gma(dataset, &split.train, &split.val, &run_config)
                .map_err(|e| Error::Protocol {
                    split: split_index,
                    replica: replica_index,
                    source: Box::new(e),
                })?;
            let final_val_auc = records.last().expect("epochs >= 1").val_auc;
            Ok(RunRecord { split_index, replica_index, records, final_val_auc })
        })
        .collect();

    let mut runs = Vec::with_capacity(results.len());
    for result in results {
        runs.push(result?);
    }

    aggregate(plan, config, runs)
}

fn aggregate(plan: &MCCVPlan, config: &TrainConfig, runs: Vec<RunRecord>) -> Result<BenchReport> {
    let curves: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| r.records.iter().map(|e| e.val_auc).collect())
        .collect();
    let curve = if curves.len() >= 2 {
        bootstrap_mean_ci(
            &curves,
            BOOTSTRAP_ITERS,
            BOOTSTRAP_LEVEL,
            seed::mix(config.seed, &[stream::BOOT_CURVE]),
        )?
    } else {
        CurveBand { mean: curves[0].clone(), lo: curves[0].clone(), hi: curves[0].clone() }
    };

    let per_split_final: Vec<(u32, f64)> = (0..plan.n_splits)
        .map(|s| {
            let finals: Vec<f64> = runs
                .iter()
                .filter(|r| r.split_index == s)
                .map(|r| r.final_val_auc)
                .collect();
            (s, finals.iter().sum::<f64>() / finals.len() as f64)
        })
        .collect();

    let overall_mean_final_auc = per_split_final.iter().map(|(_, a)| a).sum::<f64>()
        / per_split_final.len() as f64;

    let final_auc_ci = if per_split_final.len() >= 2 {
        let finals_as_curves: Vec<Vec<f64>> =
            per_split_final.iter().map(|&(_, a)| vec![a]).collect();
        let band = bootstrap_mean_ci(
            &finals_as_curves,
            BOOTSTRAP_ITERS,
            BOOTSTRAP_LEVEL,
            seed::mix(config.seed, &[stream::BOOT_FINAL]),
        )?;
        (band.lo[0], band.hi[0])
    } else {
        (overall_mean_final_auc, overall_mean_final_auc)
    };

    Ok(BenchReport {
        plan_hash: plan.hash(),
        epochs: config.epochs,
        curve,
        per_split_final,
        overall_mean_final_auc,
        final_auc_ci,
        runs,
    })
}

/// Per-checkpoint final-AUC distributions over a shared plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub reports: Vec<(String, BenchReport)>,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub checkpoint_tag: String,
    pub split_index: u32,
    pub final_auc: f64,
}

impl SweepReport {
    pub fn mean_final_auc(&self, tag: &str) -> Option<f64> {
        self.reports
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, r)| r.overall_mean_final_auc)
    }
}

/// Benchmark each embedding set (one per encoder checkpoint) against the
/// same plan and config; sets must share sample ids and labels.
pub fn checkpoint_sweep(
    sets: &[EmbeddingSet],
    plan: &MCCVPlan,
    config: &TrainConfig,
) -> Result<SweepReport> {
    if sets.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one embedding set".into()));
    }
    let mut tags = BTreeSet::new();
    for set in sets {
        if !tags.insert(set.checkpoint_tag.as_str()) {
            return Err(Error::InvalidInput(format!(
                "duplicate checkpoint tag {}",
                set.checkpoint_tag
            )));
        }
        if set.labels != sets[0].labels {
            return Err(Error::InvalidInput(format!(
                "set {} does not share sample ids and labels with {}",
                set.checkpoint_tag, sets[0].checkpoint_tag
            )));
        }
    }

    let mut reports = Vec::with_capacity(sets.len());
    let mut rows = Vec::new();
    for set in sets {
        let report = run_benchmark(set, plan, config)?;
        for &(split_index, final_auc) in &report.per_split_final {
            rows.push(SweepRow {
                checkpoint_tag: set.checkpoint_tag.clone(),
                split_index,
                final_auc,
            });
        }
        reports.push((set.checkpoint_tag.clone(), report));
    }
    Ok(SweepReport { reports, rows })
}

// ---------------------------------------------------------------------------
// Report directory layout

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Persist a report:
///
/// ```text
/// plan.tsv                 the reused plan
/// runs/<split>_<replica>.csv
/// curve.csv                epoch, mean, lo, hi
/// finals.csv               split, auc
/// summary.txt              mean +/- CI, plan hash, config echo
/// ```
pub fn write_report(
    report: &BenchReport,
    plan: &MCCVPlan,
    config_echo: &str,
    dir: &Path,
) -> Result<()> {
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;

    plan.write(&dir.join("plan.tsv"))?;

    for run in &report.runs {
        let path = runs_dir.join(format!("{}_{}.csv", run.split_index, run.replica_index));
        crate::mil::io::write_records(&run.records, &path)?;
    }

    let mut curve = String::from("epoch,mean,lo,hi\n");
    for e in 0..report.curve.mean.len() {
        let _ = writeln!(
            curve,
            "{e},{},{},{}",
            report.curve.mean[e], report.curve.lo[e], report.curve.hi[e]
        );
    }
    write_text(&dir.join("curve.csv"), &curve)?;

    let mut finals = String::from("split,auc\n");
    for (s, auc) in &report.per_split_final {
        let _ = writeln!(finals, "{s},{auc}");
    }
    write_text(&dir.join("finals.csv"), &finals)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "mean_final_auc={}", report.overall_mean_final_auc);
    let _ = writeln!(summary, "ci95_lo={}", report.final_auc_ci.0);
    let _ = writeln!(summary, "ci95_hi={}", report.final_auc_ci.1);
    let _ = writeln!(summary, "plan_hash={}", report.plan_hash);
    let _ = writeln!(summary, "runs={}", report.runs.len());
    let _ = writeln!(summary, "epochs={}", report.epochs);
    let _ = writeln!(summary, "\n[config]");
    summary.push_str(config_echo);
    write_text(&dir.join("summary.txt"), &summary)
}

/// Persist a sweep: one report per checkpoint under `<tag>/`, plus
/// `sweep.csv` (checkpoint_tag, split, final_auc).
pub fn write_sweep(
    sweep: &SweepReport,
    plan: &MCCVPlan,
    config_echo: &str,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (tag, report) in &sweep.reports {
        write_report(report, plan, config_echo, &dir.join(tag))?;
    }
    let mut rows = String::from("checkpoint_tag,split,final_auc\n");
    for row in &sweep.rows {
        let _ = writeln!(rows, "{},{},{}", row.checkpoint_tag, row.split_index, row.final_auc);
    }
    write_text(&dir.join("sweep.csv"), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{make_mccv_plan, make_mccv_plan_stratified};
    use crate::embed::synth_embedding_dataset;

    fn tiny_config(epochs: u32, seed_val: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            warmup_epochs: 1,
            hidden: 8,
            seed: seed_val,
            ..TrainConfig::default()
        }
    }

    /// Small fixtures need stratified splits: a uniform draw of a handful of
    /// validation samples often misses a class, which correctly aborts the
    /// benchmark.
    fn stratified_plan(dataset: &crate::embed::EmbeddingSet, n_splits: u32, frac: f64, seed_val: u64) -> MCCVPlan {
        let labeled: Vec<(String, u8)> =
            dataset.labels.iter().map(|(k, v)| (k.clone(), *v)).collect();
        make_mccv_plan_stratified(&labeled, n_splits, frac, seed_val).unwrap()
    }

    #[test]
    fn benchmark_produces_one_record_per_task() {
        let dataset = synth_embedding_dataset(20, (4, 8), 6, 1.0, 2.0, 1).unwrap();
        let plan = stratified_plan(&dataset, 4, 0.8, 2).with_replicas(2);
        let report = run_benchmark(&dataset, &plan, &tiny_config(3, 3)).unwrap();
        assert_eq!(report.runs.len(), 8);
        assert_eq!(report.per_split_final.len(), 4);
        assert_eq!(report.curve.mean.len(), 3);
    }

    #[test]
    fn per_split_final_is_replica_mean() {
        let dataset = synth_embedding_dataset(16, (4, 6), 4, 1.0, 1.5, 4).unwrap();
        let plan = stratified_plan(&dataset, 2, 0.75, 5).with_replicas(2);
        let report = run_benchmark(&dataset, &plan, &tiny_config(2, 6)).unwrap();
        for &(s, final_auc) in &report.per_split_final {
            let replicas: Vec<f64> = report
                .runs
                .iter()
                .filter(|r| r.split_index == s)
                .map(|r| r.final_val_auc)
                .collect();
            let mean = replicas.iter().sum::<f64>() / replicas.len() as f64;
            assert!((final_auc - mean).abs() <= 1e-12);
        }
        let overall: f64 = report.per_split_final.iter().map(|(_, a)| a).sum::<f64>()
            / report.per_split_final.len() as f64;
        assert!((report.overall_mean_final_auc - overall).abs() <= 1e-12);
    }

    #[test]
    fn benchmark_is_deterministic() {
        let dataset = synth_embedding_dataset(14, (4, 6), 4, 0.5, 1.0, 7).unwrap();
        let plan = stratified_plan(&dataset, 3, 0.8, 8);
        let a = run_benchmark(&dataset, &plan, &tiny_config(2, 9)).unwrap();
        let b = run_benchmark(&dataset, &plan, &tiny_config(2, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plan_with_unlabeled_samples_is_rejected() {
        let dataset = synth_embedding_dataset(10, (4, 6), 4, 1.0, 1.0, 1).unwrap();
        let mut ids = dataset.labeled_ids();
        ids.push("ghost".into());
        let plan = make_mccv_plan(&ids, 2, 0.8, 2).unwrap();
        assert!(matches!(
            run_benchmark(&dataset, &plan, &tiny_config(2, 3)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn sweep_on_single_set_equals_plain_benchmark() {
        let dataset = synth_embedding_dataset(12, (4, 6), 4, 1.0, 1.0, 5).unwrap();
        let plan = stratified_plan(&dataset, 2, 0.8, 6);
        let config = tiny_config(2, 7);
        let sweep = checkpoint_sweep(std::slice::from_ref(&dataset), &plan, &config).unwrap();
        let solo = run_benchmark(&dataset, &plan, &config).unwrap();
        assert_eq!(sweep.reports.len(), 1);
        assert_eq!(sweep.reports[0].1, solo);
        assert_eq!(sweep.rows.len(), plan.n_splits as usize);
    }

    #[test]
    fn identical_sets_under_different_tags_match() {
        let a = synth_embedding_dataset(12, (4, 6), 4, 1.0, 1.0, 5).unwrap().with_checkpoint_tag("t0");
        let b = a.clone().with_checkpoint_tag("t1");
        let plan = stratified_plan(&a, 2, 0.8, 3);
        let sweep = checkpoint_sweep(&[a, b], &plan, &tiny_config(2, 4)).unwrap();
        assert_eq!(sweep.reports[0].1.per_split_final, sweep.reports[1].1.per_split_final);
    }

    #[test]
    fn sweep_rejects_mismatched_sets_and_duplicate_tags() {
        let a = synth_embedding_dataset(12, (4, 6), 4, 1.0, 1.0, 5).unwrap();
        let plan = stratified_plan(&a, 2, 0.8, 3);
        let dup = a.clone();
        assert!(checkpoint_sweep(&[a.clone(), dup], &plan, &tiny_config(1, 0)).is_err());
        let other = synth_embedding_dataset(14, (4, 6), 4, 1.0, 1.0, 6)
            .unwrap()
            .with_checkpoint_tag("other");
        assert!(checkpoint_sweep(&[a, other], &plan, &tiny_config(1, 0)).is_err());
    }

    #[test]
    fn report_directory_has_expected_layout() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = synth_embedding_dataset(10, (4, 6), 4, 1.0, 2.0, 8).unwrap();
        let plan = stratified_plan(&dataset, 2, 0.8, 9);
        let report = run_benchmark(&dataset, &plan, &tiny_config(2, 10)).unwrap();
        write_report(&report, &plan, "epochs = 2\n", dir.path()).unwrap();

        assert!(dir.path().join("plan.tsv").exists());
        assert!(dir.path().join("curve.csv").exists());
        assert!(dir.path().join("finals.csv").exists());
        let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        assert!(summary.contains(&format!("plan_hash={}", plan.hash())));
        let run_files = fs::read_dir(dir.path().join("runs")).unwrap().count();
        assert_eq!(run_files, 4);
    }
}
