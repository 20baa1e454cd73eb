//! `pathforge` — one binary, one subcommand per pipeline stage.
//!
//! Every stage writes its outputs under a run directory together with a
//! `manifest.txt` recording input hashes, the resolved configuration, the
//! seed, and the artifact version. Outputs are a pure function of
//! (inputs, config, seed, version): rerunning a stage reproduces its output
//! directory byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use pathforge::bench::{
    checkpoint_sweep, make_mccv_plan, make_mccv_plan_stratified, run_benchmark, write_report,
    write_sweep, MCCVPlan,
};
use pathforge::config::PipelineConfig;
use pathforge::embed::{read_labels, synth_embedding_dataset, EmbeddingSet};
use pathforge::error::{Error, Result};
use pathforge::mil::{io as model_io, train_gma, TrainConfig};
use pathforge::schedule::{compile_schedule, read_corpus, schedule_stats, ScheduleConfig};
use pathforge::seed::{self, stream};
use pathforge::tiling::{
    detect_tissue, extract_tiles, plan_tiles, synth_slide, SlideMeta, SlideRaster, SlideSpec,
};

const ENV_OUT: &str = "PATHFORGE_OUT";
const ENV_JOBS: &str = "PATHFORGE_JOBS";

#[derive(Parser)]
#[command(name = "pathforge", version, about = "Slide tiling, pseudo-epoch schedules, gated-attention MIL training, and MCCV benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config file (sections of key = value pairs)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stage seed override (the seeded field depends on the subcommand)
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (env PATHFORGE_JOBS, default: logical cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// Run directory for outputs (env PATHFORGE_OUT when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic slide raster plus its metadata sidecar
    SynthSlide(SynthSlideArgs),
    /// Detect tissue and extract tiles from slide rasters into an archive
    Tile(TileArgs),
    /// Compile organ-balanced pseudo-epoch manifests from a corpus file
    Schedule(ScheduleArgs),
    /// Print derived schedule statistics
    ScheduleStats(ScheduleStatsArgs),
    /// Generate a synthetic labeled embedding set
    SynthEmbed(SynthEmbedArgs),
    /// Draw a Monte Carlo cross-validation plan from a set's labels
    Plan(PlanArgs),
    /// Train one (split, replica) run and save the model plus records
    Train(TrainArgs),
    /// Run the full benchmark protocol and write the report
    Bench(BenchArgs),
    /// Benchmark several embedding sets (checkpoints) against one plan
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthSlideArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "synth0")]
    slide_id: String,
    #[arg(long, default_value_t = 1024)]
    width: u32,
    #[arg(long, default_value_t = 1024)]
    height: u32,
    #[arg(long, default_value_t = 0.5)]
    mpp: f64,
    #[arg(long, default_value = "synthetic")]
    organ: String,
    /// Number of random tissue disks
    #[arg(long, default_value_t = 8)]
    blobs: usize,
    /// Per-channel color jitter amplitude on tissue pixels
    #[arg(long, default_value_t = 8)]
    jitter: u8,
}

#[derive(Args)]
struct TileArgs {
    #[command(flatten)]
    common: Common,
    /// Slide raster image(s); each expects a `<stem>.meta` sidecar next to it
    #[arg(long = "slide", required = true)]
    slides: Vec<PathBuf>,
}

#[derive(Args)]
struct ScheduleArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus TSV (slide_id, organ, n_tiles)
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    tiles_per_epoch: Option<u64>,
    #[arg(long)]
    n_pseudo_epochs: Option<u32>,
    #[arg(long)]
    n_folds: Option<u32>,
}

#[derive(Args)]
struct ScheduleStatsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    tiles_per_epoch: u64,
    #[arg(long)]
    effective_batch: u64,
    #[arg(long, default_value_t = 50)]
    n_pseudo_epochs: u32,
    #[arg(long, default_value_t = 5)]
    n_folds: u32,
    #[arg(long, default_value_t = pathforge::schedule::DEFAULT_IMAGENET_SIZE)]
    imagenet_size: u64,
}

#[derive(Args)]
struct SynthEmbedArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n_slides: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 50)]
    tiles_min: usize,
    #[arg(long, default_value_t = 200)]
    tiles_max: usize,
    #[arg(long, default_value_t = 0.3)]
    signal_frac: f64,
    #[arg(long, default_value_t = 1.0)]
    effect_size: f64,
    #[arg(long, default_value = "synthetic")]
    checkpoint_tag: String,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    common: Common,
    /// Embedding-set directory whose labels define the sample universe
    #[arg(long)]
    set: PathBuf,
    #[arg(long)]
    n_splits: Option<u32>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    replicas: Option<u32>,
    /// Class-stratified sampling (for small or imbalanced cohorts)
    #[arg(long)]
    stratified: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    set: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    split: u32,
    #[arg(long, default_value_t = 0)]
    replica: u32,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    set: PathBuf,
    #[arg(long)]
    plan: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Embedding-set directories, one per checkpoint
    #[arg(long = "set", required = true)]
    sets: Vec<PathBuf>,
    #[arg(long)]
    plan: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: category={} {}", e.category(), e);
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::SynthSlide(args) => cmd_synth_slide(args),
        Command::Tile(args) => cmd_tile(args),
        Command::Schedule(args) => cmd_schedule(args),
        Command::ScheduleStats(args) => cmd_schedule_stats(args),
        Command::SynthEmbed(args) => cmd_synth_embed(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Train(args) => cmd_train(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

fn load_config(common: &Common) -> Result<PipelineConfig> {
    match &common.config {
        Some(path) => PipelineConfig::load(path),
        None => Ok(PipelineConfig::default()),
    }
}

fn resolve_out(common: &Common, config: &PipelineConfig) -> Result<PathBuf> {
    if let Some(out) = &common.out {
        return Ok(out.clone());
    }
    if let Ok(out) = std::env::var(ENV_OUT) {
        if !out.is_empty() {
            return Ok(PathBuf::from(out));
        }
    }
    config.out.clone().ok_or_else(|| {
        Error::InvalidConfig("no output directory: pass --out, set PATHFORGE_OUT, or configure [paths] out".into())
    })
}

fn resolve_jobs(common: &Common) -> usize {
    common
        .jobs
        .or_else(|| std::env::var(ENV_JOBS).ok().and_then(|j| j.parse().ok()))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn init_workers(common: &Common) {
    let jobs = resolve_jobs(common);
    // Ignore the error if a pool already exists (tests, repeated calls).
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
}

fn hash_bytes(bytes: &[u8]) -> String {
    pathforge::schedule::hex_string(&Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(hash_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Content hash of a file, or of a directory tree (sorted relative paths
/// and per-file hashes folded together).
fn hash_input(path: &Path) -> Result<String> {
    if path.is_file() {
        return hash_file(path);
    }
    let mut entries = Vec::new();
    collect_files(path, path, &mut entries)?;
    entries.sort();
    let mut hasher = Sha256::new();
    for rel in entries {
        hasher.update(rel.as_bytes());
        hasher.update(b"\0");
        hasher.update(hash_file(&path.join(&rel))?.as_bytes());
        hasher.update(b"\n");
    }
    Ok(pathforge::schedule::hex_string(&hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("entries live under the walk root")
                .to_string_lossy()
                .into_owned();
            out.push(rel);
        }
    }
    Ok(())
}

struct Manifest {
    command: &'static str,
    seed: u64,
    inputs: Vec<(PathBuf, String)>,
    config_echo: String,
}

impl Manifest {
    fn new(command: &'static str, seed: u64, config: &PipelineConfig) -> Self {
        Self { command, seed, inputs: Vec::new(), config_echo: config.to_text() }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push((path.to_path_buf(), hash_input(path)?));
        Ok(())
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut text = String::new();
        let _ = writeln!(text, "artifact=pathforge {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(text, "command={}", self.command);
        let _ = writeln!(text, "seed={}", self.seed);
        for (path, hash) in &self.inputs {
            let _ = writeln!(text, "input={} sha256={}", path.display(), hash);
        }
        let _ = writeln!(text, "\n[config]");
        text.push_str(&self.config_echo);
        let path = dir.join("manifest.txt");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn create_run_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_png(raster: &SlideRaster, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let writer = std::io::BufWriter::new(file);
    let encoder = image::codecs::png::PngEncoder::new(writer);
    image::ImageEncoder::write_image(
        encoder,
        &raster.pixels,
        raster.width_px,
        raster.height_px,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::InvalidInput(format!("png encode failed: {e}")))
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_synth_slide(args: SynthSlideArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let out = resolve_out(&args.common, &config)?;
    create_run_dir(&out)?;
    let seed_val = args.common.seed.unwrap_or(0);

    let edge = f64::from(args.width.min(args.height));
    let spec = SlideSpec {
        seed: seed_val,
        color_jitter: args.jitter,
        ..SlideSpec::new(args.slide_id.clone(), args.width, args.height, args.mpp)
    }
    .with_random_disks(args.blobs, edge / 16.0, edge / 6.0, [160, 70, 120]);
    let raster = synth_slide(&spec)?;

    write_png(&raster, &out.join(format!("{}.png", args.slide_id)))?;
    SlideMeta { slide_id: args.slide_id.clone(), mpp: args.mpp, organ: args.organ.clone() }
        .write(&out.join(format!("{}.meta", args.slide_id)))?;

    Manifest::new("synth-slide", seed_val, &config).write(&out)?;
    println!("slide_id={} size={}x{} out={}", args.slide_id, args.width, args.height, out.display());
    Ok(())
}

fn load_slide(path: &Path) -> Result<(SlideRaster, SlideMeta)> {
    let meta_path = path.with_extension("meta");
    let meta = SlideMeta::read(&meta_path)?;
    let img = image::open(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let raster = SlideRaster::new(meta.slide_id.clone(), w, h, meta.mpp, img.into_raw())?;
    Ok((raster, meta))
}

fn cmd_tile(args: TileArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let out = resolve_out(&args.common, &config)?;
    init_workers(&args.common);
    create_run_dir(&out)?;

    let params = config.tiling;
    let results: Vec<Result<(String, usize, usize)>> = args
        .slides
        .par_iter()
        .map(|path| {
            let (raster, _) = load_slide(path)?;
            let mask = detect_tissue(&raster, &params)?;
            let tiles = plan_tiles(&mask, &raster.meta(), &params)?;
            let report = extract_tiles(&raster, &tiles, &params, &out)?;
            Ok((raster.slide_id, report.written, report.errors.len()))
        })
        .collect();

    let mut summaries = Vec::new();
    for result in results {
        summaries.push(result?);
    }
    summaries.sort();

    let mut manifest = Manifest::new("tile", args.common.seed.unwrap_or(0), &config);
    for path in &args.slides {
        manifest.input(path)?;
        manifest.input(&path.with_extension("meta"))?;
    }
    manifest.write(&out)?;

    for (slide_id, written, errors) in summaries {
        println!("slide={slide_id} tiles={written} errors={errors}");
    }
    Ok(())
}

fn cmd_schedule(args: ScheduleArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let out = resolve_out(&args.common, &config)?;
    create_run_dir(&out)?;

    let mut schedule_config = ScheduleConfig {
        master_seed: args.common.seed.unwrap_or(config.schedule.master_seed),
        ..config.schedule.clone()
    };
    if let Some(t) = args.tiles_per_epoch {
        schedule_config.tiles_per_epoch = t;
    }
    if let Some(e) = args.n_pseudo_epochs {
        schedule_config.n_pseudo_epochs = e;
    }
    if let Some(f) = args.n_folds {
        schedule_config.n_folds = f;
    }

    let corpus = read_corpus(&args.corpus)?;
    for warning in schedule_config.validate(&corpus)? {
        eprintln!("warning: {warning}");
    }
    let manifests = compile_schedule(&corpus, &schedule_config)?;
    for manifest in &manifests {
        manifest.write(&out.join(format!("epoch_{:04}.tsv", manifest.epoch_index)))?;
    }

    let resolved = PipelineConfig { schedule: schedule_config.clone(), ..config };
    let mut manifest = Manifest::new("schedule", schedule_config.master_seed, &resolved);
    manifest.input(&args.corpus)?;
    manifest.write(&out)?;

    println!("epochs={} tiles_per_epoch={} out={}", manifests.len(), schedule_config.tiles_per_epoch, out.display());
    Ok(())
}

fn cmd_schedule_stats(args: ScheduleStatsArgs) -> Result<()> {
    let schedule_config = ScheduleConfig {
        n_pseudo_epochs: args.n_pseudo_epochs,
        n_folds: args.n_folds,
        tiles_per_epoch: args.tiles_per_epoch,
        master_seed: args.common.seed.unwrap_or(0),
        imagenet_size: args.imagenet_size,
    };
    let stats = schedule_stats(&schedule_config, args.effective_batch)?;

    let mut text = String::new();
    let _ = writeln!(text, "imagenet_epochs={:.2}", stats.imagenet_epochs_per_pseudo_epoch);
    let _ = writeln!(text, "steps_per_epoch={}", stats.steps_per_epoch);
    let _ = writeln!(text, "total_passes={}", stats.total_passes_through_corpus);
    let _ = writeln!(text, "optimization_steps={}", stats.optimization_steps);
    print!("{text}");

    // Stats are pure stdout; a run directory is only written on request.
    if let Some(out) = &args.common.out {
        create_run_dir(out)?;
        let path = out.join("stats.txt");
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        let config = load_config(&args.common)?;
        let resolved = PipelineConfig { schedule: schedule_config.clone(), ..config };
        Manifest::new("schedule-stats", schedule_config.master_seed, &resolved).write(out)?;
    }
    Ok(())
}

fn cmd_synth_embed(args: SynthEmbedArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let out = resolve_out(&args.common, &config)?;
    create_run_dir(&out)?;
    let seed_val = args.common.seed.unwrap_or(0);

    let set = synth_embedding_dataset(
        args.n_slides,
        (args.tiles_min, args.tiles_max),
        args.dim,
        args.signal_frac,
        args.effect_size,
        seed_val,
    )?
    .with_checkpoint_tag(args.checkpoint_tag.clone());
    set.write_dir(&out)?;

    Manifest::new("synth-embed", seed_val, &config).write(&out)?;
    println!(
        "slides={} dim={} effect_size={} checkpoint={} out={}",
        args.n_slides,
        args.dim,
        args.effect_size,
        args.checkpoint_tag,
        out.display()
    );
    Ok(())
}

fn cmd_plan(args: PlanArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    if let Some(n) = args.n_splits {
        config.plan.n_splits = n;
    }
    if let Some(f) = args.train_frac {
        config.plan.train_frac = f;
    }
    if let Some(r) = args.replicas {
        config.plan.replicas = r;
    }
    if let Some(s) = args.common.seed {
        config.plan.seed = s;
    }
    if args.stratified {
        config.plan.stratified = true;
    }
    let out = resolve_out(&args.common, &config)?;
    create_run_dir(&out)?;

    let labels = read_labels(&args.set)?;
    let plan = if config.plan.stratified {
        let labeled: Vec<(String, u8)> = labels.into_iter().collect();
        make_mccv_plan_stratified(&labeled, config.plan.n_splits, config.plan.train_frac, config.plan.seed)?
    } else {
        let ids: Vec<String> = labels.into_keys().collect();
        make_mccv_plan(&ids, config.plan.n_splits, config.plan.train_frac, config.plan.seed)?
    }
    .with_replicas(config.plan.replicas);

    plan.write(&out.join("plan.tsv"))?;
    let mut manifest = Manifest::new("plan", config.plan.seed, &config);
    manifest.input(&args.set)?;
    manifest.write(&out)?;

    println!("splits={} replicas={} hash={}", plan.n_splits, plan.replicas, plan.hash());
    Ok(())
}

fn load_set_and_plan(set_dir: &Path, plan_path: &Path) -> Result<(EmbeddingSet, MCCVPlan)> {
    let set = EmbeddingSet::read_dir(set_dir)?;
    let plan = MCCVPlan::read(plan_path)?;
    Ok((set, plan))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    if let Some(s) = args.common.seed {
        config.train.seed = s;
    }
    let out = resolve_out(&args.common, &config)?;
    create_run_dir(&out)?;

    let (set, plan) = load_set_and_plan(&args.set, &args.plan)?;
    if args.split >= plan.n_splits || args.replica >= plan.replicas {
        return Err(Error::InvalidConfig(format!(
            "split {} replica {} outside plan ({} splits x {} replicas)",
            args.split, args.replica, plan.n_splits, plan.replicas
        )));
    }

    // Same per-run seed derivation as the benchmark, so a single train run
    // reproduces the corresponding benchmark task exactly.
    let run_config = TrainConfig {
        seed: seed::mix(
            config.train.seed,
            &[stream::RUN, u64::from(args.split), u64::from(args.replica)],
        ),
        ..config.train.clone()
    };
    let split = &plan.splits[args.split as usize];
    let (params, records) = train_gma(&set, &split.train, &split.val, &run_config)?;

    model_io::save_gma(&params, &out.join("model.pgma"))?;
    model_io::write_records(&records, &out.join("records.csv"))?;

    let mut manifest = Manifest::new("train", config.train.seed, &config);
    manifest.input(&args.set)?;
    manifest.input(&args.plan)?;
    manifest.write(&out)?;

    let final_auc = records.last().map_or(f64::NAN, |r| r.val_auc);
    println!("split={} replica={} final_val_auc={}", args.split, args.replica, final_auc);
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    if let Some(s) = args.common.seed {
        config.train.seed = s;
    }
    let out = resolve_out(&args.common, &config)?;
    init_workers(&args.common);
    create_run_dir(&out)?;

    let (set, plan) = load_set_and_plan(&args.set, &args.plan)?;
    let report = run_benchmark(&set, &plan, &config.train)?;
    write_report(&report, &plan, &config.to_text(), &out)?;

    let mut manifest = Manifest::new("bench", config.train.seed, &config);
    manifest.input(&args.set)?;
    manifest.input(&args.plan)?;
    manifest.write(&out)?;

    println!(
        "mean_final_auc={} ci95=[{},{}] runs={} plan_hash={}",
        report.overall_mean_final_auc,
        report.final_auc_ci.0,
        report.final_auc_ci.1,
        report.runs.len(),
        report.plan_hash
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    if let Some(s) = args.common.seed {
        config.train.seed = s;
    }
    let out = resolve_out(&args.common, &config)?;
    init_workers(&args.common);
    create_run_dir(&out)?;

    let mut sets = Vec::with_capacity(args.sets.len());
    for dir in &args.sets {
        sets.push(EmbeddingSet::read_dir(dir)?);
    }
    let plan = MCCVPlan::read(&args.plan)?;
    let sweep = checkpoint_sweep(&sets, &plan, &config.train)?;
    write_sweep(&sweep, &plan, &config.to_text(), &out)?;

    let mut manifest = Manifest::new("sweep", config.train.seed, &config);
    for dir in &args.sets {
        manifest.input(dir)?;
    }
    manifest.input(&args.plan)?;
    manifest.write(&out)?;

    for (tag, report) in &sweep.reports {
        println!("checkpoint={tag} mean_final_auc={}", report.overall_mean_final_auc);
    }
    Ok(())
}
