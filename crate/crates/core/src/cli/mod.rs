//! Command-line surface: `synth`, `train`, `infer`, `eval`, `bench`,
//! `embed`. Every command writes its outputs plus a `run_manifest.json`
//! into its output directory.

mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

pub use manifest::{RunManifest, RUN_MANIFEST_FILE};

use crate::aquasynth::{build_datasets, export_datasets, load_datasets, DatasetConfig, Datasets, EvalSplit};
use crate::embedviz::{collect_embeddings, domain_gap, gap_matrix, projection_csv, EmbeddingSet};
use crate::error::Error;
use crate::eval::evaluate_model;
use crate::image::Image;
use crate::io::{sha256_file, sha256_hex, write_atomic, write_json_atomic};
use crate::model::{cost_of, count_params_flops, Checkpoint, DecodeConfig, Detection, Mode, Model, Part};
use crate::trainer::{run_training, RunOptions, TrainConfig};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "ENJOINT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "enjoint", version, about = "Joint underwater image enhancement and object detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the paired, labelled and evaluation datasets.
    Synth(SynthArgs),
    /// Run three-stage training.
    Train(TrainArgs),
    /// Detect and/or enhance a directory of PPM images.
    Infer(InferArgs),
    /// Detection and enhancement metrics on every evaluation split.
    Eval(EvalArgs),
    /// Latency, parameter and mult-add report.
    Bench(BenchArgs),
    /// Embedding gaps between water types and 2-D projections.
    Embed(EmbedArgs),
    /// Print a default config as JSON.
    Defaults(DefaultsArgs),
}

#[derive(Debug, Args)]
pub struct DefaultsArgs {
    #[arg(value_enum)]
    pub kind: ConfigKind,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum ConfigKind {
    /// Input of `synth`.
    Data,
    /// Input of `train`.
    Train,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset config JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scene seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop after this many total steps.
    #[arg(long)]
    pub stop_at: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub progress_every: u64,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Mode,
    /// Directory of `.ppm` images.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    pub conf: f32,
    #[arg(long, default_value_t = 0.45)]
    pub nms_iou: f32,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// det, enh, dual or all.
    #[arg(long, default_value = "all")]
    pub mode: String,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Comma-separated checkpoints, e.g. burn-in, mutual and final.
    #[arg(long, value_delimiter = ',', required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Images per water type.
    #[arg(long, default_value_t = 64)]
    pub per_type: usize,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

/// Failure of a command, mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(Error::InvalidArgument(msg.into()))
}

type CliResult<T> = Result<T, CliError>;

/// Caps the rayon pool at `ENJOINT_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::Usage(format!("{THREADS_ENV} must be positive")));
        }
        // a pool that is already configured keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Embed(a) => embed(a),
        Command::Defaults(a) => {
            let text = match a.kind {
                ConfigKind::Data => serde_json::to_string_pretty(&DatasetConfig::default()),
                ConfigKind::Train => serde_json::to_string_pretty(&TrainConfig::default()),
            };
            println!("{}", text.map_err(Error::from)?);
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

fn is_non_empty_dir(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn load_model(path: &Path) -> CliResult<(Model, String)> {
    let ck = Checkpoint::load(path)?;
    let hash = sha256_file(path)?;
    Ok((Model::new(ck.config, ck.weights)?, hash))
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg: DatasetConfig = read_json(&a.config)?;
    if let Some(s) = a.seed {
        cfg.scene.seed = s;
    }
    if is_non_empty_dir(&a.out) && !a.force {
        return Err(runtime(format!("{} is not empty; pass --force to overwrite", a.out.display())));
    }
    let data = build_datasets(&cfg)?;
    let m = export_datasets(&data, &a.out)?;
    let mut rm = RunManifest::new("synth", config_hash(&cfg), cfg.scene.seed, started);
    rm.dataset_hash = Some(m.content_hash.clone());
    rm.write(&a.out)?;
    println!("wrote {} samples to {} (hash {})", m.counts.values().sum::<usize>(), a.out.display(), m.content_hash);
    Ok(())
}

fn config_hash<T: Serialize>(cfg: &T) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("config serialises"))
}

fn train(a: TrainArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg: TrainConfig = read_json(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data = load_datasets(&a.data)?;
    let opts = RunOptions { out_dir: a.out.clone(), resume: a.resume, stop_at: a.stop_at, progress_every: a.progress_every };
    let summary = run_training(&cfg, &data, &opts)?;
    let mut rm = RunManifest::new("train", cfg.hash(), cfg.seed, started);
    rm.dataset_hash = Some(data.content_hash());
    rm.checkpoints = summary.checkpoints.iter().map(|(k, (_, h))| (k.clone(), h.clone())).collect();
    rm.write(&a.out)?;
    for (name, (path, hash)) in &summary.checkpoints {
        println!("{name}: {} {hash}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct ImageDetections<'a> {
    image: &'a str,
    detections: &'a [Detection],
}

fn list_ppm(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| runtime(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    out.sort();
    Ok(out)
}

fn infer(a: InferArgs) -> CliResult<()> {
    let started = Instant::now();
    let (model, ck_hash) = load_model(&a.checkpoint)?;
    let dc = DecodeConfig { conf_thresh: a.conf, nms_iou: a.nms_iou, ..Default::default() };
    dc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let paths = list_ppm(&a.images)?;
    let mut names = Vec::with_capacity(paths.len());
    let mut images = Vec::with_capacity(paths.len());
    for p in &paths {
        let img = Image::read_ppm(p)?;
        let s = model.config().input_size;
        if img.width() != s || img.height() != s {
            return Err(runtime(format!("{} is {}x{}, checkpoint expects {s}x{s}", p.display(), img.width(), img.height())));
        }
        names.push(p.file_name().expect("listed file").to_string_lossy().into_owned());
        images.push(img);
    }
    fs::create_dir_all(&a.out)?;
    let refs: Vec<&Image> = images.iter().collect();
    let mut outputs = Vec::with_capacity(refs.len());
    for chunk in refs.chunks(32) {
        outputs.extend(model.forward_batch(chunk, a.mode, &dc)?);
    }
    if a.mode.detects() {
        let rows: Vec<ImageDetections> = names
            .iter()
            .zip(&outputs)
            .map(|(n, o)| ImageDetections { image: n, detections: o.detections.as_deref().unwrap_or_default() })
            .collect();
        write_json_atomic(&a.out.join("detections.json"), &rows)?;
    }
    if a.mode.enhances() {
        let dir = a.out.join("enhanced");
        fs::create_dir_all(&dir)?;
        for (n, o) in names.iter().zip(&outputs) {
            o.enhanced.as_ref().expect("enhancing mode").write_ppm(&dir.join(n))?;
        }
    }
    let mut rm = RunManifest::new("infer", config_hash(model.config()), 0, started);
    rm.checkpoints.insert("model".into(), ck_hash);
    rm.write(&a.out)?;
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let started = Instant::now();
    let (model, ck_hash) = load_model(&a.checkpoint)?;
    let data = load_datasets(&a.data)?;
    let report = evaluate_model(&model, &data, &DecodeConfig::for_evaluation())?;
    fs::create_dir_all(&a.out)?;
    write_json_atomic(&a.out.join("metrics.json"), &report)?;
    let mut rm = RunManifest::new("eval", config_hash(model.config()), data.config.scene.seed, started);
    rm.dataset_hash = Some(data.content_hash());
    rm.checkpoints.insert("model".into(), ck_hash);
    rm.write(&a.out)?;
    for (split, r) in &report.splits {
        println!(
            "{split:>9}: map50 {:.4} map50:95 {:.4} psnr {:.2} dB (input {:.2} dB)",
            r.detection.map50, r.detection.map5095, r.enhancement.psnr_enhanced, r.enhancement.psnr_degraded
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct BenchEntry {
    pub mode: Mode,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub fps: f64,
    pub params: u64,
    pub mult_adds: u64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn bench(a: BenchArgs) -> CliResult<()> {
    let started = Instant::now();
    if a.iters < 10 {
        return Err(CliError::Usage(format!("--iters must be at least 10, got {}", a.iters)));
    }
    let modes: Vec<Mode> = match a.mode.as_str() {
        "all" => Mode::ALL.to_vec(),
        m => vec![m.parse().map_err(CliError::Usage)?],
    };
    let (model, ck_hash) = load_model(&a.checkpoint)?;
    let cfg = model.config().clone();
    let [det, enh, dual] = Mode::ALL.map(|m| count_params_flops(&cfg, m));
    let (det, enh, dual) = (det?, enh?, dual?);
    let backbone = cost_of(&cfg, &[Part::Backbone]);
    if dual.params != det.params + enh.params - backbone.params {
        return Err(runtime("parameter identity violated"));
    }
    let s = cfg.input_size;
    let img = Image::filled(s, s, [0.4, 0.5, 0.6]);
    let dc = DecodeConfig::default();
    let mut entries = Vec::new();
    for mode in modes {
        model.forward(&img, mode, &dc)?;
        let mut times: Vec<f64> = (0..a.iters)
            .map(|_| {
                let t = Instant::now();
                model.forward(&img, mode, &dc).map(|_| t.elapsed().as_secs_f64() * 1e3)
            })
            .collect::<Result<_, _>>()?;
        times.sort_by(f64::total_cmp);
        let median = percentile(&times, 0.5);
        let cost = count_params_flops(&cfg, mode)?;
        entries.push(BenchEntry {
            mode,
            median_ms: median,
            p95_ms: percentile(&times, 0.95),
            fps: 1e3 / median,
            params: cost.params,
            mult_adds: cost.mult_adds,
        });
    }
    fs::create_dir_all(&a.out)?;
    let report = json!({
        "input_size": s,
        "iters": a.iters,
        "backbone": {"params": backbone.params, "mult_adds": backbone.mult_adds},
        "params_identity_holds": true,
        "modes": entries,
    });
    write_json_atomic(&a.out.join("bench.json"), &report)?;
    let mut rm = RunManifest::new("bench", config_hash(&cfg), 0, started);
    rm.checkpoints.insert("model".into(), ck_hash);
    rm.write(&a.out)?;
    for e in &entries {
        println!(
            "{:>4}: median {:.2} ms, p95 {:.2} ms, {:.1} FPS, {} params, {} mult-adds",
            e.mode, e.median_ms, e.p95_ms, e.fps, e.params, e.mult_adds
        );
    }
    Ok(())
}

/// Embedding sets of the shifted evaluation splits under one checkpoint.
pub fn water_type_embeddings(model: &Model, data: &Datasets, per_type: usize, checkpoint: &str) -> crate::Result<Vec<EmbeddingSet>> {
    EvalSplit::SHIFTED
        .iter()
        .map(|&split| {
            let images: Vec<&Image> = data.eval_split(split).iter().take(per_type).map(|s| &s.degraded).collect();
            collect_embeddings(model, &images, split.name(), checkpoint)
        })
        .collect()
}

fn embed(a: EmbedArgs) -> CliResult<()> {
    let started = Instant::now();
    let data = load_datasets(&a.data)?;
    let mut hashes = BTreeMap::new();
    let mut all_sets = Vec::new();
    let mut gaps = BTreeMap::new();
    let mut cross = Vec::new();
    for path in &a.checkpoints {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let (model, hash) = load_model(path)?;
        hashes.insert(id.clone(), hash);
        let sets = water_type_embeddings(&model, &data, a.per_type, &id)?;
        let mut pair_gaps = BTreeMap::new();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                pair_gaps.insert(format!("{}-{}", sets[i].tag, sets[j].tag), domain_gap(&sets[i], &sets[j])?);
            }
        }
        gaps.insert(id.clone(), gap_matrix(&sets)?);
        cross.push((id, pair_gaps));
        all_sets.extend(sets);
    }
    let mut comparisons = BTreeMap::new();
    if let (Some(first), Some(last)) = (cross.first(), cross.last()) {
        if cross.len() > 1 {
            for (pair, g_last) in &last.1 {
                comparisons.insert(pair.clone(), *g_last < first.1[pair]);
            }
        }
    }
    fs::create_dir_all(&a.out)?;
    let report = json!({
        "gap_matrices": gaps,
        "cross_type_gaps": cross.iter().map(|(id, g)| (id.clone(), g.clone())).collect::<BTreeMap<_, _>>(),
        "last_below_first": comparisons,
    });
    write_json_atomic(&a.out.join("gaps.json"), &report)?;
    write_atomic(&a.out.join("projection.csv"), projection_csv(&all_sets)?.as_bytes())?;
    let mut rm = RunManifest::new("embed", config_hash(&a.per_type), data.config.scene.seed, started);
    rm.dataset_hash = Some(data.content_hash());
    rm.checkpoints = hashes;
    rm.write(&a.out)?;
    for (pair, below) in &comparisons {
        println!("{pair}: last checkpoint gap below first: {below}");
    }
    Ok(())
}
