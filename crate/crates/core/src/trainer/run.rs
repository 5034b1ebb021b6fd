use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::step::{make_batch, train_step, TrainState};
use super::{lr_at, Stage, TrainConfig};
use crate::aquasynth::Datasets;
use crate::error::{invalid, Error, Result};
use crate::io::write_atomic;
use crate::model::{Checkpoint, NetworkWeights};
use crate::tensor::Tensor;

pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "step,stage,enh,det_r,uns,det_e,da,total,lr";
pub const DATA_QUALITY_FILE: &str = "data_quality.csv";
const DATA_QUALITY_HEADER: &str = "step,gt_boxes,unmatched";
const MOMENTUM_PREFIX: &str = "momentum.";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Continue from this checkpoint instead of a fresh initialisation.
    pub resume: Option<PathBuf>,
    /// Stop early after this many total steps (simulates an interruption).
    pub stop_at: Option<u64>,
    /// Print a progress line to stderr every this many steps; 0 is silent.
    pub progress_every: u64,
}

/// Paths and SHA-256 hashes of every checkpoint written.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoints: BTreeMap<String, (PathBuf, String)>,
    pub start_step: u64,
    pub end_step: u64,
    pub da_calls: u64,
    pub unmatched: u64,
    pub gt_boxes: u64,
}

impl TrainSummary {
    pub fn hash(&self, name: &str) -> Option<&str> {
        self.checkpoints.get(name).map(|(_, h)| h.as_str())
    }

    pub fn path(&self, name: &str) -> Option<&Path> {
        self.checkpoints.get(name).map(|(p, _)| p.as_path())
    }
}

fn to_checkpoint(state: &TrainState, cfg: &TrainConfig, data_hash: &str) -> Checkpoint {
    let mut ck = Checkpoint::new(cfg.network.clone(), state.weights.clone());
    for (name, v) in &state.velocity {
        ck.extra.insert(format!("{MOMENTUM_PREFIX}{name}"), v.clone());
    }
    let stage = if state.step() == 0 { Stage::BurnIn } else { cfg.schedule.stage(state.step() - 1).unwrap_or(Stage::DomainAdaptation) };
    ck.meta = json!({
        "seed": cfg.seed,
        "stage": stage.name(),
        "schedule": cfg.schedule,
        "train_config_hash": cfg.hash(),
        "data_hash": data_hash,
        "da_calls": state.da_calls,
        "unmatched": state.unmatched,
        "gt_boxes": state.gt_boxes,
    });
    ck
}

fn from_checkpoint(ck: Checkpoint, cfg: &TrainConfig) -> Result<TrainState> {
    if ck.config != cfg.network {
        return invalid("checkpoint network config differs from the training config");
    }
    let seed = ck.meta.get("seed").and_then(|v| v.as_u64());
    if seed != Some(cfg.seed) {
        return invalid(format!("checkpoint seed {seed:?} differs from configured seed {}", cfg.seed));
    }
    let counter = |k: &str| ck.meta.get(k).and_then(|v| v.as_u64()).unwrap_or(0);
    let (da_calls, unmatched, gt_boxes) = (counter("da_calls"), counter("unmatched"), counter("gt_boxes"));
    let mut velocity = BTreeMap::new();
    for (name, t) in &ck.weights.tensors {
        let v = ck
            .extra
            .get(&format!("{MOMENTUM_PREFIX}{name}"))
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        if v.shape() != t.shape() {
            return invalid(format!("momentum buffer for {name} has the wrong shape"));
        }
        velocity.insert(name.clone(), v);
    }
    Ok(TrainState { weights: ck.weights, velocity, da_calls, unmatched, gt_boxes })
}

/// Keep the header and the first `rows` data rows of a CSV file.
fn truncate_csv(path: &Path, header: &str, keep: impl Fn(&str) -> bool) -> Result<String> {
    let mut out = format!("{header}\n");
    if let Ok(text) = fs::read_to_string(path) {
        let mut lines = text.lines();
        if lines.next() != Some(header) {
            return Err(Error::Format { path: path.to_path_buf(), message: "unexpected header".into() });
        }
        for l in lines.filter(|l| keep(l)) {
            out.push_str(l);
            out.push('\n');
        }
    }
    Ok(out)
}

fn row_step(line: &str) -> u64 {
    line.split(',').next().and_then(|s| s.parse().ok()).unwrap_or(u64::MAX)
}

/// Runs (or resumes) training to `cfg.schedule.n` steps.
///
/// Writes `checkpoint_burnin.ckpt`, `checkpoint_mutual.ckpt` and
/// `checkpoint_final.ckpt` when their step is reached, refreshes
/// `last.ckpt` every `checkpoint_every` steps, and appends one log row per
/// step. Resuming from any checkpoint of a run with the same seed yields
/// the same states as the uninterrupted run.
pub fn run_training(cfg: &TrainConfig, data: &Datasets, opts: &RunOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    let data_hash = data.content_hash();
    if let Some(want) = &cfg.expected_data_hash {
        if *want != data_hash {
            return invalid(format!("dataset hash {data_hash} does not match expected {want}"));
        }
    }
    if data.config.scene.image_size != cfg.network.input_size {
        return invalid(format!(
            "dataset images are {} px, network expects {}",
            data.config.scene.image_size, cfg.network.input_size
        ));
    }
    fs::create_dir_all(&opts.out_dir)?;
    let mut state = match &opts.resume {
        Some(path) => from_checkpoint(Checkpoint::load(path)?, cfg)?,
        None => TrainState::new(NetworkWeights::init(&cfg.network, cfg.seed)?),
    };
    let start = state.step();
    if start > cfg.schedule.n {
        return invalid(format!("checkpoint step {start} is past the schedule end {}", cfg.schedule.n));
    }

    let log_path = opts.out_dir.join(LOG_FILE);
    let dq_path = opts.out_dir.join(DATA_QUALITY_FILE);
    let log_text = truncate_csv(&log_path, LOG_HEADER, |l| row_step(l) < start)?;
    let dq_text = truncate_csv(&dq_path, DATA_QUALITY_HEADER, |l| row_step(l) <= start)?;
    write_atomic(&log_path, log_text.as_bytes())?;
    write_atomic(&dq_path, dq_text.as_bytes())?;
    let mut log = fs::OpenOptions::new().append(true).open(&log_path)?;
    let mut dq = fs::OpenOptions::new().append(true).open(&dq_path)?;

    let mut summary = TrainSummary { start_step: start, ..Default::default() };
    let save = |name: &str, state: &TrainState, summary: &mut TrainSummary| -> Result<()> {
        let path = opts.out_dir.join(format!("{name}.ckpt"));
        let hash = to_checkpoint(state, cfg, &data_hash).save(&path)?;
        summary.checkpoints.insert(name.to_string(), (path, hash));
        Ok(())
    };
    let end = opts.stop_at.map_or(cfg.schedule.n, |s| s.min(cfg.schedule.n));
    let started = std::time::Instant::now();
    let mut last_dq = (state.gt_boxes, state.unmatched);
    for step in start..end {
        let stage = cfg.schedule.stage(step)?;
        if opts.progress_every > 0 && (step == start || step == cfg.schedule.n_b || step == cfg.schedule.n_m) {
            eprintln!("step {step}: stage {stage}");
        }
        let batch = make_batch(data, cfg, step)?;
        let report = train_step(&mut state, &batch, cfg)?;
        writeln!(log, "{step},{stage},{},{:e}", report.csv_cells(), lr_at(step, cfg))?;

        let done = step + 1;
        if done % cfg.checkpoint_every == 0 || done == end {
            let (gt, um) = (state.gt_boxes - last_dq.0, state.unmatched - last_dq.1);
            writeln!(dq, "{done},{gt},{um}")?;
            last_dq = (state.gt_boxes, state.unmatched);
        }
        if done == cfg.schedule.n_b {
            save("checkpoint_burnin", &state, &mut summary)?;
        }
        if done == cfg.schedule.n_m {
            save("checkpoint_mutual", &state, &mut summary)?;
        }
        if done == cfg.schedule.n {
            save("checkpoint_final", &state, &mut summary)?;
        }
        if done % cfg.checkpoint_every == 0 || done == end {
            log.flush()?;
            dq.flush()?;
            save("last", &state, &mut summary)?;
        }
        if opts.progress_every > 0 && done % opts.progress_every == 0 {
            let secs = started.elapsed().as_secs_f64();
            eprintln!("step {done}/{}: total {:.4} ({:.2} s/step)", cfg.schedule.n, report.total, secs / (done - start) as f64);
        }
    }
    log.flush()?;
    summary.end_step = state.step();
    summary.da_calls = state.da_calls;
    summary.unmatched = state.unmatched;
    summary.gt_boxes = state.gt_boxes;
    Ok(summary)
}
