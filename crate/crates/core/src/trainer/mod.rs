//! Three-stage training: burn-in (paired enhancement + labelled
//! detection), mutual learning (adds gray-world and detection on enhanced
//! images) and domain adaptation (adds embedding alignment). Terms
//! accumulate; each step is one backward pass over their sum.

pub mod augment;
mod run;
mod step;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use augment::AugmentConfig;
pub use run::{run_training, RunOptions, TrainSummary, DATA_QUALITY_FILE, LOG_FILE, LOG_HEADER};
pub use step::{global_norm, make_batch, train_step, StepBatch, TrainState};

use crate::error::{invalid, Result};
use crate::io::sha256_hex;
use crate::losses::LossWeights;
use crate::model::NetworkConfig;

/// Step thresholds `N_b` (end of burn-in), `N_m` (end of mutual learning)
/// and `N` (total).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub n_b: u64,
    pub n_m: u64,
    pub n: u64,
}

impl StageSchedule {
    /// `0 < n_b < n_m <= n`. `n_m == n` gives a run without adaptation.
    pub fn new(n_b: u64, n_m: u64, n: u64) -> Result<Self> {
        let s = StageSchedule { n_b, n_m, n };
        s.validate()?;
        Ok(s)
    }

    pub fn full_scale() -> Self {
        StageSchedule { n_b: 80_000, n_m: 120_000, n: 150_000 }
    }

    pub fn desk() -> Self {
        StageSchedule { n_b: 1_500, n_m: 2_400, n: 3_000 }
    }

    /// Same thresholds with the adaptation stage removed.
    pub fn without_adaptation(self) -> Self {
        StageSchedule { n_m: self.n, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.n_b && self.n_b < self.n_m && self.n_m <= self.n) {
            return invalid(format!("schedule needs 0 < N_b < N_m <= N, got {}/{}/{}", self.n_b, self.n_m, self.n));
        }
        Ok(())
    }

    pub fn stage(&self, step: u64) -> Result<Stage> {
        if step >= self.n {
            return invalid(format!("step {step} outside schedule of {} steps", self.n));
        }
        Ok(if step < self.n_b {
            Stage::BurnIn
        } else if step < self.n_m {
            Stage::MutualLearning
        } else {
            Stage::DomainAdaptation
        })
    }
}

impl Default for StageSchedule {
    fn default() -> Self {
        StageSchedule::desk()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    #[serde(rename = "burnin")]
    BurnIn,
    #[serde(rename = "mutual")]
    MutualLearning,
    #[serde(rename = "da")]
    DomainAdaptation,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::BurnIn => "burnin",
            Stage::MutualLearning => "mutual",
            Stage::DomainAdaptation => "da",
        }
    }

    pub fn losses(self) -> &'static [LossTerm] {
        use LossTerm::*;
        match self {
            Stage::BurnIn => &[Enh, DetR],
            Stage::MutualLearning => &[Enh, DetR, Uns, DetE],
            Stage::DomainAdaptation => &[Enh, DetR, Uns, DetE, Da],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [Stage::BurnIn, Stage::MutualLearning, Stage::DomainAdaptation]
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Enh,
    DetR,
    Uns,
    DetE,
    Da,
}

impl LossTerm {
    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Enh => "enh",
            LossTerm::DetR => "det_r",
            LossTerm::Uns => "uns",
            LossTerm::DetE => "det_e",
            LossTerm::Da => "da",
        }
    }
}

/// Loss terms computed at `step`.
pub fn active_losses(step: u64, schedule: &StageSchedule) -> Result<&'static [LossTerm]> {
    Ok(schedule.stage(step)?.losses())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub schedule: StageSchedule,
    pub base_lr: f64,
    pub momentum: f64,
    /// Multiplier applied at `N_b` and again at `N_m`.
    pub lr_decay: f64,
    pub det_batch: usize,
    pub enh_batch: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub augment: AugmentConfig,
    /// Steps between `last.ckpt` refreshes and data-quality rows.
    pub checkpoint_every: u64,
    /// Upper bound on the global L2 norm of each step's gradient.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    /// When set, training refuses datasets with a different content hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_data_hash: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            network: NetworkConfig::default(),
            schedule: StageSchedule::desk(),
            base_lr: 0.01,
            momentum: 0.9,
            lr_decay: 0.1,
            det_batch: 16,
            enh_batch: 8,
            seed: 0,
            loss_weights: LossWeights::default(),
            augment: AugmentConfig::default(),
            checkpoint_every: 100,
            grad_clip: Some(1.0),
            expected_data_hash: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.schedule.validate()?;
        self.augment.validate()?;
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return invalid("base_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid("momentum must lie in [0, 1)");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return invalid("lr_decay must lie in (0, 1]");
        }
        if self.det_batch == 0 || self.enh_batch == 0 {
            return invalid("batch sizes must be at least 1");
        }
        if self.checkpoint_every == 0 {
            return invalid("checkpoint_every must be at least 1");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return invalid("grad_clip must be positive");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serialises"))
    }
}

/// Step-wise learning rate: `base`, then `base * decay` from `N_b`, then
/// `base * decay^2` from `N_m`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let s = &cfg.schedule;
    if step < s.n_b {
        cfg.base_lr
    } else if step < s.n_m {
        cfg.base_lr * cfg.lr_decay
    } else {
        cfg.base_lr * cfg.lr_decay * cfg.lr_decay
    }
}
