//! Experiment configuration, seeding and the TOML file format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::SimScenario;

/// Receiver arms a sweep can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReceiverKind {
    /// Delay-calibrated joint receiver.
    Juced,
    /// Preamble-only channel estimation followed by least squares.
    Baseline,
}

impl ReceiverKind {
    pub fn name(self) -> &'static str {
        match self {
            ReceiverKind::Juced => "juced",
            ReceiverKind::Baseline => "baseline",
        }
    }

    /// Human-readable series label.
    pub fn label(self) -> &'static str {
        match self {
            ReceiverKind::Juced => "juced",
            ReceiverKind::Baseline => "baseline (UAD-DC-like)",
        }
    }
}

impl fmt::Display for ReceiverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReceiverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "juced" => Ok(ReceiverKind::Juced),
            "baseline" | "uad-dc" => Ok(ReceiverKind::Baseline),
            other => Err(Error::Config(format!("unknown receiver '{other}'"))),
        }
    }
}

/// Receiver tuning shared by both arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverSettings {
    pub inner_iters: usize,
    pub eps1: f64,
    pub damping: f64,
    pub adaptive_damping: bool,
    pub learn_noise: bool,
    pub outer_iters: usize,
    pub eps2: f64,
    /// Search half-width in symbols (scaled by the oversampling factor).
    pub search_symbols: usize,
    pub sweep_passes: usize,
    pub loading: f64,
    /// Re-fit data symbols for every trial delay in the M-step.
    pub profiled_mstep: bool,
    /// Cap on correlation candidates; unset means the number of potential
    /// users.
    pub max_candidates: Option<usize>,
}

impl Default for ReceiverSettings {
    fn default() -> Self {
        ReceiverSettings {
            inner_iters: 100,
            eps1: 1e-6,
            // heavier than the library default: 32 overlapping candidates
            // diverge at 0.7
            damping: 0.3,
            adaptive_damping: true,
            learn_noise: true,
            outer_iters: 4,
            eps2: 0.5,
            search_symbols: 2,
            sweep_passes: 2,
            loading: crate::juced_mp::DEFAULT_LOADING,
            profiled_mstep: true,
            max_candidates: None,
        }
    }
}

/// Monte-Carlo sweep description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: SimScenario,
    pub snr_grid_db: Vec<f64>,
    pub mosf_grid: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub receivers: Vec<ReceiverKind>,
    pub output_dir: PathBuf,
    pub pfa_target: f64,
    /// Noise-only windows used for threshold calibration per cell.
    pub calibration_windows: usize,
    /// Realizations averaged to fix the signal power behind the SNR.
    pub pilot_batch: usize,
    pub receiver: ReceiverSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: SimScenario::desk(),
            snr_grid_db: vec![10.0, 15.0, 20.0, 25.0, 30.0],
            mosf_grid: vec![1, 2, 3],
            trials: 200,
            seed: 1,
            receivers: vec![ReceiverKind::Juced, ReceiverKind::Baseline],
            output_dir: PathBuf::from("results"),
            pfa_target: 1e-3,
            calibration_windows: 200,
            pilot_batch: 64,
            receiver: ReceiverSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.trials < 1 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.snr_grid_db.is_empty() || self.mosf_grid.is_empty() || self.receivers.is_empty() {
            return Err(Error::Config("SNR, oversampling and receiver lists must be non-empty".into()));
        }
        if self.mosf_grid.contains(&0) {
            return Err(Error::Config("oversampling factors must be >= 1".into()));
        }
        if !(self.pfa_target > 0.0 && self.pfa_target <= 1.0) {
            return Err(Error::Config(format!("pfa_target {} not in (0, 1]", self.pfa_target)));
        }
        if self.pilot_batch < 1 || self.calibration_windows < 1 {
            return Err(Error::Config("pilot_batch and calibration_windows must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream tags keep the seeds of different purposes apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Realization = 1,
    Noise = 2,
    Pilot = 3,
    Calibration = 4,
    Holdout = 5,
    ReceiverInit = 6,
}

/// Deterministic seed from the master seed, a stream and any number of
/// indices.
pub fn derive_seed(master: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix(master.wrapping_add(GOLDEN));
    h = splitmix(h ^ (stream as u64).wrapping_mul(GOLDEN));
    for &i in indices {
        h = splitmix(h.wrapping_add(GOLDEN) ^ i);
    }
    h
}
