//! Monte-Carlo sweep over SNR, oversampling factor and receiver.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::preamble::{build_zc_pool, PreamblePool};
use crate::pulse::{build_rrc_pulse, PulseBank};
use crate::scenario::SimScenario;
use crate::signal::{generate_realization, noiseless_window, synthesize_window};

use super::calibrate::{calibrate_thresholds, Calibration};
use super::config::{derive_seed, ExperimentConfig, ReceiverKind, ReceiverSettings, Stream};
use super::metrics::{compute_metrics, summarize, CellSummary, TrialMetrics};
use super::receiver::{receiver_configs, run_receiver};

/// One `(receiver, M, SNR)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub receiver: ReceiverKind,
    pub mosf: usize,
    pub snr_db: f64,
    pub noise_var: f64,
    pub calibration: Option<Calibration>,
    pub summary: CellSummary,
    pub valid: bool,
    pub trials: Vec<TrialMetrics>,
}

pub const CSV_HEADER: [&str; 18] = [
    "receiver",
    "mosf",
    "snr_db",
    "nmse_g",
    "nmse_x",
    "p_md",
    "p_fa",
    "delay_rmse",
    "trials",
    "ci95_nmse_g",
    "ci95_nmse_x",
    "ci95_p_md",
    "ci95_p_fa",
    "noise_var",
    "peak_threshold",
    "eta_th",
    "em_iterations",
    "valid",
];

impl CellResult {
    pub fn csv_record(&self) -> Vec<String> {
        let s = &self.summary;
        let th = self.calibration.as_ref().map(|c| c.thresholds).unwrap_or_default();
        vec![
            self.receiver.name().to_string(),
            self.mosf.to_string(),
            self.snr_db.to_string(),
            s.nmse_g.mean.to_string(),
            s.nmse_x.mean.to_string(),
            s.p_md.mean.to_string(),
            s.p_fa.mean.to_string(),
            s.delay_rmse.to_string(),
            s.trials.to_string(),
            s.nmse_g.ci95.to_string(),
            s.nmse_x.ci95.to_string(),
            s.p_md.ci95.to_string(),
            s.p_fa.ci95.to_string(),
            self.noise_var.to_string(),
            th.peak.to_string(),
            th.eta_th.to_string(),
            s.em_iterations.to_string(),
            self.valid.to_string(),
        ]
    }
}

/// Mean per-sample received signal power over a pilot batch.
pub fn pilot_signal_power(
    scenario: &SimScenario,
    pulse: &PulseBank,
    pool: &PreamblePool,
    batch: usize,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for b in 0..batch {
        let real = generate_realization(scenario, derive_seed(seed, Stream::Pilot, &[b as u64]))?;
        let obs = noiseless_window(&real, pulse, pool, scenario)?;
        total += obs.y.iter().map(|v| v.norm_sqr()).sum::<f64>();
        count += obs.y.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Noise variance that realizes `snr_db` against `signal_power`.
pub fn noise_var_for_snr(signal_power: f64, snr_db: f64) -> f64 {
    signal_power / 10f64.powf(snr_db / 10.0)
}

/// Everything fixed within one oversampling factor.
pub struct CellContext {
    pub scenario: SimScenario,
    pub pulse: PulseBank,
    pub pool: PreamblePool,
    pub signal_power: f64,
}

impl CellContext {
    pub fn new(base: &SimScenario, mosf: usize, pilot_batch: usize, seed: u64) -> Result<Self> {
        let scenario = base.with_oversampling(mosf);
        let pulse = build_rrc_pulse(scenario.rolloff, mosf, scenario.pulse_span, scenario.window_len)?;
        let pool = build_zc_pool(scenario.preamble_len, scenario.pool_size)?;
        let signal_power = pilot_signal_power(&scenario, &pulse, &pool, pilot_batch, seed)?;
        Ok(CellContext {
            scenario,
            pulse,
            pool,
            signal_power,
        })
    }

    pub fn at_snr(&self, snr_db: f64) -> SimScenario {
        self.scenario
            .with_noise_var(noise_var_for_snr(self.signal_power, snr_db))
    }
}

/// Runs one trial of one cell.
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    kind: ReceiverKind,
    ctx: &CellContext,
    scenario: &SimScenario,
    calibration: &Calibration,
    settings: &ReceiverSettings,
    seed: u64,
    trial: usize,
) -> Result<TrialMetrics> {
    let t = trial as u64;
    let real = generate_realization(scenario, derive_seed(seed, Stream::Realization, &[t]))?;
    let noise_seed = derive_seed(seed, Stream::Noise, &[t, scenario.oversampling as u64]);
    let obs = synthesize_window(&real, &ctx.pulse, &ctx.pool, scenario, noise_seed)?;
    let (juced, em) = receiver_configs(
        kind,
        settings,
        scenario,
        calibration.thresholds,
        derive_seed(seed, Stream::ReceiverInit, &[t]),
    );
    let start = Instant::now();
    let est = run_receiver(kind, &obs, &ctx.pulse, &ctx.pool, scenario, &juced, &em)?;
    let mut m = compute_metrics(&real, &est, scenario);
    m.wall_time = start.elapsed().as_secs_f64();
    Ok(m)
}

/// Calibrates and runs all trials of one cell.
pub fn run_cell(
    kind: ReceiverKind,
    ctx: &CellContext,
    snr_db: f64,
    config: &ExperimentConfig,
) -> CellResult {
    let scenario = ctx.at_snr(snr_db);
    let mut cell = CellResult {
        receiver: kind,
        mosf: scenario.oversampling,
        snr_db,
        noise_var: scenario.noise_var,
        calibration: None,
        summary: CellSummary::default(),
        valid: false,
        trials: Vec::new(),
    };
    let calib_seed = derive_seed(
        config.seed,
        Stream::Calibration,
        &[scenario.oversampling as u64, snr_db.to_bits(), kind as u64],
    );
    let calibration = match calibrate_thresholds(
        kind,
        &scenario,
        &ctx.pulse,
        &ctx.pool,
        &config.receiver,
        config.pfa_target,
        config.calibration_windows,
        calib_seed,
    ) {
        Ok(c) => c,
        Err(e) => {
            log::error!("calibration failed for {kind} M={} snr={snr_db}: {e}", scenario.oversampling);
            return cell;
        }
    };
    let results: Vec<Result<TrialMetrics>> = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(kind, ctx, &scenario, &calibration, &config.receiver, config.seed, t))
        .collect();
    let mut trials = Vec::with_capacity(results.len());
    for (t, r) in results.into_iter().enumerate() {
        match r {
            Ok(m) => trials.push(m),
            Err(e) => log::error!("trial {t} of {kind} M={} snr={snr_db} failed: {e}", scenario.oversampling),
        }
    }
    cell.valid = trials.len() == config.trials;
    cell.summary = summarize(&trials);
    cell.trials = trials;
    cell.calibration = Some(calibration);
    cell
}

/// Incremental CSV writer that flushes after every row.
pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(CSV_HEADER).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut sink = CsvSink {
            path: path.to_path_buf(),
            writer,
        };
        sink.flush()?;
        Ok(sink)
    }

    pub fn push(&mut self, cell: &CellResult) -> Result<()> {
        self.writer.write_record(cell.csv_record()).map_err(|e| Error::Csv {
            path: self.path.clone(),
            source: e,
        })?;
        self.flush()
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Runs every cell of the configuration in grid order, appending each
/// finished cell to `sink` when one is given.
pub fn run_sweep(config: &ExperimentConfig, mut sink: Option<&mut CsvSink>) -> Result<Vec<CellResult>> {
    config.validate()?;
    let mut out = Vec::new();
    for &mosf in &config.mosf_grid {
        let ctx = CellContext::new(&config.scenario, mosf, config.pilot_batch, config.seed)?;
        for &snr in &config.snr_grid_db {
            for &kind in &config.receivers {
                let cell = run_cell(kind, &ctx, snr, config);
                log::info!(
                    "{kind} M={mosf} snr={snr}: nmse_x={:.4} p_md={:.4} ({} trials)",
                    cell.summary.nmse_x.mean,
                    cell.summary.p_md.mean,
                    cell.summary.trials
                );
                if let Some(s) = sink.as_deref_mut() {
                    s.push(&cell)?;
                }
                out.push(cell);
            }
        }
    }
    Ok(out)
}

/// Reproducibility record written next to the results.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub crate_version: &'static str,
    pub config: &'a ExperimentConfig,
    /// SHA-256 of the resolved configuration in TOML form.
    pub config_sha256: String,
    pub snr_definition: &'static str,
    pub csv: String,
}

pub fn write_manifest(config: &ExperimentConfig, dir: &Path, csv_name: &str) -> Result<PathBuf> {
    let toml_text = config.to_toml_string()?;
    // hashed like a git blob so the value is stable across platforms
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", toml_text.len()).as_bytes());
    hasher.update(toml_text.as_bytes());
    let digest = hasher.finalize();
    let hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION"),
        config,
        config_sha256: hash,
        snr_definition: "mean received signal power per sample (pilot batch) over noise power per sample",
        csv: csv_name.to_string(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
