//! Uniform entry point for both receiver arms.

use crate::baseline::uad_dc_baseline;
use crate::em::{run_em, EmConfig, MStepMode};
use crate::error::Result;
use crate::juced_mp::{FrameLayout, JucedConfig};
use crate::preamble::PreamblePool;
use crate::pulse::PulseBank;
use crate::scenario::SimScenario;
use crate::signal::WindowObservation;

use super::config::{ReceiverKind, ReceiverSettings};
use super::metrics::ReceiverEstimate;

/// Detection thresholds of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Thresholds {
    /// Correlation magnitude a peak must exceed to become a candidate.
    pub peak: f64,
    /// Row power of the channel estimate above which a candidate is active.
    pub eta_th: f64,
}

/// Inner and outer loop configurations of one receiver for a scenario.
///
/// The baseline keeps the nominal noise variance: it does not account for
/// data interference, by design.
pub fn receiver_configs(
    kind: ReceiverKind,
    settings: &ReceiverSettings,
    scenario: &SimScenario,
    thresholds: Thresholds,
    init_seed: u64,
) -> (JucedConfig, EmConfig) {
    let juced = JucedConfig {
        max_iters: settings.inner_iters,
        eps1: settings.eps1,
        damping: settings.damping,
        adaptive_damping: settings.adaptive_damping,
        learn_noise: settings.learn_noise && kind == ReceiverKind::Juced,
        eta_th: thresholds.eta_th,
        init_seed,
        ..JucedConfig::default()
    };
    let em = EmConfig {
        max_outer: settings.outer_iters,
        eps2: settings.eps2,
        search_radius: Some((settings.search_symbols * scenario.oversampling).max(1)),
        sweep_passes: settings.sweep_passes,
        peak_threshold: thresholds.peak,
        loading: settings.loading,
        mstep: if settings.profiled_mstep {
            MStepMode::Profiled
        } else {
            MStepMode::Rigid
        },
        max_candidates: settings.max_candidates,
        ..EmConfig::default()
    };
    (juced, em)
}

/// Runs one receiver on one window.
pub fn run_receiver(
    kind: ReceiverKind,
    obs: &WindowObservation,
    pulse: &PulseBank,
    pool: &PreamblePool,
    scenario: &SimScenario,
    juced: &JucedConfig,
    em: &EmConfig,
) -> Result<ReceiverEstimate> {
    let layout = FrameLayout::from_scenario(scenario);
    match kind {
        ReceiverKind::Juced => {
            let out = run_em(obs, pulse, pool, scenario, juced, em)?;
            let k = out.delays.len();
            let data = nalgebra::DMatrix::from_fn(k, scenario.data_len, |c, d| {
                let i = layout.row(out.posterior.offsets[c], scenario.preamble_len + d);
                out.posterior.x_hat[(i, c)]
            });
            Ok(ReceiverEstimate {
                offsets: out.delays.tau_hat.clone(),
                preambles: out.delays.preambles.clone(),
                active: out.posterior.active.clone(),
                g_hat: out.posterior.g_hat.clone(),
                data,
                em_iterations: out.trace.len(),
            })
        }
        ReceiverKind::Baseline => {
            let out = uad_dc_baseline(obs, pulse, pool, scenario, juced, em)?;
            Ok(ReceiverEstimate {
                offsets: out.delays.tau_hat.clone(),
                preambles: out.delays.preambles.clone(),
                active: out.activity.clone(),
                g_hat: out.g_hat.clone(),
                data: out.detection.data.clone(),
                em_iterations: out.trace.len(),
            })
        }
    }
}
