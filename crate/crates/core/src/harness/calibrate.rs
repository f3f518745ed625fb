//! Threshold calibration on noise-only windows.
//!
//! The correlation threshold is the empirical `1 - pfa` quantile of the
//! largest correlation peak per preamble and window. The activity threshold
//! is the same quantile of the channel row power the receiver assigns to
//! candidates forced onto the strongest noise peaks.

use crate::em::whiten;
use crate::error::Result;
use crate::juced_mp::run_juced_for;
use crate::preamble::{correlation_profile, PreamblePool};
use crate::pulse::PulseBank;
use crate::scenario::SimScenario;
use crate::signal::{filtered_noise, WindowObservation};
use crate::baseline::preamble_estep;

use super::config::{derive_seed, ReceiverKind, ReceiverSettings, Stream};
use super::metrics::ReceiverEstimate;
use super::receiver::{receiver_configs, run_receiver, Thresholds};

/// Events needed at the target rate before a quantile counts as resolved.
pub const MIN_EVENTS: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Calibration {
    pub thresholds: Thresholds,
    pub peak_samples: usize,
    pub eta_samples: usize,
    /// False when fewer than [`MIN_EVENTS`] exceedances are expected at the
    /// target rate.
    pub resolved: bool,
}

/// Smallest sample value `t` with at most `pfa * n` samples above it.
pub fn upper_quantile(samples: &mut [f64], pfa: f64) -> f64 {
    if samples.is_empty() || pfa >= 1.0 {
        return 0.0;
    }
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let allowed = (pfa * n as f64).floor() as usize;
    if allowed >= n {
        return 0.0;
    }
    samples[n - 1 - allowed]
}

/// Noise-only window (filtered white noise at the scenario's variance).
pub fn noise_window(pulse: &PulseBank, scenario: &SimScenario, seed: u64) -> WindowObservation {
    WindowObservation {
        y: filtered_noise(pulse, scenario.num_antennas, scenario.noise_var, seed),
    }
}

/// Per-preamble maximum correlation of one window.
pub fn peak_statistics(
    obs: &WindowObservation,
    pool: &PreamblePool,
    pulse: &PulseBank,
    scenario: &SimScenario,
) -> Result<Vec<f64>> {
    Ok(correlation_profile(obs, pool, pulse, scenario)?
        .into_iter()
        .map(|p| p.into_iter().fold(0.0, f64::max))
        .collect())
}

/// Channel row power of every candidate the receiver would consider if the
/// correlation threshold were zero.
pub fn activity_statistics(
    kind: ReceiverKind,
    obs: &WindowObservation,
    pool: &PreamblePool,
    pulse: &PulseBank,
    scenario: &SimScenario,
    settings: &ReceiverSettings,
    init_seed: u64,
) -> Result<Vec<f64>> {
    let (juced, em) = receiver_configs(kind, settings, scenario, Thresholds::default(), init_seed);
    let forced = em.initial_detection(obs, pool, pulse, scenario)?;
    let (y_white, z_white) = whiten(obs, pulse, settings.loading)?;
    let post = match kind {
        ReceiverKind::Juced => {
            run_juced_for(&y_white, &z_white, &forced.initial, pool, scenario, &juced)?
        }
        ReceiverKind::Baseline => preamble_estep(
            &y_white,
            &z_white,
            &forced.initial,
            pool,
            scenario,
            pulse.half_width(),
            &juced,
        )?,
    };
    Ok(post.channel_power())
}

/// Calibrates both thresholds for one receiver at the scenario's noise level.
pub fn calibrate_thresholds(
    kind: ReceiverKind,
    scenario: &SimScenario,
    pulse: &PulseBank,
    pool: &PreamblePool,
    settings: &ReceiverSettings,
    pfa_target: f64,
    windows: usize,
    seed: u64,
) -> Result<Calibration> {
    let mut peaks = Vec::with_capacity(windows * pool.len());
    let mut powers = Vec::new();
    for w in 0..windows {
        let obs = noise_window(pulse, scenario, derive_seed(seed, Stream::Calibration, &[w as u64]));
        peaks.extend(peak_statistics(&obs, pool, pulse, scenario)?);
        powers.extend(activity_statistics(
            kind,
            &obs,
            pool,
            pulse,
            scenario,
            settings,
            derive_seed(seed, Stream::ReceiverInit, &[w as u64]),
        )?);
    }
    let resolved =
        pfa_target * peaks.len() as f64 >= MIN_EVENTS && pfa_target * powers.len() as f64 >= MIN_EVENTS;
    if !resolved && pfa_target < 1.0 {
        log::warn!(
            "calibration with {} peak and {} activity samples cannot resolve pfa {pfa_target}",
            peaks.len(),
            powers.len()
        );
    }
    let (ps, es) = (peaks.len(), powers.len());
    Ok(Calibration {
        thresholds: Thresholds {
            peak: upper_quantile(&mut peaks, pfa_target),
            eta_th: upper_quantile(&mut powers, pfa_target),
        },
        peak_samples: ps,
        eta_samples: es,
        resolved,
    })
}

/// Out-of-sample false-alarm rates of calibrated thresholds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HoldoutReport {
    /// Fraction of (window, preamble) maxima above the peak threshold.
    pub peak_rate: f64,
    /// Fraction of forced candidates whose channel power exceeds `eta_th`.
    pub activity_rate: f64,
    /// Candidates flagged active by the full receiver per potential user.
    pub end_to_end_rate: f64,
    pub windows: usize,
}

/// Replays the thresholds on fresh noise-only windows.
#[allow(clippy::too_many_arguments)]
pub fn validate_thresholds(
    kind: ReceiverKind,
    scenario: &SimScenario,
    pulse: &PulseBank,
    pool: &PreamblePool,
    settings: &ReceiverSettings,
    thresholds: Thresholds,
    windows: usize,
    seed: u64,
) -> Result<HoldoutReport> {
    let (mut peak_hits, mut peak_n, mut act_hits, mut act_n, mut flagged) = (0, 0, 0, 0, 0);
    for w in 0..windows {
        let obs = noise_window(pulse, scenario, derive_seed(seed, Stream::Holdout, &[w as u64]));
        let init = derive_seed(seed, Stream::ReceiverInit, &[u64::MAX - w as u64]);
        for p in peak_statistics(&obs, pool, pulse, scenario)? {
            peak_n += 1;
            peak_hits += usize::from(p > thresholds.peak);
        }
        for e in activity_statistics(kind, &obs, pool, pulse, scenario, settings, init)? {
            act_n += 1;
            act_hits += usize::from(e > thresholds.eta_th);
        }
        let (juced, em) = receiver_configs(kind, settings, scenario, thresholds, init);
        let est: ReceiverEstimate = run_receiver(kind, &obs, pulse, pool, scenario, &juced, &em)?;
        flagged += est.active.iter().filter(|a| **a).count();
    }
    let rate = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    Ok(HoldoutReport {
        peak_rate: rate(peak_hits, peak_n),
        activity_rate: rate(act_hits, act_n),
        end_to_end_rate: rate(flagged, windows * scenario.num_users),
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_respects_target() {
        let mut v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        let t = upper_quantile(&mut v, 0.01);
        assert_eq!(t, 990.0);
        assert_eq!(v.iter().filter(|x| **x > t).count(), 10);
        assert_eq!(upper_quantile(&mut v, 1.0), 0.0);
        assert_eq!(upper_quantile(&mut v, 1e-6), 1000.0);
    }
}
