//! Ground-truth transmissions and the oversampled window observation.
//!
//! A window holds `N = window_len * M` samples per antenna:
//!
//! ```text
//! Y = sum_k alpha_k * s_k(tau_k) h_k^T + F W
//! ```
//!
//! where `s_k(tau)` is user k's frame shaped by the raised-cosine cascade and
//! delayed by the continuous delay `tau`. When `M * tau` is an integer the
//! waveform is exactly `Z x_k(tau)` with `x_k` from [`place_frame`], so the
//! noiseless part equals `Z X(tau) G`. Off-grid delays sample the pulse at the
//! true fractional offset, which is the mismatch a grid-based receiver has to
//! live with.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::preamble::PreamblePool;
use crate::pulse::PulseBank;
use crate::scenario::SimScenario;

/// Per-trial ground truth.
#[derive(Debug, Clone)]
pub struct UserRealization {
    pub alpha: Vec<bool>,
    /// Continuous delays in symbols.
    pub tau: Vec<f64>,
    /// `K x N_R` channel gains.
    pub h: DMatrix<Complex64>,
    pub preamble_idx: Vec<usize>,
    /// `K x N_D` data symbols.
    pub data: DMatrix<Complex64>,
    /// Equivalent channel: row k is `alpha_k * h_k`.
    pub g: DMatrix<Complex64>,
}

impl UserRealization {
    pub fn num_active(&self) -> usize {
        self.alpha.iter().filter(|a| **a).count()
    }

    /// Frame symbols of user `k`: preamble followed by data.
    pub fn frame(&self, k: usize, pool: &PreamblePool) -> Vec<Complex64> {
        let mut s = pool.sequence(self.preamble_idx[k]).to_vec();
        s.extend(self.data.row(k).iter().copied());
        s
    }
}

/// Received samples, one column per antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowObservation {
    pub y: DMatrix<Complex64>,
}

/// Circularly-symmetric complex Gaussian with variance `var`.
pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Grid offset (samples) at which a frame with delay `tau` starts:
/// the index `j` solving `floor(M * (t_W - tau)) + j = 0` with `t_W = 0`.
pub fn frame_offset(tau: f64, oversampling: usize) -> i64 {
    -((-(oversampling as f64) * tau).floor() as i64)
}

/// Places frame symbols on the oversampled grid of a window.
///
/// Symbol `n` lands at sample `n * M + frame_offset(tau)`; every other sample
/// is zero.
pub fn place_frame(
    symbols: &[Complex64],
    tau: f64,
    scenario: &SimScenario,
) -> Result<Vec<Complex64>> {
    if symbols.len() != scenario.frame_len() {
        return Err(Error::dims("frame symbols", scenario.frame_len(), symbols.len()));
    }
    place_frame_at(
        symbols,
        frame_offset(tau, scenario.oversampling),
        scenario.samples(),
        scenario.oversampling,
    )
}

/// Like [`place_frame`] with the grid offset given directly.
pub fn place_frame_at(
    symbols: &[Complex64],
    offset: i64,
    samples: usize,
    oversampling: usize,
) -> Result<Vec<Complex64>> {
    let mut x = vec![Complex64::new(0.0, 0.0); samples];
    for (n, s) in symbols.iter().enumerate() {
        let idx = offset + (n * oversampling) as i64;
        if idx < 0 || idx >= samples as i64 {
            return Err(Error::OutOfWindow {
                index: idx,
                samples,
            });
        }
        x[idx as usize] = *s;
    }
    Ok(x)
}

/// Draws activity, delays, channels, preamble choices and data for one trial.
pub fn generate_realization(scenario: &SimScenario, seed: u64) -> Result<UserRealization> {
    scenario.validate_structure()?;
    let k = scenario.num_users;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha: Vec<bool> = (0..k)
        .map(|_| rng.random::<f64>() < scenario.activity_prob)
        .collect();
    let max_delay = scenario.max_delay();
    let tau: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * max_delay).collect();
    let preamble_idx: Vec<usize> = (0..k)
        .map(|_| rng.random_range(0..scenario.pool_size))
        .collect();
    let h = DMatrix::from_fn(k, scenario.num_antennas, |_, _| {
        complex_gaussian(&mut rng, scenario.channel_var)
    });
    let data = DMatrix::from_fn(k, scenario.data_len, |_, _| complex_gaussian(&mut rng, 1.0));
    let mut g = h.clone();
    for (row, active) in alpha.iter().enumerate() {
        if !active {
            g.row_mut(row).fill(Complex64::new(0.0, 0.0));
        }
    }
    Ok(UserRealization {
        alpha,
        tau,
        h,
        preamble_idx,
        data,
        g,
    })
}

/// Shaped, delayed waveform of one frame (before the channel gain).
pub fn shaped_frame(
    symbols: &[Complex64],
    tau: f64,
    pulse: &PulseBank,
) -> Vec<Complex64> {
    let n = pulse.samples();
    let m = pulse.oversampling;
    let half = pulse.half_width() as i64;
    let shift = m as f64 * tau;
    let grid = shift.round();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    if (shift - grid).abs() < 1e-9 {
        let start = grid as i64;
        for (s_idx, s) in symbols.iter().enumerate() {
            let j = start + (s_idx * m) as i64;
            for i in (j - half).max(0)..=(j + half).min(n as i64 - 1) {
                out[i as usize] += s * pulse.z_taps[(i - j + half) as usize];
            }
        }
    } else {
        let lo = shift.floor() as i64;
        for (s_idx, s) in symbols.iter().enumerate() {
            let j = lo + (s_idx * m) as i64;
            for i in (j - half).max(0)..=(j + half + 1).min(n as i64 - 1) {
                let t = ((i - (s_idx * m) as i64) as f64 - shift) / m as f64;
                out[i as usize] += s * pulse.z_at(t);
            }
        }
    }
    out
}

/// Noiseless part of the observation.
pub fn noiseless_window(
    realization: &UserRealization,
    pulse: &PulseBank,
    pool: &PreamblePool,
    scenario: &SimScenario,
) -> Result<WindowObservation> {
    check_consistency(realization, pulse, scenario)?;
    let n = scenario.samples();
    let mut y = DMatrix::zeros(n, scenario.num_antennas);
    for k in 0..scenario.num_users {
        if !realization.alpha[k] {
            continue;
        }
        let wave = shaped_frame(&realization.frame(k, pool), realization.tau[k], pulse);
        for r in 0..scenario.num_antennas {
            let gain = realization.g[(k, r)];
            for (i, w) in wave.iter().enumerate() {
                y[(i, r)] += w * gain;
            }
        }
    }
    Ok(WindowObservation { y })
}

/// Filtered noise `F W` with `W` i.i.d. `CN(0, noise_var)`.
pub fn filtered_noise(
    pulse: &PulseBank,
    num_antennas: usize,
    noise_var: f64,
    seed: u64,
) -> DMatrix<Complex64> {
    let n = pulse.samples();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DMatrix::from_fn(n, num_antennas, |_, _| complex_gaussian(&mut rng, noise_var));
    banded_apply(&pulse.m_taps, &w)
}

/// `T W` for the banded Toeplitz matrix `T` built from `taps`.
pub(crate) fn banded_apply(taps: &[f64], w: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = w.nrows();
    let half = (taps.len() / 2) as i64;
    let mut out = DMatrix::zeros(n, w.ncols());
    for c in 0..w.ncols() {
        for i in 0..n as i64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in (i - half).max(0)..=(i + half).min(n as i64 - 1) {
                acc += w[(j as usize, c)] * taps[(i - j + half) as usize];
            }
            out[(i as usize, c)] = acc;
        }
    }
    out
}

/// Full observation: signal plus filtered noise drawn from `noise_seed`.
pub fn synthesize_window(
    realization: &UserRealization,
    pulse: &PulseBank,
    pool: &PreamblePool,
    scenario: &SimScenario,
    noise_seed: u64,
) -> Result<WindowObservation> {
    let mut obs = noiseless_window(realization, pulse, pool, scenario)?;
    if scenario.noise_var > 0.0 {
        obs.y += filtered_noise(pulse, scenario.num_antennas, scenario.noise_var, noise_seed);
    }
    Ok(obs)
}

fn check_consistency(
    realization: &UserRealization,
    pulse: &PulseBank,
    scenario: &SimScenario,
) -> Result<()> {
    if pulse.samples() != scenario.samples() || pulse.oversampling != scenario.oversampling {
        return Err(Error::dims("pulse bank samples", scenario.samples(), pulse.samples()));
    }
    let k = scenario.num_users;
    if realization.alpha.len() != k || realization.g.nrows() != k {
        return Err(Error::dims("realization users", k, realization.alpha.len()));
    }
    if realization.g.ncols() != scenario.num_antennas {
        return Err(Error::dims(
            "realization antennas",
            scenario.num_antennas,
            realization.g.ncols(),
        ));
    }
    if realization.data.ncols() != scenario.data_len {
        return Err(Error::dims("data length", scenario.data_len, realization.data.ncols()));
    }
    Ok(())
}
