//! Raised-cosine pulse shaping on the oversampled grid.
//!
//! The transmit filter and the receive filter are a matched pair of
//! root-raised-cosine filters with equal roll-off, so their cascade `z(t)` is
//! the raised-cosine pulse. Both are truncated to `|t| <= span` symbols and
//! assembled into banded Toeplitz matrices acting on one observation window.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const SINGULAR_TOL: f64 = 1e-10;

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-15 {
        1.0
    } else {
        (PI * t).sin() / (PI * t)
    }
}

/// Raised-cosine pulse at time `t` (symbols), `rc(0) = 1`.
pub fn raised_cosine(t: f64, rolloff: f64) -> f64 {
    let b = rolloff;
    let denom = 1.0 - (2.0 * b * t).powi(2);
    if b > 0.0 && denom.abs() < SINGULAR_TOL {
        // limit at |t| = 1 / (2 rolloff)
        PI / 4.0 * sinc(1.0 / (2.0 * b))
    } else {
        sinc(t) * (PI * b * t).cos() / denom
    }
}

/// Root-raised-cosine pulse at time `t` (symbols) with unit continuous energy.
pub fn root_raised_cosine(t: f64, rolloff: f64) -> f64 {
    let b = rolloff;
    if t.abs() < 1e-15 {
        return 1.0 - b + 4.0 * b / PI;
    }
    if b > 0.0 && (1.0 - (4.0 * b * t).powi(2)).abs() < SINGULAR_TOL {
        let a = PI / (4.0 * b);
        return b * FRAC_1_SQRT_2 * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
    num / (PI * t * (1.0 - (4.0 * b * t).powi(2)))
}

/// Sampled pulses and the window-sized Toeplitz operators built from them.
#[derive(Debug, Clone)]
pub struct PulseBank {
    pub rolloff: f64,
    pub oversampling: usize,
    /// One-sided support in symbols.
    pub span: usize,
    /// `z(d / M)` for `d = -span*M ..= span*M`; `z[0] = 1`.
    pub z_taps: Vec<f64>,
    /// Receive filter taps on the same grid, scaled to unit energy so that
    /// white noise of variance `s` leaves the filter with per-sample power `s`.
    pub m_taps: Vec<f64>,
    /// Signal Toeplitz operator, `Z[i][j] = z((i - j) / M)`.
    pub z: DMatrix<f64>,
    /// Noise-filter Toeplitz operator, `F[i][j] = m((i - j) / M)`.
    pub f: DMatrix<f64>,
}

/// Builds the pulse bank for a window of `window_len` symbols.
pub fn build_rrc_pulse(
    rolloff: f64,
    oversampling: usize,
    span: usize,
    window_len: usize,
) -> Result<PulseBank> {
    if !(0.0..=1.0).contains(&rolloff) {
        return Err(Error::InvalidParameter(format!(
            "rolloff {rolloff} not in [0, 1]"
        )));
    }
    if oversampling < 1 || span < 1 || window_len < 1 {
        return Err(Error::InvalidParameter(format!(
            "oversampling {oversampling}, span {span} and window {window_len} must be >= 1"
        )));
    }
    let half = (span * oversampling) as i64;
    let mut z_taps = Vec::with_capacity(2 * half as usize + 1);
    let mut m_taps = Vec::with_capacity(2 * half as usize + 1);
    for d in -half..=half {
        let t = d as f64 / oversampling as f64;
        let (zv, mv) = (raised_cosine(t, rolloff), root_raised_cosine(t, rolloff));
        if !zv.is_finite() || !mv.is_finite() {
            return Err(Error::SingularPulse { t, rolloff });
        }
        z_taps.push(zv);
        m_taps.push(mv);
    }
    let energy: f64 = m_taps.iter().map(|m| m * m).sum();
    let scale = energy.sqrt().recip();
    m_taps.iter_mut().for_each(|m| *m *= scale);

    let n = window_len * oversampling;
    Ok(PulseBank {
        rolloff,
        oversampling,
        span,
        z: banded_toeplitz(&z_taps, n),
        f: banded_toeplitz(&m_taps, n),
        z_taps,
        m_taps,
    })
}

/// `T[i][j] = taps[(i - j) + half]` inside the band, zero outside.
pub fn banded_toeplitz(taps: &[f64], n: usize) -> DMatrix<f64> {
    let half = (taps.len() / 2) as i64;
    DMatrix::from_fn(n, n, |i, j| {
        let d = i as i64 - j as i64;
        if d.abs() <= half {
            taps[(d + half) as usize]
        } else {
            0.0
        }
    })
}

impl PulseBank {
    pub fn samples(&self) -> usize {
        self.z.nrows()
    }

    /// Half-width of the band in samples.
    pub fn half_width(&self) -> usize {
        self.span * self.oversampling
    }

    /// The cascade pulse evaluated at an arbitrary time offset (symbols),
    /// truncated to the same support as the tap set.
    pub fn z_at(&self, t: f64) -> f64 {
        if t.abs() <= self.span as f64 + 1e-12 {
            raised_cosine(t, self.rolloff)
        } else {
            0.0
        }
    }
}
