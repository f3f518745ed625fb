//! Zadoff-Chu preamble pool and correlation-based initial detection.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::em::DelayEstimate;
use crate::error::{Error, Result};
use crate::pulse::PulseBank;
use crate::scenario::SimScenario;
use crate::signal::WindowObservation;

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Orthogonal-ish preamble sequences, one per row, unit energy each.
#[derive(Debug, Clone)]
pub struct PreamblePool {
    pub sequences: DMatrix<Complex64>,
    pub root_indices: Vec<usize>,
    /// Largest cyclic cross-correlation magnitude between distinct rows,
    /// over all lags.
    pub max_cross_correlation: f64,
}

impl PreamblePool {
    pub fn len(&self) -> usize {
        self.sequences.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn length(&self) -> usize {
        self.sequences.ncols()
    }

    pub fn sequence(&self, idx: usize) -> Vec<Complex64> {
        self.sequences.row(idx).iter().copied().collect()
    }

    /// Cyclic correlation `sum_n a[n] conj(b[(n + lag) mod N])`.
    pub fn cyclic_correlation(&self, a: usize, b: usize, lag: usize) -> Complex64 {
        let n = self.length();
        (0..n)
            .map(|i| self.sequences[(a, i)] * self.sequences[(b, (i + lag) % n)].conj())
            .sum()
    }
}

/// Zadoff-Chu sequence `exp(-j pi r n (n + c) / N) / sqrt(N)` with
/// `c = N mod 2`.
pub fn zadoff_chu(root: usize, length: usize) -> Vec<Complex64> {
    let c = (length % 2) as f64;
    let scale = (length as f64).sqrt().recip();
    (0..length)
        .map(|n| {
            let n = n as f64;
            let phase = -PI * root as f64 * n * (n + c) / length as f64;
            Complex64::from_polar(scale, phase)
        })
        .collect()
}

/// Pool of `pool_size` ZC sequences with the smallest roots coprime to the
/// length.
pub fn build_zc_pool(length: usize, pool_size: usize) -> Result<PreamblePool> {
    if length < 1 || pool_size < 1 {
        return Err(Error::InvalidParameter(format!(
            "preamble length {length} and pool size {pool_size} must be >= 1"
        )));
    }
    let roots: Vec<usize> = if length == 1 {
        vec![1]
    } else {
        (1..length).filter(|r| gcd(*r, length) == 1).collect()
    };
    if pool_size > roots.len() {
        return Err(Error::PoolTooLarge {
            requested: pool_size,
            available: roots.len(),
            length,
        });
    }
    let roots = roots[..pool_size].to_vec();
    let mut sequences = DMatrix::zeros(pool_size, length);
    for (row, root) in roots.iter().enumerate() {
        for (n, v) in zadoff_chu(*root, length).into_iter().enumerate() {
            sequences[(row, n)] = v;
        }
    }
    let mut pool = PreamblePool {
        sequences,
        root_indices: roots,
        max_cross_correlation: 0.0,
    };
    let mut worst: f64 = 0.0;
    for a in 0..pool_size {
        for b in (a + 1)..pool_size {
            for lag in 0..length {
                worst = worst.max(pool.cyclic_correlation(a, b, lag).norm());
            }
        }
    }
    pool.max_cross_correlation = worst;
    Ok(pool)
}

/// One correlation peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub preamble: usize,
    /// Delay on the sample grid.
    pub offset: usize,
    /// Square root of the antenna-summed squared correlation.
    pub magnitude: f64,
}

#[derive(Debug, Clone)]
pub struct InitialDetection {
    pub detected: Vec<Detection>,
    pub initial: DelayEstimate,
}

/// Pulse-shaped preamble on the sample grid, indexed from `-half_width`.
pub fn shaped_template(preamble: &[Complex64], pulse: &PulseBank) -> Vec<Complex64> {
    let m = pulse.oversampling;
    let half = pulse.half_width();
    let len = (preamble.len() - 1) * m + 2 * half + 1;
    let mut t = vec![Complex64::new(0.0, 0.0); len];
    for (n, x) in preamble.iter().enumerate() {
        let center = n * m + half;
        for (d, z) in pulse.z_taps.iter().enumerate() {
            t[center + d - half] += x * z;
        }
    }
    t
}

/// Correlation magnitude of every preamble at every admissible grid delay.
///
/// Entry `[p][d]` is `sqrt(sum_r |sum_j conj(t_p[j]) y[d + j, r]|^2)`.
pub fn correlation_profile(
    obs: &WindowObservation,
    pool: &PreamblePool,
    pulse: &PulseBank,
    scenario: &SimScenario,
) -> Result<Vec<Vec<f64>>> {
    let n = scenario.samples();
    if obs.y.nrows() != n || obs.y.ncols() != scenario.num_antennas {
        return Err(Error::dims(
            "observation",
            format!("{}x{}", n, scenario.num_antennas),
            format!("{}x{}", obs.y.nrows(), obs.y.ncols()),
        ));
    }
    let half = pulse.half_width() as i64;
    let lags = scenario.max_offset() + 1;
    let mut profile = Vec::with_capacity(pool.len());
    for p in 0..pool.len() {
        let template: Vec<Complex64> = shaped_template(&pool.sequence(p), pulse)
            .into_iter()
            .map(|v| v.conj())
            .collect();
        let mut mags = vec![0.0; lags];
        for (d, mag) in mags.iter_mut().enumerate() {
            let start = d as i64 - half;
            let j0 = (-start).max(0) as usize;
            let j1 = ((n as i64 - start) as usize).min(template.len());
            let mut energy = 0.0;
            for r in 0..scenario.num_antennas {
                let col = obs.y.column(r);
                let mut acc = Complex64::new(0.0, 0.0);
                for j in j0..j1 {
                    acc += template[j] * col[(start + j as i64) as usize];
                }
                energy += acc.norm_sqr();
            }
            *mag = energy.sqrt();
        }
        profile.push(mags);
    }
    Ok(profile)
}

/// Strict local maxima of one profile above `threshold`, at least
/// `min_separation` samples apart (strongest kept first).
pub fn find_peaks(profile: &[f64], threshold: f64, min_separation: usize) -> Vec<(usize, f64)> {
    let n = profile.len();
    let mut peaks: Vec<(usize, f64)> = (0..n)
        .filter(|&d| {
            let v = profile[d];
            v > threshold
                && (d == 0 || v > profile[d - 1])
                && (d + 1 == n || v > profile[d + 1])
        })
        .map(|d| (d, profile[d]))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut kept: Vec<(usize, f64)> = Vec::new();
    for (d, v) in peaks {
        if kept.iter().all(|(e, _)| d.abs_diff(*e) >= min_separation) {
            kept.push((d, v));
        }
    }
    kept
}

/// Correlates the window against every shaped preamble and lists one
/// candidate user per peak above `peak_threshold`, capped at the scenario's
/// user count (weakest peaks dropped).
pub fn correlate_and_detect(
    obs: &WindowObservation,
    pool: &PreamblePool,
    pulse: &PulseBank,
    scenario: &SimScenario,
    peak_threshold: f64,
) -> Result<InitialDetection> {
    let profile = correlation_profile(obs, pool, pulse, scenario)?;
    let sep = scenario.oversampling.max(1);
    let mut detected: Vec<Detection> = Vec::new();
    for (p, prof) in profile.iter().enumerate() {
        for (offset, magnitude) in find_peaks(prof, peak_threshold, sep) {
            detected.push(Detection {
                preamble: p,
                offset,
                magnitude,
            });
        }
    }
    detected.sort_by(|a, b| {
        b.magnitude
            .total_cmp(&a.magnitude)
            .then(a.preamble.cmp(&b.preamble))
            .then(a.offset.cmp(&b.offset))
    });
    detected.truncate(scenario.num_users);
    let initial = DelayEstimate::new(
        detected.iter().map(|d| d.offset).collect(),
        detected.iter().map(|d| d.preamble).collect(),
    );
    Ok(InitialDetection { detected, initial })
}
