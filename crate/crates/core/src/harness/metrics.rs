//! Per-trial error metrics and their aggregation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::scenario::SimScenario;
use crate::signal::UserRealization;

/// What a receiver reports for one window, in a form both arms share.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverEstimate {
    /// Frame start of each candidate in samples.
    pub offsets: Vec<usize>,
    pub preambles: Vec<usize>,
    pub active: Vec<bool>,
    /// `K x N_R`.
    pub g_hat: DMatrix<Complex64>,
    /// `K x N_D` data-symbol estimates.
    pub data: DMatrix<Complex64>,
    pub em_iterations: usize,
}

impl ReceiverEstimate {
    pub fn empty(antennas: usize, data_len: usize) -> Self {
        ReceiverEstimate {
            offsets: Vec::new(),
            preambles: Vec::new(),
            active: Vec::new(),
            g_hat: DMatrix::zeros(0, antennas),
            data: DMatrix::zeros(0, data_len),
            em_iterations: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub nmse_g: f64,
    pub nmse_x: f64,
    pub p_md: f64,
    pub p_fa: f64,
    /// Root-mean-square delay error of the matched users, in samples.
    pub delay_rmse: f64,
    pub em_iterations: usize,
    pub wall_time: f64,
    pub active_users: usize,
    pub matched_users: usize,
    pub false_alarms: usize,
    /// Sum of squared delay errors over matched users.
    pub delay_sq_sum: f64,
}

/// Pairs of `(candidate, true user)` accepted as detections.
///
/// Every active candidate is a possible match for the active true users that
/// chose the same preamble and sit within `tolerance` samples; pairs are
/// taken greedily by increasing delay error.
pub fn match_detections(
    truth: &UserRealization,
    est: &ReceiverEstimate,
    oversampling: usize,
    tolerance: f64,
) -> Vec<(usize, usize, f64)> {
    let m = oversampling as f64;
    let mut pairs = Vec::new();
    for (c, (&off, &p)) in est.offsets.iter().zip(&est.preambles).enumerate() {
        if !est.active[c] {
            continue;
        }
        for u in 0..truth.alpha.len() {
            if truth.alpha[u] && truth.preamble_idx[u] == p {
                let err = off as f64 - m * truth.tau[u];
                if err.abs() <= tolerance {
                    pairs.push((c, u, err));
                }
            }
        }
    }
    pairs.sort_by(|a, b| a.2.abs().total_cmp(&b.2.abs()).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_c = vec![false; est.offsets.len()];
    let mut used_u = vec![false; truth.alpha.len()];
    let mut out = Vec::new();
    for (c, u, e) in pairs {
        if !used_c[c] && !used_u[u] {
            used_c[c] = true;
            used_u[u] = true;
            out.push((c, u, e));
        }
    }
    out
}

fn sq_dist<'a>(a: impl Iterator<Item = &'a Complex64>, b: impl Iterator<Item = &'a Complex64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y).norm_sqr()).sum()
}

/// Errors of one receiver output against the ground truth.
///
/// A user counts as detected only when flagged active with a delay error of
/// at most one symbol (`M` samples). Missed users contribute their full
/// energy to the NMSE numerators; NMSEs are zero when nobody is active.
pub fn compute_metrics(
    truth: &UserRealization,
    est: &ReceiverEstimate,
    scenario: &SimScenario,
) -> TrialMetrics {
    let m = scenario.oversampling;
    let pairs = match_detections(truth, est, m, m as f64);
    let active: Vec<usize> = (0..truth.alpha.len()).filter(|u| truth.alpha[*u]).collect();
    let mut matched = vec![None; truth.alpha.len()];
    for &(c, u, _) in &pairs {
        matched[u] = Some(c);
    }

    let (mut g_num, mut g_den, mut x_num, mut x_den) = (0.0, 0.0, 0.0, 0.0);
    for &u in &active {
        let g_true = truth.g.row(u);
        let x_true = truth.data.row(u);
        let ge: f64 = g_true.iter().map(|v| v.norm_sqr()).sum();
        let xe: f64 = x_true.iter().map(|v| v.norm_sqr()).sum();
        g_den += ge;
        x_den += xe;
        match matched[u] {
            Some(c) => {
                g_num += sq_dist(est.g_hat.row(c).iter(), g_true.iter());
                x_num += sq_dist(est.data.row(c).iter(), x_true.iter());
            }
            None => {
                g_num += ge;
                x_num += xe;
            }
        }
    }
    let ratio = |n: f64, d: f64| if d > 0.0 { n / d } else { 0.0 };
    let detected_flags = est.active.iter().filter(|a| **a).count();
    let false_alarms = detected_flags - pairs.len();
    let inactive = truth.alpha.len() - active.len();
    let delay_sq_sum: f64 = pairs.iter().map(|p| p.2 * p.2).sum();
    TrialMetrics {
        nmse_g: ratio(g_num, g_den),
        nmse_x: ratio(x_num, x_den),
        p_md: ratio((active.len() - pairs.len()) as f64, active.len() as f64),
        p_fa: if inactive > 0 {
            (false_alarms as f64 / inactive as f64).min(1.0)
        } else {
            0.0
        },
        delay_rmse: if pairs.is_empty() {
            0.0
        } else {
            (delay_sq_sum / pairs.len() as f64).sqrt()
        },
        em_iterations: est.em_iterations,
        wall_time: 0.0,
        active_users: active.len(),
        matched_users: pairs.len(),
        false_alarms,
        delay_sq_sum,
    }
}

/// Sample mean and normal-approximation 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci95: f64,
}

pub fn mean_ci(values: &[f64]) -> MeanCi {
    let n = values.len();
    if n == 0 {
        return MeanCi::default();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return MeanCi { mean, ci95: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanCi {
        mean,
        ci95: 1.96 * (var / n as f64).sqrt(),
    }
}

/// Cell-level summary of many trials.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CellSummary {
    pub nmse_g: MeanCi,
    pub nmse_x: MeanCi,
    pub p_md: MeanCi,
    pub p_fa: MeanCi,
    /// Pooled over all matched users of the cell.
    pub delay_rmse: f64,
    pub em_iterations: f64,
    pub wall_time: f64,
    pub trials: usize,
}

pub fn summarize(trials: &[TrialMetrics]) -> CellSummary {
    let pick = |f: fn(&TrialMetrics) -> f64| -> Vec<f64> { trials.iter().map(f).collect() };
    let matched: usize = trials.iter().map(|t| t.matched_users).sum();
    let sq: f64 = trials.iter().map(|t| t.delay_sq_sum).sum();
    let n = trials.len().max(1) as f64;
    CellSummary {
        nmse_g: mean_ci(&pick(|t| t.nmse_g)),
        nmse_x: mean_ci(&pick(|t| t.nmse_x)),
        p_md: mean_ci(&pick(|t| t.p_md)),
        p_fa: mean_ci(&pick(|t| t.p_fa)),
        delay_rmse: if matched > 0 { (sq / matched as f64).sqrt() } else { 0.0 },
        em_iterations: trials.iter().map(|t| t.em_iterations as f64).sum::<f64>() / n,
        wall_time: trials.iter().map(|t| t.wall_time).sum::<f64>() / n,
        trials: trials.len(),
    }
}
