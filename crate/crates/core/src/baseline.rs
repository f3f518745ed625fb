//! Reference receiver that estimates channels from preambles alone.
//!
//! Activity detection and channel estimation reuse the message-passing
//! machinery with a preamble-only frame prior. The observation is cut down
//! to the samples around the candidates' preambles, so data transmitted by
//! other users inside that span is left as unmodelled interference. The
//! delays are calibrated with the same greedy M-step, and the data symbols
//! are recovered afterwards by least squares given the channel estimates.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::em::{greedy_mstep, whiten, DelayEstimate, EmConfig, EmStep, ObjectiveInputs};
use crate::error::{Error, Result};
use crate::juced_mp::messages::{col, CMat, RMat};
use crate::juced_mp::{run_juced, CandidateFrames, FrameLayout, JucedConfig, PosteriorState, Priors};
use crate::preamble::{InitialDetection, PreamblePool};
use crate::pulse::PulseBank;
use crate::scenario::SimScenario;
use crate::signal::WindowObservation;

/// Least-squares data estimate for the detected users.
#[derive(Debug, Clone)]
pub struct LsDetection {
    /// `K x N_D`; rows of undetected candidates are zero.
    pub data: CMat,
    /// Set when the normal equations were singular and a minimum-norm
    /// solution was returned.
    pub rank_deficient: bool,
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub initial: InitialDetection,
    pub delays: DelayEstimate,
    pub g_hat: CMat,
    pub activity: Vec<bool>,
    pub posterior: PosteriorState,
    pub detection: LsDetection,
    pub trace: Vec<EmStep>,
}

/// Rows spanned by the candidates' preambles, widened by the pulse support.
pub fn preamble_rows(
    delays: &DelayEstimate,
    preamble_len: usize,
    oversampling: usize,
    half_width: usize,
    samples: usize,
) -> Vec<usize> {
    let mut keep = vec![false; samples];
    for &off in &delays.tau_hat {
        let lo = off.saturating_sub(half_width);
        let hi = (off + (preamble_len.saturating_sub(1)) * oversampling + half_width).min(samples - 1);
        keep[lo..=hi].iter_mut().for_each(|k| *k = true);
    }
    (0..samples).filter(|i| keep[*i]).collect()
}

fn select_rows<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>, rows: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Least-squares data symbols for the candidates flagged in `activity`.
///
/// The known preamble contribution is removed first; the remaining samples
/// are fitted jointly over all detected users' data symbols.
#[allow(clippy::too_many_arguments)]
pub fn ls_data_detect(
    y_white: &CMat,
    z_white: &RMat,
    g_hat: &CMat,
    delays: &DelayEstimate,
    activity: &[bool],
    pool: &PreamblePool,
    layout: &FrameLayout,
) -> Result<LsDetection> {
    let (n, antennas) = y_white.shape();
    let k = delays.len();
    if g_hat.nrows() != k || activity.len() != k {
        return Err(Error::dims("candidate count", k, g_hat.nrows()));
    }
    if g_hat.ncols() != antennas || z_white.nrows() != n {
        return Err(Error::dims("antennas", antennas, g_hat.ncols()));
    }
    let nd = layout.data_len;
    let mut data = CMat::zeros(k, nd);
    let act: Vec<usize> = (0..k).filter(|kk| activity[*kk]).collect();
    if act.is_empty() || nd == 0 {
        return Ok(LsDetection {
            data,
            rank_deficient: false,
        });
    }

    let mut resid = y_white.clone();
    for kk in 0..k {
        let seq = pool.sequence(delays.preambles[kk]);
        for (p, s) in seq.iter().enumerate() {
            let zc = col(z_white, layout.row(delays.tau_hat[kk], p));
            for r in 0..antennas {
                let a = s * g_hat[(kk, r)];
                for i in 0..n {
                    resid[(i, r)] -= a * zc[i];
                }
            }
        }
    }

    let rows_of = |kk: usize| -> Vec<usize> {
        (0..nd)
            .map(|d| layout.row(delays.tau_hat[kk], layout.preamble_len + d))
            .collect()
    };
    let unknowns: Vec<(usize, usize)> = act
        .iter()
        .flat_map(|&kk| rows_of(kk).into_iter().map(move |i| (kk, i)))
        .collect();
    let u = unknowns.len();

    // channel cross-products conj(g_k) . g_k'
    let gg = g_hat.conjugate() * g_hat.transpose();
    let mut gram = CMat::zeros(u, u);
    let mut rhs = DVector::<Complex64>::zeros(u);
    let zt_y = z_white.map(|v| Complex64::new(v, 0.0)).transpose() * &resid;
    let ztz = z_white.transpose() * z_white;
    for (a, &(ka, ia)) in unknowns.iter().enumerate() {
        for (b, &(kb, ib)) in unknowns.iter().enumerate().skip(a) {
            let v = gg[(ka, kb)] * ztz[(ia, ib)];
            gram[(a, b)] = v;
            gram[(b, a)] = v.conj();
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for r in 0..antennas {
            acc += zt_y[(ia, r)] * g_hat[(ka, r)].conj();
        }
        rhs[a] = acc;
    }

    let scale = (0..u).map(|i| gram[(i, i)].re).fold(0.0f64, f64::max);
    let (sol, rank_deficient) = match Cholesky::new(gram.clone()) {
        Some(ch) if well_conditioned(&ch, scale) => (ch.solve(&rhs), false),
        _ => pseudo_solve(gram, &rhs, scale),
    };
    for (a, &(kk, i)) in unknowns.iter().enumerate() {
        let d = (i - delays.tau_hat[kk]) / layout.oversampling - layout.preamble_len;
        data[(kk, d)] = sol[a];
    }
    Ok(LsDetection {
        data,
        rank_deficient,
    })
}

const RCOND: f64 = 1e-10;
const RIDGE: f64 = 1e-6;

fn well_conditioned(ch: &Cholesky<Complex64, nalgebra::Dyn>, scale: f64) -> bool {
    let l = ch.l_dirty();
    (0..l.nrows()).all(|i| l[(i, i)].re * l[(i, i)].re > RCOND * scale)
}

/// Ridge-loaded solve used when the normal equations are singular or badly
/// conditioned. The loading is tiny next to the largest diagonal entry, so
/// well-determined directions are left essentially untouched while the
/// near-null ones are pinned towards zero.
fn pseudo_solve(mut gram: CMat, rhs: &DVector<Complex64>, scale: f64) -> (DVector<Complex64>, bool) {
    let ridge = RIDGE * scale.max(f64::MIN_POSITIVE);
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    match Cholesky::new(gram) {
        Some(ch) => (ch.solve(rhs), true),
        None => (DVector::zeros(rhs.len()), true),
    }
}

/// One preamble-only E-step on the rows around the candidates' preambles.
pub fn preamble_estep(
    y_white: &CMat,
    z_white: &RMat,
    delays: &DelayEstimate,
    pool: &PreamblePool,
    scenario: &SimScenario,
    half_width: usize,
    juced_config: &JucedConfig,
) -> Result<PosteriorState> {
    let samples = z_white.ncols();
    let layout = FrameLayout {
        data_len: 0,
        ..FrameLayout::from_scenario(scenario)
    };
    let rows = preamble_rows(
        delays,
        scenario.preamble_len,
        scenario.oversampling,
        half_width,
        samples,
    );
    let y_sub = select_rows(y_white, &rows);
    let z_sub = select_rows(z_white, &rows);
    let frames = CandidateFrames::new(layout, delays, samples, pool.len())?;
    run_juced(&y_sub, &z_sub, &frames, pool, Priors::from_scenario(scenario), juced_config)
}

/// Full reference receiver for one window.
pub fn uad_dc_baseline(
    obs: &WindowObservation,
    pulse: &PulseBank,
    pool: &PreamblePool,
    scenario: &SimScenario,
    juced_config: &JucedConfig,
    em_config: &EmConfig,
) -> Result<BaselineOutcome> {
    em_config.validate()?;
    let initial = em_config.initial_detection(obs, pool, pulse, scenario)?;
    let (y_white, z_white) = whiten(obs, pulse, em_config.loading)?;
    let pre_layout = FrameLayout {
        data_len: 0,
        ..FrameLayout::from_scenario(scenario)
    };
    let priors = Priors::from_scenario(scenario);
    let inputs = ObjectiveInputs {
        y_white: &y_white,
        z_white: &z_white,
        noise_var: priors.noise_var,
        layout: &pre_layout,
    };

    let mut tau = initial.initial.clone();
    let mut trace = Vec::new();
    let mut post;
    let mut iter = 0;
    loop {
        iter += 1;
        post = preamble_estep(
            &y_white,
            &z_white,
            &tau,
            pool,
            scenario,
            pulse.half_width(),
            juced_config,
        )?;
        let next = greedy_mstep(&tau, &post, inputs, em_config, scenario.max_offset());
        let change = next.l1_distance(&tau);
        trace.push(EmStep {
            f_before: crate::em::estep_objective(&tau, &post, inputs),
            f_after: crate::em::estep_objective(&next, &post, inputs),
            delays_before: tau.tau_hat.clone(),
            delays_after: next.tau_hat.clone(),
            delay_change: change,
            inner_iterations: post.iterations,
            diverged: post.diverged,
        });
        tau = next;
        tau.active_mask = post.active.clone();
        if (change as f64) < em_config.eps2 || iter >= em_config.max_outer {
            break;
        }
    }

    let activity = post.active.clone();
    let detection = ls_data_detect(
        &y_white,
        &z_white,
        &post.g_hat,
        &tau,
        &activity,
        pool,
        &FrameLayout::from_scenario(scenario),
    )?;
    Ok(BaselineOutcome {
        initial,
        delays: tau,
        g_hat: post.g_hat.clone(),
        activity,
        posterior: post,
        detection,
        trace,
    })
}
