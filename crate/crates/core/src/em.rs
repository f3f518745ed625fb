//! Expectation-maximization over the delay grid.
//!
//! Each outer iteration runs the message-passing receiver under the current
//! delay hypothesis and then maximizes the expected complete-data
//! log-likelihood `f(tau)` over grid delays, one candidate at a time. The
//! posterior statistics of a candidate's frame move rigidly with its delay.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::juced_mp::messages::{col, CMat, RMat};
use crate::juced_mp::{
    run_juced, CandidateFrames, FrameLayout, JucedConfig, PosteriorState, Priors, Whitener,
    DEFAULT_LOADING,
};
use crate::preamble::{correlate_and_detect, InitialDetection, PreamblePool};
use crate::pulse::PulseBank;
use crate::scenario::SimScenario;
use crate::signal::WindowObservation;

/// Grid delays (sample offsets) of the candidate users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayEstimate {
    pub tau_hat: Vec<usize>,
    /// Preamble assumed for each candidate.
    pub preambles: Vec<usize>,
    pub active_mask: Vec<bool>,
}

impl DelayEstimate {
    pub fn new(tau_hat: Vec<usize>, preambles: Vec<usize>) -> Self {
        let n = tau_hat.len();
        assert_eq!(n, preambles.len(), "one preamble per delay");
        DelayEstimate {
            tau_hat,
            preambles,
            active_mask: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.tau_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_hat.is_empty()
    }

    /// `sum_k |a_k - b_k|` in samples.
    pub fn l1_distance(&self, other: &DelayEstimate) -> usize {
        self.tau_hat
            .iter()
            .zip(&other.tau_hat)
            .map(|(a, b)| a.abs_diff(*b))
            .sum()
    }
}

/// How a candidate's data symbols follow a trial delay in the M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MStepMode {
    /// The posterior frame moves rigidly with the delay.
    #[default]
    Rigid,
    /// The data symbols are re-fitted in closed form at every trial delay,
    /// which lets the search leave the alignment the E-step was run under.
    Profiled,
}

/// Outer-loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_outer: usize,
    /// Stop once `sum_k |tau_new - tau_old|` (samples) drops below this.
    pub eps2: f64,
    /// Half-width of the per-candidate search in samples; `None` means two
    /// symbols.
    pub search_radius: Option<usize>,
    pub sweep_passes: usize,
    /// Candidates whose activity posterior is below this are not searched.
    pub freeze_below: f64,
    /// Correlation threshold for the initial detection.
    pub peak_threshold: f64,
    /// Diagonal loading of the whitening factor.
    pub loading: f64,
    pub mstep: MStepMode,
    /// Largest number of correlation peaks kept as candidates; `None` keeps
    /// up to the number of potential users.
    pub max_candidates: Option<usize>,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_outer: 5,
            eps2: 0.5,
            search_radius: None,
            sweep_passes: 2,
            freeze_below: 1e-3,
            peak_threshold: 0.0,
            loading: DEFAULT_LOADING,
            mstep: MStepMode::Rigid,
            max_candidates: None,
        }
    }
}

impl EmConfig {
    pub fn radius(&self, oversampling: usize) -> usize {
        self.search_radius.unwrap_or(2 * oversampling)
    }

    /// Correlation-based candidate list, truncated to `max_candidates`.
    pub fn initial_detection(
        &self,
        obs: &WindowObservation,
        pool: &PreamblePool,
        pulse: &PulseBank,
        scenario: &SimScenario,
    ) -> Result<InitialDetection> {
        let mut init = correlate_and_detect(obs, pool, pulse, scenario, self.peak_threshold)?;
        if let Some(cap) = self.max_candidates {
            if init.detected.len() > cap {
                init.detected.truncate(cap);
                init.initial = DelayEstimate::new(
                    init.detected.iter().map(|d| d.offset).collect(),
                    init.detected.iter().map(|d| d.preamble).collect(),
                );
            }
        }
        Ok(init)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_outer < 1 {
            return Err(Error::InvalidParameter("max_outer must be >= 1".into()));
        }
        if self.search_radius == Some(0) {
            return Err(Error::InvalidParameter("search_radius must be >= 1".into()));
        }
        if self.eps2.is_nan() {
            return Err(Error::InvalidParameter("eps2 is NaN".into()));
        }
        Ok(())
    }
}

/// Shared inputs of the objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    pub y_white: &'a CMat,
    pub z_white: &'a RMat,
    pub noise_var: f64,
    pub layout: &'a FrameLayout,
}

/// Per-candidate frame statistics pulled out of a posterior.
#[derive(Debug, Clone)]
struct FrameStats {
    means: Vec<Vec<Complex64>>,
    vars: Vec<Vec<f64>>,
    /// `sum_r |g|^2`, `sum_r v_g` per candidate.
    g_pow: Vec<f64>,
    g_var: Vec<f64>,
    prior_penalty: f64,
}

impl FrameStats {
    fn new(post: &PosteriorState, layout: &FrameLayout) -> Self {
        let k = post.num_candidates();
        let mut means = Vec::with_capacity(k);
        let mut vars = Vec::with_capacity(k);
        let mut penalty = 0.0;
        for kk in 0..k {
            let (m, v) = post.frame_symbols(kk, layout);
            penalty += m.iter().map(|x| x.norm_sqr()).sum::<f64>() + v.iter().sum::<f64>();
            means.push(m);
            vars.push(v);
        }
        FrameStats {
            means,
            vars,
            g_pow: post.channel_power(),
            g_var: post.v_g.row_iter().map(|r| r.sum()).collect(),
            prior_penalty: penalty,
        }
    }
}

fn column_energy(z: &RMat) -> Vec<f64> {
    (0..z.ncols()).map(|j| col(z, j).iter().map(|v| v * v).sum()).collect()
}

/// `Z x_k(offset)` and `sum_i v_x,i ||z_i||^2` for one shifted frame.
fn shifted_column(
    z: &RMat,
    z_energy: &[f64],
    means: &[Complex64],
    vars: &[f64],
    offset: usize,
    layout: &FrameLayout,
    out: &mut [Complex64],
) -> f64 {
    out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
    let mut d = 0.0;
    for (n, (x, v)) in means.iter().zip(vars).enumerate() {
        let i = layout.row(offset, n);
        d += v * z_energy[i];
        if *x != Complex64::new(0.0, 0.0) {
            for (o, zz) in out.iter_mut().zip(col(z, i)) {
                *o += x * zz;
            }
        }
    }
    d
}

/// Expected complete-data log-likelihood of a delay hypothesis, up to terms
/// that do not depend on the delays:
///
/// ```text
/// f = (1/s) sum_r [ 2 Re{y_r^H C g_r} - tr((C^H C + D)(g_r g_r^H + V_g,r)) ]
///     - sum_k (||x_k||^2 + tr V_x,k)
/// ```
///
/// with `C = Z X(tau)` and `D = diag_k(sum_i v_x,ik ||z_i||^2)`.
pub fn estep_objective(
    tau: &DelayEstimate,
    post: &PosteriorState,
    inputs: ObjectiveInputs<'_>,
) -> f64 {
    let stats = FrameStats::new(post, inputs.layout);
    let z_energy = column_energy(inputs.z_white);
    objective_with(tau, post, inputs, &stats, &z_energy)
}

fn objective_with(
    tau: &DelayEstimate,
    post: &PosteriorState,
    inputs: ObjectiveInputs<'_>,
    stats: &FrameStats,
    z_energy: &[f64],
) -> f64 {
    let (n, antennas) = inputs.y_white.shape();
    let k = post.num_candidates();
    let mut c = CMat::zeros(n, k);
    let mut quad = 0.0;
    for kk in 0..k {
        let d = shifted_column(
            inputs.z_white,
            z_energy,
            &stats.means[kk],
            &stats.vars[kk],
            tau.tau_hat[kk],
            inputs.layout,
            c.column_mut(kk).as_mut_slice(),
        );
        let cn: f64 = col(&c, kk).iter().map(|v| v.norm_sqr()).sum();
        quad += cn * stats.g_var[kk] + d * (stats.g_pow[kk] + stats.g_var[kk]);
    }
    let p = &c * &post.g_hat;
    let mut lin = 0.0;
    for r in 0..antennas {
        for i in 0..n {
            let pv = p[(i, r)];
            lin += 2.0 * (inputs.y_white[(i, r)].conj() * pv).re - pv.norm_sqr();
        }
    }
    (lin - quad) / inputs.noise_var - stats.prior_penalty
}

/// Candidate `k` may take `offset` unless another candidate with the same
/// preamble already sits closer than one symbol.
fn admissible(tau: &DelayEstimate, k: usize, offset: usize, min_sep: usize) -> bool {
    tau.tau_hat.iter().enumerate().all(|(j, &o)| {
        j == k || tau.preambles[j] != tau.preambles[k] || o.abs_diff(offset) >= min_sep
    })
}

/// Greedy coordinate ascent of [`estep_objective`] over grid delays.
///
/// Candidates are visited by descending channel power; each one moves to the
/// best offset within the search radius while the others stay fixed. Ties go
/// to the smaller delay. A pass that moves nobody ends the search.
pub fn greedy_mstep(
    tau: &DelayEstimate,
    post: &PosteriorState,
    inputs: ObjectiveInputs<'_>,
    config: &EmConfig,
    max_offset: usize,
) -> DelayEstimate {
    let mut out = tau.clone();
    let k = post.num_candidates();
    if k == 0 {
        return out;
    }
    let layout = inputs.layout;
    let m = layout.oversampling;
    let radius = config.radius(m);
    let stats = FrameStats::new(post, layout);
    let z_energy = column_energy(inputs.z_white);
    let (n, antennas) = inputs.y_white.shape();

    let mut c = CMat::zeros(n, k);
    let mut d = vec![0.0; k];
    for kk in 0..k {
        d[kk] = shifted_column(
            inputs.z_white,
            &z_energy,
            &stats.means[kk],
            &stats.vars[kk],
            out.tau_hat[kk],
            layout,
            c.column_mut(kk).as_mut_slice(),
        );
    }
    // running reconstruction C G
    let mut p = &c * &post.g_hat;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| stats.g_pow[*b].total_cmp(&stats.g_pow[*a]).then(a.cmp(b)));

    let mut cand = vec![Complex64::new(0.0, 0.0); n];
    let mut best_col = vec![Complex64::new(0.0, 0.0); n];
    for _ in 0..config.sweep_passes.max(1) {
        let mut moved = false;
        for &kk in &order {
            if post.activity_posterior.get(kk).copied().unwrap_or(1.0) < config.freeze_below {
                continue;
            }
            let g = post.g_hat.row(kk);
            // w = (Y - P + c_k g_k^T) conj(g_k)
            let mut w = vec![Complex64::new(0.0, 0.0); n];
            let ck = col(&c, kk).to_vec();
            for r in 0..antennas {
                let gc = g[r].conj();
                let gr = g[r];
                for i in 0..n {
                    let e = inputs.y_white[(i, r)] - p[(i, r)] + ck[i] * gr;
                    w[i] += e * gc;
                }
            }
            let gq = stats.g_pow[kk] + stats.g_var[kk];
            let score = |colv: &[Complex64], dv: f64| -> f64 {
                let mut lin = 0.0;
                let mut en = 0.0;
                for (cv, wv) in colv.iter().zip(&w) {
                    lin += (cv * wv.conj()).re;
                    en += cv.norm_sqr();
                }
                2.0 * lin - en * gq - dv * gq
            };
            let cur = out.tau_hat[kk];
            let cur_score = score(&ck, d[kk]);
            let lo = cur.saturating_sub(radius);
            let hi = (cur + radius).min(max_offset);
            let (mut best, mut best_score, mut best_d) = (cur, cur_score, d[kk]);
            best_col.copy_from_slice(&ck);
            for off in lo..=hi {
                if off == cur || !admissible(&out, kk, off, m) {
                    continue;
                }
                let dv = shifted_column(
                    inputs.z_white,
                    &z_energy,
                    &stats.means[kk],
                    &stats.vars[kk],
                    off,
                    layout,
                    &mut cand,
                );
                let s = score(&cand, dv);
                let tol = 1e-12 * (s.abs().max(best_score.abs()).max(1.0));
                let better = s > best_score + tol || ((s - best_score).abs() <= tol && off < best && s >= best_score);
                if better {
                    best = off;
                    best_score = s;
                    best_d = dv;
                    best_col.copy_from_slice(&cand);
                }
            }
            if best != cur {
                moved = true;
                out.tau_hat[kk] = best;
                d[kk] = best_d;
                for r in 0..antennas {
                    let gr = g[r];
                    for i in 0..n {
                        p[(i, r)] += (best_col[i] - ck[i]) * gr;
                    }
                }
                c.column_mut(kk).copy_from_slice(&best_col);
            }
        }
        if !moved {
            break;
        }
    }
    out
}

/// Greedy coordinate ascent over `(delay, data symbols)` per candidate.
///
/// For every trial offset the candidate's data symbols take the value that
/// maximizes the objective with the other candidates fixed (a ridge fit,
/// variances zero). The current rigid posterior is a feasible point of that
/// search, so the objective never decreases. Returns the new delays and the
/// posterior with the re-fitted frames placed at them.
pub fn profiled_mstep(
    tau: &DelayEstimate,
    post: &PosteriorState,
    inputs: ObjectiveInputs<'_>,
    config: &EmConfig,
    max_offset: usize,
) -> (DelayEstimate, PosteriorState) {
    let mut out = tau.clone();
    let mut next = post.clone();
    let k = post.num_candidates();
    if k == 0 {
        return (out, next);
    }
    let layout = inputs.layout;
    let m = layout.oversampling;
    let np = layout.preamble_len;
    let nd = layout.data_len;
    let radius = config.radius(m);
    let s2 = inputs.noise_var;
    let stats = FrameStats::new(post, layout);
    let z_energy = column_energy(inputs.z_white);
    let zt = inputs.z_white.transpose();
    let gram = &zt * inputs.z_white;
    let (n, antennas) = inputs.y_white.shape();

    let mut c = CMat::zeros(n, k);
    let mut d = vec![0.0; k];
    for kk in 0..k {
        d[kk] = shifted_column(
            inputs.z_white,
            &z_energy,
            &stats.means[kk],
            &stats.vars[kk],
            out.tau_hat[kk],
            layout,
            c.column_mut(kk).as_mut_slice(),
        );
    }
    let mut p = &c * &post.g_hat;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| stats.g_pow[*b].total_cmp(&stats.g_pow[*a]).then(a.cmp(b)));

    let mut frame = vec![Complex64::new(0.0, 0.0); np + nd];
    let mut col_buf = vec![Complex64::new(0.0, 0.0); n];
    for _ in 0..config.sweep_passes.max(1) {
        let mut moved = false;
        for &kk in &order {
            if post.activity_posterior.get(kk).copied().unwrap_or(1.0) < config.freeze_below {
                continue;
            }
            let g = post.g_hat.row(kk);
            let mut w = vec![Complex64::new(0.0, 0.0); n];
            let ck = col(&c, kk).to_vec();
            for r in 0..antennas {
                let gc = g[r].conj();
                let gr = g[r];
                for i in 0..n {
                    w[i] += (inputs.y_white[(i, r)] - p[(i, r)] + ck[i] * gr) * gc;
                }
            }
            // u = Z^T w over the sample grid
            let u: Vec<Complex64> = (0..zt.nrows())
                .map(|j| col(inputs.z_white, j).iter().zip(&w).map(|(z, v)| v * z).sum())
                .collect();
            let gq = stats.g_pow[kk] + stats.g_var[kk];
            let pre = &stats.means[kk][..np];

            let cur = out.tau_hat[kk];
            let mut best_score = {
                let mut lin = 0.0;
                let mut en = 0.0;
                for (cv, wv) in ck.iter().zip(&w) {
                    lin += (cv * wv.conj()).re;
                    en += cv.norm_sqr();
                }
                let own: f64 = stats.means[kk].iter().map(|x| x.norm_sqr()).sum::<f64>()
                    + stats.vars[kk].iter().sum::<f64>();
                (2.0 * lin - en * gq - d[kk] * gq) / s2 - own
            };
            let mut best: Option<(usize, Vec<Complex64>)> = None;
            let lo = cur.saturating_sub(radius);
            let hi = (cur + radius).min(max_offset);
            for off in lo..=hi {
                if !admissible(&out, kk, off, m) {
                    continue;
                }
                let (score, data) = profile_at(&gram, &u, pre, gq, s2, layout, off);
                let tol = 1e-12 * (score.abs().max(best_score.abs()).max(1.0));
                let smaller = best.as_ref().map_or(off < cur, |(b, _)| off < *b);
                if score > best_score + tol || ((score - best_score).abs() <= tol && smaller) {
                    best_score = score;
                    best = Some((off, data));
                }
            }
            let Some((off, data)) = best else { continue };
            moved |= off != cur;
            frame[..np].copy_from_slice(pre);
            frame[np..].copy_from_slice(&data);
            let zeros = vec![0.0; np + nd];
            shifted_column(inputs.z_white, &z_energy, &frame, &zeros, off, layout, &mut col_buf);
            for r in 0..antennas {
                let gr = g[r];
                for i in 0..n {
                    p[(i, r)] += (col_buf[i] - ck[i]) * gr;
                }
            }
            c.column_mut(kk).copy_from_slice(&col_buf);
            d[kk] = 0.0;
            place_frame(&mut next, kk, cur, off, &frame, layout);
            out.tau_hat[kk] = off;
        }
        if !moved {
            break;
        }
    }
    (out, next)
}

/// Best objective contribution of one candidate at `offset` with its data
/// symbols maximized out, and the maximizer.
fn profile_at(
    gram: &RMat,
    u: &[Complex64],
    pre: &[Complex64],
    gq: f64,
    noise_var: f64,
    layout: &FrameLayout,
    offset: usize,
) -> (f64, Vec<Complex64>) {
    let np = layout.preamble_len;
    let nd = layout.data_len;
    let prow: Vec<usize> = (0..np).map(|i| layout.row(offset, i)).collect();
    let drow: Vec<usize> = (0..nd).map(|i| layout.row(offset, np + i)).collect();

    let mut lin = 0.0;
    let mut quad = 0.0;
    for (a, &ia) in prow.iter().enumerate() {
        lin += (pre[a].conj() * u[ia]).re;
        for (b, &ib) in prow.iter().enumerate() {
            quad += (pre[a].conj() * pre[b]).re * gram[(ia, ib)];
        }
    }
    let pre_energy: f64 = pre.iter().map(|x| x.norm_sqr()).sum();
    let base = (2.0 * lin - gq * quad) / noise_var - pre_energy;
    if nd == 0 {
        return (base, Vec::new());
    }

    let prec = DMatrix::from_fn(nd, nd, |a, b| {
        gq * gram[(drow[a], drow[b])] / noise_var + if a == b { 1.0 } else { 0.0 }
    });
    let rhs: Vec<Complex64> = drow
        .iter()
        .map(|&ia| {
            let cross: Complex64 = prow.iter().zip(pre).map(|(&ib, x)| x * gram[(ia, ib)]).sum();
            (u[ia] - cross * gq) / noise_var
        })
        .collect();
    // the precision is the identity plus a PSD term, so this cannot fail
    let chol = Cholesky::new(prec).expect("ridge precision is positive definite");
    let re = chol.solve(&DVector::from_iterator(nd, rhs.iter().map(|v| v.re)));
    let im = chol.solve(&DVector::from_iterator(nd, rhs.iter().map(|v| v.im)));
    let data: Vec<Complex64> = (0..nd).map(|i| Complex64::new(re[i], im[i])).collect();
    let gain: f64 = rhs.iter().zip(&data).map(|(b, x)| (b.conj() * x).re).sum();
    (base + gain, data)
}

fn place_frame(
    post: &mut PosteriorState,
    kk: usize,
    old: usize,
    new: usize,
    frame: &[Complex64],
    layout: &FrameLayout,
) {
    for n in 0..frame.len() {
        let i = layout.row(old, n);
        post.x_hat[(i, kk)] = Complex64::new(0.0, 0.0);
        post.v_x[(i, kk)] = 0.0;
    }
    for (n, x) in frame.iter().enumerate() {
        post.x_hat[(layout.row(new, n), kk)] = *x;
    }
    post.offsets[kk] = new;
}

/// One outer iteration as recorded in the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EmStep {
    /// Objective at the hypothesis the posterior was computed under.
    pub f_before: f64,
    /// Objective at the M-step output against the same posterior.
    pub f_after: f64,
    pub delays_before: Vec<usize>,
    pub delays_after: Vec<usize>,
    /// `sum_k |tau_new - tau_old|` in samples.
    pub delay_change: usize,
    pub inner_iterations: usize,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub initial: InitialDetection,
    pub delays: DelayEstimate,
    pub posterior: PosteriorState,
    pub trace: Vec<EmStep>,
}

/// Whitened observation and operator for one window.
pub fn whiten(
    obs: &WindowObservation,
    pulse: &PulseBank,
    loading: f64,
) -> Result<(CMat, RMat)> {
    let w = Whitener::new(pulse, loading)?;
    let y = w.apply(&obs.y)?;
    Ok((y, w.z_white))
}

/// EM over an already whitened window starting from `initial` delays.
#[allow(clippy::too_many_arguments)]
pub fn run_em_whitened(
    y_white: &CMat,
    z_white: &RMat,
    initial: DelayEstimate,
    pool: &PreamblePool,
    layout: &FrameLayout,
    priors: Priors,
    juced_config: &JucedConfig,
    em_config: &EmConfig,
    max_offset: usize,
) -> Result<(DelayEstimate, PosteriorState, Vec<EmStep>)> {
    em_config.validate()?;
    let mut tau = initial;
    let mut trace = Vec::new();
    let inputs = ObjectiveInputs {
        y_white,
        z_white,
        noise_var: priors.noise_var,
        layout,
    };
    let mut post;
    let mut iter = 0;
    loop {
        iter += 1;
        let frames = CandidateFrames::new(layout.clone(), &tau, z_white.ncols(), pool.len())?;
        post = run_juced(y_white, z_white, &frames, pool, priors, juced_config)?;
        let f_before = estep_objective(&tau, &post, inputs);
        let (next, f_after) = match em_config.mstep {
            MStepMode::Rigid => {
                let next = greedy_mstep(&tau, &post, inputs, em_config, max_offset);
                let f = estep_objective(&next, &post, inputs);
                (next, f)
            }
            MStepMode::Profiled => {
                let (next, refit) = profiled_mstep(&tau, &post, inputs, em_config, max_offset);
                let f = estep_objective(&next, &refit, inputs);
                (next, f)
            }
        };
        let change = next.l1_distance(&tau);
        let step = EmStep {
            f_before,
            f_after,
            delays_before: tau.tau_hat.clone(),
            delays_after: next.tau_hat.clone(),
            delay_change: change,
            inner_iterations: post.iterations,
            diverged: post.diverged,
        };
        log::trace!("em iteration {iter}: {step:?}");
        trace.push(step);
        tau = next;
        tau.active_mask = post.active.clone();
        if (change as f64) < em_config.eps2 || iter >= em_config.max_outer {
            break;
        }
    }
    if post.offsets != tau.tau_hat {
        // the last M-step moved someone: refresh the posterior so the
        // returned estimates sit at the returned delays
        let frames = CandidateFrames::new(layout.clone(), &tau, z_white.ncols(), pool.len())?;
        post = run_juced(y_white, z_white, &frames, pool, priors, juced_config)?;
        tau.active_mask = post.active.clone();
    }
    Ok((tau, post, trace))
}

/// Full receiver: correlation-based initialization, whitening and the EM
/// loop.
pub fn run_em(
    obs: &WindowObservation,
    pulse: &PulseBank,
    pool: &PreamblePool,
    scenario: &SimScenario,
    juced_config: &JucedConfig,
    em_config: &EmConfig,
) -> Result<EmOutcome> {
    let initial = em_config.initial_detection(obs, pool, pulse, scenario)?;
    let (y_white, z_white) = whiten(obs, pulse, em_config.loading)?;
    let layout = FrameLayout::from_scenario(scenario);
    let (delays, posterior, trace) = run_em_whitened(
        &y_white,
        &z_white,
        initial.initial.clone(),
        pool,
        &layout,
        Priors::from_scenario(scenario),
        juced_config,
        em_config,
        scenario.max_offset(),
    )?;
    Ok(EmOutcome {
        initial,
        delays,
        posterior,
        trace,
    })
}
