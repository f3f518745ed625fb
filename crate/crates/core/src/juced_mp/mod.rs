//! Joint activity detection, channel estimation and data detection for a
//! fixed delay hypothesis.
//!
//! The receiver factorizes the whitened observation as `Y = (Z X) G + W`
//! and runs a bilinear approximate message passing loop over the two
//! factors. Each candidate user contributes one column of `X`: known preamble
//! symbols, unit-variance Gaussian data symbols, zeros everywhere else.

pub mod messages;
pub mod whiten;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::em::DelayEstimate;
use crate::error::{Error, Result};
use crate::preamble::PreamblePool;
use crate::scenario::SimScenario;
use crate::signal::complex_gaussian;
use messages::{CMat, RMat};

pub use whiten::{prewhiten, Whitener, DEFAULT_LOADING};

/// Inner-loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct JucedConfig {
    pub max_iters: usize,
    /// Stop once the summed absolute change of the channel variances drops
    /// below this value.
    pub eps1: f64,
    /// Also required before stopping: the relative squared change of the
    /// channel and symbol means must fall below this value.
    pub mean_tol: f64,
    /// Weight of the fresh update, `1` means undamped.
    pub damping: f64,
    pub variance_floor: f64,
    /// Activity threshold on the row power of the channel estimate.
    pub eta_th: f64,
    /// Any variance above this marks the run as diverged.
    pub explosion_bound: f64,
    /// Halve the damping weight whenever the residual grows and let it
    /// recover slowly towards `damping` otherwise.
    pub adaptive_damping: bool,
    /// Seed of the small random channel initialization.
    pub init_seed: u64,
    /// Re-estimate the noise variance from the output posterior every
    /// iteration, never going below the nominal value. Model mismatch then
    /// shows up as extra noise instead of being fitted.
    pub learn_noise: bool,
}

impl Default for JucedConfig {
    fn default() -> Self {
        JucedConfig {
            max_iters: 50,
            eps1: 1e-4,
            mean_tol: 1e-6,
            damping: 0.7,
            variance_floor: 1e-12,
            eta_th: 0.0,
            explosion_bound: 1e10,
            adaptive_damping: false,
            init_seed: 0x5eed,
            learn_noise: false,
        }
    }
}

impl JucedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.eps1 > 0.0) {
            return Err(Error::InvalidParameter(format!("eps1 {} must be > 0", self.eps1)));
        }
        if !(self.mean_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("mean_tol {} must be >= 0", self.mean_tol)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "damping {} not in (0, 1]",
                self.damping
            )));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::InvalidParameter("variance_floor must be > 0".into()));
        }
        Ok(())
    }
}

/// Model constants the denoisers need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priors {
    pub activity_prob: f64,
    pub channel_var: f64,
    pub noise_var: f64,
}

impl Priors {
    pub fn from_scenario(s: &SimScenario) -> Self {
        Priors {
            activity_prob: s.activity_prob,
            channel_var: s.channel_var,
            noise_var: s.noise_var,
        }
    }
}

/// Where each candidate's symbols sit inside the columns of `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLayout {
    pub preamble_len: usize,
    /// Data symbols modelled by the prior; `0` drops the data region.
    pub data_len: usize,
    pub oversampling: usize,
}

impl FrameLayout {
    pub fn from_scenario(s: &SimScenario) -> Self {
        FrameLayout {
            preamble_len: s.preamble_len,
            data_len: s.data_len,
            oversampling: s.oversampling,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.preamble_len + self.data_len
    }

    /// Sample index of symbol `n` for a frame starting at `offset`.
    #[inline]
    pub fn row(&self, offset: usize, n: usize) -> usize {
        offset + n * self.oversampling
    }
}

/// Supports of all candidate frames under one delay hypothesis.
#[derive(Debug, Clone)]
pub struct CandidateFrames {
    pub layout: FrameLayout,
    pub offsets: Vec<usize>,
    pub preambles: Vec<usize>,
    /// Every frame row per candidate (preamble then data).
    pub support: Vec<Vec<usize>>,
    /// Data rows per candidate.
    pub data_rows: Vec<Vec<usize>>,
}

impl CandidateFrames {
    pub fn new(
        layout: FrameLayout,
        delays: &DelayEstimate,
        samples: usize,
        pool_size: usize,
    ) -> Result<Self> {
        let mut support = Vec::with_capacity(delays.len());
        let mut data_rows = Vec::with_capacity(delays.len());
        for (k, (&off, &p)) in delays.tau_hat.iter().zip(&delays.preambles).enumerate() {
            if p >= pool_size {
                return Err(Error::InvalidParameter(format!(
                    "candidate {k} uses preamble {p} outside a pool of {pool_size}"
                )));
            }
            let rows: Vec<usize> = (0..layout.frame_len()).map(|n| layout.row(off, n)).collect();
            if let Some(&last) = rows.last() {
                if last >= samples {
                    return Err(Error::OutOfWindow {
                        index: last as i64,
                        samples,
                    });
                }
            }
            data_rows.push(rows[layout.preamble_len..].to_vec());
            support.push(rows);
        }
        Ok(CandidateFrames {
            layout,
            offsets: delays.tau_hat.clone(),
            preambles: delays.preambles.clone(),
            support,
            data_rows,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Prior mean and variance of `X`.
    pub fn prior(&self, pool: &PreamblePool, samples: usize) -> (CMat, RMat) {
        let k = self.len();
        let mut x = CMat::zeros(samples, k);
        let mut v = RMat::zeros(samples, k);
        for kk in 0..k {
            let seq = pool.sequence(self.preambles[kk]);
            for (n, s) in seq.iter().enumerate() {
                x[(self.support[kk][n], kk)] = *s;
            }
            for &i in &self.data_rows[kk] {
                v[(i, kk)] = 1.0;
            }
        }
        (x, v)
    }
}

/// Posterior means, variances and message caches after a run.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    pub x_hat: CMat,
    pub v_x: RMat,
    pub g_hat: CMat,
    pub v_g: RMat,
    pub b_hat: CMat,
    pub v_b: RMat,
    pub a_hat: CMat,
    pub v_a: RMat,
    pub p_hat: CMat,
    pub v_p: RMat,
    pub beta_hat: CMat,
    pub v_beta: RMat,
    pub q_hat: CMat,
    pub v_q: RMat,
    pub r_hat: CMat,
    pub v_r: RMat,
    pub o_hat: CMat,
    pub v_o: RMat,
    pub gamma_hat: CMat,
    pub v_gamma: RMat,
    pub m_hat: CMat,
    pub v_m: RMat,
    pub activity_posterior: Vec<f64>,
    /// Thresholded row power of `g_hat`.
    pub active: Vec<bool>,
    /// Frame start (samples) of each candidate under the hypothesis used.
    pub offsets: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    /// `||Y - B G||_F` after each iteration.
    pub residuals: Vec<f64>,
}

impl PosteriorState {
    pub fn num_candidates(&self) -> usize {
        self.g_hat.nrows()
    }

    /// `sum_r |g_kr|^2` per candidate.
    pub fn channel_power(&self) -> Vec<f64> {
        self.g_hat
            .row_iter()
            .map(|r| r.iter().map(|g| g.norm_sqr()).sum())
            .collect()
    }

    /// Frame-indexed symbol means and variances of candidate `k`.
    pub fn frame_symbols(&self, k: usize, layout: &FrameLayout) -> (Vec<Complex64>, Vec<f64>) {
        let off = self.offsets[k];
        (0..layout.frame_len())
            .map(|n| {
                let i = layout.row(off, n);
                (self.x_hat[(i, k)], self.v_x[(i, k)])
            })
            .unzip()
    }

    /// Data-symbol means of candidate `k`.
    pub fn data_symbols(&self, k: usize, layout: &FrameLayout) -> Vec<Complex64> {
        let (x, _) = self.frame_symbols(k, layout);
        x[layout.preamble_len..].to_vec()
    }

    /// Empty state for zero candidates.
    pub fn empty(rows: usize, samples: usize, antennas: usize) -> Self {
        let c = |r, c| CMat::zeros(r, c);
        let v = |r, c| RMat::zeros(r, c);
        PosteriorState {
            x_hat: c(samples, 0),
            v_x: v(samples, 0),
            g_hat: c(0, antennas),
            v_g: v(0, antennas),
            b_hat: c(rows, 0),
            v_b: v(rows, 0),
            a_hat: c(rows, antennas),
            v_a: v(rows, antennas),
            p_hat: c(rows, antennas),
            v_p: v(rows, antennas),
            beta_hat: c(rows, antennas),
            v_beta: v(rows, antennas),
            q_hat: c(0, antennas),
            v_q: v(0, antennas),
            r_hat: c(rows, 0),
            v_r: v(rows, 0),
            o_hat: c(rows, 0),
            v_o: v(rows, 0),
            gamma_hat: c(rows, 0),
            v_gamma: v(rows, 0),
            m_hat: c(samples, 0),
            v_m: v(samples, 0),
            activity_posterior: Vec::new(),
            active: Vec::new(),
            offsets: Vec::new(),
            iterations: 0,
            converged: true,
            diverged: false,
            residuals: Vec::new(),
        }
    }
}

/// Element-wise square of a real matrix.
pub fn squared(z: &RMat) -> RMat {
    z.map(|v| v * v)
}

/// Symbol posterior for every entry of `X` given its message.
///
/// Rows outside the support are zero with zero variance, preamble rows are
/// the known symbols with zero variance, data rows get Gaussian shrinkage.
pub fn symbol_denoiser(
    m_hat: &CMat,
    v_m: &RMat,
    frames: &CandidateFrames,
    pool: &PreamblePool,
) -> (CMat, RMat) {
    let samples = m_hat.nrows();
    let (mut x, mut v) = frames.prior(pool, samples);
    for kk in 0..frames.len() {
        for &i in &frames.data_rows[kk] {
            let (xm, xv) = messages::gaussian_symbol_posterior(m_hat[(i, kk)], v_m[(i, kk)]);
            x[(i, kk)] = xm;
            v[(i, kk)] = xv;
        }
    }
    (x, v)
}

fn damp_c(old: &CMat, new: &CMat, w: f64) -> CMat {
    old.zip_map(new, |o, n| n * w + o * (1.0 - w))
}

fn damp_r(old: &RMat, new: &RMat, w: f64) -> RMat {
    old.zip_map(new, |o, n| n * w + o * (1.0 - w))
}

fn max_entry(m: &RMat) -> f64 {
    m.iter().fold(0.0f64, |a, v| if v.is_nan() { f64::INFINITY } else { a.max(*v) })
}

const MIN_DAMPING: f64 = 0.05;
const NOISE_FLOOR_REL: f64 = 1e-10;
/// Relative residual growth tolerated before the damping is cut. Shrinking
/// spurious estimates raises the residual slowly and is not instability.
const RESIDUAL_SLACK: f64 = 1e-2;

/// Squared change relative to the larger of the current energy and the
/// prior energy `prior_scale`, so near-zero estimates do not stall the stop.
fn relative_change(old: &CMat, new: &CMat, prior_scale: f64) -> f64 {
    let diff: f64 = old.iter().zip(new.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
    let scale: f64 = new.iter().map(|v| v.norm_sqr()).sum::<f64>().max(prior_scale);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn residual(y: &CMat, b: &CMat, g: &CMat) -> f64 {
    (y - b * g).norm()
}

/// `B = Z X` means and variances restricted to the support.
pub(crate) fn linear_mix(z: &RMat, z_sq: &RMat, x: &CMat, v_x: &RMat, frames: &CandidateFrames) -> (CMat, RMat) {
    let zeros = CMat::zeros(z.nrows(), x.ncols());
    messages::linear_forward_message(z, z_sq, x, v_x, &zeros, &frames.support)
}

/// Runs the message-passing loop under a fixed delay hypothesis.
///
/// `y_white` has one row per observed (whitened) sample and `z_white` maps
/// the window's sample grid onto those rows.
pub fn run_juced(
    y_white: &CMat,
    z_white: &RMat,
    frames: &CandidateFrames,
    pool: &PreamblePool,
    priors: Priors,
    config: &JucedConfig,
) -> Result<PosteriorState> {
    config.validate()?;
    let (rows, antennas) = y_white.shape();
    let samples = z_white.ncols();
    if z_white.nrows() != rows {
        return Err(Error::dims("whitened operator rows", rows, z_white.nrows()));
    }
    let k = frames.len();
    if k == 0 {
        return Ok(PosteriorState::empty(rows, samples, antennas));
    }
    let floor = config.variance_floor;
    let lam = priors.channel_var;
    let rho = priors.activity_prob;
    let z_sq = squared(z_white);

    let (mut x_hat, mut v_x) = frames.prior(pool, samples);
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut g_hat = DMatrix::from_fn(k, antennas, |_, _| complex_gaussian(&mut rng, lam * rho / 100.0));
    let mut v_g = RMat::from_element(k, antennas, rho * lam);
    let (mut b_hat, mut v_b) = linear_mix(z_white, &z_sq, &x_hat, &v_x, frames);
    let mut beta_prev = CMat::zeros(rows, antennas);
    let mut gamma_prev = CMat::zeros(rows, k);

    let mut st = PosteriorState::empty(rows, samples, antennas);
    st.offsets = frames.offsets.clone();
    st.activity_posterior = vec![rho; k];
    st.converged = false;
    let g_prior_energy = rho * lam * (k * antennas) as f64;
    let x_prior_energy = frames.data_rows.iter().map(|r| r.len()).sum::<usize>() as f64;
    let mut damping = config.damping;
    // Below ~1e-12 of the signal power the precisions hit the variance
    // floor and the loop breaks down; treat such windows as 100 dB SNR.
    let y_power = y_white.iter().map(|v| v.norm_sqr()).sum::<f64>() / (rows * antennas).max(1) as f64;
    let nominal_noise = priors.noise_var.max(NOISE_FLOOR_REL * y_power);
    let mut noise_var = nominal_noise;
    let mut last_res = f64::INFINITY;

    for it in 1..=config.max_iters {
        let (p_hat, v_p) =
            messages::forward_output_message(&b_hat, &v_b, &g_hat, &v_g, &beta_prev);
        let out = messages::output_denoiser(&p_hat, &v_p, y_white, noise_var, floor);
        if config.learn_noise {
            let n = (rows * antennas).max(1) as f64;
            let fit: f64 = y_white
                .iter()
                .zip(out.a_hat.iter())
                .zip(out.v_a.iter())
                .map(|((y, a), v)| (y - a).norm_sqr() + v)
                .sum();
            noise_var = (fit / n).max(nominal_noise);
        }
        let (q_hat, v_q) =
            messages::channel_message(&b_hat, &v_b, &g_hat, &out.beta_hat, &out.v_beta, floor);
        let chan = messages::channel_denoiser(&q_hat, &v_q, rho, lam);
        let (r_hat, v_r) = messages::bilinear_input_message(
            &b_hat,
            &g_hat,
            &v_g,
            &out.beta_hat,
            &out.v_beta,
            floor,
        );
        let (o_hat, v_o) =
            messages::linear_forward_message(z_white, &z_sq, &x_hat, &v_x, &gamma_prev, &frames.support);
        let bp = messages::b_denoiser(&r_hat, &v_r, &o_hat, &v_o, floor);
        let (m_hat, v_m) = messages::symbol_message(
            z_white,
            &z_sq,
            &x_hat,
            &bp.gamma_hat,
            &bp.v_gamma,
            &frames.data_rows,
            floor,
        );
        let (x_new, vx_new) = symbol_denoiser(&m_hat, &v_m, frames, pool);

        let g_next = damp_c(&g_hat, &chan.g_hat, damping);
        let vg_next = damp_r(&v_g, &chan.v_g, damping);
        let b_next = damp_c(&b_hat, &bp.b_hat, damping);
        let vb_next = damp_r(&v_b, &bp.v_b, damping);
        let x_next = damp_c(&x_hat, &x_new, damping);
        let vx_next = damp_r(&v_x, &vx_new, damping);

        let worst = [max_entry(&vg_next), max_entry(&vb_next), max_entry(&vx_next), max_entry(&v_p)]
            .into_iter()
            .fold(0.0f64, f64::max);
        let finite = g_next.iter().chain(x_next.iter()).all(|v| v.re.is_finite() && v.im.is_finite());
        if !finite || !(worst <= config.explosion_bound) {
            st.diverged = true;
            log::debug!("message passing diverged at iteration {it}");
            break;
        }

        let delta: f64 = vg_next.iter().zip(v_g.iter()).map(|(a, b)| (a - b).abs()).sum();
        let moved = relative_change(&g_hat, &g_next, g_prior_energy)
            .max(relative_change(&x_hat, &x_next, x_prior_energy));

        g_hat = g_next;
        v_g = vg_next;
        b_hat = b_next;
        v_b = vb_next;
        x_hat = x_next;
        v_x = vx_next;
        beta_prev = out.beta_hat.clone();
        gamma_prev = bp.gamma_hat.clone();

        st.p_hat = p_hat;
        st.v_p = v_p;
        st.a_hat = out.a_hat;
        st.v_a = out.v_a;
        st.beta_hat = out.beta_hat;
        st.v_beta = out.v_beta;
        st.q_hat = q_hat;
        st.v_q = v_q;
        st.r_hat = r_hat;
        st.v_r = v_r;
        st.o_hat = o_hat;
        st.v_o = v_o;
        st.gamma_hat = bp.gamma_hat;
        st.v_gamma = bp.v_gamma;
        st.m_hat = m_hat;
        st.v_m = v_m;
        st.activity_posterior = chan.activity;
        st.iterations = it;

        let res = residual(y_white, &b_hat, &g_hat);
        st.residuals.push(res);
        if config.adaptive_damping {
            damping = if res > last_res * (1.0 + RESIDUAL_SLACK) {
                (damping * 0.5).max(MIN_DAMPING)
            } else {
                (damping * 1.1).min(config.damping)
            };
        }
        last_res = res;

        if delta < config.eps1 && moved < config.mean_tol {
            st.converged = true;
            break;
        }
    }

    st.active = g_hat
        .row_iter()
        .map(|r| r.iter().map(|g| g.norm_sqr()).sum::<f64>() > config.eta_th)
        .collect();
    st.x_hat = x_hat;
    st.v_x = v_x;
    st.g_hat = g_hat;
    st.v_g = v_g;
    st.b_hat = b_hat;
    st.v_b = v_b;
    Ok(st)
}

/// Convenience wrapper taking the hypothesis and scenario directly.
pub fn run_juced_for(
    y_white: &CMat,
    z_white: &RMat,
    delays: &DelayEstimate,
    pool: &PreamblePool,
    scenario: &SimScenario,
    config: &JucedConfig,
) -> Result<PosteriorState> {
    let frames = CandidateFrames::new(
        FrameLayout::from_scenario(scenario),
        delays,
        z_white.ncols(),
        pool.len(),
    )?;
    run_juced(y_white, z_white, &frames, pool, Priors::from_scenario(scenario), config)
}
