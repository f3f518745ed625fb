//! Independent scalar transcriptions of the receiver's update rules, random
//! instance builders, and the acceptance drivers shared by the test targets.
#![allow(dead_code)]

use juced::em::{estep_objective, ObjectiveInputs};
use juced::juced_mp::messages::{
    b_denoiser, bilinear_input_message, channel_denoiser, channel_message, forward_output_message,
    gaussian_symbol_posterior, linear_forward_message, output_denoiser, symbol_message, CMat, RMat,
};
use juced::juced_mp::{squared, FrameLayout, PosteriorState};
use juced::DelayEstimate;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type C = Complex64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cplx(rng: &mut ChaCha8Rng, scale: f64) -> C {
    C::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

pub fn rand_c(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
    DMatrix::from_fn(r, c, |_, _| cplx(rng, 1.0))
}

/// Strictly positive variances in `[lo, hi)`.
pub fn rand_v(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> RMat {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

/// Largest entrywise deviation relative to the largest reference magnitude.
pub fn rel_err_c(got: &CMat, want: &CMat) -> f64 {
    assert_eq!(got.shape(), want.shape());
    let scale = want.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    got.iter().zip(want.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale
}

pub fn rel_err_r(got: &RMat, want: &RMat) -> f64 {
    assert_eq!(got.shape(), want.shape());
    let scale = want.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    got.iter().zip(want.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-300)
}

// ---------------------------------------------------------------------------
// Scalar oracles. Loops are written element by element from the printed
// update rules, with no shared helpers from the library.
// ---------------------------------------------------------------------------

pub fn oracle_forward_output(
    b: &CMat,
    vb: &RMat,
    g: &CMat,
    vg: &RMat,
    beta_prev: &CMat,
) -> (CMat, RMat) {
    let (n, k) = b.shape();
    let r = g.ncols();
    let mut p = CMat::zeros(n, r);
    let mut vp = RMat::zeros(n, r);
    for i in 0..n {
        for rr in 0..r {
            let mut plain = C::new(0.0, 0.0);
            let mut vbar = 0.0;
            let mut cross = 0.0;
            for kk in 0..k {
                plain += b[(i, kk)] * g[(kk, rr)];
                let b2 = b[(i, kk)].re * b[(i, kk)].re + b[(i, kk)].im * b[(i, kk)].im;
                let g2 = g[(kk, rr)].re * g[(kk, rr)].re + g[(kk, rr)].im * g[(kk, rr)].im;
                vbar += b2 * vg[(kk, rr)] + vb[(i, kk)] * g2;
                cross += vb[(i, kk)] * vg[(kk, rr)];
            }
            p[(i, rr)] = plain - beta_prev[(i, rr)] * vbar;
            vp[(i, rr)] = vbar + cross;
        }
    }
    (p, vp)
}

/// Output posterior in the printed form: `beta = (a - p) / v_p`,
/// `v_beta = (1 - v_a / v_p) / v_p`.
pub fn oracle_output_denoiser(
    p: &CMat,
    vp: &RMat,
    y: &CMat,
    s: f64,
) -> (CMat, RMat, CMat, RMat) {
    let (n, r) = p.shape();
    let mut a = CMat::zeros(n, r);
    let mut va = RMat::zeros(n, r);
    let mut beta = CMat::zeros(n, r);
    let mut vbeta = RMat::zeros(n, r);
    for i in 0..n {
        for rr in 0..r {
            // precision-weighted product of CN(a; p, v_p) and CN(y; a, s)
            let prec = 1.0 / vp[(i, rr)] + 1.0 / s;
            let v = 1.0 / prec;
            let m = (p[(i, rr)] / vp[(i, rr)] + y[(i, rr)] / s) * v;
            a[(i, rr)] = m;
            va[(i, rr)] = v;
            beta[(i, rr)] = (m - p[(i, rr)]) / vp[(i, rr)];
            vbeta[(i, rr)] = (1.0 - v / vp[(i, rr)]) / vp[(i, rr)];
        }
    }
    (a, va, beta, vbeta)
}

pub fn oracle_channel_message(
    b: &CMat,
    vb: &RMat,
    g: &CMat,
    beta: &CMat,
    vbeta: &RMat,
) -> (CMat, RMat) {
    let (n, k) = b.shape();
    let r = g.ncols();
    let mut q = CMat::zeros(k, r);
    let mut vq = RMat::zeros(k, r);
    for kk in 0..k {
        for rr in 0..r {
            let mut prec = 0.0;
            let mut corr = 0.0;
            let mut mf = C::new(0.0, 0.0);
            for i in 0..n {
                prec += b[(i, kk)].norm_sqr() * vbeta[(i, rr)];
                corr += vb[(i, kk)] * vbeta[(i, rr)];
                mf += b[(i, kk)].conj() * beta[(i, rr)];
            }
            let v = 1.0 / prec;
            vq[(kk, rr)] = v;
            q[(kk, rr)] = g[(kk, rr)] * (1.0 - v * corr) + mf * v;
        }
    }
    (q, vq)
}

pub fn oracle_bilinear_input(
    b: &CMat,
    g: &CMat,
    vg: &RMat,
    beta: &CMat,
    vbeta: &RMat,
) -> (CMat, RMat) {
    let (n, k) = b.shape();
    let r = g.ncols();
    let mut rh = CMat::zeros(n, k);
    let mut vr = RMat::zeros(n, k);
    for i in 0..n {
        for kk in 0..k {
            let mut prec = 0.0;
            let mut corr = 0.0;
            let mut mf = C::new(0.0, 0.0);
            for rr in 0..r {
                prec += vbeta[(i, rr)] * g[(kk, rr)].norm_sqr();
                corr += vbeta[(i, rr)] * vg[(kk, rr)];
                mf += beta[(i, rr)] * g[(kk, rr)].conj();
            }
            let v = 1.0 / prec;
            vr[(i, kk)] = v;
            rh[(i, kk)] = b[(i, kk)] * (1.0 - v * corr) + mf * v;
        }
    }
    (rh, vr)
}

/// Sums over every column of `Z`; entries of `x`, `v_x` off the support are
/// zero, so this equals the support-restricted sum.
pub fn oracle_linear_forward(
    z: &RMat,
    x: &CMat,
    vx: &RMat,
    gamma_prev: &CMat,
) -> (CMat, RMat) {
    let n = z.nrows();
    let k = x.ncols();
    let mut o = CMat::zeros(n, k);
    let mut vo = RMat::zeros(n, k);
    for nn in 0..n {
        for kk in 0..k {
            let mut mean = C::new(0.0, 0.0);
            let mut var = 0.0;
            for i in 0..z.ncols() {
                mean += x[(i, kk)] * z[(nn, i)];
                var += z[(nn, i)] * z[(nn, i)] * vx[(i, kk)];
            }
            o[(nn, kk)] = mean - gamma_prev[(nn, kk)] * var;
            vo[(nn, kk)] = var;
        }
    }
    (o, vo)
}

/// `B` posterior in the printed form: `gamma = (b - o) / v_o`,
/// `v_gamma = (1 - v_b / v_o) / v_o`.
pub fn oracle_b_denoiser(
    r: &CMat,
    vr: &RMat,
    o: &CMat,
    vo: &RMat,
) -> (CMat, RMat, CMat, RMat) {
    let (n, k) = r.shape();
    let mut b = CMat::zeros(n, k);
    let mut vb = RMat::zeros(n, k);
    let mut gam = CMat::zeros(n, k);
    let mut vgam = RMat::zeros(n, k);
    for i in 0..n {
        for kk in 0..k {
            let v = 1.0 / (1.0 / vr[(i, kk)] + 1.0 / vo[(i, kk)]);
            let m = v * (r[(i, kk)] / vr[(i, kk)] + o[(i, kk)] / vo[(i, kk)]);
            b[(i, kk)] = m;
            vb[(i, kk)] = v;
            gam[(i, kk)] = (m - o[(i, kk)]) / vo[(i, kk)];
            vgam[(i, kk)] = (1.0 - v / vo[(i, kk)]) / vo[(i, kk)];
        }
    }
    (b, vb, gam, vgam)
}

/// Symbol messages on the listed rows; all other entries zero.
pub fn oracle_symbol_message(
    z: &RMat,
    x: &CMat,
    gam: &CMat,
    vgam: &RMat,
    rows: &[Vec<usize>],
) -> (CMat, RMat) {
    let k = x.ncols();
    let mut m = CMat::zeros(z.ncols(), k);
    let mut vm = RMat::zeros(z.ncols(), k);
    for kk in 0..k {
        for &i in &rows[kk] {
            let mut prec = 0.0;
            let mut acc = C::new(0.0, 0.0);
            for nn in 0..z.nrows() {
                prec += z[(nn, i)] * z[(nn, i)] * vgam[(nn, kk)];
                acc += gam[(nn, kk)] * z[(nn, i)];
            }
            let v = 1.0 / prec;
            vm[(i, kk)] = v;
            m[(i, kk)] = x[(i, kk)] + acc * v;
        }
    }
    (m, vm)
}

/// Exact posterior of one channel row under the two-hypothesis prior,
/// computed by direct (linear-domain) enumeration of both hypotheses.
pub fn oracle_channel_row(q: &[C], vq: &[f64], rho: f64, lam: f64) -> (Vec<C>, Vec<f64>, f64) {
    let pi = std::f64::consts::PI;
    let mut ev_on = 1.0;
    let mut ev_off = 1.0;
    for (qi, &v) in q.iter().zip(vq) {
        let q2 = qi.norm_sqr();
        ev_on *= (-q2 / (lam + v)).exp() / (pi * (lam + v));
        ev_off *= (-q2 / v).exp() / (pi * v);
    }
    let post = rho * ev_on / (rho * ev_on + (1.0 - rho) * ev_off);
    let mut mean = Vec::new();
    let mut var = Vec::new();
    for (qi, &v) in q.iter().zip(vq) {
        // under "on": g | q ~ CN(lam q / (lam + v), lam v / (lam + v))
        let m_on = *qi * (lam / (lam + v));
        let v_on = lam * v / (lam + v);
        let m = m_on * post;
        let second = post * (v_on + m_on.norm_sqr());
        mean.push(m);
        var.push(second - m.norm_sqr());
    }
    (mean, var, post)
}

/// Expected complete-data log-likelihood, evaluated with explicit loops.
///
/// Each candidate's frame (means and variances read at its posterior offset)
/// is moved to `tau`, `C = Z X(tau)` is formed entry by entry, and
///
/// `f = (1/s) sum_r [2 Re(y_r^H C g_r) - sum_{k,l} E_kl (g_lr g_kr^* + delta_kl v_kr)]
///      - sum_k sum_n (|x_kn|^2 + v_kn)`
///
/// with `E = C^H C + diag_k(sum_i v_x,ik sum_n z_ni^2)`.
pub fn oracle_estep(
    tau: &[usize],
    post: &PosteriorState,
    y: &CMat,
    z: &RMat,
    s: f64,
    layout: &FrameLayout,
) -> f64 {
    let k = post.g_hat.nrows();
    let n = z.nrows();
    let cols = z.ncols();
    let r = y.ncols();
    let flen = layout.preamble_len + layout.data_len;
    let mut x = CMat::zeros(cols, k);
    let mut vx = RMat::zeros(cols, k);
    let mut prior = 0.0;
    for kk in 0..k {
        for f in 0..flen {
            let from = post.offsets[kk] + f * layout.oversampling;
            let to = tau[kk] + f * layout.oversampling;
            x[(to, kk)] = post.x_hat[(from, kk)];
            vx[(to, kk)] = post.v_x[(from, kk)];
            prior += post.x_hat[(from, kk)].norm_sqr() + post.v_x[(from, kk)];
        }
    }
    let mut c = CMat::zeros(n, k);
    for nn in 0..n {
        for kk in 0..k {
            for i in 0..cols {
                c[(nn, kk)] += x[(i, kk)] * z[(nn, i)];
            }
        }
    }
    let mut e = CMat::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            for nn in 0..n {
                e[(a, b)] += c[(nn, a)].conj() * c[(nn, b)];
            }
        }
        let mut d = 0.0;
        for i in 0..cols {
            let mut zz = 0.0;
            for nn in 0..n {
                zz += z[(nn, i)] * z[(nn, i)];
            }
            d += vx[(i, a)] * zz;
        }
        e[(a, a)] += d;
    }
    let mut total = 0.0;
    for rr in 0..r {
        let mut lin = C::new(0.0, 0.0);
        for nn in 0..n {
            for kk in 0..k {
                lin += y[(nn, rr)].conj() * c[(nn, kk)] * post.g_hat[(kk, rr)];
            }
        }
        let mut tr = C::new(0.0, 0.0);
        for a in 0..k {
            for b in 0..k {
                let mut m = post.g_hat[(b, rr)] * post.g_hat[(a, rr)].conj();
                if a == b {
                    m += post.v_g[(a, rr)];
                }
                tr += e[(a, b)] * m;
            }
        }
        total += 2.0 * lin.re - tr.re;
    }
    total / s - prior
}

// ---------------------------------------------------------------------------
// Random instances
// ---------------------------------------------------------------------------

/// Sizes of the transcription instances: 8 grid samples, 2 candidates,
/// 2 antennas, frames of 1 preamble and 2 data symbols at oversampling 2.
pub const SAMPLES: usize = 8;
pub const CANDIDATES: usize = 2;
pub const ANTENNAS: usize = 2;

pub fn small_layout() -> FrameLayout {
    FrameLayout {
        preamble_len: 1,
        data_len: 2,
        oversampling: 2,
    }
}

/// Random dense real operator with `rows` outputs over `SAMPLES` grid points.
pub fn rand_z(rng: &mut ChaCha8Rng, rows: usize) -> RMat {
    DMatrix::from_fn(rows, SAMPLES, |_, _| rng.random_range(-1.0..1.0))
}

/// Random frame offsets (frames fit inside the window) and their supports.
pub fn rand_support(rng: &mut ChaCha8Rng, layout: &FrameLayout) -> (Vec<usize>, Vec<Vec<usize>>) {
    let span = (layout.preamble_len + layout.data_len - 1) * layout.oversampling;
    let offsets: Vec<usize> = (0..CANDIDATES).map(|_| rng.random_range(0..SAMPLES - span)).collect();
    let support = offsets
        .iter()
        .map(|&o| (0..layout.preamble_len + layout.data_len).map(|f| layout.row(o, f)).collect())
        .collect();
    (offsets, support)
}

/// Means and variances that vanish off the supports.
pub fn supported(rng: &mut ChaCha8Rng, support: &[Vec<usize>]) -> (CMat, RMat) {
    let mut x = CMat::zeros(SAMPLES, CANDIDATES);
    let mut v = RMat::zeros(SAMPLES, CANDIDATES);
    for (kk, rows) in support.iter().enumerate() {
        for &i in rows {
            x[(i, kk)] = cplx(rng, 1.0);
            v[(i, kk)] = rng.random_range(0.05..1.0);
        }
    }
    (x, v)
}

/// Random posterior with frames at `offsets`.
pub fn rand_posterior(rng: &mut ChaCha8Rng, offsets: &[usize], support: &[Vec<usize>]) -> PosteriorState {
    let (x, vx) = supported(rng, support);
    let mut st = PosteriorState::empty(SAMPLES, SAMPLES, ANTENNAS);
    st.x_hat = x;
    st.v_x = vx;
    st.g_hat = rand_c(rng, CANDIDATES, ANTENNAS);
    st.v_g = rand_v(rng, CANDIDATES, ANTENNAS, 0.01, 0.5);
    st.offsets = offsets.to_vec();
    st.activity_posterior = vec![1.0; CANDIDATES];
    st.active = vec![true; CANDIDATES];
    st
}

/// Worst relative error of every message update and of the objective against
/// the scalar oracles on one random instance.
pub fn transcription_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut g = rng(seed);
    let layout = small_layout();
    let n = SAMPLES;
    let (offsets, support) = rand_support(&mut g, &layout);
    let z = rand_z(&mut g, n);
    let zsq = squared(&z);
    let mut out = Vec::new();

    let b = rand_c(&mut g, n, CANDIDATES);
    let vb = rand_v(&mut g, n, CANDIDATES, 0.05, 1.0);
    let gh = rand_c(&mut g, CANDIDATES, ANTENNAS);
    let vg = rand_v(&mut g, CANDIDATES, ANTENNAS, 0.05, 1.0);
    let beta_prev = rand_c(&mut g, n, ANTENNAS);
    let (p, vp) = forward_output_message(&b, &vb, &gh, &vg, &beta_prev);
    let (po, vpo) = oracle_forward_output(&b, &vb, &gh, &vg, &beta_prev);
    out.push(("forward_output p", rel_err_c(&p, &po)));
    out.push(("forward_output v_p", rel_err_r(&vp, &vpo)));

    let y = rand_c(&mut g, n, ANTENNAS);
    let s = g.random_range(0.1..2.0);
    let od = output_denoiser(&p, &vp, &y, s, 1e-12);
    let (a, va, be, vbe) = oracle_output_denoiser(&p, &vp, &y, s);
    out.push(("output a", rel_err_c(&od.a_hat, &a)));
    out.push(("output v_a", rel_err_r(&od.v_a, &va)));
    out.push(("output beta", rel_err_c(&od.beta_hat, &be)));
    out.push(("output v_beta", rel_err_r(&od.v_beta, &vbe)));

    let (q, vq) = channel_message(&b, &vb, &gh, &od.beta_hat, &od.v_beta, 1e-12);
    let (qo, vqo) = oracle_channel_message(&b, &vb, &gh, &be, &vbe);
    out.push(("channel q", rel_err_c(&q, &qo)));
    out.push(("channel v_q", rel_err_r(&vq, &vqo)));

    let (r, vr) = bilinear_input_message(&b, &gh, &vg, &od.beta_hat, &od.v_beta, 1e-12);
    let (ro, vro) = oracle_bilinear_input(&b, &gh, &vg, &be, &vbe);
    out.push(("bilinear r", rel_err_c(&r, &ro)));
    out.push(("bilinear v_r", rel_err_r(&vr, &vro)));

    let (x, vx) = supported(&mut g, &support);
    let gamma_prev = rand_c(&mut g, n, CANDIDATES);
    let (o, vo) = linear_forward_message(&z, &zsq, &x, &vx, &gamma_prev, &support);
    let (oo, voo) = oracle_linear_forward(&z, &x, &vx, &gamma_prev);
    out.push(("linear o", rel_err_c(&o, &oo)));
    out.push(("linear v_o", rel_err_r(&vo, &voo)));

    let bd = b_denoiser(&r, &vr, &o, &vo, 1e-12);
    let (bo, vbo, go, vgo) = oracle_b_denoiser(&r, &vr, &o, &vo);
    out.push(("b_denoiser b", rel_err_c(&bd.b_hat, &bo)));
    out.push(("b_denoiser v_b", rel_err_r(&bd.v_b, &vbo)));
    out.push(("b_denoiser gamma", rel_err_c(&bd.gamma_hat, &go)));
    out.push(("b_denoiser v_gamma", rel_err_r(&bd.v_gamma, &vgo)));

    let (m, vm) = symbol_message(&z, &zsq, &x, &bd.gamma_hat, &bd.v_gamma, &support, 1e-12);
    let (mo, vmo) = oracle_symbol_message(&z, &x, &go, &vgo, &support);
    out.push(("symbol m", rel_err_c(&m, &mo)));
    out.push(("symbol v_m", rel_err_r(&vm, &vmo)));

    let post = rand_posterior(&mut g, &offsets, &support);
    let span = (layout.frame_len() - 1) * layout.oversampling;
    let tau: Vec<usize> = (0..CANDIDATES).map(|_| g.random_range(0..SAMPLES - span)).collect();
    let s2 = g.random_range(0.1..2.0);
    let inputs = ObjectiveInputs {
        y_white: &y,
        z_white: &z,
        noise_var: s2,
        layout: &layout,
    };
    let preambles = vec![0; CANDIDATES];
    for t in [&offsets, &tau] {
        let est = DelayEstimate::new(t.clone(), preambles.clone());
        let f = estep_objective(&est, &post, inputs);
        let fo = oracle_estep(t, &post, &y, &z, s2, &layout);
        out.push(("estep objective", rel_err(f, fo)));
    }
    out
}

/// Worst deviation of the three Gaussian denoisers from their closed forms
/// over `draws` random scalars, and of the channel denoiser from exact
/// two-hypothesis enumeration.
pub fn denoiser_errors(draws: usize, seed: u64) -> (f64, f64) {
    let mut g = rng(seed);
    let mut gauss: f64 = 0.0;
    let mut chan: f64 = 0.0;
    for _ in 0..draws {
        // output: CN(a; p, v_p) x CN(y; a, s)
        let p = cplx(&mut g, 2.0);
        let y = cplx(&mut g, 2.0);
        let vp = g.random_range(0.1..5.0);
        let s = g.random_range(0.1..5.0);
        let od = output_denoiser(
            &CMat::from_element(1, 1, p),
            &RMat::from_element(1, 1, vp),
            &CMat::from_element(1, 1, y),
            s,
            1e-12,
        );
        let va = vp * s / (vp + s);
        let a = (y * vp + p * s) / (vp + s);
        gauss = gauss
            .max((od.a_hat[(0, 0)] - a).norm() / a.norm().max(1e-300))
            .max(rel_err(od.v_a[(0, 0)], va));

        // B: product of CN(r, v_r) and CN(o, v_o)
        let r = cplx(&mut g, 2.0);
        let o = cplx(&mut g, 2.0);
        let vr = g.random_range(0.1..5.0);
        let vo = g.random_range(0.1..5.0);
        let bd = b_denoiser(
            &CMat::from_element(1, 1, r),
            &RMat::from_element(1, 1, vr),
            &CMat::from_element(1, 1, o),
            &RMat::from_element(1, 1, vo),
            1e-12,
        );
        let vb = vr * vo / (vr + vo);
        let b = (r * vo + o * vr) / (vr + vo);
        gauss = gauss
            .max((bd.b_hat[(0, 0)] - b).norm() / b.norm().max(1e-300))
            .max(rel_err(bd.v_b[(0, 0)], vb));

        // data symbol: CN(x; 0, 1) x CN(m; x, v_m)
        let m = cplx(&mut g, 2.0);
        let vm = g.random_range(0.05..5.0);
        let (xm, xv) = gaussian_symbol_posterior(m, vm);
        let want_v = vm / (1.0 + vm);
        let want_m = m / (1.0 + vm);
        gauss = gauss
            .max((xm - want_m).norm() / want_m.norm().max(1e-300))
            .max(rel_err(xv, want_v));

        // channel row under the Bernoulli-Gaussian row prior
        let ant = g.random_range(1..5);
        let rho = g.random_range(0.01..0.99);
        let lam = g.random_range(0.1..5.0);
        let qs: Vec<C> = (0..ant).map(|_| cplx(&mut g, 2.0)).collect();
        let vs: Vec<f64> = (0..ant).map(|_| g.random_range(0.05..3.0)).collect();
        let cd = channel_denoiser(
            &CMat::from_row_slice(1, ant, &qs),
            &RMat::from_row_slice(1, ant, &vs),
            rho,
            lam,
        );
        let (mo, vo, po) = oracle_channel_row(&qs, &vs, rho, lam);
        chan = chan.max(rel_err(cd.activity[0], po));
        let mscale = mo.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        let vscale = vo.iter().cloned().fold(0.0, f64::max).max(1e-300);
        for j in 0..ant {
            chan = chan
                .max((cd.g_hat[(0, j)] - mo[j]).norm() / mscale)
                .max((cd.v_g[(0, j)] - vo[j]).abs() / vscale);
        }
    }
    (gauss, chan)
}

// ---------------------------------------------------------------------------
// Single-user windows
// ---------------------------------------------------------------------------

use juced::em::whiten;
use juced::juced_mp::{run_juced, CandidateFrames, JucedConfig, Priors, DEFAULT_LOADING};
use juced::signal::noiseless_window;
use juced::{build_rrc_pulse, build_zc_pool, generate_realization, synthesize_window};
use juced::{PreamblePool, PulseBank, SimScenario, UserRealization, WindowObservation};

pub struct SingleUser {
    /// Receiver-side scenario (prior activity 0.25, noise variance set).
    pub scenario: SimScenario,
    pub pulse: PulseBank,
    pub pool: PreamblePool,
    pub real: UserRealization,
    pub obs: WindowObservation,
    /// True delay in samples (may be fractional).
    pub offset: f64,
}

/// One always-active user; `on_grid` snaps the delay to the sample grid.
/// The noise variance realizes `snr_db` against the window's own signal
/// power.
#[allow(clippy::too_many_arguments)]
pub fn single_user(
    seed: u64,
    mosf: usize,
    antennas: usize,
    preamble_len: usize,
    data_len: usize,
    window_len: usize,
    snr_db: f64,
    on_grid: bool,
) -> SingleUser {
    let gen = SimScenario {
        num_users: 1,
        activity_prob: 1.0,
        num_antennas: antennas,
        preamble_len,
        data_len,
        window_len,
        oversampling: mosf,
        noise_var: 0.0,
        channel_var: 1.0,
        rolloff: 0.5,
        pulse_span: 3,
        pool_size: 4,
    };
    let pulse = build_rrc_pulse(gen.rolloff, mosf, gen.pulse_span, window_len).unwrap();
    let pool = build_zc_pool(preamble_len, gen.pool_size).unwrap();
    let mut real = generate_realization(&gen, seed).unwrap();
    if on_grid {
        real.tau[0] = (real.tau[0] * mosf as f64).round() / mosf as f64;
    }
    let clean = noiseless_window(&real, &pulse, &pool, &gen).unwrap();
    let power = clean.y.iter().map(|v| v.norm_sqr()).sum::<f64>() / clean.y.len() as f64;
    let scenario = SimScenario {
        activity_prob: 0.25,
        noise_var: power / 10f64.powf(snr_db / 10.0),
        ..gen
    };
    let obs = synthesize_window(&real, &pulse, &pool, &scenario, seed ^ 0xabcd).unwrap();
    let offset = real.tau[0] * mosf as f64;
    SingleUser { scenario, pulse, pool, real, obs, offset }
}

/// Inner-loop settings used by the sweeps.
pub fn sweep_juced_config(eta_th: f64, init_seed: u64) -> JucedConfig {
    JucedConfig {
        max_iters: 100,
        eps1: 1e-6,
        damping: 0.3,
        adaptive_damping: true,
        eta_th,
        init_seed,
        ..JucedConfig::default()
    }
}

pub fn data_nmse(est: &[C], truth: &[C]) -> f64 {
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = truth.iter().map(|v| v.norm_sqr()).sum();
    num / den
}

/// Genie-delay single-user run at 40 dB (16 antennas, 16 + 16 symbols,
/// `M = 2`). Returns the data NMSE and whether exactly the true activity was
/// declared.
pub fn genie_single_user_run(seed: u64) -> (f64, bool) {
    let case = single_user(seed, 2, 16, 16, 16, 40, 40.0, true);
    let (yw, zw) = whiten(&case.obs, &case.pulse, DEFAULT_LOADING).unwrap();
    let delays = DelayEstimate::new(vec![case.offset.round() as usize], vec![case.real.preamble_idx[0]]);
    let layout = FrameLayout::from_scenario(&case.scenario);
    let frames = CandidateFrames::new(layout.clone(), &delays, zw.ncols(), case.pool.len()).unwrap();
    // one percent of the expected row power of an active user
    let eta = 0.01 * case.scenario.channel_var * case.scenario.num_antennas as f64;
    let cfg = JucedConfig {
        eta_th: eta,
        init_seed: seed,
        ..JucedConfig::default()
    };
    let post = run_juced(&yw, &zw, &frames, &case.pool, Priors::from_scenario(&case.scenario), &cfg).unwrap();
    let est = post.data_symbols(0, &layout);
    let truth: Vec<C> = case.real.data.row(0).iter().copied().collect();
    (data_nmse(&est, &truth), post.active == vec![true])
}

/// Model-layer invariants, shared by the property suite and the acceptance
/// run. Each check returns a description of the first violation.
pub mod model {
    use juced::juced_mp::whiten::Whitener;
    use juced::signal::{filtered_noise, shaped_frame};
    use juced::{build_rrc_pulse, build_zc_pool, generate_realization, SimScenario};
    use proptest::prelude::*;

    pub type Check = std::result::Result<(), String>;

    fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
        if ok {
            Ok(())
        } else {
            Err(msg())
        }
    }

    pub fn banded_toeplitz(rolloff: f64, mosf: usize, span: usize, window: usize) -> Check {
        let bank = build_rrc_pulse(rolloff, mosf, span, window).map_err(|e| e.to_string())?;
        let n = window * mosf;
        let band = span * mosf;
        for (name, mat) in [("Z", &bank.z), ("F", &bank.f)] {
            ensure(mat.shape() == (n, n), || format!("{name} shape {:?}", mat.shape()))?;
            for i in 0..n {
                for j in 0..n {
                    let v = mat[(i, j)];
                    if i.abs_diff(j) > band {
                        ensure(v == 0.0, || format!("{name}[{i}][{j}] = {v} outside the band"))?;
                    } else {
                        let k = i.min(j);
                        ensure(v == mat[(i - k, j - k)], || format!("{name} not Toeplitz at ({i},{j})"))?;
                        ensure(v == mat[(j, i)], || format!("{name} not symmetric at ({i},{j})"))?;
                    }
                }
            }
        }
        ensure(bank.z_taps[band] == 1.0, || "z[0] != 1".into())
    }

    pub fn nyquist(rolloff: f64, mosf: usize, span: usize) -> Check {
        let bank = build_rrc_pulse(rolloff, mosf, span, 8).map_err(|e| e.to_string())?;
        let half = span * mosf;
        for n in 1..=span {
            for idx in [half + n * mosf, half - n * mosf] {
                ensure(bank.z_taps[idx].abs() < 1e-12, || format!("z at {n} symbols = {:e}", bank.z_taps[idx]))?;
            }
        }
        Ok(())
    }

    /// A one-symbol delay moves the shaped frame by exactly `M` samples.
    pub fn shift_equivariance(seed: u64, mosf: usize, frac: f64, on_grid: bool) -> Check {
        let sc = SimScenario {
            num_users: 1,
            activity_prob: 0.5,
            num_antennas: 2,
            preamble_len: 8,
            data_len: 8,
            window_len: 30,
            oversampling: mosf,
            noise_var: 0.1,
            channel_var: 1.0,
            rolloff: 0.5,
            pulse_span: 3,
            pool_size: 4,
        };
        let bank = build_rrc_pulse(sc.rolloff, mosf, sc.pulse_span, sc.window_len).map_err(|e| e.to_string())?;
        let pool = build_zc_pool(sc.preamble_len, sc.pool_size).map_err(|e| e.to_string())?;
        let real = generate_realization(&sc, seed).map_err(|e| e.to_string())?;
        let m = mosf as f64;
        let tau = if on_grid { (frac * 8.0 * m).floor() / m } else { frac * 8.0 };
        let syms = real.frame(0, &pool);
        let a = shaped_frame(&syms, tau, &bank);
        let b = shaped_frame(&syms, tau + 1.0, &bank);
        for i in 0..sc.samples() - mosf {
            let d = (b[i + mosf] - a[i]).norm();
            ensure(d < 1e-12, || format!("tau {tau}: sample {i} differs by {d:e}"))?;
        }
        Ok(())
    }

    /// `L L^T` reproduces the loaded noise covariance, `L Z_w = Z`, and
    /// whitening followed by restoring returns the input.
    pub fn whitening_round_trip(mosf: usize, loading: f64, seed: u64) -> Check {
        let bank = build_rrc_pulse(0.5, mosf, 3, 10).map_err(|e| e.to_string())?;
        let w = Whitener::new(&bank, loading).map_err(|e| e.to_string())?;
        let mut want = &bank.f * bank.f.transpose();
        for i in 0..bank.samples() {
            want[(i, i)] += loading;
        }
        let cov_err = (&w.l * w.l.transpose() - want).abs().max();
        ensure(cov_err < 1e-12, || format!("factor error {cov_err:e}"))?;
        let z_err = (&w.l * &w.z_white - &bank.z).abs().max();
        ensure(z_err < 1e-10, || format!("whitened operator error {z_err:e}"))?;
        let y = filtered_noise(&bank, 3, 1.0, seed);
        let back = w.restore(&w.apply(&y).map_err(|e| e.to_string())?);
        let rel = (&back - &y).norm() / y.norm();
        ensure(rel <= 1e-10, || format!("round trip error {rel:e}"))
    }

    pub fn toeplitz_inputs() -> impl Strategy<Value = (f64, usize, usize, usize)> {
        (0.0..=1.0f64, 1usize..=4, 1usize..=4, 2usize..=12)
    }

    pub fn nyquist_inputs() -> impl Strategy<Value = (f64, usize, usize)> {
        (0.0..=1.0f64, 1usize..=4, 1usize..=4)
    }

    pub fn shift_inputs() -> impl Strategy<Value = (u64, usize, f64, bool)> {
        (0u64..1000, 1usize..=3, 0.0..1.0f64, any::<bool>())
    }

    pub fn whitening_inputs() -> impl Strategy<Value = (usize, f64, u64)> {
        (1usize..=3, prop_oneof![Just(0.0), 1e-4..1e-2f64], 0u64..1000)
    }
}
