//! Approximate message updates and scalar denoisers.
//!
//! Notation follows the bilinear model `A = B G`, `B = Z X` (whitened `Z`):
//!
//! * `(p, v_p)`: output-side estimate of `A` with Onsager correction
//! * `(a, v_a)`, `(beta, v_beta)`: posterior of `A` and its scaled residual
//! * `(q, v_q)`: extrinsic message on `G`, `(r, v_r)`: on `B` from the output
//! * `(o, v_o)`: message on `B` from the linear layer
//! * `(gamma, v_gamma)`: scaled residual of `B`, `(m, v_m)`: message on `X`
//!
//! Matrices are `N x R` (samples by antennas), `K x R` (candidates by
//! antennas) or `N x K`. All functions are pure; variance outputs are clamped
//! at zero and every division by a variance is guarded by `floor`.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type RMat = DMatrix<f64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[inline]
pub(crate) fn col<T>(m: &DMatrix<T>, j: usize) -> &[T] {
    let n = m.nrows();
    &m.as_slice()[j * n..(j + 1) * n]
}

/// Row indices of `X` that may be non-zero, one list per candidate column.
pub type Support = [Vec<usize>];

/// Output-side message on `A` (Onsager term uses the previous `beta`).
pub fn forward_output_message(
    b_hat: &CMat,
    v_b: &RMat,
    g_hat: &CMat,
    v_g: &RMat,
    beta_prev: &CMat,
) -> (CMat, RMat) {
    let (n, k) = b_hat.shape();
    let r = g_hat.ncols();
    let mut p_hat = CMat::zeros(n, r);
    let mut v_p = RMat::zeros(n, r);
    for rr in 0..r {
        for kk in 0..k {
            let g = g_hat[(kk, rr)];
            let vg = v_g[(kk, rr)];
            let g2 = g.norm_sqr();
            let bc = col(b_hat, kk);
            let vbc = col(v_b, kk);
            for i in 0..n {
                p_hat[(i, rr)] += bc[i] * g;
                let vbar = bc[i].norm_sqr() * vg + vbc[i] * g2;
                // stash vbar in p_hat's Onsager pass below via v_p split
                v_p[(i, rr)] += vbar;
            }
        }
        for i in 0..n {
            let vbar = v_p[(i, rr)];
            p_hat[(i, rr)] -= beta_prev[(i, rr)] * vbar;
        }
        for kk in 0..k {
            let vg = v_g[(kk, rr)];
            let vbc = col(v_b, kk);
            for i in 0..n {
                v_p[(i, rr)] += vbc[i] * vg;
            }
        }
    }
    (p_hat, v_p)
}

#[derive(Debug, Clone)]
pub struct OutputPosterior {
    pub a_hat: CMat,
    pub v_a: RMat,
    pub beta_hat: CMat,
    pub v_beta: RMat,
}

/// Gaussian likelihood `CN(y; a, noise_var)` combined with `CN(a; p, v_p)`.
///
/// `beta = (a - p) / v_p` and `v_beta = (1 - v_a / v_p) / v_p` are evaluated
/// in their equivalent closed forms `(y - p) / (v_p + s)` and `1 / (v_p + s)`.
pub fn output_denoiser(
    p_hat: &CMat,
    v_p: &RMat,
    y: &CMat,
    noise_var: f64,
    floor: f64,
) -> OutputPosterior {
    let (n, r) = p_hat.shape();
    let mut out = OutputPosterior {
        a_hat: CMat::zeros(n, r),
        v_a: RMat::zeros(n, r),
        beta_hat: CMat::zeros(n, r),
        v_beta: RMat::zeros(n, r),
    };
    for idx in 0..n * r {
        let vp = v_p.as_slice()[idx].max(0.0);
        let p = p_hat.as_slice()[idx];
        let yv = y.as_slice()[idx];
        let tot = (vp + noise_var).max(floor);
        out.a_hat.as_mut_slice()[idx] = (yv * vp + p * noise_var) / tot;
        out.v_a.as_mut_slice()[idx] = vp * noise_var / tot;
        out.beta_hat.as_mut_slice()[idx] = (yv - p) / tot;
        out.v_beta.as_mut_slice()[idx] = 1.0 / tot;
    }
    out
}

/// Extrinsic message on the channel entries.
pub fn channel_message(
    b_hat: &CMat,
    v_b: &RMat,
    g_hat: &CMat,
    beta_hat: &CMat,
    v_beta: &RMat,
    floor: f64,
) -> (CMat, RMat) {
    let (n, k) = b_hat.shape();
    let r = g_hat.ncols();
    let mut q_hat = CMat::zeros(k, r);
    let mut v_q = RMat::zeros(k, r);
    for rr in 0..r {
        let bet = col(beta_hat, rr);
        let vbet = col(v_beta, rr);
        for kk in 0..k {
            let bc = col(b_hat, kk);
            let vbc = col(v_b, kk);
            let (mut prec, mut corr) = (0.0, 0.0);
            let mut mf = ZERO;
            for i in 0..n {
                prec += bc[i].norm_sqr() * vbet[i];
                corr += vbc[i] * vbet[i];
                mf += bc[i].conj() * bet[i];
            }
            if prec < floor {
                v_q[(kk, rr)] = 1.0 / floor;
                q_hat[(kk, rr)] = ZERO;
            } else {
                let vq = 1.0 / prec;
                v_q[(kk, rr)] = vq;
                q_hat[(kk, rr)] = g_hat[(kk, rr)] * (1.0 - vq * corr) + mf * vq;
            }
        }
    }
    (q_hat, v_q)
}

#[derive(Debug, Clone)]
pub struct ChannelPosterior {
    pub g_hat: CMat,
    pub v_g: RMat,
    /// Posterior probability that each row is non-zero.
    pub activity: Vec<f64>,
}

fn ln_cn_evidence(q2: f64, var: f64) -> f64 {
    -var.ln() - q2 / var
}

/// MMSE denoiser under the row-sparse prior
/// `(1 - rho) delta(g_k) + rho CN(0, lambda I)`.
///
/// The per-row activity posterior compares the Gaussian evidence of the whole
/// message row under both hypotheses in the log domain.
pub fn channel_denoiser(
    q_hat: &CMat,
    v_q: &RMat,
    activity_prob: f64,
    channel_var: f64,
) -> ChannelPosterior {
    let (k, r) = q_hat.shape();
    let lam = channel_var;
    let mut g_hat = CMat::zeros(k, r);
    let mut v_g = RMat::zeros(k, r);
    let mut activity = vec![0.0; k];
    let prior_logit = activity_prob.ln() - (1.0 - activity_prob).ln();
    for kk in 0..k {
        let mut llr = 0.0;
        for rr in 0..r {
            let q2 = q_hat[(kk, rr)].norm_sqr();
            let vq = v_q[(kk, rr)];
            llr += ln_cn_evidence(q2, lam + vq) - ln_cn_evidence(q2, vq);
        }
        let logit = prior_logit + llr;
        let pi = if logit.is_nan() {
            activity_prob
        } else if logit >= 0.0 {
            1.0 / (1.0 + (-logit).exp())
        } else {
            let e = logit.exp();
            e / (1.0 + e)
        };
        activity[kk] = pi;
        for rr in 0..r {
            let vq = v_q[(kk, rr)];
            let q = q_hat[(kk, rr)];
            let shrink = lam / (lam + vq);
            let mean_on = q * shrink;
            let var_on = lam * vq / (lam + vq);
            let g = mean_on * pi;
            g_hat[(kk, rr)] = g;
            v_g[(kk, rr)] = (pi * (var_on + mean_on.norm_sqr()) - g.norm_sqr()).max(0.0);
        }
    }
    ChannelPosterior {
        g_hat,
        v_g,
        activity,
    }
}

/// Message on `B` from the output layer.
pub fn bilinear_input_message(
    b_hat: &CMat,
    g_hat: &CMat,
    v_g: &RMat,
    beta_hat: &CMat,
    v_beta: &RMat,
    floor: f64,
) -> (CMat, RMat) {
    let (n, k) = b_hat.shape();
    let r = g_hat.ncols();
    let mut prec = RMat::zeros(n, k);
    let mut corr = RMat::zeros(n, k);
    let mut mf = CMat::zeros(n, k);
    for kk in 0..k {
        for rr in 0..r {
            let g = g_hat[(kk, rr)];
            let g2 = g.norm_sqr();
            let gc = g.conj();
            let vg = v_g[(kk, rr)];
            let bet = col(beta_hat, rr);
            let vbet = col(v_beta, rr);
            for i in 0..n {
                prec[(i, kk)] += vbet[i] * g2;
                corr[(i, kk)] += vbet[i] * vg;
                mf[(i, kk)] += bet[i] * gc;
            }
        }
    }
    let mut r_hat = CMat::zeros(n, k);
    let mut v_r = RMat::zeros(n, k);
    for idx in 0..n * k {
        let p = prec.as_slice()[idx];
        if p < floor {
            v_r.as_mut_slice()[idx] = 1.0 / floor;
        } else {
            let vr = 1.0 / p;
            v_r.as_mut_slice()[idx] = vr;
            r_hat.as_mut_slice()[idx] =
                b_hat.as_slice()[idx] * (1.0 - vr * corr.as_slice()[idx]) + mf.as_slice()[idx] * vr;
        }
    }
    (r_hat, v_r)
}

/// Message on `B` from the linear layer `B = Z X` (Onsager term uses the
/// previous `gamma`). Only rows listed in `support` enter the sums.
pub fn linear_forward_message(
    z: &RMat,
    z_sq: &RMat,
    x_hat: &CMat,
    v_x: &RMat,
    gamma_prev: &CMat,
    support: &Support,
) -> (CMat, RMat) {
    let n = z.nrows();
    let k = x_hat.ncols();
    let mut o_hat = CMat::zeros(n, k);
    let mut v_o = RMat::zeros(n, k);
    for kk in 0..k {
        let xc = col(x_hat, kk);
        let vxc = col(v_x, kk);
        let mut o = vec![ZERO; n];
        let mut v = vec![0.0; n];
        for &i in &support[kk] {
            let zc = col(z, i);
            let zs = col(z_sq, i);
            let (x, vx) = (xc[i], vxc[i]);
            if x != ZERO {
                for nn in 0..n {
                    o[nn] += x * zc[nn];
                }
            }
            if vx != 0.0 {
                for nn in 0..n {
                    v[nn] += zs[nn] * vx;
                }
            }
        }
        for nn in 0..n {
            v_o[(nn, kk)] = v[nn];
            o_hat[(nn, kk)] = o[nn] - gamma_prev[(nn, kk)] * v[nn];
        }
    }
    (o_hat, v_o)
}

#[derive(Debug, Clone)]
pub struct BPosterior {
    pub b_hat: CMat,
    pub v_b: RMat,
    pub gamma_hat: CMat,
    pub v_gamma: RMat,
}

/// Product of the two Gaussian messages on `B`.
///
/// `gamma = (b - o) / v_o` and `v_gamma = (1 - v_b / v_o) / v_o` are evaluated
/// as `(r - o) / (v_r + v_o)` and `1 / (v_r + v_o)`.
pub fn b_denoiser(r_hat: &CMat, v_r: &RMat, o_hat: &CMat, v_o: &RMat, floor: f64) -> BPosterior {
    let (n, k) = r_hat.shape();
    let mut out = BPosterior {
        b_hat: CMat::zeros(n, k),
        v_b: RMat::zeros(n, k),
        gamma_hat: CMat::zeros(n, k),
        v_gamma: RMat::zeros(n, k),
    };
    for idx in 0..n * k {
        let vr = v_r.as_slice()[idx].max(0.0);
        let vo = v_o.as_slice()[idx].max(0.0);
        let r = r_hat.as_slice()[idx];
        let o = o_hat.as_slice()[idx];
        let tot = (vr + vo).max(floor);
        out.b_hat.as_mut_slice()[idx] = (r * vo + o * vr) / tot;
        out.v_b.as_mut_slice()[idx] = vr * vo / tot;
        out.gamma_hat.as_mut_slice()[idx] = (r - o) / tot;
        out.v_gamma.as_mut_slice()[idx] = 1.0 / tot;
    }
    out
}

/// Message on the symbols at the listed rows; other entries stay zero.
pub fn symbol_message(
    z: &RMat,
    z_sq: &RMat,
    x_hat: &CMat,
    gamma_hat: &CMat,
    v_gamma: &RMat,
    rows: &Support,
    floor: f64,
) -> (CMat, RMat) {
    let n = z.nrows();
    let k = x_hat.ncols();
    let mut m_hat = CMat::zeros(z.ncols(), k);
    let mut v_m = RMat::zeros(z.ncols(), k);
    for kk in 0..k {
        let gam = col(gamma_hat, kk);
        let vgam = col(v_gamma, kk);
        for &i in &rows[kk] {
            let zc = col(z, i);
            let zs = col(z_sq, i);
            let mut prec = 0.0;
            let mut acc = ZERO;
            for nn in 0..n {
                prec += zs[nn] * vgam[nn];
                acc += gam[nn] * zc[nn];
            }
            if prec < floor {
                v_m[(i, kk)] = 1.0 / floor;
            } else {
                let vm = 1.0 / prec;
                v_m[(i, kk)] = vm;
                m_hat[(i, kk)] = x_hat[(i, kk)] + acc * vm;
            }
        }
    }
    (m_hat, v_m)
}

/// Posterior of a `CN(0, 1)` symbol given the message `CN(m, v_m)`.
#[inline]
pub fn gaussian_symbol_posterior(m: Complex64, v_m: f64) -> (Complex64, f64) {
    (m / (1.0 + v_m), v_m / (1.0 + v_m))
}
