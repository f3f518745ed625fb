//! Pre-whitening of the filtered noise.
//!
//! The receive filter colours the noise: its covariance is `s F F^T`. With
//! `L L^T = F F^T + loading * I` the transformed model
//! `L^-1 Y = (L^-1 Z) X G + L^-1 F W` has (for zero loading) white noise of
//! variance `s`.
//!
//! For `M > 1` the raised-cosine band leaves part of the sampled spectrum
//! empty, so `F F^T` has eigenvalues down to ~1e-9 at `M = 3`. Exact whitening
//! then blows up the out-of-band leakage of the truncated pulses by several
//! orders of magnitude. The receivers use a small diagonal loading that caps
//! this gain; `loading = 0` gives the exact factor.

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pulse::PulseBank;
use crate::signal::WindowObservation;

/// Default diagonal loading (relative to the unit-energy receive filter).
pub const DEFAULT_LOADING: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Whitener {
    /// Lower-triangular factor.
    pub l: DMatrix<f64>,
    /// `L^-1 Z`.
    pub z_white: DMatrix<f64>,
    pub loading: f64,
}

impl Whitener {
    pub fn new(pulse: &PulseBank, loading: f64) -> Result<Self> {
        if !(loading >= 0.0) {
            return Err(Error::InvalidParameter(format!("loading {loading} must be >= 0")));
        }
        let n = pulse.samples();
        let mut cov = &pulse.f * pulse.f.transpose();
        for i in 0..n {
            cov[(i, i)] += loading;
        }
        let chol = match Cholesky::new(cov.clone()) {
            Some(c) => c,
            None => {
                let eig = cov.symmetric_eigenvalues();
                let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
                return Err(Error::Factorization {
                    condition: max / min,
                });
            }
        };
        let l = chol.l();
        let z_white = l
            .solve_lower_triangular(&pulse.z)
            .ok_or(Error::Factorization {
                condition: f64::INFINITY,
            })?;
        Ok(Whitener { l, z_white, loading })
    }

    /// `L^-1 Y`.
    pub fn apply(&self, y: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        let (n, cols) = y.shape();
        if n != self.l.nrows() {
            return Err(Error::dims("whitening input rows", self.l.nrows(), n));
        }
        let mut split = DMatrix::zeros(n, 2 * cols);
        for c in 0..cols {
            for i in 0..n {
                split[(i, 2 * c)] = y[(i, c)].re;
                split[(i, 2 * c + 1)] = y[(i, c)].im;
            }
        }
        let solved = self
            .l
            .solve_lower_triangular(&split)
            .ok_or(Error::Factorization {
                condition: f64::INFINITY,
            })?;
        Ok(DMatrix::from_fn(n, cols, |i, c| {
            Complex64::new(solved[(i, 2 * c)], solved[(i, 2 * c + 1)])
        }))
    }

    /// `L Y_white`, the inverse of [`apply`](Self::apply).
    pub fn restore(&self, y_white: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        self.l.map(|v| Complex64::new(v, 0.0)) * y_white
    }
}

/// Exact pre-whitening (no loading): returns `(L^-1 Y, L^-1 Z)`.
pub fn prewhiten(
    obs: &WindowObservation,
    pulse: &PulseBank,
) -> Result<(DMatrix<Complex64>, DMatrix<f64>)> {
    let w = Whitener::new(pulse, 0.0)?;
    let y = w.apply(&obs.y)?;
    Ok((y, w.z_white))
}
