//! Static link configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel variance preset in dB: the average of the two path-loss constants
/// used for the full-scale setup. Only meaningful together with an absolute
/// transmit-power model, which this crate does not have.
pub const FULL_SCALE_CHANNEL_VAR_DB: f64 = (-128.1 - 118.1) / 2.0;

/// All static configuration of one simulated observation window.
///
/// Time is measured in symbol intervals (the symbol period is 1). Powers are
/// linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    /// Number of potential users in the window.
    pub num_users: usize,
    /// Probability that a user is active.
    pub activity_prob: f64,
    pub num_antennas: usize,
    pub preamble_len: usize,
    pub data_len: usize,
    /// Observation window length in symbols; must exceed the frame length.
    pub window_len: usize,
    pub oversampling: usize,
    /// Variance of the white noise before the receive filter.
    pub noise_var: f64,
    /// Variance of each channel gain of an active user.
    pub channel_var: f64,
    pub rolloff: f64,
    /// One-sided pulse support in symbols.
    pub pulse_span: usize,
    pub pool_size: usize,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self::desk()
    }
}

impl SimScenario {
    /// Reduced-scale configuration that runs in well under a second per trial.
    pub fn desk() -> Self {
        SimScenario {
            num_users: 32,
            activity_prob: 0.25,
            num_antennas: 16,
            preamble_len: 16,
            data_len: 32,
            window_len: 64,
            oversampling: 2,
            noise_var: 0.01,
            channel_var: 1.0,
            rolloff: 0.5,
            pulse_span: 3,
            pool_size: 4,
        }
    }

    /// The full-scale setup: 300 devices, 64 antennas, 64 Zadoff-Chu
    /// preambles of length 67 and 128 data symbols.
    pub fn full_scale() -> Self {
        SimScenario {
            num_users: 300,
            activity_prob: 0.25,
            num_antennas: 64,
            preamble_len: 67,
            data_len: 128,
            window_len: 67 + 128 + 32,
            oversampling: 2,
            noise_var: 0.01,
            channel_var: 1.0,
            rolloff: 0.5,
            pulse_span: 3,
            pool_size: 64,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.preamble_len + self.data_len
    }

    /// Number of receiver samples in the window.
    pub fn samples(&self) -> usize {
        self.window_len * self.oversampling
    }

    /// Largest admissible continuous delay, in symbols.
    pub fn max_delay(&self) -> f64 {
        (self.window_len - self.frame_len()) as f64
    }

    /// Largest admissible grid delay, in samples.
    pub fn max_offset(&self) -> usize {
        (self.window_len - self.frame_len()) * self.oversampling
    }

    pub fn with_oversampling(&self, oversampling: usize) -> Self {
        SimScenario {
            oversampling,
            ..self.clone()
        }
    }

    pub fn with_noise_var(&self, noise_var: f64) -> Self {
        SimScenario {
            noise_var,
            ..self.clone()
        }
    }

    /// Full check of the scenario invariants.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if !(self.activity_prob > 0.0 && self.activity_prob < 1.0) {
            return Err(Error::InvalidScenario(format!(
                "activity_prob {} not in (0, 1)",
                self.activity_prob
            )));
        }
        if self.noise_var <= 0.0 {
            return Err(Error::InvalidScenario("noise_var must be positive".into()));
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate) but admits the degenerate activity
    /// probabilities 0 and 1 and a noiseless channel, which the generators
    /// handle fine.
    pub fn validate_structure(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidScenario(msg));
        let counts = [
            ("num_users", self.num_users),
            ("num_antennas", self.num_antennas),
            ("preamble_len", self.preamble_len),
            ("data_len", self.data_len),
            ("window_len", self.window_len),
            ("oversampling", self.oversampling),
            ("pulse_span", self.pulse_span),
            ("pool_size", self.pool_size),
        ];
        for (name, v) in counts {
            if v < 1 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.window_len <= self.frame_len() {
            return fail(format!(
                "window_len {} must exceed the frame length {}",
                self.window_len,
                self.frame_len()
            ));
        }
        if !(0.0..=1.0).contains(&self.activity_prob) {
            return fail(format!("activity_prob {} not in [0, 1]", self.activity_prob));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return fail(format!("noise_var {} must be non-negative", self.noise_var));
        }
        if !(self.channel_var > 0.0 && self.channel_var.is_finite()) {
            return fail(format!("channel_var {} must be positive", self.channel_var));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return fail(format!("rolloff {} not in [0, 1]", self.rolloff));
        }
        Ok(())
    }
}
