//! Link-level simulator and receivers for asynchronous grant-free uplink
//! access with oversampled, delay-calibrated joint detection.

pub mod baseline;
pub mod em;
pub mod error;
pub mod harness;
pub mod juced_mp;
pub mod preamble;
pub mod pulse;
pub mod scenario;
pub mod signal;

pub use em::{run_em, DelayEstimate, EmConfig, EmOutcome, MStepMode};
pub use error::{Error, Result};
pub use juced_mp::{run_juced, JucedConfig, PosteriorState};
pub use preamble::{build_zc_pool, PreamblePool};
pub use pulse::{build_rrc_pulse, PulseBank};
pub use scenario::SimScenario;
pub use signal::{generate_realization, synthesize_window, UserRealization, WindowObservation};
