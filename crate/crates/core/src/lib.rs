//! Multi-cell Massive MIMO link-level simulator for blind estimation of the
//! downlink effective channel gain.
//!
//! The crate is organized along the processing chain of one coherence block:
//!
//! * [`scenario`]: cell grid with wrap-around, user drops, large-scale fading
//!   and the pilot plan.
//! * [`channel`]: local scattering correlation matrices and correlated
//!   Rayleigh sampling.
//! * [`uplink`]: pilot observation and MMSE channel estimation.
//! * [`downlink`]: MR precoding, effective gains and received data samples.
//! * [`estimators`]: hardening, model-aided, asymptotic genie and learned
//!   estimators of the own effective gain.
//! * [`learn`]: dataset generation and the feed-forward regression network.
//! * [`metrics`]: NMSE, ergodic SE bounds and empirical CDFs.
//! * [`harness`]: experiment orchestration and the command line front-end.

pub mod channel;
pub mod downlink;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod learn;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod scenario;
pub mod uplink;

pub use error::{Error, Result};

/// Complex sample type used throughout the simulator.
pub type C64 = num_complex::Complex64;
