//! Sequential latent-variable models on a shared chain skeleton.
//!
//! Three families live here side by side:
//!
//! - discrete-state hidden Markov models ([`model::HmmParams`]) with log-space
//!   forward–backward inference ([`hmm`]);
//! - linear Gaussian state space models ([`model::LgssmParams`]) with Kalman
//!   filtering and Rauch–Tung–Striebel smoothing ([`kalman`]);
//! - deterministic discretized state space models ([`ssm`]) evaluated either
//!   as a recurrent scan or as a causal convolution.
//!
//! Both probabilistic families are trained by expectation–maximization
//! ([`em`]). Every fast inference path has an independent brute-force
//! counterpart in [`oracle`].

pub mod check;
pub mod compare;
pub mod em;
pub mod error;
pub mod exec;
pub mod hmm;
pub mod io;
pub mod kalman;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod ssm;

pub use error::{Error, Result};
pub use exec::Exec;
pub use model::{
    ContinuousSsmParams, DiscreteSsmParams, Emission, EmissionFamily, HmmParams, InputSequence,
    LgssmParams, ObservationSequence, ValidationReport, Violation,
};
