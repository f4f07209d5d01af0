//! Simulation laboratory for adaptive-zoom quantized control of unstable
//! linear systems over discrete noisy channels with feedback.
//!
//! Modules:
//! - [`plant`]: scalar and diagonal-vector linear systems with Gaussian noise;
//! - [`quantizer`]: uniform quantizer with overflow symbol and exact-lattice
//!   adaptive zoom;
//! - [`channel`]: DMCs, a burst channel with memory, block codebooks, and an
//!   exact ML decoder with error classification;
//! - [`infotheory`]: capacity, rate thresholds, error exponents, tail bounds,
//!   and second-moment condition checkers;
//! - [`stability`]: stopping times, geometric tail fits, drift verification,
//!   and ergodic diagnostics;
//! - [`sim`]: the closed control loop;
//! - [`config`] / [`experiment`]: TOML experiment configs, deterministic
//!   Monte Carlo replication, persistence, and summaries.

pub mod channel;
pub mod config;
pub mod error;
pub mod experiment;
pub mod infotheory;
pub mod plant;
pub mod quantizer;
pub mod sim;
pub mod stability;

pub use error::{ConfigError, Result};
