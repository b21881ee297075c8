//! Finite mixtures of hidden Markov models with zero-inflated gamma
//! emissions, aimed at minute-level accelerometer counts.
//!
//! Each subject belongs to one of `K` latent classes. Within a class the
//! activity level follows a stationary Markov chain over `M` states with a
//! class-specific transition matrix, and each state emits a zero-inflated
//! gamma value whose law is shared by every class. Missing stretches split a
//! subject's record into independent segments that all share the subject's
//! class.
//!
//! The crate covers simulation, EM estimation with restarts, posterior
//! decoding, BIC/ICL model selection and the simulation-study harnesses.

pub mod em;
pub mod emissions;
pub mod error;
pub mod inference;
pub mod markov;
pub mod model;
pub mod rng;
pub mod selection;
pub mod sequences;
pub mod simulate;
pub mod special;

pub use em::{fit, EmConfig, FitResult};
pub use emissions::ZigParams;
pub use error::{Error, Result};
pub use markov::{StationaryLaw, TransitionMatrix};
pub use model::MixtureHmmParams;
pub use sequences::{RawSeries, SegmentedSubject};
