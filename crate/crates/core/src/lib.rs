//! Encoder-adaptor-reconfigurator continual learning.
//!
//! A frozen encoder exposes intermediate taps. Each learned domain trains a
//! small set of adaptors that map taps to binary hypervectors, plus a
//! reconfigurator that classifies by nearest class prototype and scores
//! out-of-distribution inputs with a fitted Weibull CDF. A streaming engine
//! routes samples between domains, detects shifts and grows new domains
//! without touching existing ones.

pub mod adaptor;
mod binio;
pub mod config;
pub mod continual;
pub mod earm;
pub mod encoder;
pub mod error;
pub mod hdc;
pub mod metrics;
pub mod reconfigurator;
pub mod rng;
pub mod zsnas;

pub use error::{EarError, Result};
