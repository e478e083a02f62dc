//! Spectral abstraction and Markov simulation of chain-of-thought traces.
//!
//! Traces of per-step token hidden states are turned into spectral
//! embeddings, clustered into a handful of latent states, and modelled as a
//! first-order Markov chain that can be rolled out and compared against the
//! real step positions.

pub mod abstraction;
pub mod diagnostics;
pub mod error;
pub mod markov;
pub mod pipeline;
pub mod spectral;
pub mod trace_store;
pub mod viz;

pub use error::{Error, Result};
