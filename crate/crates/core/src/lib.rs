//! Learning non-Markovian dynamics from trajectory data.
//!
//! The crate bundles everything the experiment CLI needs: a small
//! reverse-mode autodiff engine, truncated path signatures computed through
//! it, delay-differential benchmark systems with a fixed-step solver,
//! windowed signature / recurrent / point encoders paired with
//! continuous-time decoders, and a deterministic training loop.

pub mod autodiff;
pub mod dde;
pub mod models;
pub mod parallel;
pub mod rng;
pub mod series;
pub mod signature;
pub mod training;
