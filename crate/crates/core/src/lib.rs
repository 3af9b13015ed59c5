//! Learned process models and one-step-ahead predictive control for
//! wire-arc additive manufacturing (WAAM) of thin walls.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`] tracks path positions, layer traces and accumulated height
//!   profiles.
//! * [`plant`] is a synthetic deposition process used to generate data and to
//!   close the loop.
//! * [`models`] holds the recurrent model families (RNN, LSTM, GRU, NARX) and
//!   the static log-log baseline.
//! * [`training`] implements backpropagation through time, Adam, the capacity
//!   ablation and per-layer fine-tuning.
//! * [`control`] computes per-step targets and solves the constrained
//!   one-step-ahead least-squares problem.
//! * [`analysis`] reproduces the quality metrics and model diagnostics.
//! * [`io`] reads and writes the CSV, JSON and TOML artifacts.

pub mod analysis;
pub mod control;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod models;
pub mod plant;
pub mod training;

pub use error::{Error, Result};
