//! Passive fingerprinting of the model architecture family (CNN, RNN or
//! anything else) trained by a federated-learning client, using only
//! encrypted-traffic metadata: frame sizes, directions and timing.
//!
//! The crate is organised as a pipeline:
//!
//! * [`ingest`] parses CSV captures and isolates one client's traffic.
//! * [`segmentation`] cuts client traces into fixed-duration windows and drops
//!   idle/control-only windows.
//! * [`features`] turns a window into the flow-level (39 values) and
//!   packet-level (29 values) views.
//! * [`learners`] holds the from-scratch models: CART, random forests,
//!   logistic regression and gradient-boosted trees, plus stratified k-fold
//!   and grid search.
//! * [`fusion`] trains the two one-vs-rest pipelines (CNN vs. rest, RNN vs.
//!   rest) with late fusion of the per-view probabilities.
//! * [`analysis`] scores pipelines (closed/open world, window sweeps) and
//!   measures feature separability (Fisher score, KL divergence).
//! * [`flsim`] generates labelled synthetic FL traffic and emulates
//!   throughput-denial attacks.
//!
//! With the default `parallel` feature, per-tree, per-session and per-window
//! work runs on the rayon thread pool. Every unit of work owns an RNG stream
//! derived from `(seed, unit index)`, so results do not depend on the
//! feature or on the number of threads.

pub mod analysis;
pub mod features;
pub mod flsim;
pub mod fusion;
pub mod ingest;
pub mod learners;
pub mod par;
pub mod segmentation;

mod error;

pub use error::{Error, Result};
