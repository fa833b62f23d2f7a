//! Performance-bound prediction for quantum circuits running under drifting
//! device noise.
//!
//! The crate covers the whole offline/online workflow:
//!
//! * [`circuit`]: circuit representation, benchmark families, stage leveling.
//! * [`noise`]: per-timestamp device noise snapshots and synthetic noise traces.
//! * [`sim`]: a trajectory-based noisy statevector simulator used to produce
//!   performance traces and the repeated-simulation baseline bounds.
//! * [`decompose`]: outlier removal, moving-average trend/residual split and
//!   confidence offsets derived from the residual.
//! * [`encode`]: per-stage circuit + noise feature sequences and their
//!   normalization.
//! * [`predictor`]: a from-scratch LSTM regressor trained on trend labels.
//! * [`metrics`]: bound assembly, compliance rate, regression metrics and the
//!   linear-regression / PCA diagnostics.
//! * [`pipeline`]: the end-to-end experiment driver used by the CLI.

pub mod circuit;
pub mod decompose;
pub mod encode;
pub mod error;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod plot;
pub mod predictor;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
