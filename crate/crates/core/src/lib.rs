//! Kernel ridge regression for response-skewed data.
//!
//! Three estimators share one kernel/solver stack:
//!
//! - full-sample KRR ([`krr::fit`]),
//! - classical divide-and-conquer KRR: a random even split into `k` nodes,
//!   one local fit per node, predictions averaged ([`partition::classical_plan`]),
//! - oversampling divide-and-conquer KRR: the response range is cut into
//!   equally spaced slices, minority slices are replicated before the
//!   per-slice split, and copies are de-duplicated inside each node
//!   ([`partition::oversample_plan`]).
//!
//! [`dac::fit_dac`] runs the local fits for either plan. The [`synth`] and
//! [`harness`] modules regenerate the skewed-response experiments and drive
//! the `skewkrr` command line tool.

pub mod dac;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod krr;
pub mod partition;
pub mod rng;
pub mod solve;
pub mod spectrum;
pub mod synth;

pub use dac::{fit_dac, predict_dac, DacModel, FitOptions, NodeRidge, PlanRecipe};
pub use error::{Error, Result};
pub use kernel::{gram, GramMatrix, KernelSpec};
pub use krr::{fit, median_bandwidth, predict, select_lambda, Dataset, KrrModel};
pub use partition::{classical_plan, make_slices, oversample_plan, PartitionPlan, SliceSpec, SlicingRule};
pub use solve::regularized_solve;
pub use spectrum::{effective_dimension, SpectrumDiagnostic};
