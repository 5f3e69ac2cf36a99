//! Distribution-free prediction intervals for regression computed from a
//! single model fit.
//!
//! Full conformal prediction refits the model for every candidate value of
//! the unknown target. When the fitting procedure is algorithmically stable,
//! i.e. the conformity score of every point moves by at most `tau_i` when the
//! candidate changes, the conformity function can be sandwiched between two
//! bounds that only require one fit at an arbitrary anchor candidate. The
//! upper bound yields a set that contains the exact conformal set and keeps
//! its coverage guarantee.
//!
//! Module map:
//!
//! - [`conformity`]: ranks, conformity scores, the exact conformity function
//!   and the grid-based exact conformal set (verification oracle).
//! - [`models`]: ridge, LAD-ridge and the piecewise-linear interpolated model.
//! - [`stability`]: stability bound vectors from model regularity constants.
//! - [`conformal`]: sandwich bounds, the one-fit stable set (closed form and
//!   bisection), batch/interpolated variants and the split/oracle/root
//!   baselines.
//! - [`data`]: synthetic generators, CSV ingestion, standardization, splits.
//! - [`harness`]: repeated coverage/length/time benchmark protocol.

pub mod conformal;
pub mod conformity;
pub mod data;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod models;
pub mod stability;

pub use conformity::{PredictionSet, ScoreFunction, SetShape};
pub use dataset::TabularDataset;
pub use error::{Error, Result};
pub use models::{FittedModel, ModelSpec, Predictor};
pub use stability::{StabilityBounds, TauProvenance};
