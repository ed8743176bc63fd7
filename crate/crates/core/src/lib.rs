//! Neural additive Fine-Gray model for competing-risks survival analysis.
//!
//! Each covariate passes through its own small network; per-cause
//! projections of those representations add up to the log subdistribution
//! hazard ratio of every cause. Training minimizes the IPCW-weighted
//! Fine-Gray partial likelihood, and a Breslow-type baseline turns the
//! linear predictors into cumulative incidence curves.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iteration otherwise.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod finegray;
pub mod interpret;
pub mod metrics;
pub mod nam;
pub mod optim;
pub mod par;
pub mod survival;
pub mod synth;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use data::{PreprocessPlan, Schema, SurvivalDataset};
pub use error::{Error, Result};
pub use finegray::{BaselineCif, CifPrediction};
pub use metrics::MetricsReport;
pub use nam::{Architecture, NamModel};
pub use survival::CensoringModel;
pub use trainer::{TrainConfig, TrainReport};
