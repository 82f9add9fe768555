//! Adaptive dynamic model averaging.
//!
//! A pool of dynamic linear models, one per subset of the candidate
//! predictors, is filtered online. Each model's forgetting factor is either
//! fixed or tuned every step by ADAM on the one-step squared forecast error,
//! and the model forecasts are combined either by the DMA weight recursion or
//! by the ConfHedge aggregating algorithm.

pub mod adaptive;
pub mod combine;
pub mod data;
pub mod dlm;
pub mod engine;
pub mod error;
pub mod eval;
pub mod simgen;

pub use adaptive::{AdamConfig, AdamState, AfState};
pub use combine::{ConfHedgeState, DmaCombinerState};
pub use data::Dataset;
pub use dlm::{DlmState, ModelSpec, PredictiveDensity};
pub use engine::{EngineState, ForecastRecord, StrategyConfig, StrategyKind};
pub use error::{Error, Result};
pub use eval::{ClarkWest, EvalReport};
pub use simgen::SimSeries;
