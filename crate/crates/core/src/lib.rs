//! Tabular time-averaged active inference as average-cost feedback control.
//!
//! A three-level hierarchical generative model with embedded policies, a
//! reference model whose surprisal is the control cost, and a factored
//! recognition model are stored as conditional probability tables. On top of
//! them sit the step objectives, an exhaustive enumeration oracle, relative
//! value iteration, path-integral value estimators, exact-gradient training
//! and a thermostat simulator.
//!
//! Everything is generic over the scalar type ([`Scalar`], implemented for
//! `f32` and `f64`); the aliases at the crate root fix it to `f64`.

#![allow(clippy::needless_range_loop)]

pub mod chain;
pub mod control;
pub mod error;
pub mod logspace;
pub mod model;
pub mod objectives;
pub mod oracle;
pub mod scalar;
pub mod sim;
pub mod validate;

pub use chain::{Chain, CostKind, Density};
pub use error::{Error, Result};
pub use model::{
    Carry, CompleteState, ConditionalTable, Context, GenTable, GenerativeModel, Latents, ModelBundle, ModelSpec,
    ParamTable, RecTable, RecognitionModel, ReferenceModel, Trajectory,
};
pub use objectives::{RateEstimate, StepObjective};
pub use oracle::EnumerationBudget;
pub use scalar::Scalar;

pub type Model = GenerativeModel<f64>;
pub type Reference = ReferenceModel<f64>;
pub type Recognition = RecognitionModel<f64>;
pub type Table = ConditionalTable<f64>;
pub type Params = ParamTable<f64>;
pub type Bundle = ModelBundle<f64>;
pub type Rollouts = Chain<f64>;
