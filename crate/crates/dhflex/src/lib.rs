//! Co-simulation of a small CHP-fed district heating network.
//!
//! The library couples a quadratic-law hydraulic solver, a plug-flow pipe
//! temperature model, lumped-capacitance building models, multi-node
//! stratified storage tanks and black-box CHP/boiler plant models into a
//! discrete-time simulation. Two control strategies are provided: a
//! heat-driven reference controller and a price-driven three-step dispatch
//! (bid aggregation, finite-horizon planning, market clearing with PI trim).
//!
//! The [`engine`] module orchestrates whole scenarios and the [`econ`] module
//! turns the resulting traces into cost/revenue comparisons.

pub mod audit;
pub mod building;
pub mod consts;
pub mod dispatch;
pub mod econ;
pub mod engine;
pub mod error;
pub mod hydronet;
pub mod plant;
pub mod storage;
pub mod thermonet;

pub use error::{Error, Result};
