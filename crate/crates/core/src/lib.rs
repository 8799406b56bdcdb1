//! Estimation of weighted average treatment effects (ATE, ATT, ATC, ATO) from
//! two-phase samples.
//!
//! The crate provides inverse-probability-of-sampling weighted estimators and
//! their enriched counterparts, which augment the phase-2 estimating equations
//! with stratum means over the phase-1 sample. Around them sit influence-function
//! and sandwich variance estimation, a delete-d jackknife, optimal phase-2
//! allocation, phase-2 samplers and a Monte Carlo harness.

pub mod dataset;
pub mod design;
pub mod error;
pub mod estimand;
pub mod estimators;
pub mod exec;
pub mod format;
pub mod inference;
pub mod jackknife;
pub mod nuisance;
pub mod simstudy;
pub mod twophase;

pub use error::{Error, Result};
