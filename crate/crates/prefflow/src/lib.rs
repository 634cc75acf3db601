//! Desk-scale lab for direct preference optimization of diffusion and
//! flow-matching generative models.
//!
//! The crate trains small regressors on low-dimensional synthetic data and
//! verifies the mathematics behind preference-aligned generative training:
//! noise schedules and their SDE coefficients, reverse-time sampling, the
//! unified preference objective and its gradient structure, the linear
//! utility with a clipped floor, and EMA reference updates.
//!
//! Modules:
//!
//! - [`schedules`] — VP/VE/RF noise schedules and the alpha/sigma <-> f/g algebra
//! - [`dynamics`] — perturbation, targets, score/velocity conversions, sampling
//! - [`nn`] — MLP regressor, autodiff tape, finite-difference oracle, optimizer
//! - [`objectives`] — preference margins, losses, utilities, gradient weights
//! - [`training`] — trainers with EMA reference updates and metric logging
//! - [`data`] — synthetic preference-pair datasets and persistence
//! - [`config`] — validated run configuration
//! - [`verify`] — registered property checks behind `prefflow verify`
//! - [`plot`] — static SVG charts for metrics and utility curves

pub mod config;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod math;
pub mod nn;
pub mod objectives;
pub mod plot;
pub mod rng;
pub mod schedules;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
