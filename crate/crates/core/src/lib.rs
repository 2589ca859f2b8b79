//! Single-line outage identification from PMU phasor-change signatures.
//!
//! The pipeline runs bottom-up through the modules: [`case_io`] loads a grid,
//! [`powerflow`] solves it, [`demand`] synthesizes load paths, [`scenario`]
//! turns normal and outage solves into labelled observations, [`mlr`] and
//! [`solvers`] fit the classifier, [`placement`] picks PMU buses,
//! [`direct_obs`] adds direct line observations and [`eval`] scores the result.
//! [`experiment`] wires the stages together behind a config file.
//!
//! Statistical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binio;
pub mod case_io;
pub mod dataset;
pub mod demand;
pub mod direct_obs;
pub mod eval;
pub mod experiment;
pub mod linalg;
pub mod mlr;
pub mod placement;
pub mod powerflow;
pub mod scalar;
pub mod scenario;
pub mod solvers;

pub use scalar::Scalar;

pub type CoefficientMatrix = mlr::CoefficientMatrix<f64>;
pub type Dataset = dataset::Dataset<f64>;
pub type Observation = dataset::Observation<f64>;
pub type RegularizedSolution = solvers::RegularizedSolution<f64>;

pub type CoefficientMatrixF32 = mlr::CoefficientMatrix<f32>;
pub type DatasetF32 = dataset::Dataset<f32>;
