//! Large-margin Mahalanobis metric learning for nearest-neighbor
//! classification, driven by triplet mining.
//!
//! The pipeline: [`mining`] turns a labeled [`Dataset`] into anchor /
//! positive / negative triplets under one of seven strategies, [`solver`]
//! fits a PSD metric to those triplets, and [`hierarchical`] repeats the two
//! on stratified samples from growing hyperspheres, projecting the data after
//! each one. [`eval`] scores the result with kNN and runs the benchmark grid.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod hierarchical;
pub mod io;
pub mod metric;
pub mod mining;
pub mod rng;
pub mod solver;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use eval::{knn_classify, run_benchmark, BenchmarkConfig, BenchmarkReport, Mode};
pub use hierarchical::{hierarchical_train, HierarchicalConfig, HierarchicalResult};
pub use metric::{
    factorize_metric, mahalanobis_distance_sq, pca_fit_project, project_dataset, psd_project, MetricMatrix,
    ProjectionMatrix,
};
pub use mining::{mine, MiningStrategy, NegSamplingConfig, Triplet, TripletSet};
pub use nalgebra::DMatrix;
pub use solver::{objective, solve, subgradient, ObjectiveBreakdown, SolverConfig};
