//! Moment-condition estimation with the Cressie–Read power-divergence family.
//!
//! The power parameter γ is treated as a hyperparameter: every estimate is
//! made at a fixed γ, and [`crossval`] selects γ from data.
//!
//! Layers, bottom up:
//!
//! - [`divergence`]: the divergence, its γ-limits, and the implied-weight map.
//! - [`moments`]: moment models `g(z, θ)`.
//! - [`solver`]: Newton solve for the multipliers at fixed θ.
//! - [`estimator`]: profiled grid search over θ, standard errors.
//! - [`diagnostics`]: second-order multiplier terms and weight summaries.
//! - [`crossval`]: K-fold selection of γ.
//! - [`montecarlo`]: simulation harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::manual_is_multiple_of)]

pub mod crossval;
pub mod dataset;
pub mod diagnostics;
pub mod divergence;
pub mod estimator;
pub mod matrix;
pub mod moments;
pub mod montecarlo;
pub mod solver;

pub use crossval::{
    cv_loss_moment_instability, cv_loss_prediction_mse, gamma_grid, kfold_partition, select_gamma,
    CvConfig, CvError, CvGammaRow, CvLoss, CvReport,
};
pub use dataset::Dataset;
pub use diagnostics::{
    b_lambda, delta_statistic, second_order_report, weight_summary, SecondOrderReport,
    WeightSummary,
};
pub use divergence::{
    crpd_divergence, delta_population, implied_weights, Branch, Gamma, WeightVector,
};
pub use estimator::{
    estimate, profiled_objective, tie_break_argmin, EstimateError, EstimationResult, SearchConfig,
};
pub use matrix::MomentMatrix;
pub use moments::{
    central_moments_model, instrumented_mean_model, mean_only_model, MomentModel, MomentTerm,
};
pub use montecarlo::{
    draw_sample, run_cell, run_study, DgpSpec, SimulationConfig, SimulationMetrics,
};
pub use solver::{
    multiplier_jacobian, solve_multipliers, MultiplierState, SolverConfig, SolverError,
};
