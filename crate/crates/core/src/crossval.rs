//! K-fold cross-validation over a γ grid, followed by a full-sample refit.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::divergence::Gamma;
use crate::estimator::{estimate, EstimateError, EstimationResult, SearchConfig};
use crate::matrix::MomentMatrix;
use crate::moments::{ModelError, MomentModel};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CvError {
    #[error("need 2 <= K <= n folds, got K = {folds} with n = {n}")]
    BadFoldCount { folds: usize, n: usize },
    #[error("gamma grid is empty")]
    EmptyGrid,
    #[error("gamma grid must be strictly increasing")]
    GridNotIncreasing,
    #[error("gamma grid has {len} points, above the configured limit of {max}")]
    GridTooLarge { len: usize, max: usize },
    #[error("bad grid specification: {0}")]
    BadGridSpec(String),
    #[error("prediction loss needs a single-parameter model with an outcome column")]
    NotApplicable,
    #[error("every gamma in the grid had at least one failed fold")]
    AllGammaFailed,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("refit failed: {0}")]
    Refit(EstimateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvLoss {
    /// `‖ mean of g over the validation fold ‖²` at the training estimate.
    MomentInstability,
    /// Mean squared deviation of validation outcomes from the training μ̂.
    PredictionMse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub gamma_grid: Vec<Gamma>,
    pub folds: usize,
    pub loss: CvLoss,
    pub seed: u64,
    pub shuffle: bool,
    pub ci_level: f64,
    /// Grids longer than this are refused unless the limit is raised.
    pub max_grid_points: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            gamma_grid: gamma_grid(-2.0, 2.0, 0.05).expect("static grid"),
            folds: 5,
            loss: CvLoss::MomentInstability,
            seed: 0,
            shuffle: true,
            ci_level: 0.95,
            max_grid_points: 1001,
        }
    }
}

impl CvConfig {
    pub fn validate(&self, n: usize) -> Result<(), CvError> {
        if self.folds < 2 || self.folds > n {
            return Err(CvError::BadFoldCount {
                folds: self.folds,
                n,
            });
        }
        if self.gamma_grid.is_empty() {
            return Err(CvError::EmptyGrid);
        }
        if self.gamma_grid.len() > self.max_grid_points {
            return Err(CvError::GridTooLarge {
                len: self.gamma_grid.len(),
                max: self.max_grid_points,
            });
        }
        if self
            .gamma_grid
            .windows(2)
            .any(|w| !(w[0].value() < w[1].value()))
        {
            return Err(CvError::GridNotIncreasing);
        }
        Ok(())
    }
}

/// `lo, lo + step, ..., hi`, with values rounded to 12 decimals so that
/// decimal steps land on exact grid values.
pub fn gamma_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<Gamma>, CvError> {
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || !(step > 0.0) || hi < lo {
        return Err(CvError::BadGridSpec(format!("{lo}:{hi}:{step}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..count)
        .map(|k| {
            let v = ((lo + k as f64 * step) * 1e12).round() / 1e12;
            Gamma::new(v).map_err(|e| CvError::BadGridSpec(e.to_string()))
        })
        .collect()
}

/// Fold label of every row. Rows are permuted with a seeded shuffle (or kept
/// in order) and cut into K contiguous blocks; the first `n mod K` folds get
/// one extra row.
pub fn kfold_partition(
    n: usize,
    folds: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<usize>, CvError> {
    if folds < 2 || folds > n {
        return Err(CvError::BadFoldCount { folds, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let (base, extra) = (n / folds, n % folds);
    let mut labels = vec![0; n];
    let mut pos = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        for &row in &order[pos..pos + size] {
            labels[row] = f;
        }
        pos += size;
    }
    Ok(labels)
}

pub fn cv_loss_moment_instability(validation_g: &MomentMatrix) -> f64 {
    validation_g.column_means().norm_squared()
}

pub fn cv_loss_prediction_mse(validation_outcomes: &[f64], theta_hat: f64) -> f64 {
    let m = validation_outcomes.len() as f64;
    validation_outcomes
        .iter()
        .map(|x| (x - theta_hat).powi(2))
        .sum::<f64>()
        / m
}

/// Cross-validation result for one γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvGammaRow {
    pub gamma: Gamma,
    /// Mean validation loss; absent when any fold failed.
    pub mean_loss: Option<f64>,
    pub failed_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub loss: CvLoss,
    pub per_gamma: Vec<CvGammaRow>,
    pub selected_gamma: Gamma,
    pub fold_assignments: Vec<usize>,
    pub refit: EstimationResult,
}

fn fold_loss(
    train: &Dataset,
    valid: &Dataset,
    model: &MomentModel,
    gamma: Gamma,
    cv: &CvConfig,
    search: &SearchConfig,
    solver: &SolverConfig,
) -> Option<f64> {
    let fit = estimate(train, model, gamma, search, solver, cv.ci_level).ok()?;
    let loss = match cv.loss {
        CvLoss::MomentInstability => {
            let g = model.bind(valid).ok()?.moment_matrix(&fit.theta_hat).ok()?;
            cv_loss_moment_instability(&g)
        }
        CvLoss::PredictionMse => {
            let outcomes = valid.column(&model.outcome).ok()?;
            cv_loss_prediction_mse(&outcomes, fit.theta_hat[0])
        }
    };
    loss.is_finite().then_some(loss)
}

/// Smallest mean loss among fully converged γ; ties go to the smallest |γ|,
/// then the smallest γ.
pub fn pick_gamma(rows: &[CvGammaRow]) -> Option<Gamma> {
    rows.iter()
        .filter(|r| r.failed_folds == 0)
        .filter_map(|r| r.mean_loss.map(|l| (l, r.gamma)))
        .min_by(|(la, ga), (lb, gb)| {
            la.total_cmp(lb)
                .then(ga.value().abs().total_cmp(&gb.value().abs()))
                .then(ga.value().total_cmp(&gb.value()))
        })
        .map(|(_, g)| g)
}

/// Runs the K-fold loop for every γ on the grid, selects γ̂, and refits on
/// the full sample.
pub fn select_gamma(
    dataset: &Dataset,
    model: &MomentModel,
    cv: &CvConfig,
    search: &SearchConfig,
    solver: &SolverConfig,
) -> Result<CvReport, CvError> {
    let n = dataset.n();
    cv.validate(n)?;
    model.validate()?;
    if cv.loss == CvLoss::PredictionMse
        && (model.param_dim() != 1 || dataset.column_index(&model.outcome).is_none())
    {
        return Err(CvError::NotApplicable);
    }
    let labels = kfold_partition(n, cv.folds, cv.seed, cv.shuffle)?;
    let splits: Vec<(Dataset, Dataset)> = (0..cv.folds)
        .map(|f| {
            let (valid, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| labels[i] == f);
            (dataset.select_rows(&train), dataset.select_rows(&valid))
        })
        .collect();

    let items: Vec<(usize, usize)> = (0..cv.gamma_grid.len())
        .flat_map(|g| (0..cv.folds).map(move |f| (g, f)))
        .collect();
    let losses: Vec<Option<f64>> = items
        .par_iter()
        .map(|&(g, f)| {
            let (train, valid) = &splits[f];
            fold_loss(train, valid, model, cv.gamma_grid[g], cv, search, solver)
        })
        .collect();

    let per_gamma: Vec<CvGammaRow> = cv
        .gamma_grid
        .iter()
        .zip(losses.chunks(cv.folds))
        .map(|(&gamma, fl)| {
            let failed = fl.iter().filter(|l| l.is_none()).count();
            let mean_loss =
                (failed == 0).then(|| fl.iter().flatten().sum::<f64>() / cv.folds as f64);
            CvGammaRow {
                gamma,
                mean_loss,
                failed_folds: failed,
            }
        })
        .collect();

    let selected = pick_gamma(&per_gamma).ok_or(CvError::AllGammaFailed)?;
    let refit =
        estimate(dataset, model, selected, search, solver, cv.ci_level).map_err(CvError::Refit)?;
    Ok(CvReport {
        loss: cv.loss,
        per_gamma,
        selected_gamma: selected,
        fold_assignments: labels,
        refit,
    })
}
