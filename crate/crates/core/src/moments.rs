//! Moment conditions `g(z, θ)` built from a small recipe language.
//!
//! A model has one outcome column `x` and a list of moment terms. The
//! parameter is `θ = μ`, or `θ = (μ, σ²)` when a [`MomentTerm::Square`] term
//! is present:
//!
//! | term            | `g`                | `∂g/∂μ`      | `∂g/∂σ²` |
//! |-----------------|--------------------|--------------|----------|
//! | `Level`         | `x - μ`            | `-1`         | `0`      |
//! | `Square`        | `(x - μ)² - σ²`    | `-2(x - μ)`  | `-1`     |
//! | `Cube`          | `(x - μ)³`         | `-3(x - μ)²` | `0`      |
//! | `Instrument(z)` | `(x - μ)·z`        | `-z`         | `0`      |
//!
//! Whether an instrument moment is statistically defensible (for example,
//! a correlation pretest between `x` and `z`) is left to the user.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{mean_and_variance, Dataset, DatasetError};
use crate::matrix::MomentMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("model has {q} moments for {p} parameters; need q >= p")]
    Underidentified { p: usize, q: usize },
    #[error("a model needs at least one moment term")]
    NoMoments,
    #[error("dataset has {n} rows; need at least q + 1 = {needed}")]
    TooFewObservations { n: usize, needed: usize },
    #[error("theta has {got} entries, model has {expected} parameters")]
    ThetaDimension { got: usize, expected: usize },
}

impl From<DatasetError> for ModelError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::MissingColumn(c) => ModelError::MissingColumn(c),
            other => ModelError::MissingColumn(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentTerm {
    Level,
    Square,
    Cube,
    Instrument(String),
}

/// A moment-condition model: outcome column plus moment recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentModel {
    pub name: String,
    pub outcome: String,
    pub moments: Vec<MomentTerm>,
}

/// `E[X - μ] = 0, E[(X - μ)² - σ²] = 0, E[(X - μ)³] = 0` with `θ = (μ, σ²)`.
pub fn central_moments_model() -> MomentModel {
    MomentModel {
        name: "central-moments".into(),
        outcome: "x".into(),
        moments: vec![MomentTerm::Level, MomentTerm::Square, MomentTerm::Cube],
    }
}

/// `E[X - μ] = 0, E[(X - μ)·days] = 0` with `θ = μ`, outcome `mpd`.
pub fn instrumented_mean_model() -> MomentModel {
    MomentModel {
        name: "instrumented-mean".into(),
        outcome: "mpd".into(),
        moments: vec![MomentTerm::Level, MomentTerm::Instrument("days".into())],
    }
}

/// Just-identified `E[X - μ] = 0`; every divergence is minimized by uniform
/// weights at the sample mean.
pub fn mean_only_model() -> MomentModel {
    MomentModel {
        name: "mean-only".into(),
        outcome: "x".into(),
        moments: vec![MomentTerm::Level],
    }
}

impl MomentModel {
    pub fn with_outcome(mut self, column: &str) -> Self {
        self.outcome = column.to_string();
        self
    }

    pub fn has_variance_parameter(&self) -> bool {
        self.moments.contains(&MomentTerm::Square)
    }

    /// Parameter dimension `p`.
    pub fn param_dim(&self) -> usize {
        1 + usize::from(self.has_variance_parameter())
    }

    /// Moment dimension `q`.
    pub fn moment_dim(&self) -> usize {
        self.moments.len()
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        if self.has_variance_parameter() {
            vec!["mu", "sigma2"]
        } else {
            vec!["mu"]
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.moments.is_empty() {
            return Err(ModelError::NoMoments);
        }
        let (p, q) = (self.param_dim(), self.moment_dim());
        if q < p {
            return Err(ModelError::Underidentified { p, q });
        }
        Ok(())
    }

    /// Resolves column bindings against a dataset.
    pub fn bind(&self, data: &Dataset) -> Result<BoundModel, ModelError> {
        self.validate()?;
        let outcome = data.column(&self.outcome)?;
        let mut terms = Vec::with_capacity(self.moments.len());
        for m in &self.moments {
            terms.push(match m {
                MomentTerm::Level => BoundTerm::Level,
                MomentTerm::Square => BoundTerm::Square,
                MomentTerm::Cube => BoundTerm::Cube,
                MomentTerm::Instrument(c) => BoundTerm::Instrument(data.column(c)?),
            });
        }
        Ok(BoundModel {
            p: self.param_dim(),
            outcome,
            terms,
        })
    }

    /// Search box for `θ`: `mean ± 6·sd/√n` for μ and `var × [0.2, 5]` for σ².
    pub fn default_bounds(&self, data: &Dataset) -> Result<Vec<(f64, f64)>, ModelError> {
        let x = data.column(&self.outcome)?;
        let (mean, var) = mean_and_variance(&x);
        let half = 6.0 * (var / x.len() as f64).sqrt();
        let mut bounds = vec![(mean - half, mean + half)];
        if self.has_variance_parameter() {
            bounds.push((0.2 * var, 5.0 * var));
        }
        Ok(bounds)
    }
}

#[derive(Debug, Clone)]
enum BoundTerm {
    Level,
    Square,
    Cube,
    Instrument(Vec<f64>),
}

/// A [`MomentModel`] with its columns pulled out of a dataset.
#[derive(Debug, Clone)]
pub struct BoundModel {
    p: usize,
    outcome: Vec<f64>,
    terms: Vec<BoundTerm>,
}

impl BoundModel {
    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn param_dim(&self) -> usize {
        self.p
    }

    pub fn moment_dim(&self) -> usize {
        self.terms.len()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    fn check_theta(&self, theta: &[f64]) -> Result<(), ModelError> {
        if theta.len() != self.p {
            return Err(ModelError::ThetaDimension {
                got: theta.len(),
                expected: self.p,
            });
        }
        Ok(())
    }

    /// `g_i(θ)` written into `out` (length q).
    pub fn eval_row(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        let d = self.outcome[i] - theta[0];
        for (o, term) in out.iter_mut().zip(&self.terms) {
            *o = match term {
                BoundTerm::Level => d,
                BoundTerm::Square => d * d - theta[1],
                BoundTerm::Cube => d * d * d,
                BoundTerm::Instrument(z) => d * z[i],
            };
        }
    }

    /// `G_i(θ) = ∂g_i/∂θ'` as a `q x p` matrix.
    pub fn jacobian_row(&self, i: usize, theta: &[f64]) -> DMatrix<f64> {
        let d = self.outcome[i] - theta[0];
        let mut jac = DMatrix::zeros(self.terms.len(), self.p);
        for (r, term) in self.terms.iter().enumerate() {
            match term {
                BoundTerm::Level => jac[(r, 0)] = -1.0,
                BoundTerm::Square => {
                    jac[(r, 0)] = -2.0 * d;
                    jac[(r, 1)] = -1.0;
                }
                BoundTerm::Cube => jac[(r, 0)] = -3.0 * d * d,
                BoundTerm::Instrument(z) => jac[(r, 0)] = -z[i],
            }
        }
        jac
    }

    pub fn moment_matrix(&self, theta: &[f64]) -> Result<MomentMatrix, ModelError> {
        self.check_theta(theta)?;
        let mut g = MomentMatrix::zeros(self.n(), self.moment_dim());
        self.fill_moments(theta, &mut g);
        Ok(g)
    }

    /// Overwrites `g` with `g_i(θ)` for every row. `g` must be `n x q`.
    pub fn fill_moments(&self, theta: &[f64], g: &mut MomentMatrix) {
        for i in 0..self.n() {
            self.eval_row(i, theta, g.row_mut(i));
        }
    }

    /// `Ḡ(θ) = (1/n) Σ G_i(θ)`.
    pub fn mean_jacobian(&self, theta: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        self.check_theta(theta)?;
        let mut acc = DMatrix::zeros(self.moment_dim(), self.p);
        for i in 0..self.n() {
            acc += self.jacobian_row(i, theta);
        }
        Ok(acc / self.n() as f64)
    }

    /// Largest relative discrepancy between the analytic Jacobian of row `i`
    /// and a central finite difference with step `h`.
    pub fn jacobian_check(&self, i: usize, theta: &[f64], h: f64) -> f64 {
        let q = self.moment_dim();
        let analytic = self.jacobian_row(i, theta);
        let mut plus = vec![0.0; q];
        let mut minus = vec![0.0; q];
        let mut worst = 0.0f64;
        for k in 0..self.p {
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[k] += h;
            tm[k] -= h;
            self.eval_row(i, &tp, &mut plus);
            self.eval_row(i, &tm, &mut minus);
            for r in 0..q {
                let fd = (plus[r] - minus[r]) / (2.0 * h);
                let a = analytic[(r, k)];
                worst = worst.max((fd - a).abs() / a.abs().max(1.0));
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn x_data(xs: &[f64]) -> Dataset {
        Dataset::from_column("x", xs.to_vec()).unwrap()
    }

    #[test]
    fn central_moments_values() {
        let m = central_moments_model().bind(&x_data(&[2.0, 1.0])).unwrap();
        let mut g = [0.0; 3];
        m.eval_row(0, &[1.0, 1.0], &mut g);
        assert_eq!(g, [1.0, 0.0, 1.0]);
        m.eval_row(1, &[1.0, 1.0], &mut g);
        assert_eq!(g, [0.0, -1.0, 0.0]);
    }

    #[test]
    fn central_moments_jacobian() {
        let m = central_moments_model().bind(&x_data(&[2.0])).unwrap();
        let j = m.jacobian_row(0, &[1.0, 1.0]);
        let want = DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, -2.0, -1.0, -3.0, 0.0]);
        assert_eq!(j, want);
        assert!(m.jacobian_check(0, &[1.0, 1.0], 1e-5) < 1e-5);
    }

    #[test]
    fn instrumented_mean_values() {
        let d = Dataset::from_rows(
            vec!["mpd".into(), "days".into()],
            vec![vec![12.0, 300.0], vec![14.0, 200.0]],
        )
        .unwrap();
        let m = instrumented_mean_model().bind(&d).unwrap();
        let mut g = [0.0; 2];
        m.eval_row(0, &[12.0], &mut g);
        assert_eq!(g, [0.0, 0.0]);
        m.eval_row(1, &[12.0], &mut g);
        assert_eq!(g, [2.0, 400.0]);
        let j = m.jacobian_row(1, &[12.0]);
        assert_eq!(j.as_slice(), &[-1.0, -200.0]);
    }

    #[test]
    fn missing_column() {
        let err = instrumented_mean_model().bind(&x_data(&[1.0])).unwrap_err();
        assert_eq!(err, ModelError::MissingColumn("mpd".into()));
        let err = instrumented_mean_model()
            .with_outcome("x")
            .bind(&x_data(&[1.0]))
            .unwrap_err();
        assert_eq!(err, ModelError::MissingColumn("days".into()));
    }

    #[test]
    fn dimensions_and_validation() {
        assert_eq!(central_moments_model().param_dim(), 2);
        assert_eq!(central_moments_model().moment_dim(), 3);
        assert_eq!(mean_only_model().param_dim(), 1);
        let under = MomentModel {
            name: "u".into(),
            outcome: "x".into(),
            moments: vec![MomentTerm::Square],
        };
        assert_eq!(
            under.validate(),
            Err(ModelError::Underidentified { p: 2, q: 1 })
        );
    }

    #[test]
    fn sample_mean_zeroes_level_moment() {
        let xs = [3.0, 5.5, 7.25, 1.0];
        let mean = xs.iter().sum::<f64>() / 4.0;
        let m = mean_only_model().bind(&x_data(&xs)).unwrap();
        let g = m.moment_matrix(&[mean]).unwrap();
        assert!(g.column_means()[0].abs() < 1e-15);
    }

    #[test]
    fn default_bounds_center_on_sample_statistics() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let b = central_moments_model()
            .default_bounds(&x_data(&xs))
            .unwrap();
        let (mean, var) = mean_and_variance(&xs);
        assert!(((b[0].0 + b[0].1) / 2.0 - mean).abs() < 1e-15);
        assert_eq!(b[1], (0.2 * var, 5.0 * var));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn analytic_jacobians_match_finite_differences(
            x in -5.0f64..5.0,
            z in 0.0f64..400.0,
            mu in -3.0f64..3.0,
            s2 in 0.1f64..4.0,
        ) {
            let d = Dataset::from_rows(
                vec!["x".into(), "mpd".into(), "days".into()],
                vec![vec![x, x, z]],
            ).unwrap();
            let cm = central_moments_model().bind(&d).unwrap();
            prop_assert!(cm.jacobian_check(0, &[mu, s2], 1e-5) <= 1e-5);
            let im = instrumented_mean_model().bind(&d).unwrap();
            prop_assert!(im.jacobian_check(0, &[mu], 1e-5) <= 1e-5);
            let mo = mean_only_model().bind(&d).unwrap();
            prop_assert!(mo.jacobian_check(0, &[mu], 1e-5) <= 1e-5);
        }
    }
}
