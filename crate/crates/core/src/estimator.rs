//! Outer problem: minimize the profiled divergence `L_n(θ)` over a box by
//! repeated grid search, then attach first-order standard errors.
//!
//! Each round evaluates an odd `m^p` grid centered on the current best point
//! (the first round on the center of the search box), sweeping it in
//! boustrophedon order so consecutive points are neighbors and the inner
//! solver can warm-start. Later rounds shrink the half-width by
//! `refine_shrink` around the incumbent. Points outside the original box are
//! skipped. Inner-solver failures score `+∞`.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::divergence::{crpd_divergence, Gamma, WeightVector};
use crate::matrix::{inverse, is_well_conditioned_spd, MomentMatrix};
use crate::moments::{BoundModel, ModelError, MomentModel};
use crate::solver::{solve_multipliers, MultiplierState, SolverConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("the profiled objective is infinite at every grid point")]
    AllInfeasible,
    #[error("every candidate value is infinite")]
    AllInfinite,
    #[error("mean moment Jacobian at theta_hat has column rank < {p}")]
    RankDeficient { p: usize },
    #[error("moment second-moment matrix at theta_hat is singular")]
    SingularOmega,
    #[error("invalid search configuration: {0}")]
    InvalidSearch(String),
    #[error("ci_level must lie in (0, 1), got {0}")]
    InvalidCiLevel(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub grid_points_per_dim: usize,
    pub refine_rounds: usize,
    pub refine_shrink: f64,
    /// Overrides the model's data-driven box when set.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid_points_per_dim: 41,
            refine_rounds: 3,
            refine_shrink: 0.2,
            bounds: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), EstimateError> {
        let m = self.grid_points_per_dim;
        if m < 3 || m % 2 == 0 {
            return Err(EstimateError::InvalidSearch(format!(
                "grid_points_per_dim must be odd and >= 3, got {m}"
            )));
        }
        if !(self.refine_shrink > 0.0 && self.refine_shrink < 1.0) {
            return Err(EstimateError::InvalidSearch(
                "refine_shrink must lie in (0, 1)".into(),
            ));
        }
        if let Some(b) = &self.bounds {
            if b.iter()
                .any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi))
            {
                return Err(EstimateError::InvalidSearch(
                    "bounds must be finite with lo < hi".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One full fit at a fixed γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub param_names: Vec<String>,
    pub theta_hat: Vec<f64>,
    pub multipliers: MultiplierState,
    pub weights: WeightVector,
    pub divergence_value: f64,
    pub std_errors: Vec<f64>,
    /// Row-major `p x p`.
    pub cov_theta: Vec<Vec<f64>>,
    pub ci_level: f64,
    pub ci: Vec<(f64, f64)>,
    pub gamma: Gamma,
    pub n: usize,
    pub objective_evals: usize,
}

/// Two-sided normal critical value for a confidence level.
pub fn normal_critical_value(ci_level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + ci_level / 2.0)
}

/// Index of the smallest finite value; ties go to the lexicographically
/// smallest θ.
pub fn tie_break_argmin(values: &[f64], thetas: &[Vec<f64>]) -> Result<usize, EstimateError> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        best = Some(match best {
            None => i,
            Some(b) => match v.partial_cmp(&values[b]).expect("finite") {
                Ordering::Less => i,
                Ordering::Greater => b,
                Ordering::Equal => {
                    if lex_cmp(&thetas[i], &thetas[b]) == Ordering::Less {
                        i
                    } else {
                        b
                    }
                }
            },
        });
    }
    best.ok_or(EstimateError::AllInfinite)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Evaluates `L_n(θ)` repeatedly for one bound model and γ, reusing the
/// moment buffer.
pub struct Profiler<'a> {
    model: &'a BoundModel,
    gamma: Gamma,
    solver: SolverConfig,
    g: MomentMatrix,
    evals: usize,
}

impl<'a> Profiler<'a> {
    pub fn new(model: &'a BoundModel, gamma: Gamma, solver: SolverConfig) -> Self {
        Self {
            g: MomentMatrix::zeros(model.n(), model.moment_dim()),
            model,
            gamma,
            solver,
            evals: 0,
        }
    }

    pub fn evals(&self) -> usize {
        self.evals
    }

    /// Solves the inner problem at θ. `None` on any inner failure.
    pub fn solve(
        &mut self,
        theta: &[f64],
        warm: Option<&MultiplierState>,
    ) -> Option<(f64, MultiplierState)> {
        self.evals += 1;
        self.model.fill_moments(theta, &mut self.g);
        let state = match solve_multipliers(&self.g, self.gamma, &self.solver, warm) {
            Ok(s) => s,
            Err(e) if warm.is_some() && !e.is_certified() => {
                solve_multipliers(&self.g, self.gamma, &self.solver, None).ok()?
            }
            Err(_) => return None,
        };
        let value = crpd_divergence(&state.weights, self.gamma).ok()?;
        value.is_finite().then_some((value, state))
    }

    /// `L_n(θ)`, `+∞` on inner failure.
    pub fn objective(&mut self, theta: &[f64]) -> f64 {
        self.solve(theta, None).map_or(f64::INFINITY, |(v, _)| v)
    }
}

/// `L_n(θ) = 𝓘_γ(π̂(θ), 1/n)`; `+∞` when the inner problem has no interior
/// solution at θ.
pub fn profiled_objective(
    theta: &[f64],
    dataset: &Dataset,
    model: &MomentModel,
    gamma: Gamma,
    config: &SolverConfig,
) -> Result<f64, EstimateError> {
    let bound = model.bind(dataset)?;
    if theta.len() != bound.param_dim() {
        return Err(ModelError::ThetaDimension {
            got: theta.len(),
            expected: bound.param_dim(),
        }
        .into());
    }
    Ok(Profiler::new(&bound, gamma, *config).objective(theta))
}

/// Grid coordinates for point `idx` of an `m^p` boustrophedon sweep.
fn sweep_digits(mut idx: usize, m: usize, p: usize, digits: &mut [usize]) {
    // Mixed-radix digits, slowest dimension first.
    for k in (0..p).rev() {
        digits[k] = idx % m;
        idx /= m;
    }
    // Reflect a dimension whenever the number of completed passes of the
    // slower dimensions is odd.
    let mut prefix = 0usize;
    for d in digits.iter_mut() {
        let raw = *d;
        if prefix % 2 == 1 {
            *d = m - 1 - raw;
        }
        prefix = prefix * m + raw;
    }
}

/// One grid round: every point, in sweep order, with its objective.
pub(crate) struct GridRound {
    pub thetas: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub states: Vec<Option<MultiplierState>>,
}

pub(crate) fn grid_round(
    profiler: &mut Profiler<'_>,
    center: &[f64],
    half_width: &[f64],
    limits: &[(f64, f64)],
    m: usize,
) -> GridRound {
    let p = center.len();
    let total = m.pow(p as u32);
    let mid = (m - 1) / 2;
    let mut digits = vec![0usize; p];
    let mut out = GridRound {
        thetas: Vec::with_capacity(total),
        values: Vec::with_capacity(total),
        states: Vec::with_capacity(total),
    };
    let mut warm: Option<usize> = None;
    for idx in 0..total {
        sweep_digits(idx, m, p, &mut digits);
        let theta: Vec<f64> = (0..p)
            .map(|k| {
                let offset = digits[k] as f64 - mid as f64;
                center[k] + offset * half_width[k] / mid as f64
            })
            .collect();
        let inside = theta
            .iter()
            .zip(limits)
            .all(|(t, (lo, hi))| *t >= *lo && *t <= *hi);
        let solved = if inside {
            let start = warm.and_then(|w| out.states[w].as_ref());
            profiler.solve(&theta, start)
        } else {
            None
        };
        match solved {
            Some((v, state)) => {
                warm = Some(idx);
                out.values.push(v);
                out.states.push(Some(state));
            }
            None => {
                out.values.push(f64::INFINITY);
                out.states.push(None);
            }
        }
        out.thetas.push(theta);
    }
    out
}

/// The refinement loop. Returns the incumbent and the last completed round.
pub(crate) fn search_grid(
    profiler: &mut Profiler<'_>,
    limits: &[(f64, f64)],
    search: &SearchConfig,
) -> Result<(f64, Vec<f64>, MultiplierState, GridRound), EstimateError> {
    let mut center: Vec<f64> = limits.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let mut half: Vec<f64> = limits.iter().map(|(lo, hi)| 0.5 * (hi - lo)).collect();
    let m = search.grid_points_per_dim;
    // The incumbent is always a point of the next round's grid, so the final
    // round's argmin is no worse than anything seen before.
    let mut best: Option<(f64, Vec<f64>, MultiplierState, GridRound)> = None;
    for round in 0..=search.refine_rounds {
        let grid = grid_round(profiler, &center, &half, limits, m);
        let idx = match tie_break_argmin(&grid.values, &grid.thetas) {
            Ok(i) => i,
            Err(_) if round == 0 => return Err(EstimateError::AllInfeasible),
            Err(_) => break,
        };
        let state = grid.states[idx].clone().expect("finite value has a state");
        center.clone_from(&grid.thetas[idx]);
        best = Some((grid.values[idx], grid.thetas[idx].clone(), state, grid));
        half.iter_mut().for_each(|h| *h *= search.refine_shrink);
    }
    Ok(best.expect("round 0 succeeded"))
}

/// Grid-plus-refinement minimization of `L_n(θ)` with covariance
/// `(1/n)(Ḡ'Ω̂⁻¹Ḡ)⁻¹` evaluated at θ̂.
pub fn estimate(
    dataset: &Dataset,
    model: &MomentModel,
    gamma: Gamma,
    search: &SearchConfig,
    solver: &SolverConfig,
    ci_level: f64,
) -> Result<EstimationResult, EstimateError> {
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(EstimateError::InvalidCiLevel(ci_level));
    }
    search.validate()?;
    solver
        .validate()
        .map_err(|e| EstimateError::InvalidSearch(e.to_string()))?;
    let bound = model.bind(dataset)?;
    let (n, p, q) = (bound.n(), bound.param_dim(), bound.moment_dim());
    if n < q + 1 {
        return Err(ModelError::TooFewObservations { n, needed: q + 1 }.into());
    }
    let limits = match &search.bounds {
        Some(b) if b.len() == p => b.clone(),
        Some(b) => {
            return Err(EstimateError::InvalidSearch(format!(
                "{} bound pairs for {p} parameters",
                b.len()
            )))
        }
        None => model.default_bounds(dataset)?,
    };

    let mut profiler = Profiler::new(&bound, gamma, *solver);
    let (divergence_value, theta_hat, multipliers, _) =
        search_grid(&mut profiler, &limits, search)?;

    let g = bound.moment_matrix(&theta_hat)?;
    let gbar_jac = bound.mean_jacobian(&theta_hat)?;
    let cov = first_order_covariance(&g, &gbar_jac)?;
    let z = normal_critical_value(ci_level);
    let std_errors: Vec<f64> = (0..p).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
    let ci = theta_hat
        .iter()
        .zip(&std_errors)
        .map(|(t, se)| (t - z * se, t + z * se))
        .collect();
    Ok(EstimationResult {
        param_names: model.param_names().into_iter().map(String::from).collect(),
        weights: multipliers.weights.clone(),
        theta_hat,
        multipliers,
        divergence_value,
        std_errors,
        cov_theta: (0..p)
            .map(|r| (0..p).map(|c| cov[(r, c)]).collect())
            .collect(),
        ci_level,
        ci,
        gamma,
        n,
        objective_evals: profiler.evals(),
    })
}

/// `(1/n)(Ḡ'Ω̂⁻¹Ḡ)⁻¹` with the uncentered `Ω̂`.
pub fn first_order_covariance(
    g: &MomentMatrix,
    gbar_jac: &DMatrix<f64>,
) -> Result<DMatrix<f64>, EstimateError> {
    let p = gbar_jac.ncols();
    let svd = gbar_jac.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= 1e-10 * smax {
        return Err(EstimateError::RankDeficient { p });
    }
    let omega = g.second_moment();
    if !is_well_conditioned_spd(&omega) {
        return Err(EstimateError::SingularOmega);
    }
    let omega_inv = inverse(&omega).ok_or(EstimateError::SingularOmega)?;
    let info = gbar_jac.transpose() * omega_inv * gbar_jac;
    let info = (&info + info.transpose()) * 0.5;
    let cov = inverse(&info).ok_or(EstimateError::RankDeficient { p })?;
    let cov = (&cov + cov.transpose()) * (0.5 / g.nrows() as f64);
    Ok(cov)
}
