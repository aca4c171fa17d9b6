//! Inner problem: for fixed moment values `g_i(θ)` and power γ, find the
//! multipliers `(λ, δ̃)` that make the implied weights add up to one and
//! satisfy the sample moment condition.
//!
//! The stacked residual is
//!
//! ```text
//! Ψ₁ = (1/n) Σ w_i − 1
//! Ψ₂ = (1/n) Σ w_i g_i
//! ```
//!
//! with `w_i = w(δ̃ + λ'g_i)`. Because `dw/dt = -w/s`, the Jacobian is
//! `-(1/n) Σ (w_i/s_i) [1; g_i][g_i', 1]` and at the origin reduces to
//! `[[-ḡ', -1], [-Ω̂, -ḡ]]`. Newton steps are backtracked until every base
//! `s_i` stays above the floor and the residual norm decreases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::{
    implied_weights_with_floor, index_value, weight_at, Branch, DivergenceError, Gamma,
    WeightVector, KAPPA_POS,
};
use crate::matrix::{inverse, is_well_conditioned_spd, lu_solve, MomentMatrix};

/// Multipliers beyond this magnitude are treated as running off to infinity.
const DIVERGENCE_BOUND: f64 = 1e12;

const OUTSIDE_HULL: &str = "zero lies outside the interior of the convex hull of the moment values";
const LINEAR_ROOT_OUTSIDE: &str =
    "the unique root of the linear system has a weight below the positivity floor";
/// How far below zero a base of the extended root must be before it counts
/// as a certificate.
const EXTENDED_MARGIN: f64 = 1e-6;
const EXTENDED_ROOT_OUTSIDE: &str =
    "the root of the zero-extended weight system has a negative weight base";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("multiplier Jacobian is singular (Schur complement {schur:e})")]
    SingularJacobian { schur: f64 },
    #[error("second-moment matrix of the moments is not positive definite")]
    SingularOmega,
    #[error("no descent step found after {iterations} iterations (residual {residual:e})")]
    NoDescent { iterations: usize, residual: f64 },
    #[error("no convergence in {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("moment conditions cannot be met with positive weights: {0}")]
    InfeasibleProblem(&'static str),
    #[error("need n > q observations, got n = {n}, q = {q}")]
    TooFewObservations { n: usize, q: usize },
    #[error("moment values contain non-finite entries")]
    NonFiniteMoments,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
}

impl SolverError {
    /// True when the failure is a property of the moments alone, so no other
    /// starting point can succeed.
    pub fn is_certified(&self) -> bool {
        match self {
            SolverError::SingularOmega
            | SolverError::TooFewObservations { .. }
            | SolverError::NonFiniteMoments
            | SolverError::InvalidConfig(_) => true,
            SolverError::InfeasibleProblem(msg) => {
                *msg == OUTSIDE_HULL || *msg == LINEAR_ROOT_OUTSIDE || *msg == EXTENDED_ROOT_OUTSIDE
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Convergence threshold on `‖Ψ‖∞`.
    pub tol_inner: f64,
    pub max_iter: usize,
    pub kappa_pos: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_inner: 1e-10,
            max_iter: 100,
            kappa_pos: KAPPA_POS,
            backtrack_factor: 0.5,
            max_backtracks: 40,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tol_inner > 0.0) {
            return Err(SolverError::InvalidConfig("tol_inner must be positive"));
        }
        if self.max_iter == 0 || self.max_backtracks == 0 {
            return Err(SolverError::InvalidConfig(
                "iteration limits must be positive",
            ));
        }
        if !(self.kappa_pos > 0.0) {
            return Err(SolverError::InvalidConfig("kappa_pos must be positive"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(SolverError::InvalidConfig(
                "backtrack_factor must lie in (0, 1)",
            ));
        }
        Ok(())
    }
}

/// Converged (or last) inner solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierState {
    pub lambda: Vec<f64>,
    /// `δ̃ = δ − δ₀`.
    pub delta_shift: f64,
    pub weights: WeightVector,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Residual and (optionally) Jacobian at a multiplier point. `Err(i)` names
/// the first observation whose base left the feasible region.
///
/// With `v_i = (g_i, 1)`, the residual is `(1/n)Σ w_i v_i` (reordered, minus
/// the adding-up target) and the Jacobian is a row permutation of the
/// symmetric `(1/n)Σ (−w_i/s_i) v_i v_i'`, so only its upper triangle is
/// accumulated.
fn evaluate(
    g: &MomentMatrix,
    gamma: Gamma,
    x: &[f64],
    kappa: f64,
    resid: &mut [f64],
    jac: Option<&mut DMatrix<f64>>,
) -> Result<(), usize> {
    match g.ncols() {
        1 => evaluate_fixed::<2>(g, gamma, x, kappa, resid, jac),
        2 => evaluate_fixed::<3>(g, gamma, x, kappa, resid, jac),
        3 => evaluate_fixed::<4>(g, gamma, x, kappa, resid, jac),
        4 => evaluate_fixed::<5>(g, gamma, x, kappa, resid, jac),
        _ => evaluate_dyn(g, gamma, x, kappa, resid, jac),
    }
}

/// [`evaluate`] with the dimension `D = q + 1` known at compile time.
fn evaluate_fixed<const D: usize>(
    g: &MomentMatrix,
    gamma: Gamma,
    x: &[f64],
    kappa: f64,
    resid: &mut [f64],
    jac: Option<&mut DMatrix<f64>>,
) -> Result<(), usize> {
    let q = D - 1;
    let mut xv = [0.0; D];
    xv.copy_from_slice(x);
    let mut v = [1.0; D];
    let mut sums = [0.0; D];
    let mut m = [[0.0; D]; D];
    let want_jac = jac.is_some();
    for (i, row) in g.as_slice().chunks_exact(q).enumerate() {
        v[..q].copy_from_slice(row);
        let mut dot = 0.0;
        for k in 0..q {
            dot += v[k] * xv[k];
        }
        let (w, s) = weight_at(gamma, xv[q] + dot, kappa).map_err(|_| i)?;
        for a in 0..D {
            sums[a] += w * v[a];
        }
        if want_jac {
            let d = -w / s;
            for a in 0..D {
                let da = d * v[a];
                for b in a..D {
                    m[a][b] += da * v[b];
                }
            }
        }
    }
    let nf = g.nrows() as f64;
    resid[0] = sums[q] / nf - 1.0;
    for a in 0..q {
        resid[1 + a] = sums[a] / nf;
    }
    if let Some(j) = jac {
        let sym = |a: usize, b: usize| if a <= b { m[a][b] } else { m[b][a] };
        for c in 0..D {
            j[(0, c)] = sym(q, c) / nf;
            for a in 0..q {
                j[(1 + a, c)] = sym(a, c) / nf;
            }
        }
    }
    Ok(())
}

fn evaluate_dyn(
    g: &MomentMatrix,
    gamma: Gamma,
    x: &[f64],
    kappa: f64,
    resid: &mut [f64],
    jac: Option<&mut DMatrix<f64>>,
) -> Result<(), usize> {
    const STACK: usize = 8;
    let q = g.ncols();
    let dim = q + 1;
    let (lambda, delta_shift) = (&x[..q], x[q]);
    let mut v_stack = [0.0; STACK];
    let mut m_stack = [0.0; STACK * STACK];
    let mut s_stack = [0.0; STACK];
    let (mut v_heap, mut m_heap, mut s_heap);
    let (v, m, sums): (&mut [f64], &mut [f64], &mut [f64]) = if dim <= STACK {
        (
            &mut v_stack[..dim],
            &mut m_stack[..dim * dim],
            &mut s_stack[..dim],
        )
    } else {
        v_heap = vec![0.0; dim];
        m_heap = vec![0.0; dim * dim];
        s_heap = vec![0.0; dim];
        (&mut v_heap, &mut m_heap, &mut s_heap)
    };
    v[q] = 1.0;
    let want_jac = jac.is_some();
    for (i, row) in g.rows().enumerate() {
        let t = index_value(row, lambda, delta_shift);
        let (w, s) = weight_at(gamma, t, kappa).map_err(|_| i)?;
        v[..q].copy_from_slice(row);
        for (acc, va) in sums.iter_mut().zip(v.iter()) {
            *acc += w * va;
        }
        if want_jac {
            let d = -w / s;
            for a in 0..dim {
                let da = d * v[a];
                let (ma, vb) = (&mut m[a * dim + a..(a + 1) * dim], &v[a..]);
                for (mab, vbb) in ma.iter_mut().zip(vb) {
                    *mab += da * vbb;
                }
            }
        }
    }
    let nf = g.nrows() as f64;
    resid[0] = sums[q] / nf - 1.0;
    for a in 0..q {
        resid[1 + a] = sums[a] / nf;
    }
    if let Some(j) = jac {
        // Row 0 of the Jacobian is the `1` component of v, rows 1..=q the g
        // components.
        let sym = |a: usize, b: usize| {
            if a <= b {
                m[a * dim + b]
            } else {
                m[b * dim + a]
            }
        };
        for c in 0..dim {
            j[(0, c)] = sym(q, c) / nf;
            for a in 0..q {
                j[(1 + a, c)] = sym(a, c) / nf;
            }
        }
    }
    Ok(())
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// True when `d'g_i` is one-signed over the rows and nonzero for at least one
/// row, which certifies that no strictly positive weights can zero the
/// moments.
fn separates(g: &MomentMatrix, d: &[f64]) -> bool {
    let mut pos = false;
    let mut neg = false;
    for row in g.rows() {
        let v: f64 = row.iter().zip(d).map(|(a, b)| a * b).sum();
        if v > 0.0 {
            pos = true;
        } else if v < 0.0 {
            neg = true;
        }
        if pos && neg {
            return false;
        }
    }
    pos != neg
}

/// Cheap certificates that 0 is outside the interior of the convex hull of
/// the `g_i`. Trial directions are the coordinate axes, `ḡ`, and `Ω̂⁻¹ḡ`.
fn separating_direction_exists(
    g: &MomentMatrix,
    gbar: &DVector<f64>,
    omega_inv_gbar: &DVector<f64>,
) -> bool {
    let q = g.ncols();
    let mut axis = vec![0.0; q];
    for k in 0..q {
        axis.iter_mut().for_each(|a| *a = 0.0);
        axis[k] = 1.0;
        if separates(g, &axis) {
            return true;
        }
    }
    separates(g, gbar.as_slice()) || separates(g, omega_inv_gbar.as_slice())
}

/// Residual and Jacobian of the system with weights extended by zero past
/// the positivity boundary, `w = max(s, 0)^{1/γ}` for γ > 0. Returns the
/// smallest base.
fn evaluate_extended(
    g: &MomentMatrix,
    gamma: Gamma,
    x: &[f64],
    resid: &mut [f64],
    jac: &mut DMatrix<f64>,
) -> f64 {
    let q = g.ncols();
    let gv = gamma.value();
    resid.iter_mut().for_each(|r| *r = 0.0);
    jac.fill(0.0);
    let mut min_s = f64::INFINITY;
    for row in g.rows() {
        let t = index_value(row, &x[..q], x[q]);
        let s = 1.0 - gv * t;
        min_s = min_s.min(s);
        if s <= 0.0 {
            continue;
        }
        let w = (s.ln() / gv).exp();
        let d = -w / s;
        resid[0] += w;
        for a in 0..q {
            resid[1 + a] += w * row[a];
        }
        for k in 0..q {
            jac[(0, k)] += d * row[k];
        }
        jac[(0, q)] += d;
        for a in 0..q {
            let dga = d * row[a];
            for k in 0..q {
                jac[(1 + a, k)] += dga * row[k];
            }
            jac[(1 + a, q)] += dga;
        }
    }
    let nf = g.nrows() as f64;
    resid.iter_mut().for_each(|r| *r /= nf);
    resid[0] -= 1.0;
    *jac /= nf;
    min_s
}

enum Extended {
    Root(Vec<f64>, f64),
    OutsideHull,
    Stalled,
}

/// Iteration cap for [`extended_root`]; it is only a shortcut, so giving up
/// early just falls back to the main iteration.
const EXTENDED_MAX_ITER: usize = 30;

/// Damped Newton on the zero-extended system from `x0`, for γ > 0.
///
/// That system is the gradient of a concave function, and an interior root
/// of the original system would be its unique maximizer. So a root found here
/// with a clearly negative base proves that no interior root exists.
fn extended_root(g: &MomentMatrix, gamma: Gamma, x0: &[f64], config: &SolverConfig) -> Extended {
    let dim = x0.len();
    let q = dim - 1;
    let mut x = x0.to_vec();
    let mut resid = vec![0.0; dim];
    let mut jac = DMatrix::zeros(dim, dim);
    let mut trial = vec![0.0; dim];
    let mut trial_resid = vec![0.0; dim];
    let mut trial_jac = DMatrix::zeros(dim, dim);
    let mut min_s = evaluate_extended(g, gamma, &x, &mut resid, &mut jac);
    for _ in 0..EXTENDED_MAX_ITER {
        if norm_inf(&resid) <= config.tol_inner {
            return Extended::Root(x, min_s);
        }
        let rhs = DVector::from_iterator(dim, resid.iter().map(|r| -r));
        let Some(step) = lu_solve(&jac, &rhs) else {
            return Extended::Stalled;
        };
        if separates(g, &step.as_slice()[..q]) || separates(g, &x[..q]) {
            return Extended::OutsideHull;
        }
        let res2 = norm2(&resid);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..config.max_backtracks {
            for k in 0..dim {
                trial[k] = x[k] + alpha * step[k];
            }
            let m = evaluate_extended(g, gamma, &trial, &mut trial_resid, &mut trial_jac);
            if norm2(&trial_resid) < res2 {
                min_s = m;
                accepted = true;
                break;
            }
            alpha *= config.backtrack_factor;
        }
        if !accepted {
            return Extended::Stalled;
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut resid, &mut trial_resid);
        std::mem::swap(&mut jac, &mut trial_jac);
    }
    if norm_inf(&resid) <= config.tol_inner {
        Extended::Root(x, min_s)
    } else {
        Extended::Stalled
    }
}

/// Largest `α` in `[0, 1]` keeping every base `s_i ≥ κ` along `x + α·step`,
/// given the bases are linear in `α` on the EL and power branches. `None` on
/// ET, which has no positivity region.
fn max_feasible_step(
    g: &MomentMatrix,
    gamma: Gamma,
    x: &[f64],
    step: &[f64],
    kappa: f64,
) -> Option<f64> {
    let q = g.ncols();
    let slope = match gamma.branch() {
        Branch::ExponentialTilting => return None,
        Branch::EmpiricalLikelihood => 1.0,
        Branch::Power => -gamma.value(),
    };
    let mut alpha_max: f64 = 1.0;
    for row in g.rows() {
        let t = index_value(row, &x[..q], x[q]);
        let dt = index_value(row, &step[..q], step[q]);
        let ds = slope * dt;
        if ds < 0.0 {
            let s = 1.0 + slope * t;
            alpha_max = alpha_max.min(((s - kappa) / -ds).max(0.0));
        }
    }
    Some(alpha_max)
}

/// Solves `Ψ_n(λ, δ̃) = 0` by safeguarded Newton.
///
/// Starts from `warm_start` when it is dimensionally compatible and feasible
/// for these moments, otherwise from the population point `(0, 0)`.
pub fn solve_multipliers(
    g_values: &MomentMatrix,
    gamma: Gamma,
    config: &SolverConfig,
    warm_start: Option<&MultiplierState>,
) -> Result<MultiplierState, SolverError> {
    config.validate()?;
    let (n, q) = (g_values.nrows(), g_values.ncols());
    if n <= q {
        return Err(SolverError::TooFewObservations { n, q });
    }
    if !g_values.is_finite() {
        return Err(SolverError::NonFiniteMoments);
    }
    let omega = g_values.second_moment();
    if !is_well_conditioned_spd(&omega) {
        return Err(SolverError::SingularOmega);
    }
    let gbar = g_values.column_means();
    let omega_inv = inverse(&omega).ok_or(SolverError::SingularOmega)?;
    let omega_inv_gbar = &omega_inv * &gbar;
    let schur = 1.0 - gbar.dot(&omega_inv_gbar);
    if !(schur > 1e-14) {
        return Err(SolverError::SingularJacobian { schur });
    }
    if separating_direction_exists(g_values, &gbar, &omega_inv_gbar) {
        return Err(SolverError::InfeasibleProblem(OUTSIDE_HULL));
    }

    let dim = q + 1;
    let kappa = config.kappa_pos;
    let mut x = vec![0.0; dim];
    let mut resid = vec![0.0; dim];
    let mut jac = DMatrix::zeros(dim, dim);

    let mut started = false;
    if let Some(ws) = warm_start.filter(|ws| ws.lambda.len() == q) {
        x[..q].copy_from_slice(&ws.lambda);
        x[q] = ws.delta_shift;
        started = evaluate(g_values, gamma, &x, kappa, &mut resid, Some(&mut jac)).is_ok();
    }
    if !started {
        x.iter_mut().for_each(|v| *v = 0.0);
        // The origin has s_i = 1 on every branch.
        evaluate(g_values, gamma, &x, kappa, &mut resid, Some(&mut jac))
            .expect("origin is always feasible");
    }

    let mut trial = vec![0.0; dim];
    let mut trial_resid = vec![0.0; dim];
    let mut trial_jac = DMatrix::zeros(dim, dim);
    let mut tried_extended = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let res_inf = norm_inf(&resid);
        if res_inf <= config.tol_inner {
            return finish(g_values, gamma, kappa, x, res_inf, iterations);
        }
        let rhs = DVector::from_iterator(dim, resid.iter().map(|r| -r));
        let step = lu_solve(&jac, &rhs).ok_or_else(|| SolverError::SingularJacobian {
            schur: jac.determinant(),
        })?;
        if separates(g_values, &step.as_slice()[..q]) || separates(g_values, &x[..q]) {
            return Err(SolverError::InfeasibleProblem(OUTSIDE_HULL));
        }
        let res2 = norm2(&resid);
        for k in 0..dim {
            trial[k] = x[k] + step[k];
        }
        let full_ok = evaluate(
            g_values,
            gamma,
            &trial,
            kappa,
            &mut trial_resid,
            Some(&mut trial_jac),
        )
        .is_ok();
        let mut any_feasible = full_ok;
        let mut accepted = full_ok && norm2(&trial_resid) < res2;
        if !accepted {
            // Halvings that would certainly leave the positivity region are
            // skipped; the accepted step is the same as with plain
            // backtracking.
            let mut skipped = 1;
            let a = if full_ok {
                None
            } else {
                max_feasible_step(g_values, gamma, &x, step.as_slice(), kappa)
            };
            if let Some(a) = a {
                // At γ = 1 the system is linear, so `x + step` is its only root.
                if gamma.value() == 1.0 {
                    return Err(SolverError::InfeasibleProblem(LINEAR_ROOT_OUTSIDE));
                }
                if gamma.value() > 0.0 && !tried_extended {
                    tried_extended = true;
                    match extended_root(g_values, gamma, &x, config) {
                        Extended::OutsideHull => {
                            return Err(SolverError::InfeasibleProblem(OUTSIDE_HULL))
                        }
                        Extended::Root(_, min_s) if min_s < -EXTENDED_MARGIN => {
                            return Err(SolverError::InfeasibleProblem(EXTENDED_ROOT_OUTSIDE));
                        }
                        Extended::Root(root, min_s) if min_s >= kappa => {
                            let res_inf = multiplier_residual(g_values, &root[..q], root[q], gamma)
                                .map(|r| norm_inf(&r))
                                .unwrap_or(f64::INFINITY);
                            if res_inf <= config.tol_inner {
                                return finish(g_values, gamma, kappa, root, res_inf, iterations);
                            }
                        }
                        _ => {}
                    }
                }
                let f = config.backtrack_factor;
                while skipped < config.max_backtracks && f.powi(skipped as i32) > a * (1.0 + 1e-9) {
                    skipped += 1;
                }
            }
            let mut alpha = config.backtrack_factor.powi(skipped as i32);
            for _ in skipped..config.max_backtracks {
                for k in 0..dim {
                    trial[k] = x[k] + alpha * step[k];
                }
                if evaluate(
                    g_values,
                    gamma,
                    &trial,
                    kappa,
                    &mut trial_resid,
                    Some(&mut trial_jac),
                )
                .is_ok()
                {
                    any_feasible = true;
                    if norm2(&trial_resid) < res2 {
                        accepted = true;
                        break;
                    }
                }
                alpha *= config.backtrack_factor;
            }
        }
        if !accepted {
            let residual = res_inf;
            return Err(if any_feasible {
                SolverError::NoDescent {
                    iterations,
                    residual,
                }
            } else {
                SolverError::InfeasibleProblem("every backtracked step left the positivity region")
            });
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut resid, &mut trial_resid);
        std::mem::swap(&mut jac, &mut trial_jac);
        if norm_inf(&x) > DIVERGENCE_BOUND {
            return Err(SolverError::InfeasibleProblem("multipliers diverge"));
        }
    }
    let res_inf = norm_inf(&resid);
    if res_inf <= config.tol_inner {
        return finish(g_values, gamma, kappa, x, res_inf, iterations);
    }
    Err(SolverError::MaxIterations {
        iterations,
        residual: res_inf,
    })
}

fn finish(
    g: &MomentMatrix,
    gamma: Gamma,
    kappa: f64,
    x: Vec<f64>,
    residual_norm: f64,
    iterations: usize,
) -> Result<MultiplierState, SolverError> {
    let q = g.ncols();
    let weights = implied_weights_with_floor(g, &x[..q], x[q], gamma, kappa)
        .map_err(|_| SolverError::InfeasibleProblem("converged point is not interior"))?;
    let mut lambda = x;
    let delta_shift = lambda.pop().expect("q + 1 entries");
    Ok(MultiplierState {
        lambda,
        delta_shift,
        weights,
        residual_norm,
        iterations,
        converged: true,
    })
}

/// Residual `Ψ_n` at `(λ, δ̃)`, ordered `(Ψ₁, Ψ₂)`.
pub fn multiplier_residual(
    g_values: &MomentMatrix,
    lambda: &[f64],
    delta_shift: f64,
    gamma: Gamma,
) -> Result<Vec<f64>, DivergenceError> {
    let q = g_values.ncols();
    let mut x = lambda.to_vec();
    x.push(delta_shift);
    let mut resid = vec![0.0; q + 1];
    evaluate(g_values, gamma, &x, KAPPA_POS, &mut resid, None).map_err(|index| {
        let t = index_value(g_values.row(index), lambda, delta_shift);
        DivergenceError::InfeasibleIndex {
            index,
            value: 1.0 - gamma.value() * t,
        }
    })?;
    Ok(resid)
}

/// `∂Ψ_n/∂(λ', δ̃)` as a `(q+1) x (q+1)` matrix. Row 0 is the adding-up
/// constraint, rows `1..=q` the moments; the last column is `δ̃`.
pub fn multiplier_jacobian(
    g_values: &MomentMatrix,
    state: &MultiplierState,
    gamma: Gamma,
) -> Result<DMatrix<f64>, DivergenceError> {
    multiplier_jacobian_at(g_values, &state.lambda, state.delta_shift, gamma)
}

pub fn multiplier_jacobian_at(
    g_values: &MomentMatrix,
    lambda: &[f64],
    delta_shift: f64,
    gamma: Gamma,
) -> Result<DMatrix<f64>, DivergenceError> {
    let q = g_values.ncols();
    if lambda.len() != q {
        return Err(DivergenceError::DimensionMismatch(format!(
            "lambda has {} entries, moments have {q}",
            lambda.len()
        )));
    }
    let mut x = lambda.to_vec();
    x.push(delta_shift);
    let mut resid = vec![0.0; q + 1];
    let mut jac = DMatrix::zeros(q + 1, q + 1);
    evaluate(g_values, gamma, &x, KAPPA_POS, &mut resid, Some(&mut jac)).map_err(|index| {
        let t = index_value(g_values.row(index), lambda, delta_shift);
        DivergenceError::InfeasibleIndex {
            index,
            value: 1.0 - gamma.value() * t,
        }
    })?;
    Ok(jac)
}
