//! Second-order quantities for the multipliers and summaries of the implied
//! weights.
//!
//! `b_lambda` is the explicit order-`1/n` correction in the expansion of `λ̂`.
//! It is defined at the true parameter; applications evaluate it at θ̂. The
//! full second-order bias of θ̂ is not available in closed form, so only this
//! multiplier component is reported (flagged `partial`).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::{Branch, Gamma};
use crate::matrix::{inverse, is_well_conditioned_spd, MomentMatrix};
use crate::solver::MultiplierState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("second-moment matrix of the moments is singular")]
    SingularOmega,
    #[error("weight vector is empty")]
    Empty,
}

/// Order statistics of the weights, Tables-style.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl WeightSummary {
    pub fn as_array(&self) -> [f64; 6] {
        [self.min, self.q1, self.median, self.mean, self.q3, self.max]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderReport {
    pub b_lambda: Vec<f64>,
    /// `Ω̂⁻¹ḡ`.
    pub lambda_first_order: Vec<f64>,
    /// `n·δ̃̂`.
    pub delta_stat: f64,
    /// `n·δ̃̂ / (−(γ+1)/2)`; absent on the EL branch.
    pub delta_stat_scaled: Option<f64>,
    pub weight_summary: WeightSummary,
    /// Always true: only the multiplier component of the second-order bias is
    /// computed, and it is evaluated at θ̂ rather than the true parameter.
    pub partial: bool,
}

/// `B_λ = ((1−γ)/2) Ω̂⁻¹ (1/n) Σ (v'g_i)² g_i` with `v = Ω̂⁻¹ √n ḡ`.
pub fn b_lambda(g_values: &MomentMatrix, gamma: Gamma) -> Result<Vec<f64>, DiagnosticsError> {
    let n = g_values.nrows();
    let q = g_values.ncols();
    let omega = g_values.second_moment();
    if n == 0 || !is_well_conditioned_spd(&omega) {
        return Err(DiagnosticsError::SingularOmega);
    }
    let omega_inv = inverse(&omega).ok_or(DiagnosticsError::SingularOmega)?;
    let v = &omega_inv * g_values.column_means() * (n as f64).sqrt();
    let mut acc = DVector::zeros(q);
    for row in g_values.rows() {
        let vg: f64 = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        let c = vg * vg;
        for (a, g) in acc.iter_mut().zip(row) {
            *a += c * g;
        }
    }
    acc /= n as f64;
    let b = omega_inv * acc * ((1.0 - gamma.value()) / 2.0);
    Ok(b.iter().copied().collect())
}

/// `(n·δ̃̂, n·δ̃̂ / (−(γ+1)/2))`; the scaled form is undefined for EL.
pub fn delta_statistic(state: &MultiplierState, n: usize, gamma: Gamma) -> (f64, Option<f64>) {
    let raw = n as f64 * state.delta_shift;
    let scaled = match gamma.branch() {
        Branch::EmpiricalLikelihood => None,
        _ => Some(raw / (-(gamma.value() + 1.0) / 2.0)),
    };
    (raw, scaled)
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn weight_summary(weights: &[f64]) -> Result<WeightSummary, DiagnosticsError> {
    if weights.is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(WeightSummary {
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        mean: weights.iter().sum::<f64>() / weights.len() as f64,
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// All diagnostics for a converged state, with `g_values` evaluated at θ̂.
pub fn second_order_report(
    g_values: &MomentMatrix,
    state: &MultiplierState,
    gamma: Gamma,
) -> Result<SecondOrderReport, DiagnosticsError> {
    let omega = g_values.second_moment();
    let omega_inv = inverse(&omega).ok_or(DiagnosticsError::SingularOmega)?;
    let first = omega_inv * g_values.column_means();
    let (delta_stat, delta_stat_scaled) = delta_statistic(state, g_values.nrows(), gamma);
    Ok(SecondOrderReport {
        b_lambda: b_lambda(g_values, gamma)?,
        lambda_first_order: first.iter().copied().collect(),
        delta_stat,
        delta_stat_scaled,
        weight_summary: weight_summary(&state.weights)?,
        partial: true,
    })
}
