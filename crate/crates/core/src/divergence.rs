//! The Cressie–Read power divergence against the uniform reference `1/n`,
//! its two limiting branches, and the map from multipliers to implied
//! observation weights.
//!
//! | γ      | branch | weight `w(t)`          |
//! |--------|--------|------------------------|
//! | 0      | ET     | `exp(-t)`              |
//! | -1     | EL     | `1 / (1 + t)`          |
//! | other  | power  | `(1 - γ t)^(1/γ)`      |
//!
//! Here `t_i = δ̃ + λ'g_i` and `δ̃ = δ - δ₀` is the adding-up multiplier shifted
//! by its population value `δ₀ = -1/(γ+1)`. Working with `δ̃` keeps every
//! branch finite, including EL where `δ₀` itself diverges.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::MomentMatrix;

/// Half-width of the windows around 0 and -1 that switch to the analytic
/// limit formulas.
pub const BRANCH_EPS: f64 = 1e-8;

/// Lower bound on the power-map base `s_i` (and on `1 + t_i` for EL).
pub const KAPPA_POS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DivergenceError {
    #[error("weight {index} is not strictly positive ({value})")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("index argument s_{index} = {value} is below the positivity floor")]
    InfeasibleIndex { index: usize, value: f64 },
    #[error("delta_0 diverges on the empirical-likelihood branch; use the shifted multiplier")]
    ElBranchDegenerate,
    #[error("gamma must be finite, got {0}")]
    NonFiniteGamma(f64),
}

/// Which closed form applies for a given power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    ExponentialTilting,
    EmpiricalLikelihood,
    Power,
}

/// The Cressie–Read power parameter γ.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Gamma(f64);

impl Gamma {
    pub const EL: Gamma = Gamma(-1.0);
    pub const ET: Gamma = Gamma(0.0);

    pub fn new(value: f64) -> Result<Self, DivergenceError> {
        if value.is_finite() {
            Ok(Gamma(value))
        } else {
            Err(DivergenceError::NonFiniteGamma(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn branch(self) -> Branch {
        if self.0.abs() <= BRANCH_EPS {
            Branch::ExponentialTilting
        } else if (self.0 + 1.0).abs() <= BRANCH_EPS {
            Branch::EmpiricalLikelihood
        } else {
            Branch::Power
        }
    }
}

impl TryFrom<f64> for Gamma {
    type Error = DivergenceError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Gamma::new(value)
    }
}

impl From<Gamma> for f64 {
    fn from(g: Gamma) -> f64 {
        g.0
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Observation weights `π_i`. Entries are finite and strictly positive; the
/// sum is whatever the producer made it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, DivergenceError> {
        if weights.is_empty() {
            return Err(DivergenceError::DimensionMismatch(
                "weight vector is empty".into(),
            ));
        }
        if let Some((index, &value)) = weights
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(DivergenceError::NonPositiveWeight { index, value });
        }
        Ok(WeightVector(weights))
    }

    pub fn uniform(n: usize) -> Self {
        WeightVector(vec![1.0 / n as f64; n])
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for WeightVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `𝓘_γ(π, 1/n)`.
///
/// The ET and EL limits are shifted so that the uniform vector scores 0 on
/// every branch: `Σ π_i ln(nπ_i)` and `-(1/n) Σ ln(nπ_i)` respectively.
pub fn crpd_divergence(pi: &[f64], gamma: Gamma) -> Result<f64, DivergenceError> {
    let n = pi.len();
    if n == 0 {
        return Err(DivergenceError::DimensionMismatch(
            "divergence of an empty weight vector".into(),
        ));
    }
    if let Some((index, &value)) = pi.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(DivergenceError::NonPositiveWeight { index, value });
    }
    let nf = n as f64;
    let g = gamma.value();
    let value = match gamma.branch() {
        Branch::ExponentialTilting => pi.iter().map(|&p| p * (nf * p).ln()).sum(),
        Branch::EmpiricalLikelihood => -pi.iter().map(|&p| (nf * p).ln()).sum::<f64>() / nf,
        Branch::Power if g < -0.5 => {
            // Σ π[(nπ)^γ - 1] = Σ (1/n)[(nπ)^(γ+1) - 1] + (1 - Σπ); the expm1
            // form stays accurate as γ + 1 -> 0.
            let core: f64 = pi
                .iter()
                .map(|&p| ((g + 1.0) * (nf * p).ln()).exp_m1())
                .sum::<f64>()
                / nf;
            let mass: f64 = pi.iter().sum();
            (core + (1.0 - mass)) / (g * (g + 1.0))
        }
        Branch::Power => {
            pi.iter()
                .map(|&p| p * (g * (nf * p).ln()).exp_m1())
                .sum::<f64>()
                / (g * (g + 1.0))
        }
    };
    Ok(value)
}

/// `δ₀ = -1/(γ+1)`, the adding-up multiplier at the population solution.
pub fn delta_population(gamma: Gamma) -> Result<f64, DivergenceError> {
    match gamma.branch() {
        Branch::EmpiricalLikelihood => Err(DivergenceError::ElBranchDegenerate),
        _ => Ok(-1.0 / (gamma.value() + 1.0)),
    }
}

/// Weight `w(t)` and base `s(t)` of the implied-weight map, or `Err(s)` when
/// the base falls below `kappa` (or the weight is not representable).
///
/// The slope is `dw/dt = -w / s` on every branch (ET has `s = 1`).
#[inline]
pub(crate) fn weight_at(gamma: Gamma, t: f64, kappa: f64) -> Result<(f64, f64), f64> {
    let g = gamma.value();
    let (w, s) = match gamma.branch() {
        Branch::ExponentialTilting => ((-t).exp(), 1.0),
        Branch::EmpiricalLikelihood => {
            let s = 1.0 + t;
            if !(s >= kappa) {
                return Err(s);
            }
            (1.0 / s, s)
        }
        Branch::Power => {
            let s = 1.0 - g * t;
            if !(s >= kappa) {
                return Err(s);
            }
            let k = (1.0 / g).round();
            let w = if k.abs() <= 8.0 && k * g == 1.0 {
                match k as i32 {
                    1 => s,
                    2 => s * s,
                    -1 => 1.0 / s,
                    -2 => 1.0 / (s * s),
                    k => s.powi(k),
                }
            } else {
                ((-g * t).ln_1p() / g).exp()
            };
            (w, s)
        }
    };
    if w.is_finite() && w > 0.0 {
        Ok((w, s))
    } else {
        Err(s)
    }
}

/// Per-observation index `t_i = δ̃ + λ'g_i`.
#[inline]
pub(crate) fn index_value(row: &[f64], lambda: &[f64], delta_shift: f64) -> f64 {
    delta_shift + row.iter().zip(lambda).map(|(g, l)| g * l).sum::<f64>()
}

/// Implied weights `π_i = w_i / n` at multipliers `(λ, δ̃)`.
///
/// The result is not renormalized; adding up to one is the inner solver's
/// constraint.
pub fn implied_weights(
    g_values: &MomentMatrix,
    lambda: &[f64],
    delta_shift: f64,
    gamma: Gamma,
) -> Result<WeightVector, DivergenceError> {
    implied_weights_with_floor(g_values, lambda, delta_shift, gamma, KAPPA_POS)
}

pub(crate) fn implied_weights_with_floor(
    g_values: &MomentMatrix,
    lambda: &[f64],
    delta_shift: f64,
    gamma: Gamma,
    kappa: f64,
) -> Result<WeightVector, DivergenceError> {
    if lambda.len() != g_values.ncols() {
        return Err(DivergenceError::DimensionMismatch(format!(
            "lambda has {} entries, moments have {}",
            lambda.len(),
            g_values.ncols()
        )));
    }
    let n = g_values.nrows();
    if n == 0 {
        return Err(DivergenceError::DimensionMismatch("no observations".into()));
    }
    let nf = n as f64;
    let mut out = Vec::with_capacity(n);
    for (index, row) in g_values.rows().enumerate() {
        let t = index_value(row, lambda, delta_shift);
        match weight_at(gamma, t, kappa) {
            Ok((w, _)) => out.push(w / nf),
            Err(value) => return Err(DivergenceError::InfeasibleIndex { index, value }),
        }
    }
    Ok(WeightVector(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gam(v: f64) -> Gamma {
        Gamma::new(v).unwrap()
    }

    /// Straight transcription of the power formula, no cancellation tricks.
    fn naive_power(pi: &[f64], g: f64) -> f64 {
        let n = pi.len() as f64;
        pi.iter().map(|&p| p * ((n * p).powf(g) - 1.0)).sum::<f64>() / (g * (g + 1.0))
    }

    fn simplex(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    #[test]
    fn branches() {
        assert_eq!(gam(0.0).branch(), Branch::ExponentialTilting);
        assert_eq!(gam(5e-9).branch(), Branch::ExponentialTilting);
        assert_eq!(gam(-1.0).branch(), Branch::EmpiricalLikelihood);
        assert_eq!(gam(-1.0 + 5e-9).branch(), Branch::EmpiricalLikelihood);
        assert_eq!(gam(1e-5).branch(), Branch::Power);
        assert!(Gamma::new(f64::NAN).is_err());
    }

    #[test]
    fn uniform_scores_zero_everywhere() {
        for n in [1usize, 3, 22] {
            let u = WeightVector::uniform(n);
            for g in [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0] {
                let d = crpd_divergence(&u, gam(g)).unwrap();
                assert!(d.abs() < 1e-15, "n={n} g={g} d={d}");
            }
        }
    }

    #[test]
    fn pearson_identity_at_one() {
        let pi = [0.5, 0.3, 0.2];
        let n: f64 = 3.0;
        let want = n / 2.0 * pi.iter().map(|p| (p - 1.0 / n).powi(2)).sum::<f64>();
        let got = crpd_divergence(&pi, gam(1.0)).unwrap();
        assert!((got - want).abs() < 1e-15);
        assert!((got - naive_power(&pi, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn et_limit_continuity() {
        let pi = [0.5, 0.3, 0.2];
        let et = crpd_divergence(&pi, Gamma::ET).unwrap();
        let near = crpd_divergence(&pi, gam(1e-5)).unwrap();
        assert!((et - near).abs() < 1e-4);
        // the analytic limit itself, independently
        let want: f64 = pi.iter().map(|p: &f64| p * (3.0 * p).ln()).sum();
        assert!((et - want).abs() < 1e-15);
    }

    #[test]
    fn el_limit_continuity() {
        let pi = [0.1, 0.2, 0.3, 0.4];
        let el = crpd_divergence(&pi, Gamma::EL).unwrap();
        for g in [-1.0 - 1e-5, -1.0 + 1e-5] {
            let near = crpd_divergence(&pi, gam(g)).unwrap();
            assert!(
                (el - near).abs() <= 1e-4 * (1.0 + el.abs()),
                "{el} vs {near}"
            );
        }
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(matches!(
            crpd_divergence(&[0.5, 0.0, 0.5], Gamma::ET),
            Err(DivergenceError::NonPositiveWeight { index: 1, .. })
        ));
        assert!(matches!(
            crpd_divergence(&[], Gamma::ET),
            Err(DivergenceError::DimensionMismatch(_))
        ));
        assert!(WeightVector::new(vec![0.5, -0.1]).is_err());
    }

    #[test]
    fn delta_population_values() {
        assert_eq!(delta_population(gam(0.0)).unwrap(), -1.0);
        assert_eq!(delta_population(gam(1.0)).unwrap(), -0.5);
        assert_eq!(delta_population(gam(-0.5)).unwrap(), -2.0);
        assert_eq!(
            delta_population(Gamma::EL),
            Err(DivergenceError::ElBranchDegenerate)
        );
    }

    #[test]
    fn weights_at_population_point_are_uniform() {
        let g = MomentMatrix::from_rows(&[vec![1.0, -3.0], vec![7.0, 0.5], vec![-2.0, 2.0]]);
        for gamma in [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0] {
            let w = implied_weights(&g, &[0.0, 0.0], 0.0, gam(gamma)).unwrap();
            assert!(w.iter().all(|&p| p == 1.0 / 3.0), "gamma={gamma}");
        }
    }

    #[test]
    fn weights_pearson_hand_values() {
        let g = MomentMatrix::from_rows(&[vec![1.0], vec![-1.0]]);
        let w = implied_weights(&g, &[0.1], 0.0, gam(1.0)).unwrap();
        assert!((w[0] - 0.9 / 2.0).abs() < 1e-15);
        assert!((w[1] - 1.1 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn weights_et_zero_moment() {
        let g = MomentMatrix::from_rows(&[vec![0.0], vec![2.0]]);
        let w = implied_weights(&g, &[0.2], 0.0, Gamma::ET).unwrap();
        assert_eq!(w[0], 0.5);
        assert!((w[1] - (-0.4f64).exp() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn weights_infeasible_index() {
        let g = MomentMatrix::from_rows(&[vec![1.0], vec![20.0]]);
        // γ = 1: s = 1 - t, so λ = 0.1 pushes s_1 to -1.
        let err = implied_weights(&g, &[0.1], 0.0, gam(1.0)).unwrap_err();
        assert!(matches!(
            err,
            DivergenceError::InfeasibleIndex { index: 1, .. }
        ));
        let err = implied_weights(&g, &[-0.1], 0.0, Gamma::EL).unwrap_err();
        assert!(matches!(
            err,
            DivergenceError::InfeasibleIndex { index: 1, .. }
        ));
    }

    #[test]
    fn weight_map_limits() {
        let g = MomentMatrix::from_rows(&[vec![0.3], vec![-0.7], vec![1.1]]);
        let et = implied_weights(&g, &[0.4], 0.05, Gamma::ET).unwrap();
        let el = implied_weights(&g, &[0.4], 0.05, Gamma::EL).unwrap();
        for eps in [1e-5, -1e-5] {
            let near_et = implied_weights(&g, &[0.4], 0.05, gam(eps)).unwrap();
            let near_el = implied_weights(&g, &[0.4], 0.05, gam(-1.0 + eps)).unwrap();
            for i in 0..3 {
                assert!((near_et[i] - et[i]).abs() <= 1e-4 * et[i]);
                assert!((near_el[i] - el[i]).abs() <= 1e-4 * el[i]);
            }
        }
    }

    #[test]
    fn monotone_penalty_along_a_direction() {
        let n = 5;
        let v = [0.03, -0.01, 0.02, -0.05, 0.01];
        for g in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let mut prev = 0.0;
            for k in 1..=20 {
                let eps = k as f64 * 0.05;
                let pi: Vec<f64> = v.iter().map(|d| 1.0 / n as f64 + eps * d).collect();
                let d = crpd_divergence(&pi, gam(g)).unwrap();
                assert!(d > prev, "gamma={g} eps={eps}");
                prev = d;
            }
            // and symmetric side
            let mut prev = 0.0;
            for k in 1..=20 {
                let eps = -(k as f64) * 0.05;
                let pi: Vec<f64> = v.iter().map(|d| 1.0 / n as f64 + eps * d).collect();
                let d = crpd_divergence(&pi, gam(g)).unwrap();
                assert!(d > prev, "gamma={g} eps={eps}");
                prev = d;
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn pearson_identity_random(raw in prop::collection::vec(0.01f64..1.0, 2..40)) {
            let pi = simplex(&raw);
            let n = pi.len() as f64;
            let want = n / 2.0 * pi.iter().map(|p| (p - 1.0 / n).powi(2)).sum::<f64>();
            let got = crpd_divergence(&pi, gam(1.0)).unwrap();
            prop_assert!((got - want).abs() <= 1e-12);
        }

        #[test]
        fn nonnegative_and_matches_naive(
            raw in prop::collection::vec(0.01f64..1.0, 2..30),
            g in prop_oneof![Just(-1.0), Just(0.0), -2.0f64..2.0],
        ) {
            let pi = simplex(&raw);
            let d = crpd_divergence(&pi, gam(g)).unwrap();
            prop_assert!(d >= -1e-15);
            if gam(g).branch() == Branch::Power && (g.abs() > 0.05) && ((g + 1.0).abs() > 0.05) {
                let naive = naive_power(&pi, g);
                prop_assert!((d - naive).abs() <= 1e-10 * (1.0 + naive.abs()));
            }
        }

        #[test]
        fn branch_continuity(
            raw in prop::collection::vec(0.05f64..1.0, 5..26),
            side in prop_oneof![Just(1.0), Just(-1.0)],
        ) {
            let pi = simplex(&raw);
            let eps = side * 1e-6;
            let et = crpd_divergence(&pi, Gamma::ET).unwrap();
            let el = crpd_divergence(&pi, Gamma::EL).unwrap();
            let near_et = crpd_divergence(&pi, gam(eps)).unwrap();
            let near_el = crpd_divergence(&pi, gam(-1.0 + eps)).unwrap();
            prop_assert!((near_et - et).abs() <= 1e-4 * (1.0 + et.abs()));
            prop_assert!((near_el - el).abs() <= 1e-4 * (1.0 + el.abs()));
        }
    }
}
