//! Output documents. JSON documents carry `schema_version` and follow
//! `schema/crpd-output.schema.json`; CSV tables have the fixed column orders
//! given by the `*_HEADER` constants.

use std::io::Write;

use crpd_core::{
    second_order_report, weight_summary, CvLoss, CvReport, Dataset, EstimationResult, MomentModel,
    SimulationMetrics, WeightSummary,
};
use serde::Serialize;

use crate::io::{format_float, format_opt, IoError};

pub const SCHEMA_VERSION: u32 = 1;

pub const ESTIMATE_HEADER: [&str; 8] = [
    "parameter",
    "estimate",
    "std_error",
    "ci_lower",
    "ci_upper",
    "gamma",
    "n",
    "divergence_value",
];
pub const DIAGNOSTICS_HEADER: [&str; 2] = ["name", "value"];
pub const WEIGHTS_HEADER: [&str; 2] = ["index", "weight"];
pub const LOSS_CURVE_HEADER: [&str; 3] = ["gamma", "mean_loss", "failed_folds"];
pub const SIMULATION_HEADER: [&str; 11] = [
    "dgp",
    "n",
    "gamma",
    "bias",
    "mse",
    "coverage_distortion",
    "empirical_sd",
    "mean_se",
    "ratio",
    "replications_used",
    "failures",
];
pub const SIMULATION_SUMMARY_HEADER: [&str; 6] = ["dgp", "n", "gamma", "statistic", "mean", "sd"];
const WEIGHT_STATS: [&str; 6] = ["w_min", "w_q1", "w_median", "w_mean", "w_q3", "w_max"];

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub b_lambda: Vec<f64>,
    pub lambda_first_order: Vec<f64>,
    pub delta_stat: f64,
    pub delta_stat_scaled: Option<f64>,
    /// Only the multiplier term of the second-order bias, evaluated at θ̂.
    pub partial: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateBody {
    pub model: String,
    pub param_names: Vec<String>,
    pub n: usize,
    pub gamma: f64,
    pub theta_hat: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub ci_level: f64,
    pub ci: Vec<[f64; 2]>,
    pub cov_theta: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub delta_shift: f64,
    pub divergence_value: f64,
    pub inner_iterations: usize,
    pub objective_evals: usize,
    pub weight_summary: WeightSummary,
    pub diagnostics: Option<Diagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl EstimateBody {
    pub fn new(
        fit: &EstimationResult,
        model: &MomentModel,
        data: &Dataset,
        with_weights: bool,
    ) -> Self {
        let diagnostics = model
            .bind(data)
            .ok()
            .and_then(|b| b.moment_matrix(&fit.theta_hat).ok())
            .and_then(|g| second_order_report(&g, &fit.multipliers, fit.gamma).ok())
            .map(|r| Diagnostics {
                b_lambda: r.b_lambda,
                lambda_first_order: r.lambda_first_order,
                delta_stat: r.delta_stat,
                delta_stat_scaled: r.delta_stat_scaled,
                partial: r.partial,
            });
        Self {
            model: model.name.clone(),
            param_names: fit.param_names.clone(),
            n: fit.n,
            gamma: fit.gamma.value(),
            theta_hat: fit.theta_hat.clone(),
            std_errors: fit.std_errors.clone(),
            ci_level: fit.ci_level,
            ci: fit.ci.iter().map(|&(lo, hi)| [lo, hi]).collect(),
            cov_theta: fit.cov_theta.clone(),
            lambda: fit.multipliers.lambda.clone(),
            delta_shift: fit.multipliers.delta_shift,
            divergence_value: fit.divergence_value,
            inner_iterations: fit.multipliers.iterations,
            objective_evals: fit.objective_evals,
            weight_summary: weight_summary(&fit.weights).expect("estimate has weights"),
            diagnostics,
            weights: with_weights.then(|| fit.weights.to_vec()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateDocument {
    pub schema_version: u32,
    pub command: &'static str,
    #[serde(flatten)]
    pub body: EstimateBody,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossRow {
    pub gamma: f64,
    pub mean_loss: Option<f64>,
    pub failed_folds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossvalDocument {
    pub schema_version: u32,
    pub command: &'static str,
    pub loss: CvLoss,
    pub folds: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub per_gamma: Vec<LossRow>,
    pub selected_gamma: f64,
    pub fold_assignments: Vec<usize>,
    pub refit: EstimateBody,
}

impl CrossvalDocument {
    pub fn new(report: &CvReport, refit: EstimateBody, seed: u64, shuffle: bool) -> Self {
        let folds = report.fold_assignments.iter().max().map_or(0, |m| m + 1);
        Self {
            schema_version: SCHEMA_VERSION,
            command: "crossval",
            loss: report.loss,
            folds,
            seed,
            shuffle,
            per_gamma: report
                .per_gamma
                .iter()
                .map(|r| LossRow {
                    gamma: r.gamma.value(),
                    mean_loss: r.mean_loss,
                    failed_folds: r.failed_folds,
                })
                .collect(),
            selected_gamma: report.selected_gamma.value(),
            fold_assignments: report.fold_assignments.clone(),
            refit,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateDocument {
    pub schema_version: u32,
    pub command: &'static str,
    pub seed: u64,
    pub replications: usize,
    pub ci_level: f64,
    pub rows: Vec<SimulationMetrics>,
}

pub fn write_json<W: Write, T: Serialize>(doc: &T, mut out: W) -> Result<(), IoError> {
    serde_json::to_writer_pretty(&mut out, doc).map_err(|e| IoError::Write(e.to_string()))?;
    writeln!(out).map_err(|e| IoError::Write(e.to_string()))
}

fn table<W: Write>(out: W, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    let werr = |e: csv::Error| IoError::Write(e.to_string());
    w.write_record(header).map_err(werr)?;
    for row in rows {
        w.write_record(&row).map_err(werr)?;
    }
    w.flush().map_err(|e| IoError::Write(e.to_string()))
}

pub fn write_estimate_csv<W: Write>(body: &EstimateBody, out: W) -> Result<(), IoError> {
    let rows = body
        .param_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            vec![
                name.clone(),
                format_float(body.theta_hat[j]),
                format_float(body.std_errors[j]),
                format_float(body.ci[j][0]),
                format_float(body.ci[j][1]),
                format_float(body.gamma),
                body.n.to_string(),
                format_float(body.divergence_value),
            ]
        })
        .collect();
    table(out, &ESTIMATE_HEADER, rows)
}

/// Multipliers, second-order terms and the weight summary as name/value rows.
pub fn write_diagnostics_csv<W: Write>(body: &EstimateBody, out: W) -> Result<(), IoError> {
    let mut rows = Vec::new();
    let mut push = |name: String, v: Option<f64>| rows.push(vec![name, format_opt(v)]);
    for (k, l) in body.lambda.iter().enumerate() {
        push(format!("lambda_{}", k + 1), Some(*l));
    }
    push("delta_shift".into(), Some(body.delta_shift));
    if let Some(d) = &body.diagnostics {
        for (k, b) in d.b_lambda.iter().enumerate() {
            push(format!("b_lambda_{}", k + 1), Some(*b));
        }
        for (k, b) in d.lambda_first_order.iter().enumerate() {
            push(format!("lambda_first_order_{}", k + 1), Some(*b));
        }
        push("delta_stat".into(), Some(d.delta_stat));
        push("delta_stat_scaled".into(), d.delta_stat_scaled);
    }
    for (name, v) in WEIGHT_STATS.iter().zip(body.weight_summary.as_array()) {
        push((*name).into(), Some(v));
    }
    table(out, &DIAGNOSTICS_HEADER, rows)
}

pub fn write_weights_csv<W: Write>(weights: &[f64], out: W) -> Result<(), IoError> {
    let rows = weights
        .iter()
        .enumerate()
        .map(|(i, w)| vec![i.to_string(), format_float(*w)])
        .collect();
    table(out, &WEIGHTS_HEADER, rows)
}

pub fn write_loss_curve_csv<W: Write>(doc: &CrossvalDocument, out: W) -> Result<(), IoError> {
    let rows = doc
        .per_gamma
        .iter()
        .map(|r| {
            vec![
                format_float(r.gamma),
                format_opt(r.mean_loss),
                r.failed_folds.to_string(),
            ]
        })
        .collect();
    table(out, &LOSS_CURVE_HEADER, rows)
}

pub fn write_simulation_csv<W: Write>(rows: &[SimulationMetrics], out: W) -> Result<(), IoError> {
    let rows = rows
        .iter()
        .map(|m| {
            vec![
                m.dgp.clone(),
                m.n.to_string(),
                format_float(m.gamma.value()),
                format_opt(m.bias),
                format_opt(m.mse),
                format_opt(m.coverage_distortion),
                format_opt(m.empirical_sd),
                format_opt(m.mean_se),
                format_opt(m.sd_se_ratio),
                m.replications_used.to_string(),
                m.failures.to_string(),
            ]
        })
        .collect();
    table(out, &SIMULATION_HEADER, rows)
}

/// Long-format multiplier and weight summaries: one row per (cell, statistic).
pub fn write_simulation_summary_csv<W: Write>(
    rows: &[SimulationMetrics],
    out: W,
) -> Result<(), IoError> {
    let mut table_rows = Vec::new();
    for m in rows {
        let mut stats: Vec<(String, _)> = m
            .lambda
            .iter()
            .enumerate()
            .map(|(k, s)| (format!("lambda_{}", k + 1), *s))
            .collect();
        stats.push(("delta_shift".into(), m.delta_shift));
        stats.extend(
            WEIGHT_STATS
                .iter()
                .map(|s| s.to_string())
                .zip(m.weights.iter().copied()),
        );
        for (name, s) in stats {
            table_rows.push(vec![
                m.dgp.clone(),
                m.n.to_string(),
                format_float(m.gamma.value()),
                name,
                format_opt(s.mean),
                format_opt(s.sd),
            ]);
        }
    }
    table(out, &SIMULATION_SUMMARY_HEADER, table_rows)
}
