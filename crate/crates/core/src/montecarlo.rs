//! Simulation harness for the finite-sample study: symmetric DGPs, the
//! three-moment location/scale model, and per-cell bias, MSE and coverage.
//!
//! Replication `r` of a run with seed `s` draws from its own ChaCha stream
//! `(s, r)`, so results do not depend on scheduling and samples for a larger
//! `n` extend the samples for a smaller one.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::diagnostics::weight_summary;
use crate::divergence::Gamma;
use crate::estimator::{estimate, SearchConfig};
use crate::moments::central_moments_model;
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("Student-t degrees of freedom must exceed 2, got {0}")]
    BadDegreesOfFreedom(f64),
    #[error("replications must be at least 1")]
    NoReplications,
    #[error("sample size {0} is too small for the three-moment model")]
    SampleTooSmall(usize),
    #[error("empty study")]
    EmptyStudy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DgpSpec {
    Normal,
    StudentT { df: f64 },
}

impl DgpSpec {
    pub fn student_t(df: f64) -> Result<Self, SimulationError> {
        if df.is_finite() && df > 2.0 {
            Ok(DgpSpec::StudentT { df })
        } else {
            Err(SimulationError::BadDegreesOfFreedom(df))
        }
    }

    pub fn mu0(&self) -> f64 {
        0.0
    }

    pub fn var0(&self) -> f64 {
        match *self {
            DgpSpec::Normal => 1.0,
            DgpSpec::StudentT { df } => df / (df - 2.0),
        }
    }

    /// `normal`, `t5`, `t15`, ...
    pub fn label(&self) -> String {
        match *self {
            DgpSpec::Normal => "normal".into(),
            DgpSpec::StudentT { df } => format!("t{df}"),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DgpSpec::Normal => rng.sample(StandardNormal),
            DgpSpec::StudentT { df } => {
                let z: f64 = rng.sample(StandardNormal);
                let chi = ChiSquared::new(df).expect("df > 2 checked at construction");
                let v: f64 = chi.sample(rng);
                z / (v / df).sqrt()
            }
        }
    }
}

/// The generator for replication `replication` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// `n` i.i.d. draws into a single-column dataset `x`.
pub fn draw_sample<R: Rng + ?Sized>(dgp: &DgpSpec, n: usize, rng: &mut R) -> Dataset {
    let xs = (0..n).map(|_| dgp.draw(rng)).collect();
    Dataset::from_column("x", xs).expect("draws are finite")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub dgp: DgpSpec,
    pub n: usize,
    pub gamma_grid: Vec<Gamma>,
    pub replications: usize,
    pub seed: u64,
    pub ci_level: f64,
    pub search: SearchConfig,
    pub solver: SolverConfig,
}

/// `-1, -0.75, ..., 1`.
pub fn default_gamma_grid() -> Vec<Gamma> {
    (0..=8)
        .map(|k| Gamma::new(-1.0 + 0.25 * k as f64).expect("finite"))
        .collect()
}

impl SimulationConfig {
    pub fn new(dgp: DgpSpec, n: usize) -> Self {
        Self {
            dgp,
            n,
            gamma_grid: default_gamma_grid(),
            replications: 1000,
            seed: 0,
            ci_level: 0.95,
            search: SearchConfig::default(),
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.replications == 0 {
            return Err(SimulationError::NoReplications);
        }
        if self.n < 4 {
            return Err(SimulationError::SampleTooSmall(self.n));
        }
        if let DgpSpec::StudentT { df } = self.dgp {
            DgpSpec::student_t(df)?;
        }
        Ok(())
    }
}

/// What one replication contributes to a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub mu_hat: f64,
    pub se_mu: f64,
    pub covers: bool,
    pub lambda: Vec<f64>,
    pub delta_shift: f64,
    pub weight_summary: [f64; 6],
}

/// Fits one replication; `None` when estimation fails.
pub fn run_replication(
    config: &SimulationConfig,
    gamma: Gamma,
    replication: u64,
) -> Option<ReplicationRecord> {
    let mut rng = replication_rng(config.seed, replication);
    let data = draw_sample(&config.dgp, config.n, &mut rng);
    let fit = estimate(
        &data,
        &central_moments_model(),
        gamma,
        &config.search,
        &config.solver,
        config.ci_level,
    )
    .ok()?;
    let (lo, hi) = fit.ci[0];
    let mu0 = config.dgp.mu0();
    Some(ReplicationRecord {
        mu_hat: fit.theta_hat[0],
        se_mu: fit.std_errors[0],
        covers: lo <= mu0 && mu0 <= hi,
        weight_summary: weight_summary(&fit.weights).ok()?.as_array(),
        lambda: fit.multipliers.lambda,
        delta_shift: fit.multipliers.delta_shift,
    })
}

/// Mean and SD (`R - 1` denominator) of a sample; SD absent for `R < 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl MeanSd {
    pub fn of(xs: impl Iterator<Item = f64> + Clone) -> Self {
        let n = xs.clone().count();
        if n == 0 {
            return Self {
                mean: None,
                sd: None,
            };
        }
        let mean = xs.clone().sum::<f64>() / n as f64;
        let sd =
            (n > 1).then(|| (xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Self {
            mean: Some(mean),
            sd,
        }
    }
}

/// One (DGP, n, γ) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMetrics {
    pub dgp: String,
    pub n: usize,
    pub gamma: Gamma,
    pub replications_used: usize,
    pub failures: usize,
    pub bias: Option<f64>,
    pub mse: Option<f64>,
    pub coverage_distortion: Option<f64>,
    pub empirical_sd: Option<f64>,
    pub mean_se: Option<f64>,
    pub sd_se_ratio: Option<f64>,
    pub lambda: Vec<MeanSd>,
    pub delta_shift: MeanSd,
    /// min, Q1, median, mean, Q3, max of the weights, averaged over replications.
    pub weights: Vec<MeanSd>,
}

/// Aggregates replication records in replication order.
pub fn aggregate(
    dgp: &DgpSpec,
    n: usize,
    gamma: Gamma,
    ci_level: f64,
    records: &[Option<ReplicationRecord>],
) -> SimulationMetrics {
    let ok: Vec<&ReplicationRecord> = records.iter().flatten().collect();
    let used = ok.len();
    let mu0 = dgp.mu0();
    let errs = ok.iter().map(|r| r.mu_hat - mu0);
    let mean_of = |it: &mut dyn Iterator<Item = f64>| -> Option<f64> {
        (used > 0).then(|| it.sum::<f64>() / used as f64)
    };
    let bias = mean_of(&mut errs.clone());
    let mse = mean_of(&mut errs.map(|e| e * e));
    let coverage = mean_of(&mut ok.iter().map(|r| if r.covers { 1.0 } else { 0.0 }));
    let mu = MeanSd::of(ok.iter().map(|r| r.mu_hat));
    let mean_se = mean_of(&mut ok.iter().map(|r| r.se_mu));
    let q = ok.first().map_or(0, |r| r.lambda.len());
    SimulationMetrics {
        dgp: dgp.label(),
        n,
        gamma,
        replications_used: used,
        failures: records.len() - used,
        bias,
        mse,
        coverage_distortion: coverage.map(|c| c - ci_level),
        empirical_sd: mu.sd,
        mean_se,
        sd_se_ratio: match (mu.sd, mean_se) {
            (Some(sd), Some(se)) if se > 0.0 => Some(sd / se),
            _ => None,
        },
        lambda: (0..q)
            .map(|k| MeanSd::of(ok.iter().map(move |r| r.lambda[k])))
            .collect(),
        delta_shift: MeanSd::of(ok.iter().map(|r| r.delta_shift)),
        weights: (0..6)
            .map(|k| MeanSd::of(ok.iter().map(move |r| r.weight_summary[k])))
            .collect(),
    }
}

/// All replications of one cell, in parallel on the current rayon pool.
pub fn run_cell(
    config: &SimulationConfig,
    gamma: Gamma,
) -> Result<SimulationMetrics, SimulationError> {
    config.validate()?;
    let records: Vec<Option<ReplicationRecord>> = (0..config.replications as u64)
        .into_par_iter()
        .map(|r| run_replication(config, gamma, r))
        .collect();
    Ok(aggregate(
        &config.dgp,
        config.n,
        gamma,
        config.ci_level,
        &records,
    ))
}

/// One row per (config, γ), in config order then grid order.
pub fn run_study(configs: &[SimulationConfig]) -> Result<Vec<SimulationMetrics>, SimulationError> {
    if configs.is_empty() {
        return Err(SimulationError::EmptyStudy);
    }
    for c in configs {
        c.validate()?;
    }
    let cells: Vec<(usize, Gamma)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.gamma_grid.iter().map(move |&g| (i, g)))
        .collect();
    let work: Vec<(usize, usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(cell, &(ci, _))| {
            (0..configs[ci].replications as u64).map(move |r| (cell, ci, r))
        })
        .collect();
    let records: Vec<Option<ReplicationRecord>> = work
        .par_iter()
        .map(|&(cell, ci, r)| run_replication(&configs[ci], cells[cell].1, r))
        .collect();
    let mut out = Vec::with_capacity(cells.len());
    let mut offset = 0;
    for &(ci, gamma) in &cells {
        let c = &configs[ci];
        let slice = &records[offset..offset + c.replications];
        offset += c.replications;
        out.push(aggregate(&c.dgp, c.n, gamma, c.ci_level, slice));
    }
    Ok(out)
}

/// Runs `f` on a dedicated pool with `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
