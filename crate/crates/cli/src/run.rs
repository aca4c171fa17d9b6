use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crpd_core::montecarlo::with_threads;
use crpd_core::{
    central_moments_model, estimate, gamma_grid, instrumented_mean_model, mean_only_model,
    run_study, select_gamma, CvConfig, CvError, CvLoss, Dataset, DgpSpec, EstimateError, Gamma,
    MomentModel, MomentTerm, SearchConfig, SimulationConfig, SolverConfig,
};
use thiserror::Error;

use crate::args::{
    Cli, Command, CrossvalArgs, DgpKind, EstimateArgs, Format, LossKind, ModelArgs, ModelKind,
    OutputArgs, SimulateArgs,
};
use crate::io::{parse_csv, IoError};
use crate::output::{
    write_diagnostics_csv, write_estimate_csv, write_json, write_loss_curve_csv,
    write_simulation_csv, write_simulation_summary_csv, write_weights_csv, CrossvalDocument,
    EstimateBody, EstimateDocument, SimulateDocument, SCHEMA_VERSION,
};

/// Worker threads for the parallel sections; unset or 0 means automatic.
pub const THREADS_ENV: &str = "CRPD_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorClass::Usage => "usage",
            ErrorClass::Data => "data",
            ErrorClass::Numerical => "numerical",
        }
    }
}

#[derive(Debug, Clone, Error)]
#[error("{message}")]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Data,
            message: message.into(),
        }
    }

    fn numerical(message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Numerical,
            message: message.into(),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::AllInfeasible
            | EstimateError::AllInfinite
            | EstimateError::RankDeficient { .. }
            | EstimateError::SingularOmega => CliError::numerical(e.to_string()),
            EstimateError::InvalidSearch(_) | EstimateError::InvalidCiLevel(_) => {
                CliError::usage(e.to_string())
            }
            EstimateError::Model(_) => CliError::data(e.to_string()),
        }
    }
}

impl From<CvError> for CliError {
    fn from(e: CvError) -> Self {
        match e {
            CvError::AllGammaFailed => CliError::numerical(e.to_string()),
            CvError::Refit(inner) => CliError::from(inner),
            CvError::Model(_) => CliError::data(e.to_string()),
            _ => CliError::usage(e.to_string()),
        }
    }
}

pub fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(s) if s.trim().is_empty() => Ok(0),
        Ok(s) => s.trim().parse().map_err(|_| {
            CliError::usage(format!(
                "{THREADS_ENV} must be a non-negative integer, got {s:?}"
            ))
        }),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let threads = threads_from_env()?;
    match cli.command {
        Command::Estimate(a) => run_estimate(a),
        Command::Crossval(a) => with_threads(threads, || run_crossval(a)),
        Command::Simulate(a) => with_threads(threads, || run_simulate(a)),
    }
}

fn parse_pair(s: &str) -> Option<(f64, f64)> {
    let (lo, hi) = s.split_once(':')?;
    Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?))
}

/// `lo:hi[,lo:hi...]`.
pub fn parse_bounds(s: &str) -> Result<Vec<(f64, f64)>, CliError> {
    s.split(',')
        .map(|part| {
            parse_pair(part).ok_or_else(|| {
                CliError::usage(format!("bounds must look like lo:hi[,lo:hi], got {s:?}"))
            })
        })
        .collect()
}

/// `lo:hi:step`, or a single value for a one-point grid.
pub fn parse_grid(s: &str) -> Result<Vec<Gamma>, CliError> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let bad = || CliError::usage(format!("grid must look like lo:hi:step, got {s:?}"));
    let num = |p: &str| p.parse::<f64>().map_err(|_| bad());
    match parts.as_slice() {
        [v] => Ok(vec![Gamma::new(num(v)?).map_err(|_| bad())?]),
        [lo, hi, step] => gamma_grid(num(lo)?, num(hi)?, num(step)?).map_err(CliError::from),
        _ => Err(bad()),
    }
}

fn parse_term(s: &str) -> Result<MomentTerm, CliError> {
    match s.trim() {
        "level" => Ok(MomentTerm::Level),
        "square" => Ok(MomentTerm::Square),
        "cube" => Ok(MomentTerm::Cube),
        t => match t.strip_prefix("instrument:") {
            Some(col) if !col.is_empty() => Ok(MomentTerm::Instrument(col.to_owned())),
            _ => Err(CliError::usage(format!(
                "unknown moment term {t:?}; use level, square, cube or instrument:<column>"
            ))),
        },
    }
}

pub fn build_model(args: &ModelArgs) -> Result<MomentModel, CliError> {
    let mut model = match args.model {
        ModelKind::CentralMoments => central_moments_model(),
        ModelKind::InstrumentedMean => instrumented_mean_model(),
        ModelKind::MeanOnly => mean_only_model(),
        ModelKind::Custom => {
            if args.moments.is_empty() {
                return Err(CliError::usage("--model custom needs --moments"));
            }
            MomentModel {
                name: "custom".into(),
                outcome: "x".into(),
                moments: args
                    .moments
                    .iter()
                    .map(|t| parse_term(t))
                    .collect::<Result<_, _>>()?,
            }
        }
    };
    if args.model != ModelKind::Custom && !args.moments.is_empty() {
        return Err(CliError::usage(
            "--moments is only used with --model custom",
        ));
    }
    if let Some(col) = &args.outcome {
        model = model.with_outcome(col);
    }
    model
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    Ok(model)
}

fn build_search(args: &ModelArgs) -> Result<SearchConfig, CliError> {
    let search = SearchConfig {
        grid_points_per_dim: args.grid_points,
        refine_rounds: args.refine_rounds,
        bounds: args.bounds.as_deref().map(parse_bounds).transpose()?,
        ..SearchConfig::default()
    };
    search
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    Ok(search)
}

fn check_ci_level(level: f64) -> Result<(), CliError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "--ci-level must lie in (0, 1), got {level}"
        )))
    }
}

/// Fails early when the output directory does not exist.
fn check_output(out: &OutputArgs) -> Result<(), CliError> {
    if let Some(path) = &out.output {
        let parent = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        if !parent.is_dir() {
            return Err(CliError::usage(format!(
                "output directory {} does not exist",
                parent.display()
            )));
        }
        if path.is_dir() {
            return Err(CliError::usage(format!(
                "output path {} is a directory",
                path.display()
            )));
        }
    }
    Ok(())
}

fn load(path: &Path, model: &MomentModel) -> Result<Dataset, CliError> {
    let data = parse_csv(path)?;
    model
        .bind(&data)
        .map_err(|e| CliError::data(e.to_string()))?;
    Ok(data)
}

/// `dir/stem.ext` → `dir/stem_<suffix>.csv`.
pub fn companion_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    path.with_file_name(format!("{stem}_{suffix}.csv"))
}

type Emit<'a> = Box<dyn FnOnce(&mut dyn Write) -> Result<(), IoError> + 'a>;

/// Writes the primary document to `--output` or stdout. Companion tables are
/// written only alongside a file output.
fn emit(
    out: &OutputArgs,
    primary: Emit<'_>,
    companions: Vec<(&str, Emit<'_>)>,
) -> Result<(), CliError> {
    match &out.output {
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            primary(&mut lock)?;
        }
        Some(path) => {
            write_file(path, primary)?;
            for (suffix, f) in companions {
                write_file(&companion_path(path, suffix), f)?;
            }
        }
    }
    Ok(())
}

fn write_file(path: &Path, f: Emit<'_>) -> Result<(), CliError> {
    let file = File::create(path)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn run_estimate(a: EstimateArgs) -> Result<(), CliError> {
    let model = build_model(&a.model)?;
    let search = build_search(&a.model)?;
    check_ci_level(a.ci_level)?;
    check_output(&a.out)?;
    let gamma = Gamma::new(a.gamma).map_err(|e| CliError::usage(e.to_string()))?;
    let data = load(&a.input, &model)?;
    let fit = estimate(
        &data,
        &model,
        gamma,
        &search,
        &SolverConfig::default(),
        a.ci_level,
    )?;
    let body = EstimateBody::new(&fit, &model, &data, a.weights);
    match a.out.format.unwrap_or(Format::Json) {
        Format::Json => {
            let doc = EstimateDocument {
                schema_version: SCHEMA_VERSION,
                command: "estimate",
                body,
            };
            emit(&a.out, Box::new(|w| write_json(&doc, w)), vec![])
        }
        Format::Csv => {
            let mut companions: Vec<(&str, Emit<'_>)> =
                vec![("diagnostics", Box::new(|w| write_diagnostics_csv(&body, w)))];
            if let Some(ws) = &body.weights {
                companions.push(("weights", Box::new(move |w| write_weights_csv(ws, w))));
            }
            emit(
                &a.out,
                Box::new(|w| write_estimate_csv(&body, w)),
                companions,
            )
        }
    }
}

fn run_crossval(a: CrossvalArgs) -> Result<(), CliError> {
    let model = build_model(&a.model)?;
    let search = build_search(&a.model)?;
    check_ci_level(a.ci_level)?;
    check_output(&a.out)?;
    let cv = CvConfig {
        gamma_grid: parse_grid(&a.grid)?,
        folds: a.folds,
        loss: match a.loss {
            LossKind::MomentInstability => CvLoss::MomentInstability,
            LossKind::PredictionMse => CvLoss::PredictionMse,
        },
        seed: a.seed,
        shuffle: !a.no_shuffle,
        ci_level: a.ci_level,
        max_grid_points: a.max_grid_points,
    };
    let data = load(&a.input, &model)?;
    cv.validate(data.n())?;
    let report = select_gamma(&data, &model, &cv, &search, &SolverConfig::default())?;
    let refit = EstimateBody::new(&report.refit, &model, &data, false);
    let doc = CrossvalDocument::new(&report, refit, cv.seed, cv.shuffle);
    match a.out.format.unwrap_or(Format::Csv) {
        Format::Json => emit(&a.out, Box::new(|w| write_json(&doc, w)), vec![]),
        Format::Csv => emit(
            &a.out,
            Box::new(|w| write_loss_curve_csv(&doc, w)),
            vec![
                ("refit", Box::new(|w| write_estimate_csv(&doc.refit, w))),
                (
                    "refit_diagnostics",
                    Box::new(|w| write_diagnostics_csv(&doc.refit, w)),
                ),
            ],
        ),
    }
}

fn run_simulate(a: SimulateArgs) -> Result<(), CliError> {
    check_ci_level(a.ci_level)?;
    check_output(&a.out)?;
    let grid = parse_grid(&a.grid)?;
    let search = SearchConfig {
        grid_points_per_dim: a.grid_points,
        refine_rounds: a.refine_rounds,
        ..SearchConfig::default()
    };
    search
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    if a.dgp.is_empty() || a.n.is_empty() {
        return Err(CliError::usage("need at least one --dgp and one --n"));
    }
    let mut configs = Vec::new();
    for dgp in &a.dgp {
        let spec = match dgp {
            DgpKind::Normal => DgpSpec::Normal,
            DgpKind::T => DgpSpec::student_t(a.df).map_err(|e| CliError::usage(e.to_string()))?,
        };
        for &n in &a.n {
            configs.push(SimulationConfig {
                gamma_grid: grid.clone(),
                replications: a.reps,
                seed: a.seed,
                ci_level: a.ci_level,
                search: search.clone(),
                ..SimulationConfig::new(spec, n)
            });
        }
    }
    let rows = run_study(&configs).map_err(|e| CliError::usage(e.to_string()))?;
    match a.out.format.unwrap_or(Format::Csv) {
        Format::Json => {
            let doc = SimulateDocument {
                schema_version: SCHEMA_VERSION,
                command: "simulate",
                seed: a.seed,
                replications: a.reps,
                ci_level: a.ci_level,
                rows,
            };
            emit(&a.out, Box::new(|w| write_json(&doc, w)), vec![])
        }
        Format::Csv => emit(
            &a.out,
            Box::new(|w| write_simulation_csv(&rows, w)),
            vec![(
                "multipliers",
                Box::new(|w| write_simulation_summary_csv(&rows, w)),
            )],
        ),
    }
}
