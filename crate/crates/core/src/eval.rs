//! Simulation studies: point estimates, empirical coverage and region area
//! per method and true parameter, and surface timings.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::br_pairwise::{
    adjusted_surface_from, adjustment_matrix, estimate_godambe, AdjustmentModel, GodambeConfig,
    PairScheme, PairwiseEvaluator,
};
use crate::calibrate::PlattModel;
use crate::dataset::Process;
use crate::error::{Error, Result};
use crate::gp_likelihood::{gp_surface, GpSurfaceEvaluator};
use crate::grid::{make_parameter_grid, GridSpec, Parameter, ParameterGrid, ParameterSpace, SpatialField};
use crate::inference::{
    confidence_region, grid_mle, neural_surface, neural_surface_unvectorized, region_area,
};
use crate::neural::CnnModel;
use crate::rng::{derive_seed, tag};
use crate::simulate::{simulate_replicates, DEFAULT_SPECTRAL_TERMS};
use crate::surface::Surface;

/// Surface construction compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Method {
    GpExact,
    NeuralCalibrated,
    NeuralUncalibrated,
    Pairwise { delta: f64 },
    PairwiseAdjusted { delta: f64 },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::GpExact => "gp-exact".into(),
            Method::NeuralCalibrated => "neural-calibrated".into(),
            Method::NeuralUncalibrated => "neural-uncalibrated".into(),
            Method::Pairwise { delta } => format!("pairwise-{delta}"),
            Method::PairwiseAdjusted { delta } => format!("pairwise-adjusted-{delta}"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    /// `gp-exact`, `neural-calibrated`, `neural-uncalibrated`,
    /// `pairwise:<delta>` or `pairwise-adjusted:<delta>`.
    fn from_str(s: &str) -> Result<Self> {
        let delta = |d: &str| {
            d.parse::<f64>()
                .ok()
                .filter(|d| *d > 0.0 && d.is_finite())
                .ok_or_else(|| Error::Configuration(format!("bad cut-off in method {s:?}")))
        };
        match s.split_once(':') {
            None => match s {
                "gp-exact" => Ok(Method::GpExact),
                "neural-calibrated" => Ok(Method::NeuralCalibrated),
                "neural-uncalibrated" => Ok(Method::NeuralUncalibrated),
                _ => Err(Error::Configuration(format!("unknown method {s:?}"))),
            },
            Some(("pairwise", d)) => Ok(Method::Pairwise { delta: delta(d)? }),
            Some(("pairwise-adjusted", d)) => Ok(Method::PairwiseAdjusted { delta: delta(d)? }),
            _ => Err(Error::Configuration(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub process: Process,
    /// Spatial grid of the evaluation fields.
    pub grid: GridSpec,
    /// Parameter space of the surface and of the true parameters.
    pub space: ParameterSpace,
    /// Lattice of true parameters, snapped onto the surface grid.
    pub eval_counts: Vec<usize>,
    pub surface_counts: Vec<usize>,
    pub replicates: usize,
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub n_spectral: usize,
    pub godambe: GodambeConfig,
    pub timing_fields: usize,
    pub timing_deltas: Vec<f64>,
    /// Worker threads for the timed section.
    pub timing_threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            process: Process::Gp,
            grid: GridSpec::square(25, -10.0, 10.0).expect("valid default grid"),
            space: ParameterSpace::gp(2.0),
            eval_counts: vec![9, 9],
            surface_counts: vec![40, 40],
            replicates: 100,
            alpha: 0.05,
            methods: vec![Method::GpExact, Method::NeuralCalibrated],
            seed: 0,
            n_spectral: DEFAULT_SPECTRAL_TERMS,
            godambe: GodambeConfig::default(),
            timing_fields: 50,
            timing_deltas: vec![1.0, 2.0, 5.0, 10.0],
            timing_threads: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Configuration(m.into()));
        self.grid.validate()?;
        self.space.validate()?;
        if self.eval_counts.len() != self.space.dim() || self.surface_counts.len() != self.space.dim() {
            return bad("eval_counts and surface_counts need one entry per parameter");
        }
        if self.eval_counts.contains(&0) || self.surface_counts.contains(&0) {
            return bad("grid counts must be positive");
        }
        if self.replicates == 0 {
            return bad("replicates must be positive");
        }
        if self.methods.is_empty() {
            return bad("at least one method is required");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.timing_threads == 0 {
            return bad("timing_threads must be positive");
        }
        for m in &self.methods {
            match (m, self.process) {
                (Method::GpExact, Process::BrownResnick) => {
                    return bad("gp-exact needs Gaussian-process fields")
                }
                (Method::Pairwise { .. } | Method::PairwiseAdjusted { .. }, Process::Gp) => {
                    return bad("pairwise methods need Brown-Resnick fields")
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn surface_grid(&self) -> Result<ParameterGrid> {
        make_parameter_grid(&self.space, &self.surface_counts)
    }

    /// Surface-grid indices of the true parameters.
    pub fn eval_indices(&self, surface: &ParameterGrid) -> Result<Vec<usize>> {
        let lattice = make_parameter_grid(&self.space, &self.eval_counts)?;
        Ok(lattice.points().iter().map(|p| surface.nearest_index(p)).collect())
    }
}

/// Trained artifacts needed by the neural methods.
#[derive(Debug, Clone, Copy, Default)]
pub struct Models<'a> {
    pub model: Option<&'a CnnModel<f32>>,
    pub platt: Option<&'a PlattModel>,
}

impl Models<'_> {
    fn require(&self, method: &Method) -> Result<()> {
        match method {
            Method::NeuralCalibrated if self.platt.is_none() => Err(Error::Configuration(
                "neural-calibrated needs a Platt model (run calibrate first)".into(),
            )),
            Method::NeuralCalibrated | Method::NeuralUncalibrated if self.model.is_none() => Err(
                Error::Configuration("neural methods need a trained model (run train first)".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Result of one method on one true parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub method: String,
    pub eval_index: usize,
    pub theta: Vec<f64>,
    pub replicates: usize,
    /// Why the method produced nothing here (e.g. adjustment unavailable).
    pub masked: Option<String>,
    pub covered: usize,
    pub coverage: f64,
    /// Exact binomial 95% interval of the coverage.
    pub coverage_ci: [f64; 2],
    pub mean_area: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Median over replicates of the absolute error.
    pub median_abs_error: f64,
    pub estimates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub points: usize,
    pub masked_points: usize,
    pub mean_coverage: f64,
    pub mean_area: f64,
    pub rmse: f64,
    pub mae: f64,
    pub mmae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub parameter_names: Vec<String>,
    pub points: Vec<PointResult>,
    pub summaries: Vec<MethodSummary>,
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    covered: bool,
    area: f64,
}

/// Errors of estimates against the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub median_abs_error: f64,
}

/// `rmse = sqrt(mean |e|_2^2)`, `mae = mean |e|_1` and the median of `|e|_1`.
pub fn error_metrics(estimates: &[Vec<f64>], truth: &[f64]) -> ErrorMetrics {
    if estimates.is_empty() {
        return ErrorMetrics { rmse: f64::NAN, mae: f64::NAN, median_abs_error: f64::NAN };
    }
    let n = estimates.len() as f64;
    let mut sq = 0.0;
    let mut abs = Vec::with_capacity(estimates.len());
    for e in estimates {
        let d: Vec<f64> = e.iter().zip(truth).map(|(a, b)| a - b).collect();
        sq += d.iter().map(|x| x * x).sum::<f64>();
        abs.push(d.iter().map(|x| x.abs()).sum::<f64>());
    }
    ErrorMetrics {
        rmse: (sq / n).sqrt(),
        mae: abs.iter().sum::<f64>() / n,
        median_abs_error: median(&mut abs),
    }
}

pub fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Exact (Clopper-Pearson) interval for `k` successes in `n` trials.
pub fn clopper_pearson(k: usize, n: usize, level: f64) -> [f64; 2] {
    if n == 0 {
        return [0.0, 1.0];
    }
    let tail = (1.0 - level) / 2.0;
    let (k, nf) = (k as f64, n as f64);
    let lo = if k == 0.0 {
        0.0
    } else {
        Beta::new(k, nf - k + 1.0).expect("positive shapes").inverse_cdf(tail)
    };
    let hi = if k == nf {
        1.0
    } else {
        Beta::new(k + 1.0, nf - k).expect("positive shapes").inverse_cdf(1.0 - tail)
    };
    [lo, hi]
}

fn simulate_eval_fields(config: &EvalConfig, thetas: &[Parameter]) -> Result<Vec<Vec<SpatialField>>> {
    let root = derive_seed(config.seed, &[tag::EVAL]);
    let raw = simulate_replicates(config.process, thetas, &config.grid, config.replicates, root, config.n_spectral)?;
    raw.into_iter()
        .map(|fields| {
            fields
                .into_iter()
                .map(|v| SpatialField::new(config.grid, v))
                .collect()
        })
        .collect()
}

fn adjustment_for(config: &EvalConfig, theta: &Parameter, delta: f64, point: usize) -> std::result::Result<AdjustmentModel, String> {
    let godambe = GodambeConfig {
        seed: derive_seed(config.seed, &[tag::GODAMBE, point as u64]),
        n_spectral: config.n_spectral,
        ..config.godambe.clone()
    };
    estimate_godambe(theta, &config.grid, delta, &godambe)
        .and_then(adjustment_matrix)
        .map_err(|e| e.to_string())
}

fn method_surface(
    method: &Method,
    y: &SpatialField,
    grid: &ParameterGrid,
    models: &Models<'_>,
    gp: Option<&GpSurfaceEvaluator>,
    adjustment: Option<&AdjustmentModel>,
) -> Result<Surface> {
    match method {
        Method::GpExact => gp.expect("evaluator built for gp-exact").evaluate(y),
        Method::NeuralCalibrated => neural_surface(models.model.unwrap(), models.platt, y, grid),
        Method::NeuralUncalibrated => neural_surface(models.model.unwrap(), None, y, grid),
        Method::Pairwise { delta } => {
            let scheme = PairScheme::new(y.grid(), *delta)?;
            PairwiseEvaluator::new(y, &scheme)?.surface(grid)
        }
        Method::PairwiseAdjusted { delta } => {
            let scheme = PairScheme::new(y.grid(), *delta)?;
            let ev = PairwiseEvaluator::new(y, &scheme)?;
            let raw = ev.surface(grid)?;
            adjusted_surface_from(&ev, &raw, adjustment.expect("adjustment estimated"))
        }
    }
}

/// Estimation and coverage study. For every method, true parameter and
/// replicate: grid MLE, region at level `alpha`, membership of the truth
/// and region area.
pub fn run_study(config: &EvalConfig, models: &Models<'_>) -> Result<StudyResult> {
    config.validate()?;
    for m in &config.methods {
        models.require(m)?;
    }
    let grid = config.surface_grid()?;
    let eval = config.eval_indices(&grid)?;
    let thetas: Vec<Parameter> = eval.iter().map(|&i| grid.parameter(i)).collect();
    let fields = simulate_eval_fields(config, &thetas)?;
    let gp = if config.methods.contains(&Method::GpExact) {
        Some(GpSurfaceEvaluator::new(&grid, &config.grid)?)
    } else {
        None
    };

    // adjustment per (method, point); failures mask the point
    let adjustments: Vec<Vec<Option<std::result::Result<AdjustmentModel, String>>>> = config
        .methods
        .iter()
        .map(|m| match m {
            Method::PairwiseAdjusted { delta } => thetas
                .par_iter()
                .enumerate()
                .map(|(p, t)| Some(adjustment_for(config, t, *delta, p)))
                .collect(),
            _ => vec![None; thetas.len()],
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..thetas.len())
        .flat_map(|p| (0..config.replicates).map(move |r| (p, r)))
        .collect();
    let per_job: Vec<Vec<Option<(Vec<f64>, Outcome)>>> = jobs
        .par_iter()
        .map(|&(p, r)| {
            let y = &fields[p][r];
            config
                .methods
                .iter()
                .enumerate()
                .map(|(mi, m)| {
                    let adj = match &adjustments[mi][p] {
                        Some(Err(_)) => return Ok(None),
                        Some(Ok(a)) => Some(a),
                        None => None,
                    };
                    let s = method_surface(m, y, &grid, models, gp.as_ref(), adj)?;
                    let (est, _) = grid_mle(&s)?;
                    let region = confidence_region(&s, config.alpha)?;
                    Ok(Some((
                        est.values,
                        Outcome {
                            covered: region.membership[eval[p]],
                            area: region_area(&region),
                        },
                    )))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::new();
    for (mi, m) in config.methods.iter().enumerate() {
        for (p, theta) in thetas.iter().enumerate() {
            let rows = &per_job[p * config.replicates..(p + 1) * config.replicates];
            let masked = match &adjustments[mi][p] {
                Some(Err(e)) => Some(e.clone()),
                _ => None,
            };
            let outcomes: Vec<&(Vec<f64>, Outcome)> = rows.iter().filter_map(|r| r[mi].as_ref()).collect();
            let estimates: Vec<Vec<f64>> = outcomes.iter().map(|o| o.0.clone()).collect();
            let covered = outcomes.iter().filter(|o| o.1.covered).count();
            let n = outcomes.len();
            let metrics = error_metrics(&estimates, &theta.values);
            points.push(PointResult {
                method: m.label(),
                eval_index: eval[p],
                theta: theta.values.clone(),
                replicates: n,
                masked,
                covered,
                coverage: if n > 0 { covered as f64 / n as f64 } else { f64::NAN },
                coverage_ci: clopper_pearson(covered, n, 0.95),
                mean_area: if n > 0 { outcomes.iter().map(|o| o.1.area).sum::<f64>() / n as f64 } else { f64::NAN },
                rmse: metrics.rmse,
                mae: metrics.mae,
                median_abs_error: metrics.median_abs_error,
                estimates,
            });
        }
    }
    let summaries = config
        .methods
        .iter()
        .map(|m| summarize(&m.label(), points.iter().filter(|p| p.method == m.label())))
        .collect();
    Ok(StudyResult {
        parameter_names: grid.names(),
        points,
        summaries,
    })
}

fn summarize<'a>(method: &str, points: impl Iterator<Item = &'a PointResult>) -> MethodSummary {
    let points: Vec<&PointResult> = points.collect();
    let live: Vec<&&PointResult> = points.iter().filter(|p| p.masked.is_none() && p.replicates > 0).collect();
    let n_live = live.len() as f64;
    let total: usize = live.iter().map(|p| p.replicates).sum();
    let mut sq = 0.0;
    let mut abs = 0.0;
    for p in &live {
        for e in &p.estimates {
            let d = e.iter().zip(&p.theta).map(|(a, b)| a - b);
            sq += d.clone().map(|x| x * x).sum::<f64>();
            abs += d.map(f64::abs).sum::<f64>();
        }
    }
    let mut medians: Vec<f64> = live.iter().map(|p| p.median_abs_error).collect();
    MethodSummary {
        method: method.into(),
        points: points.len(),
        masked_points: points.len() - live.len(),
        mean_coverage: live.iter().map(|p| p.coverage).sum::<f64>() / n_live,
        mean_area: live.iter().map(|p| p.mean_area).sum::<f64>() / n_live,
        rmse: (sq / total as f64).sqrt(),
        mae: abs / total as f64,
        mmae: median(&mut medians),
    }
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    theta_1: f64,
    theta_2: f64,
    replicates: usize,
    coverage: f64,
    coverage_lo: f64,
    coverage_hi: f64,
    mean_area: f64,
    rmse: f64,
    mae: f64,
    median_abs_error: f64,
    masked: bool,
}

impl StudyResult {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// One row per method and true parameter.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        for p in &self.points {
            w.serialize(CsvRow {
                method: &p.method,
                theta_1: p.theta[0],
                theta_2: p.theta.get(1).copied().unwrap_or(f64::NAN),
                replicates: p.replicates,
                coverage: p.coverage,
                coverage_lo: p.coverage_ci[0],
                coverage_hi: p.coverage_ci[1],
                mean_area: p.mean_area,
                rmse: p.rmse,
                mae: p.mae,
                median_abs_error: p.median_abs_error,
                masked: p.masked.is_some(),
            })
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format(format!("csv: {other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub fields: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
}

fn time_method(fields: &[SpatialField], mut f: impl FnMut(&SpatialField) -> Result<Surface>) -> Result<(f64, f64)> {
    // warm-up pass, not measured
    f(&fields[0])?;
    let mut secs = Vec::with_capacity(fields.len());
    for y in fields {
        let t = Instant::now();
        std::hint::black_box(f(y)?);
        secs.push(t.elapsed().as_secs_f64());
    }
    let n = secs.len() as f64;
    let mean = secs.iter().sum::<f64>() / n;
    let var = if secs.len() > 1 {
        secs.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, var.sqrt()))
}

/// Wall time of one surface evaluation per method, over
/// `config.timing_fields` fields at the centre of the parameter space.
/// Pairwise methods always run on Brown-Resnick fields, since they need
/// positive values.
pub fn run_timing_study(config: &EvalConfig, models: &Models<'_>) -> Result<Vec<TimingRow>> {
    config.grid.validate()?;
    if config.timing_fields == 0 {
        return Err(Error::Configuration("timing_fields must be positive".into()));
    }
    let grid = config.surface_grid()?;
    let centre = config
        .space
        .parameter(config.space.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect());
    let draw = |process: Process| -> Result<Vec<SpatialField>> {
        let root = derive_seed(config.seed, &[tag::EVAL, u64::MAX]);
        let raw = simulate_replicates(process, std::slice::from_ref(&centre), &config.grid, config.timing_fields, root, config.n_spectral)?;
        raw.into_iter().flatten().map(|v| SpatialField::new(config.grid, v)).collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.timing_threads)
        .build()
        .map_err(|e| Error::Configuration(format!("thread pool: {e}")))?;
    let mut rows = Vec::new();
    let mut push = |method: &str, n: usize, (mean, std): (f64, f64)| {
        rows.push(TimingRow { method: method.into(), fields: n, mean_seconds: mean, std_seconds: std })
    };
    pool.install(|| -> Result<()> {
        if config.process == Process::Gp {
            let fields = draw(Process::Gp)?;
            push("gp-exact", fields.len(), time_method(&fields, |y| gp_surface(y, &grid))?);
            if let Some(model) = models.model {
                push(
                    "neural-unvectorized",
                    fields.len(),
                    time_method(&fields, |y| neural_surface_unvectorized(model, models.platt, y, &grid))?,
                );
                push(
                    "neural-vectorized",
                    fields.len(),
                    time_method(&fields, |y| neural_surface(model, models.platt, y, &grid))?,
                );
            }
        }
        if !config.timing_deltas.is_empty() {
            let br_space = ParameterSpace::br(2.0);
            let br_grid = make_parameter_grid(&br_space, &config.surface_counts)?;
            let fields = draw(Process::BrownResnick)?;
            if config.process == Process::BrownResnick {
                if let Some(model) = models.model {
                    push(
                        "neural-unvectorized",
                        fields.len(),
                        time_method(&fields, |y| neural_surface_unvectorized(model, models.platt, y, &grid))?,
                    );
                    push(
                        "neural-vectorized",
                        fields.len(),
                        time_method(&fields, |y| neural_surface(model, models.platt, y, &grid))?,
                    );
                }
            }
            for &delta in &config.timing_deltas {
                let scheme = PairScheme::new(&config.grid, delta)?;
                push(
                    &Method::Pairwise { delta }.label(),
                    fields.len(),
                    time_method(&fields, |y| PairwiseEvaluator::new(y, &scheme)?.surface(&br_grid))?,
                );
            }
        }
        Ok(())
    })?;
    Ok(rows)
}
