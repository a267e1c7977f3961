use std::path::{Path, PathBuf};

use serde::Serialize;
use tracing::{info, warn};

use nlsurf::br_pairwise::{adjusted_surface_from, adjustment_matrix, estimate_godambe, PairScheme, PairwiseEvaluator};
use nlsurf::calibrate::{fit_platt, log_loss, reliability_curve, PlattModel};
use nlsurf::eval::{run_study, run_timing_study, Models};
use nlsurf::gp_likelihood::GpSurfaceEvaluator;
use nlsurf::inference::{confidence_region, grid_mle, neural_surface};
use nlsurf::neural::{load_model_with_info, predict_dataset, save_model, train, ModelInfo};
use nlsurf::simulate::build_dataset;
use nlsurf::tensor::read_tensor;
use nlsurf::{Error, GridSpec, Model, PairDataset, Process, Result, SpatialField, Surface};

use crate::artifact::{sha256_hex, stage, write_json, Provenance};
use crate::config::RunConfig;

pub const PLATT_FILE: &str = "platt.json";

fn require_dir(path: &Path, what: &str, hint: &str) -> Result<()> {
    if path.join("manifest.json").is_file() {
        Ok(())
    } else {
        Err(Error::Configuration(format!("{what} not found at {} ({hint})", path.display())))
    }
}

fn load_dataset(path: &Path) -> Result<PairDataset> {
    require_dir(path, "dataset", "run `nlsurf simulate` first")?;
    PairDataset::read_dir(path)
}

fn load_model(path: &Path) -> Result<(Model, ModelInfo)> {
    require_dir(path, "model bundle", "run `nlsurf train` first")?;
    load_model_with_info(path)
}

fn load_platt(path: &Path) -> Result<PlattModel> {
    let file = if path.is_dir() { path.join(PLATT_FILE) } else { path.to_path_buf() };
    if !file.is_file() {
        return Err(Error::Configuration(format!(
            "calibration model not found at {} (run `nlsurf calibrate` first)",
            file.display()
        )));
    }
    PlattModel::read_json(file)
}

fn load_surface(path: &Path) -> Result<Surface> {
    require_dir(path, "surface", "run `nlsurf surface` first")?;
    Surface::read_dir(path)
}

fn check_model_matches(info: &ModelInfo, process: Process, grid: &GridSpec) -> Result<()> {
    if info.process.is_some_and(|p| p != process) {
        return Err(Error::Configuration(format!(
            "model was trained on {:?} fields, not {process:?}",
            info.process.unwrap()
        )));
    }
    if info.grid.is_some_and(|g| g != *grid) {
        return Err(Error::Configuration(format!(
            "model was trained on grid {:?}, not {grid:?}",
            info.grid.unwrap()
        )));
    }
    Ok(())
}

pub struct Context {
    pub config: RunConfig,
    pub config_bytes: Option<Vec<u8>>,
}

impl Context {
    fn provenance(&self, command: &str) -> Result<Provenance> {
        Provenance::new(command, self.config_bytes.as_deref(), &self.config)
    }
}

pub fn simulate(ctx: &Context, out: &Path, calibration: bool) -> Result<()> {
    let sim = if calibration { ctx.config.calibration_sim() } else { ctx.config.training_sim() };
    info!(process = ?sim.process, m = sim.m, n = sim.n, side = sim.grid.side, seed = sim.seed, "simulating");
    let data = build_dataset(&sim)?;
    let (c1, c2) = data.class_counts();
    stage(out, |dir| {
        data.write_dir(dir)?;
        ctx.provenance(if calibration { "simulate --calibration" } else { "simulate" })?.write(dir)
    })?;
    info!(dependent = c1, independent = c2, out = %out.display(), "dataset written");
    Ok(())
}

pub fn train_cmd(ctx: &Context, data_dir: &Path, out: &Path) -> Result<()> {
    let data = load_dataset(data_dir)?;
    if !data.has_second_class() {
        return Err(Error::Configuration(format!(
            "dataset {} has only the dependent class",
            data_dir.display()
        )));
    }
    let config = &ctx.config.train;
    info!(pairs = data.len(), epochs = config.epochs, batch = config.batch_size, "training");
    let (model, log) = train::<f32>(&data, config)?;
    for e in &log.epochs {
        info!(attempt = e.attempt, epoch = e.epoch, train_loss = e.train_loss, validation_loss = ?e.validation_loss, "epoch");
    }
    let model_info = ModelInfo {
        process: Some(data.process),
        grid: Some(data.grid),
        space: Some(data.space.clone()),
        dataset_seed: Some(data.seed),
        train_config: Some(config.clone()),
    };
    stage(out, |dir| {
        save_model(&model, dir, &model_info)?;
        write_json(&dir.join("train_log.json"), &log)?;
        ctx.provenance("train")?.input(data_dir)?.write(dir)
    })?;
    info!(best_loss = log.best_loss, best_epoch = log.best_epoch, out = %out.display(), "model written");
    Ok(())
}

#[derive(Serialize)]
struct CalibrationReport {
    log_loss_uncalibrated: f64,
    log_loss_calibrated: f64,
    reliability_uncalibrated: Vec<nlsurf::calibrate::ReliabilityBin>,
    reliability_calibrated: Vec<nlsurf::calibrate::ReliabilityBin>,
}

pub fn calibrate(ctx: &Context, model_dir: &Path, data_dir: &Path, out: &Path) -> Result<()> {
    let (model, info) = load_model(model_dir)?;
    let data = load_dataset(data_dir)?;
    check_model_matches(&info, data.process, &data.grid)?;
    let (probs, labels) = predict_dataset(&model, &data)?;
    let platt = fit_platt(&probs, &labels)?;
    if let Some(w) = platt.quality_warning() {
        warn!("{w}");
    }
    let calibrated: Vec<f64> = probs.iter().map(|&p| nlsurf::calibrate::apply_platt(&platt, p)).collect();
    let report = CalibrationReport {
        log_loss_uncalibrated: log_loss(&probs, &labels),
        log_loss_calibrated: log_loss(&calibrated, &labels),
        reliability_uncalibrated: reliability_curve(&probs, &labels, 10)?,
        reliability_calibrated: reliability_curve(&calibrated, &labels, 10)?,
    };
    stage(out, |dir| {
        platt.write_json(dir.join(PLATT_FILE))?;
        write_json(&dir.join("reliability.json"), &report)?;
        ctx.provenance("calibrate")?.input(model_dir)?.input(data_dir)?.write(dir)
    })?;
    info!(beta0 = platt.beta0, beta1 = platt.beta1, out = %out.display(), "calibration written");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SurfaceMethod {
    Neural,
    GpExact,
    Pairwise,
    PairwiseAdjusted,
}

pub struct SurfaceArgs {
    pub field: PathBuf,
    pub index: usize,
    pub method: SurfaceMethod,
    pub model: Option<PathBuf>,
    pub platt: Option<PathBuf>,
    pub no_calibration: bool,
    pub delta: f64,
}

/// Field `index` of an NLT tensor shaped `[side, side]` or `[count, side, side]`.
fn read_field(path: &Path, index: usize, grid: &GridSpec) -> Result<SpatialField> {
    if !path.is_file() {
        return Err(Error::Configuration(format!("field file {} not found", path.display())));
    }
    let t = read_tensor(path)?;
    let s = grid.side;
    let count = match t.shape.as_slice() {
        [a, b] if *a == s && *b == s => 1,
        [c, a, b] if *a == s && *b == s => *c,
        other => {
            return Err(Error::Configuration(format!(
                "{} holds shape {other:?}, expected fields on a {s}x{s} grid",
                path.display()
            )))
        }
    };
    if index >= count {
        return Err(Error::Configuration(format!("field index {index} out of range ({count} fields)")));
    }
    let values = t.data[index * s * s..(index + 1) * s * s].iter().map(|&v| v as f64).collect();
    SpatialField::new(*grid, values)
}

pub fn surface(ctx: &Context, args: &SurfaceArgs, out: &Path) -> Result<()> {
    let cfg = &ctx.config;
    let grid = cfg.eval.surface_grid()?;
    let spatial = cfg.sim.grid;
    let y = read_field(&args.field, args.index, &spatial)?;
    let field_id = format!("{}#{}", sha256_hex(&std::fs::read(&args.field)?), args.index);
    let mut prov = ctx.provenance("surface")?.input(&args.field)?;
    let mut s = match args.method {
        SurfaceMethod::Neural => {
            let model_dir = args.model.as_deref().ok_or_else(|| {
                Error::Configuration("neural surfaces need --model (run `nlsurf train` first)".into())
            })?;
            let (model, info) = load_model(model_dir)?;
            check_model_matches(&info, cfg.sim.process, &spatial)?;
            prov = prov.input(model_dir)?;
            let platt = if args.no_calibration {
                None
            } else {
                let path = args.platt.as_deref().ok_or_else(|| {
                    Error::Configuration(
                        "calibrated surfaces need --platt (run `nlsurf calibrate` first) or --no-calibration".into(),
                    )
                })?;
                prov = prov.input(path)?;
                Some(load_platt(path)?)
            };
            let mut s = neural_surface(&model, platt.as_ref(), &y, &grid)?;
            if let Some(p) = &args.platt {
                if platt.is_some() {
                    s.meta.calibration_id = Some(p.display().to_string());
                }
            }
            s
        }
        SurfaceMethod::GpExact => {
            if cfg.sim.process != Process::Gp {
                return Err(Error::Configuration("gp-exact surfaces need --process gp".into()));
            }
            GpSurfaceEvaluator::new(&grid, &spatial)?.evaluate(&y)?
        }
        SurfaceMethod::Pairwise | SurfaceMethod::PairwiseAdjusted => {
            if cfg.sim.process != Process::BrownResnick {
                return Err(Error::Configuration("pairwise surfaces need --process br".into()));
            }
            let scheme = PairScheme::new(&spatial, args.delta)?;
            let ev = PairwiseEvaluator::new(&y, &scheme)?;
            let plain = ev.surface(&grid)?;
            if args.method == SurfaceMethod::Pairwise {
                plain
            } else {
                let (theta_star, _) = grid_mle(&plain)?;
                info!(theta = ?theta_star.values, "estimating curvature at the pairwise maximizer");
                let adj = adjustment_matrix(estimate_godambe(&theta_star, &spatial, args.delta, &cfg.eval.godambe)?)?;
                adjusted_surface_from(&ev, &plain, &adj)?
            }
        }
    };
    s.meta.field_id = Some(field_id);
    if s.meta.clamped_points > 0 {
        warn!(points = s.meta.clamped_points, "classifier outputs clamped");
    }
    stage(out, |dir| {
        s.write_dir(dir)?;
        prov.write(dir)
    })?;
    info!(kind = s.kind.as_str(), out = %out.display(), "surface written");
    Ok(())
}

#[derive(Serialize)]
struct MleRecord {
    names: Vec<String>,
    theta: Vec<f64>,
    index: usize,
    log_value: f64,
    kind: &'static str,
}

pub fn mle(ctx: &Context, surface_dir: &Path, out: &Path) -> Result<()> {
    let s = load_surface(surface_dir)?;
    let (theta, log_value) = grid_mle(&s)?;
    let record = MleRecord {
        names: s.grid.names(),
        index: s.grid.nearest_index(&theta.values),
        theta: theta.values,
        log_value,
        kind: s.kind.as_str(),
    };
    stage(out, |dir| {
        write_json(&dir.join("mle.json"), &record)?;
        ctx.provenance("mle")?.input(surface_dir)?.write(dir)
    })?;
    info!(theta = ?record.theta, "maximizer written");
    Ok(())
}

pub fn region(ctx: &Context, surface_dir: &Path, alpha: f64, out: &Path) -> Result<()> {
    let s = load_surface(surface_dir)?;
    let mut r = confidence_region(&s, alpha)?;
    r.source_id = s.meta.field_id.clone();
    stage(out, |dir| {
        r.write_dir(dir)?;
        ctx.provenance("region")?.input(surface_dir)?.write(dir)
    })?;
    info!(alpha, cutoff = r.cutoff, members = r.len(), "region written");
    Ok(())
}

fn study_models(
    model_dir: Option<&Path>,
    platt: Option<&Path>,
    process: Process,
    grid: &GridSpec,
    mut prov: Provenance,
) -> Result<(Option<Model>, Option<PlattModel>, Provenance)> {
    let model = match model_dir {
        Some(d) => {
            let (m, info) = load_model(d)?;
            check_model_matches(&info, process, grid)?;
            prov = prov.input(d)?;
            Some(m)
        }
        None => None,
    };
    let platt = match platt {
        Some(p) => {
            prov = prov.input(p)?;
            Some(load_platt(p)?)
        }
        None => None,
    };
    Ok((model, platt, prov))
}

pub fn study(ctx: &Context, model_dir: Option<&Path>, platt: Option<&Path>, out: &Path) -> Result<()> {
    let eval = &ctx.config.eval;
    let (model, platt, prov) = study_models(model_dir, platt, eval.process, &eval.grid, ctx.provenance("study")?)?;
    let models = Models { model: model.as_ref(), platt: platt.as_ref() };
    info!(methods = eval.methods.len(), replicates = eval.replicates, "running study");
    let result = run_study(eval, &models)?;
    for s in &result.summaries {
        info!(method = %s.method, coverage = s.mean_coverage, area = s.mean_area, rmse = s.rmse, "summary");
    }
    stage(out, |dir| {
        result.write_csv(dir.join("results.csv"))?;
        result.write_json(dir.join("results.json"))?;
        prov.write(dir)
    })
}

pub fn bench(ctx: &Context, model_dir: Option<&Path>, out: &Path) -> Result<()> {
    let eval = &ctx.config.eval;
    let (model, _, prov) = study_models(model_dir, None, eval.process, &eval.grid, ctx.provenance("bench")?)?;
    let rows = run_timing_study(eval, &Models { model: model.as_ref(), platt: None })?;
    for r in &rows {
        info!(method = %r.method, mean_seconds = r.mean_seconds, std_seconds = r.std_seconds, "timing");
    }
    stage(out, |dir| {
        write_json(&dir.join("bench.json"), &rows)?;
        prov.write(dir)
    })
}
