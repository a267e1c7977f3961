//! `nlsurf`: simulate, train, calibrate and evaluate neural likelihood
//! surfaces from the command line.

mod artifact;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing::error;
use tracing_subscriber::EnvFilter;

use commands::{Context, SurfaceArgs, SurfaceMethod};
use config::RunConfig;
use nlsurf::{Error, Process, Result};

#[derive(Parser)]
#[command(name = "nlsurf", version, about = "Neural likelihood surfaces for gridded spatial processes")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides every stage seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Spatial process: gp or br.
    #[arg(long, global = true)]
    process: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a two-class training (or calibration) dataset.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Use the calibration section instead of the training section.
        #[arg(long)]
        calibration: bool,
    },
    /// Train the classifier on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Mini-batch size.
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Fit Platt scaling on a held-out dataset.
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Log-likelihood surface of one field over the configured grid.
    Surface {
        /// NLT tensor of shape [side, side] or [count, side, side].
        #[arg(long)]
        field: PathBuf,
        /// Field to use when the tensor holds several.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, value_enum, default_value_t = SurfaceMethod::Neural)]
        method: SurfaceMethod,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Calibration directory or platt.json file.
        #[arg(long)]
        platt: Option<PathBuf>,
        #[arg(long)]
        no_calibration: bool,
        /// Pairwise cut-off distance.
        #[arg(long, default_value_t = 2.0)]
        delta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid maximizer of a surface.
    Mle {
        #[arg(long)]
        surface: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Approximate confidence region of a surface.
    Region {
        #[arg(long)]
        surface: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coverage, area and error study over a lattice of true parameters.
    Study {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        platt: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Surface evaluation timings.
    Bench {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn context(common: &Common, command: &Command) -> Result<Context> {
    let (mut config, config_bytes) = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = Some(seed);
    }
    if let Some(p) = &common.process {
        config.set_process(p.parse::<Process>()?);
    }
    match command {
        Command::Train { batch: Some(b), .. } => {
            config.train.batch_size = *b;
            config.train.micro_batch = config.train.micro_batch.min(*b);
        }
        Command::Study { alpha: Some(a), .. } => config.eval.alpha = *a,
        _ => {}
    }
    Ok(Context { config: config.resolve()?, config_bytes })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(Error::Configuration("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Configuration(format!("thread pool: {e}")))?;
    }
    let ctx = context(&cli.common, &cli.command)?;
    match cli.command {
        Command::Simulate { out, calibration } => commands::simulate(&ctx, &out, calibration),
        Command::Train { data, out, .. } => commands::train_cmd(&ctx, &data, &out),
        Command::Calibrate { model, data, out } => commands::calibrate(&ctx, &model, &data, &out),
        Command::Surface { field, index, method, model, platt, no_calibration, delta, out } => {
            let args = SurfaceArgs { field, index, method, model, platt, no_calibration, delta };
            commands::surface(&ctx, &args, &out)
        }
        Command::Mle { surface, out } => commands::mle(&ctx, &surface, &out),
        Command::Region { surface, alpha, out } => commands::region(&ctx, &surface, alpha, &out),
        Command::Study { model, platt, out, .. } => commands::study(&ctx, model.as_deref(), platt.as_deref(), &out),
        Command::Bench { model, out } => commands::bench(&ctx, model.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    let filter = EnvFilter::try_from_env("NL_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("nlsurf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
