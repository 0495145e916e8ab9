//! Command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::base::{derive_seed, TimeGrid};
use crate::error::{Error, Result};
use crate::io::config::RunConfig;
use crate::io::csv::{
    read_observations_csv, read_trajectory_csv, read_weather_csv, write_observations_csv, write_trajectory_csv,
    write_weather_csv,
};
use crate::io::report::{evaluate_reports, ReportParts, RunReport};
use crate::lstm::format as weights;
use crate::metrics::table_to_csv;
use crate::pipeline::{assimilate, generate_eval_seasons, season_observations, train_stage, Method};

#[derive(Debug, Parser)]
#[command(name = "cropda", version, about = "EnKF and LSTM-emulated assimilation of crop LAI observations")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration file (key = value).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Shipped preset name or preset file; overrides the config.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Methods to run: open-loop, enkf, enkf-lstm (comma separated or repeated).
    #[arg(long, global = true, value_delimiter = ',')]
    pub method: Vec<String>,
    /// Zero timestamps and timings so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate evaluation seasons: weather, truth and observations.
    Simulate {
        /// Number of seasons (defaults to the preset's evaluation count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Produce EnKF targets on training seasons and train the emulator.
    Train {
        /// Weight file to write (defaults to <out-dir>/emulator.lstm).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Assimilate one season's observations and write a run report.
    Assimilate {
        #[arg(long)]
        weather: Option<PathBuf>,
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Optional true trajectory; enables metrics in the report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Emulator weights for enkf-lstm.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Report file (defaults to <out-dir>/report.json).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pool run reports into a method,mse,rmse,mae table.
    Evaluate {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Write the table here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Emit tidy day,series,value plot data from a run report.
    Report {
        report: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be >= 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

struct Context {
    cfg: RunConfig,
    out_dir: PathBuf,
}

fn context(g: &GlobalArgs) -> Result<Context> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &g.preset {
        cfg.preset = p.clone();
    }
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    let out_dir = g
        .out_dir
        .clone()
        .or_else(|| cfg.paths.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Context { cfg, out_dir })
}

fn methods(g: &GlobalArgs, default: &[Method]) -> Result<Vec<Method>> {
    if g.method.is_empty() {
        return Ok(default.to_vec());
    }
    let mut out = Vec::new();
    for name in &g.method {
        let m = Method::parse(name.trim())?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require(path: Option<PathBuf>, what: &str, flag: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::invalid(format!("{what} file required (use {flag} or the config paths)")))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let ctx = context(&cli.global)?;
    match &cli.command {
        Command::Simulate { count } => simulate(&ctx, cli, *count),
        Command::Train { output } => train(&ctx, cli, output.clone()),
        Command::Assimilate {
            weather,
            observations,
            truth,
            weights,
            output,
        } => {
            let files = AssimilateFiles {
                weather: require(weather.clone().or_else(|| ctx.cfg.paths.weather.clone()), "weather", "--weather")?,
                observations: require(
                    observations.clone().or_else(|| ctx.cfg.paths.observations.clone()),
                    "observations",
                    "--observations",
                )?,
                truth: truth.clone().or_else(|| ctx.cfg.paths.truth.clone()),
                weights: weights.clone().or_else(|| ctx.cfg.paths.weights.clone()),
                output: output.clone().unwrap_or_else(|| ctx.out_dir.join("report.json")),
            };
            assimilate_files(&ctx, cli, &files)
        }
        Command::Evaluate { reports, output } => {
            let reports = reports.iter().map(|p| RunReport::read(p)).collect::<Result<Vec<_>>>()?;
            let csv = table_to_csv(&evaluate_reports(&reports)?);
            emit(output.as_deref(), &csv)
        }
        Command::Report { report, output } => emit(output.as_deref(), &RunReport::read(report)?.plot_csv()),
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(ctx: &Context, cli: &Cli, count: Option<usize>) -> Result<()> {
    let mut spec = ctx.cfg.experiment()?;
    if let Some(seed) = cli.global.seed {
        spec.seed = seed;
    }
    if let Some(n) = count {
        spec.eval_seasons = n;
    }
    let grid = spec.grid()?;
    for season in generate_eval_seasons(&spec)? {
        let dir = ctx.out_dir.join(format!("season_{:03}", season.index));
        create_dir(&dir)?;
        let obs = season_observations(&spec, &season)?;
        write_weather_csv(&dir.join("weather.csv"), spec.start_date, &season.weather)?;
        write_trajectory_csv(&dir.join("truth.csv"), &grid, &season.truth)?;
        write_observations_csv(&dir.join("observations.csv"), &grid, &obs)?;
        log::info!("wrote {}", dir.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainingRecord<'a> {
    format: &'static str,
    version: u32,
    preset: &'a str,
    seed: u64,
    train_seasons: usize,
    validation_seasons: usize,
    train_rmse: f64,
    loss_curve: &'a [f64],
    validation_curve: &'a [f64],
}

fn train(ctx: &Context, cli: &Cli, output: Option<PathBuf>) -> Result<()> {
    let mut spec = ctx.cfg.experiment()?;
    if let Some(seed) = cli.global.seed {
        spec.seed = seed;
    }
    let summary = train_stage(&spec, &ctx.cfg.assimilation)?;
    let path = output
        .or_else(|| ctx.cfg.paths.weights.clone())
        .unwrap_or_else(|| ctx.out_dir.join("emulator.lstm"));
    write_file(&path, &weights::to_string(&summary.emulator))?;
    let record = TrainingRecord {
        format: "cropda-training",
        version: 1,
        preset: &ctx.cfg.preset,
        seed: ctx.cfg.assimilation.seed,
        train_seasons: summary.train_seasons,
        validation_seasons: summary.validation_seasons,
        train_rmse: summary.train_rmse,
        loss_curve: &summary.loss_curve,
        validation_curve: &summary.validation_curve,
    };
    let mut json = serde_json::to_string_pretty(&record)?;
    json.push('\n');
    write_file(&path.with_extension("training.json"), &json)?;
    log::info!("wrote {} (train rmse {:.4})", path.display(), summary.train_rmse);
    Ok(())
}

struct AssimilateFiles {
    weather: PathBuf,
    observations: PathBuf,
    truth: Option<PathBuf>,
    weights: Option<PathBuf>,
    output: PathBuf,
}

fn assimilate_files(ctx: &Context, cli: &Cli, files: &AssimilateFiles) -> Result<()> {
    let started = Instant::now();
    let spec = ctx.cfg.experiment()?;
    let methods = methods(&cli.global, &[Method::Enkf])?;
    let weather = read_weather_csv(&files.weather)?;
    let grid = TimeGrid::new(weather.start_date, weather.days.len())?;
    let obs = read_observations_csv(&files.observations, &grid)?;
    let truth = files
        .truth
        .as_ref()
        .map(|p| read_trajectory_csv(p, &grid))
        .transpose()?;
    let emulator = if methods.contains(&Method::EnkfLstm) {
        let path = files
            .weights
            .as_ref()
            .ok_or_else(|| Error::invalid("enkf-lstm needs --weights (or paths.weights in the config)"))?;
        Some(weights::load(path)?)
    } else {
        None
    };
    let cfg = &ctx.cfg.assimilation;
    let out = assimilate(
        &spec,
        cfg,
        &weather.days,
        obs.clone(),
        &methods,
        emulator.as_ref(),
        derive_seed(cfg.seed, 0xC11),
    )?;
    let report = RunReport::build(ReportParts {
        spec: &spec,
        config: cfg,
        grid: &grid,
        truth: truth.as_deref(),
        observations: &obs,
        outputs: &out.outputs,
        diagnostics: out.diagnostics,
        elapsed_ms: started.elapsed().as_millis() as u64,
        deterministic: cli.global.deterministic,
    })?;
    write_file(&files.output, &report.to_json()?)?;
    log::info!("wrote {}", files.output.display());
    Ok(())
}
