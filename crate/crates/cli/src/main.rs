//! `regiondroso`: train, evaluate, time and ablate region-specialized place
//! recognition ensembles, and generate synthetic traversals.

mod config;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use regiondroso::datasets::{self, DatasetSpec, Perturbation, SynthSpec};
use regiondroso::eval::{self, GroundTruth, Metrics};
use regiondroso::image::to_grayscale;
use regiondroso::{model_io, par, Ensemble, EnsembleConfig, Error, GrayImage, GridSpec, PartitionPlan, Schedule};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "regiondroso", version, about = "Region-specialized visual place recognition")]
struct Cli {
    /// JSON run configuration; defaults apply to every missing key.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configured master seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads for training and evaluation. `time` always uses one.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on the reference traversal and write a model file.
    Train {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
    },
    /// Match the query traversal and write metrics and PR data.
    Eval {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[arg(long, value_name = "DIR")]
        results: PathBuf,
    },
    /// Measure single-threaded inference time over the query traversal.
    Time {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
    },
    /// Sweep one hyperparameter and write ablation.csv.
    Ablate {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated. Grid sets are written like `1x1+4x4`.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<String>,
        #[arg(long, value_name = "DIR")]
        results: PathBuf,
    },
    /// Write a synthetic reference/query pair and its ground truth.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        n_places: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = 0.0)]
        brightness_delta: f64,
        #[arg(long, default_value_t = 0)]
        shift: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Axis {
    Grids,
    K,
    Z,
}

/// A failure with its process exit code: 2 for bad input, 1 otherwise.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidInput(_) | Error::Format(_) | Error::Io { .. } => 2,
            Error::State(_) => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Synth {
        out,
        n_places,
        width,
        height,
        brightness_delta,
        shift,
        noise_sigma,
    } = &cli.command
    {
        let spec = SynthSpec {
            n_places: *n_places,
            width: *width,
            height: *height,
            seed: cli.seed.unwrap_or(0),
            perturbation: Perturbation {
                brightness_delta: *brightness_delta,
                shift: *shift,
                noise_sigma: *noise_sigma,
            },
        };
        return cmd_synth(&spec, out);
    }

    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    let timing_only = matches!(cli.command, Command::Time { .. });
    if let (Some(n), false) = (cli.threads, timing_only) {
        par::set_threads(n)?;
    }
    match &cli.command {
        Command::Train { model } => cmd_train(&config, model),
        Command::Eval { model, results } => cmd_eval(&config, model, results),
        Command::Time { model } => cmd_time(&config, model),
        Command::Ablate { axis, values, results } => cmd_ablate(&config, *axis, values, results),
        Command::Synth { .. } => unreachable!("handled above"),
    }
}

fn load_reference(spec: &DatasetSpec) -> Result<Vec<GrayImage>, CliError> {
    let t = datasets::load_traversal(&spec.reference_dir)?;
    info!("loaded {} reference frames from {}", t.len(), spec.reference_dir.display());
    Ok(t.images)
}

/// Query frames in colour (for timing the full path) and grayscale.
fn load_queries(spec: &DatasetSpec) -> Result<(Vec<image::RgbImage>, Vec<GrayImage>), CliError> {
    let frames = datasets::list_frames(&spec.query_dir)?;
    let rgb = frames
        .iter()
        .map(|p| datasets::decode_rgb(p))
        .collect::<Result<Vec<_>, _>>()?;
    let gray = rgb.iter().map(to_grayscale).collect::<Result<Vec<_>, _>>()?;
    info!("loaded {} query frames from {}", gray.len(), spec.query_dir.display());
    Ok((rgb, gray))
}

fn ground_truth(spec: &DatasetSpec, n_query: usize, n_ref: usize) -> Result<GroundTruth, CliError> {
    Ok(datasets::load_ground_truth(spec, n_query, n_ref)?)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))
}

fn train(config: EnsembleConfig, reference: &[GrayImage]) -> Result<(Ensemble, Vec<Vec<f32>>), CliError> {
    let mut ensemble = Ensemble::build(config, reference.len())?;
    info!(
        "training {} classifiers on {} places with {} worker(s)",
        ensemble.total(),
        reference.len(),
        par::workers()
    );
    let reports = ensemble.train_all(reference)?;
    let losses = reports
        .iter()
        .map(|g| g.iter().map(|r| r.final_loss).collect())
        .collect();
    Ok((ensemble, losses))
}

fn cmd_train(config: &RunConfig, model: &Path) -> Result<(), CliError> {
    let dataset = config.dataset()?;
    let reference = load_reference(dataset)?;
    let ensemble_config = config.ensemble()?;
    println!("P={} T={}", ensemble_config.region_count(), ensemble_config.total());
    let (ensemble, losses) = train(ensemble_config, &reference)?;

    let regions: Vec<_> = ensemble.config().grids.regions().collect();
    println!("group  grid  cell   final loss (mean / min / max over Z)");
    for (p, (id, group)) in regions.iter().zip(&losses).enumerate() {
        let mean = group.iter().sum::<f32>() / group.len() as f32;
        let min = group.iter().copied().fold(f32::INFINITY, f32::min);
        let max = group.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        println!(
            "{p:>5}  {:<4}  {},{}    {mean:.5} / {min:.5} / {max:.5}",
            id.grid.to_string(),
            id.row,
            id.col
        );
    }
    if let Some(parent) = model.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    model_io::save(&ensemble, model)?;
    println!("model written to {}", model.display());
    Ok(())
}

/// Loads the model and rejects it if it was trained on a different number
/// of reference places than the configured dataset has.
fn load_model(model: &Path, spec: &DatasetSpec) -> Result<Ensemble, CliError> {
    let ensemble = model_io::load(model)?;
    if spec.reference_dir.is_dir() {
        let n_ref = datasets::list_frames(&spec.reference_dir)?.len();
        if n_ref != ensemble.n_places() {
            return Err(CliError::input(format!(
                "model {} was trained on {} places, but {} holds {n_ref} reference frames",
                model.display(),
                ensemble.n_places(),
                spec.reference_dir.display()
            )));
        }
    }
    Ok(ensemble)
}

fn cmd_eval(config: &RunConfig, model: &Path, results: &Path) -> Result<(), CliError> {
    let dataset = config.dataset()?;
    let ensemble = load_model(model, dataset)?;
    let (_, queries) = load_queries(dataset)?;
    let gt = ground_truth(dataset, queries.len(), ensemble.n_places())?;
    let ev = eval::evaluate(&ensemble, &queries, &gt, Schedule::Parallel)?;

    create_dir(results)?;
    eval::write_matches_json(&results.join("matches.json"), &ev.records)?;
    eval::write_pr_csv(&results.join("pr_curve.csv"), &ev.metrics.pr_points)?;
    eval::write_metrics_json(&results.join("metrics.json"), &ev.metrics)?;
    eval::write_per_region_csv(&results.join("per_region.csv"), &ev.per_region)?;
    let m = &ev.metrics;
    println!(
        "queries {}  AUC {:.4}  EP {:.4}  R@P100 {:.4}  P@R0 {:.4}  top-1 {:.4}",
        m.queries, m.auc, m.ep, m.r_p100, m.p_r0, m.accuracy
    );
    println!("results written to {}", results.display());
    Ok(())
}

fn cmd_time(config: &RunConfig, model: &Path) -> Result<(), CliError> {
    let dataset = config.dataset()?;
    let ensemble = load_model(model, dataset)?;
    let (rgb, _) = load_queries(dataset)?;
    let t = eval::time_ensemble(&ensemble, &rgb)?;
    println!("queries  {}", t.samples);
    println!("mean     {:.3} ms", t.mean_ms);
    println!("median   {:.3} ms", t.median_ms);
    println!("p99      {:.3} ms", t.p99_ms);
    println!("fps      {:.2}", t.fps);
    Ok(())
}

fn parse_grid_set(value: &str) -> Result<PartitionPlan, CliError> {
    let grids = value
        .split('+')
        .map(|g| {
            g.trim()
                .parse::<GridSpec>()
                .map_err(|e| CliError::input(format!("bad grid '{g}': {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PartitionPlan::new(grids)?)
}

fn parse_positive(axis: &str, value: &str) -> Result<usize, CliError> {
    match value.trim().parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(CliError::input(format!("bad {axis} value '{value}': expected a positive integer"))),
    }
}

struct AblationRow {
    value: String,
    metrics: Metrics,
    mean_ms: f64,
}

fn cmd_ablate(config: &RunConfig, axis: Axis, values: &[String], results: &Path) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(CliError::input("no ablation values given"));
    }
    let dataset = config.dataset()?;
    let base = config.ensemble()?;

    // Parse every value up front so a typo fails before any training.
    let configs: Vec<EnsembleConfig> = match axis {
        Axis::Grids => values
            .iter()
            .map(|v| Ok(EnsembleConfig { grids: parse_grid_set(v)?, ..base.clone() }))
            .collect::<Result<_, CliError>>()?,
        Axis::Z => values
            .iter()
            .map(|v| Ok(EnsembleConfig { z_per_region: parse_positive("z", v)?, ..base.clone() }))
            .collect::<Result<_, CliError>>()?,
        Axis::K => values
            .iter()
            .map(|v| Ok(EnsembleConfig { k_votes: parse_positive("k", v)?, ..base.clone() }))
            .collect::<Result<_, CliError>>()?,
    };
    for c in &configs {
        c.validate()?;
    }

    let reference = load_reference(dataset)?;
    let (rgb, queries) = load_queries(dataset)?;
    let gt = ground_truth(dataset, queries.len(), reference.len())?;
    let mut rows = Vec::with_capacity(values.len());

    if axis == Axis::K {
        // K only enters the vote, so one trained ensemble serves every value.
        let (mut ensemble, _) = train(base, &reference)?;
        eval::check_queries(&ensemble, &queries, &gt)?;
        let scores = ensemble.infer_batch(&queries, Schedule::Parallel)?;
        for (value, c) in values.iter().zip(&configs) {
            ensemble.set_k_votes(c.k_votes)?;
            let (_, metrics) = eval::vote_records(&scores, &gt, c.k_votes)?;
            let mean_ms = eval::time_ensemble(&ensemble, &rgb)?.mean_ms;
            info!("k={value}: AUC {:.4}", metrics.auc);
            rows.push(AblationRow { value: value.clone(), metrics, mean_ms });
        }
    } else {
        for (value, c) in values.iter().zip(configs) {
            let (ensemble, _) = train(c, &reference)?;
            let ev = eval::evaluate(&ensemble, &queries, &gt, Schedule::Parallel)?;
            let mean_ms = eval::time_ensemble(&ensemble, &rgb)?.mean_ms;
            info!("{axis:?}={value}: AUC {:.4}", ev.metrics.auc);
            rows.push(AblationRow { value: value.clone(), metrics: ev.metrics, mean_ms });
        }
    }

    create_dir(results)?;
    let path = results.join("ablation.csv");
    write_ablation(&path, &rows).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    println!("value,auc,ep,mean_ms");
    for r in &rows {
        println!("{},{:.6},{:.6},{:.3}", r.value, r.metrics.auc, r.metrics.ep, r.mean_ms);
    }
    Ok(())
}

fn write_ablation(path: &Path, rows: &[AblationRow]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "value,auc,ep,mean_ms")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.value, r.metrics.auc, r.metrics.ep, r.mean_ms)?;
    }
    w.flush()
}

fn cmd_synth(spec: &SynthSpec, out: &Path) -> Result<(), CliError> {
    let (reference, query, gt) = datasets::generate_synthetic(spec)?;
    datasets::write_synthetic(out, &reference, &query, &gt).map_err(|e| match e {
        Error::Io { path, source } => CliError::input(format!("cannot write {}: {source}", path.display())),
        other => other.into(),
    })?;
    println!(
        "wrote {} reference and {} query frames to {}",
        reference.len(),
        query.len(),
        out.display()
    );
    Ok(())
}
