//! Command-line front end: seven subcommands, each loading one JSON config,
//! running one library operation, and leaving a reproducible trail in the
//! output directory (CSV tables, SVG plots, a manifest).
//!
//! Every run writes `manifest.json` recording the effective config after
//! flag overrides. Passing that manifest back through `--config` replays the
//! run: the `config` member is extracted and the CSV outputs are reproduced
//! byte for byte.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{gen_blobs, gen_toy, read_idx_with_labels, BlobSpec, Dataset, ToySpec};
use crate::denoise::{denoise_report, LabeledState};
use crate::density::{k_nearest, GradientBank};
use crate::experiments::{
    run_duplicate_noise, run_enforce_demo, run_toy_sweep, DuplicateNoiseSpec, EnforceDemoConfig,
    SweepConfig, SweepRecipe,
};
use crate::nn::{
    load_params, save_params, train, Activation, Loss, NetworkSpec, TrainConfig,
};
use crate::report::{load_config_tagged, save_manifest, write_csv, Manifest};
use crate::svg::{save_plot, PlotConfig, Series};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "gradsim", version, about = "Gradient-similarity toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network on a configured dataset and save its parameters.
    Train(CommonArgs),
    /// Build a gradient bank from a dataset and saved parameters.
    Bank(CommonArgs),
    /// List nearest neighbors of query samples under the correlation kernel.
    Neighbors(CommonArgs),
    /// Kernel-weighted denoising report for a trained network.
    Denoise(CommonArgs),
    /// Frequency sweep of neighbor-count estimators on the toy sinusoid.
    SweepToy(SweepArgs),
    /// Duplicate-and-noise averaging study.
    DupNoise(CommonArgs),
    /// Training demo with an auxiliary similarity loss.
    EnforceDemo(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Train(a)
            | Command::Bank(a)
            | Command::Neighbors(a)
            | Command::Denoise(a)
            | Command::DupNoise(a)
            | Command::EnforceDemo(a) => a,
            Command::SweepToy(a) => &a.common,
        }
    }

}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file; a manifest from a previous run also works.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Replace the config's recipe with a named preset.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Full,
    Reduced,
}

/// Dataset selector shared by the train, bank and denoise commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Sinusoid on the circle: inputs (cos 2πα, sin 2πα), labels sin(2πfα).
    Toy {
        frequency: f64,
        n: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        jitter: Option<f64>,
    },
    /// Two Gaussian blobs with labels ±1.
    Blobs { n_per_class: usize, sigma: f64 },
    /// IDX image/label pair, labels one-hot over 10 classes.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        take: Option<usize>,
    },
}

impl DataSource {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DataSource::Toy {
                frequency,
                n,
                jitter,
            } => gen_toy(&ToySpec {
                frequency: *frequency,
                n: *n,
                jitter: *jitter,
                seed,
            }),
            DataSource::Blobs { n_per_class, sigma } => gen_blobs(&BlobSpec {
                n_per_class: *n_per_class,
                sigma: *sigma,
                seed,
                ..Default::default()
            }),
            DataSource::Idx {
                images,
                labels,
                take,
            } => read_idx_with_labels(images, labels, *take),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCommandConfig {
    pub data: DataSource,
    /// Hidden layer widths; input and output widths come from the dataset.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub loss: Loss,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainCommandConfig {
    fn default() -> TrainCommandConfig {
        TrainCommandConfig {
            data: DataSource::Toy {
                frequency: 2.0,
                n: 256,
                jitter: None,
            },
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            loss: Loss::SquaredError,
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankCommandConfig {
    pub data: DataSource,
    /// Parameter file written by the train command.
    pub params: PathBuf,
    pub seed: u64,
}

impl Default for BankCommandConfig {
    fn default() -> BankCommandConfig {
        BankCommandConfig {
            data: TrainCommandConfig::default().data,
            params: PathBuf::from("params.json"),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighborsCommandConfig {
    /// Bank file written by the bank command.
    pub bank: PathBuf,
    pub queries: Vec<usize>,
    pub k: usize,
}

impl Default for NeighborsCommandConfig {
    fn default() -> NeighborsCommandConfig {
        NeighborsCommandConfig {
            bank: PathBuf::from("bank.bin"),
            queries: vec![0],
            k: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiseCommandConfig {
    /// Dataset whose labels are treated as the noisy observations. Must have
    /// scalar labels.
    pub data: DataSource,
    pub params: PathBuf,
    /// Lipschitz constant for the shift bound; estimated from the data when
    /// absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    pub seed: u64,
}

impl Default for DenoiseCommandConfig {
    fn default() -> DenoiseCommandConfig {
        DenoiseCommandConfig {
            data: TrainCommandConfig::default().data,
            params: PathBuf::from("params.json"),
            lipschitz: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DupNoiseCommandConfig {
    /// Duplicate counts to compare; the error std is expected to shrink like
    /// `1/sqrt(n_dup)` across them.
    pub n_dups: Vec<usize>,
    pub n_sites: usize,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for DupNoiseCommandConfig {
    fn default() -> DupNoiseCommandConfig {
        DupNoiseCommandConfig {
            n_dups: vec![4, 16],
            n_sites: 8,
            sigma: 0.2,
            trials: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

#[derive(Debug, Serialize)]
struct NeighborRow {
    query: usize,
    rank: usize,
    index: usize,
    similarity: f64,
}

#[derive(Debug, Serialize)]
struct DupRow {
    n_dup: usize,
    trial: usize,
    site: usize,
    error: f64,
    factor: f64,
}

#[derive(Debug, Serialize)]
struct DupSummaryRow {
    n_dup: usize,
    error_std: f64,
    mean_abs_error: f64,
    factor_mean: f64,
}

#[derive(Debug, Serialize)]
struct DemoEpochRow {
    aux_weight: f64,
    epoch: usize,
    train_loss: f64,
    val_accuracy: f64,
}

#[derive(Debug, Serialize)]
struct DemoTraceRow {
    aux_weight: f64,
    step: usize,
    epoch: usize,
    main_loss: f64,
    criterion: Option<f64>,
}

/// Load the config for `command`, defaulting when no file was given. A
/// manifest recorded by a different command is rejected instead of being
/// silently reinterpreted.
fn load_or_default<T: DeserializeOwned + Default>(
    path: &Option<PathBuf>,
    command: &str,
) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let (tag, value) = load_config_tagged(path)?;
    if let Some(tag) = tag {
        if tag != command {
            return Err(Error::Config {
                path: path.clone(),
                message: format!("manifest records command {tag:?}, expected {command:?}"),
            });
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Config {
        path: path.clone(),
        message: e.to_string(),
    })
}

/// Effective thread count for the manifest: the explicit flag, or however
/// many workers the default pool decided on.
fn thread_count(args: &CommonArgs) -> usize {
    args.threads.unwrap_or_else(rayon::current_num_threads)
}

fn finish(
    out: &Path,
    command: &str,
    seed: u64,
    args: &CommonArgs,
    config: serde_json::Value,
    started: Instant,
) -> Result<()> {
    let manifest = Manifest::new(command, seed, thread_count(args), config)
        .finished(started.elapsed().as_secs_f64());
    save_manifest(out.join("manifest.json"), &manifest)
}

/// Parse and execute one command. Output files land in `--out`; a short
/// summary goes to stdout and warnings to stderr.
pub fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    if let Some(threads) = common.threads {
        if threads == 0 {
            return Err(Error::InvalidArgument("threads must be at least 1".into()));
        }
        // First configuration wins; a pool already built (by an embedding
        // process or an earlier call) is left alone.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    std::fs::create_dir_all(&common.out)?;
    let started = Instant::now();
    match &cli.command {
        Command::Train(args) => cmd_train(args, started),
        Command::Bank(args) => cmd_bank(args, started),
        Command::Neighbors(args) => cmd_neighbors(args, started),
        Command::Denoise(args) => cmd_denoise(args, started),
        Command::SweepToy(args) => cmd_sweep(args, started),
        Command::DupNoise(args) => cmd_dup_noise(args, started),
        Command::EnforceDemo(args) => cmd_enforce_demo(args, started),
    }
}

fn network_for(data: &Dataset, hidden: &[usize], activation: Activation) -> Result<NetworkSpec> {
    let mut sizes = vec![data.inputs[0].len()];
    sizes.extend_from_slice(hidden);
    sizes.push(data.labels[0].len());
    NetworkSpec::mlp(sizes, activation)
}

fn cmd_train(args: &CommonArgs, started: Instant) -> Result<()> {
    let mut config: TrainCommandConfig = load_or_default(&args.config, "train")?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let data = config.data.load(config.seed)?;
    let spec = network_for(&data, &config.hidden, config.activation)?;
    let train_config = TrainConfig {
        adam: crate::nn::AdamConfig {
            learning_rate: config.learning_rate,
            ..Default::default()
        },
        epochs: config.epochs,
        batch_size: config.batch_size,
        seed: config.seed,
        loss: config.loss,
    };
    let run = train(&spec, &data, &train_config)?;

    save_params(args.out.join("params.json"), &spec, &run.params)?;
    let rows: Vec<LossRow> = run
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| LossRow { epoch, loss })
        .collect();
    write_csv(args.out.join("loss.csv"), &rows)?;
    println!(
        "trained {} parameters on {} samples for {} epochs; final loss {:.6}",
        spec.param_count(),
        data.len(),
        config.epochs,
        run.epoch_losses.last().copied().unwrap_or(f64::NAN),
    );
    finish(
        &args.out,
        "train",
        config.seed,
        args,
        serde_json::to_value(&config)?,
        started,
    )
}

fn cmd_bank(args: &CommonArgs, started: Instant) -> Result<()> {
    let mut config: BankCommandConfig = load_or_default(&args.config, "bank")?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let data = config.data.load(config.seed)?;
    let (spec, params) = load_params(&config.params)?;
    let bank = GradientBank::from_network(&spec, &params, &data.inputs)?;
    let undefined = (0..bank.len()).filter(|&i| !bank.is_defined(i)).count();
    bank.save(&args.out.join("bank.bin"))?;
    println!(
        "banked {} gradients of dimension {} ({} undefined)",
        bank.len(),
        bank.dim(),
        undefined,
    );
    finish(
        &args.out,
        "bank",
        config.seed,
        args,
        serde_json::to_value(&config)?,
        started,
    )
}

fn cmd_neighbors(args: &CommonArgs, started: Instant) -> Result<()> {
    let config: NeighborsCommandConfig = load_or_default(&args.config, "neighbors")?;
    let bank = GradientBank::load(&config.bank)?;
    let mut rows = Vec::new();
    for &query in &config.queries {
        let report = k_nearest(&bank, query, config.k)?;
        if report.undefined_skipped > 0 {
            eprintln!(
                "query {}: skipped {} samples with zero gradient",
                query, report.undefined_skipped,
            );
        }
        for (rank, neighbor) in report.neighbors.iter().enumerate() {
            rows.push(NeighborRow {
                query,
                rank: rank + 1,
                index: neighbor.index,
                similarity: neighbor.similarity,
            });
        }
    }
    write_csv(args.out.join("neighbors.csv"), &rows)?;
    println!(
        "wrote {} neighbor rows for {} queries",
        rows.len(),
        config.queries.len(),
    );
    finish(
        &args.out,
        "neighbors",
        args.seed.unwrap_or(0),
        args,
        serde_json::to_value(&config)?,
        started,
    )
}

fn cmd_denoise(args: &CommonArgs, started: Instant) -> Result<()> {
    let mut config: DenoiseCommandConfig = load_or_default(&args.config, "denoise")?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let data = config.data.load(config.seed)?;
    if data.labels[0].len() != 1 {
        return Err(Error::InvalidArgument(
            "denoise needs scalar labels".into(),
        ));
    }
    let (spec, params) = load_params(&config.params)?;
    let noisy: Vec<f64> = data.labels.iter().map(|l| l[0]).collect();
    let state = LabeledState::from_network(&spec, &params, &data.inputs, noisy)?;
    let bank = GradientBank::from_network(&spec, &params, &data.inputs)?;
    let report = denoise_report(&bank, &state, config.lipschitz)?;

    write_csv(args.out.join("denoise.csv"), &report.rows)?;
    if !report.skipped.is_empty() {
        eprintln!(
            "skipped {} targets with an undefined kernel column",
            report.skipped.len(),
        );
    }
    println!(
        "denoised {} targets: factor {:.4} ± {:.4}, shift {:.4} ± {:.4}, Lipschitz {:.4}",
        report.rows.len(),
        report.factor_mean,
        report.factor_std,
        report.shift_mean,
        report.shift_std,
        report.lipschitz_constant,
    );
    finish(
        &args.out,
        "denoise",
        config.seed,
        args,
        serde_json::to_value(&config)?,
        started,
    )
}

fn cmd_sweep(args: &SweepArgs, started: Instant) -> Result<()> {
    let mut config: SweepConfig = load_or_default(&args.common.config, "sweep-toy")?;
    if let Some(seed) = args.common.seed {
        config.base_seed = seed;
    }
    if let Some(preset) = args.preset {
        config.recipe = match preset {
            Preset::Full => SweepRecipe::full(),
            Preset::Reduced => SweepRecipe::reduced(),
        };
    }
    let result = run_toy_sweep(&config)?;

    let out = &args.common.out;
    write_csv(out.join("cells.csv"), &result.cells)?;
    write_csv(out.join("medians.csv"), &result.medians)?;
    write_csv(out.join("fits.csv"), &result.fits)?;

    let mut series: Vec<Series> = Vec::new();
    for row in &result.medians {
        let Some(value) = row.value else { continue };
        match series.iter_mut().find(|s| s.label == row.estimator) {
            Some(s) => s.points.push((row.frequency, value)),
            None => series.push(Series::new(&row.estimator, vec![(row.frequency, value)])),
        }
    }
    let plot = PlotConfig {
        title: "Neighbor counts vs frequency".into(),
        x_label: "frequency".into(),
        y_label: "median neighbor count".into(),
        log_x: true,
        log_y: true,
        ..Default::default()
    };
    save_plot(out.join("sweep.svg"), &plot, &series)?;

    for warning in &result.warnings {
        eprintln!("warning: {warning}");
    }
    for fit in &result.fits {
        match fit.slope {
            Some(slope) => println!(
                "{}: log-log slope {:.3} over {} frequencies",
                fit.estimator, slope, fit.points,
            ),
            None => println!(
                "{}: slope undefined ({} usable frequency points)",
                fit.estimator, fit.points,
            ),
        }
    }
    finish(
        out,
        "sweep-toy",
        config.base_seed,
        &args.common,
        serde_json::to_value(&config)?,
        started,
    )
}

fn cmd_dup_noise(args: &CommonArgs, started: Instant) -> Result<()> {
    let mut config: DupNoiseCommandConfig = load_or_default(&args.config, "dup-noise")?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if config.n_dups.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one duplicate count".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &n_dup in &config.n_dups {
        let spec = DuplicateNoiseSpec {
            n_dup,
            n_sites: config.n_sites,
            sigma: config.sigma,
            seed: config.seed,
            trials: config.trials,
        };
        let result = run_duplicate_noise(&spec)?;
        rows.extend(result.rows.iter().map(|r| DupRow {
            n_dup,
            trial: r.trial,
            site: r.site,
            error: r.error,
            factor: r.factor,
        }));
        summary.push(DupSummaryRow {
            n_dup,
            error_std: result.error_std,
            mean_abs_error: result.mean_abs_error,
            factor_mean: result.factor_mean,
        });
    }
    write_csv(args.out.join("dup_rows.csv"), &rows)?;
    write_csv(args.out.join("dup_summary.csv"), &summary)?;

    let measured: Vec<(f64, f64)> = summary
        .iter()
        .map(|s| (s.n_dup as f64, s.error_std))
        .collect();
    // Reference curve with exact 1/sqrt(n) decay, anchored at the first
    // measured point.
    let reference: Vec<(f64, f64)> = measured
        .iter()
        .map(|&(n, _)| (n, measured[0].1 * (measured[0].0 / n).sqrt()))
        .collect();
    let plot = PlotConfig {
        title: "Error spread vs duplicates per site".into(),
        x_label: "duplicates per site".into(),
        y_label: "error std over trials".into(),
        log_x: true,
        log_y: true,
        ..Default::default()
    };
    save_plot(
        args.out.join("dup_noise.svg"),
        &plot,
        &[
            Series::new("measured", measured),
            Series::new("1/sqrt(n) reference", reference),
        ],
    )?;

    for pair in summary.windows(2) {
        let expected = (pair[0].n_dup as f64 / pair[1].n_dup as f64).sqrt();
        println!(
            "error std {} -> {}: ratio {:.3} (sqrt law predicts {:.3})",
            pair[0].n_dup,
            pair[1].n_dup,
            pair[1].error_std / pair[0].error_std,
            expected,
        );
    }
    if let [only] = summary.as_slice() {
        println!(
            "error std {:.4} at {} duplicates per site",
            only.error_std, only.n_dup,
        );
    }
    finish(
        &args.out,
        "dup-noise",
        config.seed,
        args,
        serde_json::to_value(&config)?,
        started,
    )
}

fn cmd_enforce_demo(args: &CommonArgs, started: Instant) -> Result<()> {
    let mut config: EnforceDemoConfig = load_or_default(&args.config, "enforce-demo")?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let result = run_enforce_demo(&config)?;

    let mut epoch_rows = Vec::new();
    let mut trace_rows = Vec::new();
    for run in &result.runs {
        for (epoch, (&loss, &acc)) in run
            .epoch_losses
            .iter()
            .zip(&run.val_accuracy)
            .enumerate()
        {
            epoch_rows.push(DemoEpochRow {
                aux_weight: run.aux_weight,
                epoch,
                train_loss: loss,
                val_accuracy: acc,
            });
        }
        trace_rows.extend(run.trace.iter().map(|t| DemoTraceRow {
            aux_weight: run.aux_weight,
            step: t.step,
            epoch: t.epoch,
            main_loss: t.main_loss,
            criterion: t.criterion,
        }));
    }
    write_csv(args.out.join("demo_epochs.csv"), &epoch_rows)?;
    write_csv(args.out.join("demo_trace.csv"), &trace_rows)?;

    let accuracy_series: Vec<Series> = result
        .runs
        .iter()
        .map(|run| {
            Series::new(
                format!("weight {}", run.aux_weight),
                run.val_accuracy
                    .iter()
                    .enumerate()
                    .map(|(e, &a)| (e as f64, a))
                    .collect(),
            )
        })
        .collect();
    let accuracy_plot = PlotConfig {
        title: "Validation accuracy by auxiliary weight".into(),
        x_label: "epoch".into(),
        y_label: "accuracy".into(),
        ..Default::default()
    };
    save_plot(
        args.out.join("demo_accuracy.svg"),
        &accuracy_plot,
        &accuracy_series,
    )?;

    let criterion_series: Vec<Series> = result
        .runs
        .iter()
        .map(|run| {
            Series::new(
                format!("weight {}", run.aux_weight),
                run.trace
                    .iter()
                    .filter_map(|t| t.criterion.map(|c| (t.step as f64, c)))
                    .collect(),
            )
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    if !criterion_series.is_empty() {
        let criterion_plot = PlotConfig {
            title: "Group criterion along training".into(),
            x_label: "step".into(),
            y_label: "criterion".into(),
            ..Default::default()
        };
        save_plot(
            args.out.join("demo_criterion.svg"),
            &criterion_plot,
            &criterion_series,
        )?;
    }

    for warning in &result.warnings {
        eprintln!("warning: {warning}");
    }
    for run in &result.runs {
        println!(
            "weight {}: final accuracy {:.3}, validation accuracy {:.3}",
            run.aux_weight,
            run.final_accuracy,
            run.val_accuracy.last().copied().unwrap_or(f64::NAN),
        );
    }
    finish(
        &args.out,
        "enforce-demo",
        config.seed,
        args,
        serde_json::to_value(&config)?,
        started,
    )
}
