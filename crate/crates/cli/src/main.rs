//! `dgcformer`: train and inspect cluster-masked forecasters from the
//! command line.
//!
//! Every failure prints a single `error: ...` line to stderr. Config and
//! data problems exit with code 1; a run whose loss turns non-finite exits
//! with code 2 so sweep scripts can tell the two apart.

mod render;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dgcformer_core::clustering::{dtw_distance_matrix, ClusterState, DTW_BAND, DTW_CAP};
use dgcformer_core::config::ExperimentConfig;
use dgcformer_core::data::{make_windows, write_csv};
use dgcformer_core::metrics::{adjusted_rand_index, pearson_matrix};
use dgcformer_core::tensor::no_grad;
use dgcformer_core::training::{
    load_checkpoint, read_checkpoint_header, save_checkpoint, select_cluster_count_from_distances,
    train, Ablation, CheckpointMeta, CheckpointMetrics, RunReport, TrainSetup,
};
use dgcformer_core::{Error, Result, Tensor32};

#[derive(Parser)]
#[command(name = "dgcformer", version, about = "Cluster-masked transformer forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes a report, a checkpoint and a metrics row.
    Train(TrainArgs),
    /// Train every combination of horizons, ablations and seeds, then
    /// print a horizon-by-variant table of test errors.
    Sweep(SweepArgs),
    /// Emit the channel correlation heatmap plus cluster labels and mask.
    InspectClusters(InspectArgs),
    /// Overlay ground truth and forecast for one test window.
    ForecastPlot(PlotArgs),
    /// Generate a synthetic dataset CSV with planted channel groups.
    MakeSynthetic(SynthArgs),
}

/// Flags shared by every subcommand that reads the experiment config.
#[derive(Args)]
struct ConfigArgs {
    /// Experiment config TOML; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset name override ("synthetic" uses the generator).
    #[arg(long)]
    dataset: Option<String>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(dataset) = &self.dataset {
            config.dataset = dataset.clone();
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    shared: ConfigArgs,
    /// Forecast horizon override.
    #[arg(long)]
    horizon: Option<usize>,
    /// Model variant override.
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    shared: ConfigArgs,
    /// Horizons to sweep (repeat the flag or comma-separate).
    #[arg(long = "horizon", value_delimiter = ',')]
    horizons: Vec<usize>,
    /// Model variants to sweep.
    #[arg(long = "ablation", value_delimiter = ',')]
    ablations: Vec<Ablation>,
    /// Seeds to sweep; cells average over them.
    #[arg(long = "seed", value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    shared: ConfigArgs,
    /// Read labels and mask from a trained checkpoint instead of
    /// clustering warping distances on the fly.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    shared: ConfigArgs,
    /// Trained model to forecast with.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Index into the test windows.
    #[arg(long, default_value_t = 0)]
    window: usize,
    /// Channels to draw, comma-separated (default: all).
    #[arg(long, value_delimiter = ',')]
    channels: Vec<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    shared: ConfigArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                // clap's rendering already starts with an `error:` line.
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::InspectClusters(args) => cmd_inspect(args),
        Command::ForecastPlot(args) => cmd_plot(args),
        Command::MakeSynthetic(args) => cmd_make_synthetic(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFiniteLoss { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn ensure_out_dir(config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))
}

fn artifact_stem(config: &ExperimentConfig) -> String {
    format!(
        "{}_h{}_{}_s{}",
        config.dataset, config.horizon, config.train.ablation, config.train.seed
    )
}

/// Trains one configuration and writes its artifacts. Returns the report.
fn run_one(config: &ExperimentConfig) -> Result<RunReport> {
    let (mut series, _) = config.load_series::<f32>()?;
    series.normalize();
    let setup = TrainSetup {
        series: &series,
        dataset_name: config.dataset.clone(),
        config_hash: config.hash(),
        lookback: config.lookback,
        horizon: config.horizon,
        patch: config.patch.clone(),
        rfl: config.rfl.clone(),
        train: config.train.clone(),
        graph_threshold: config.graph_threshold,
    };
    let outcome = train(&setup)?;

    ensure_out_dir(config)?;
    let stem = artifact_stem(config);
    let report_path = config.out_dir.join(format!("{stem}_report.json"));
    outcome.report.write_json(&report_path)?;
    let checkpoint_path = config.out_dir.join(format!("{stem}.ckpt"));
    save_checkpoint(
        &checkpoint_path,
        &outcome.forecaster,
        &outcome.cluster,
        &CheckpointMeta {
            config_hash: config.hash(),
            dataset: config.dataset.clone(),
            epoch: outcome.report.best_epoch,
            metrics: CheckpointMetrics {
                val_pred: outcome.report.best_val_pred,
                test_mse: outcome.report.test_mse,
                test_mae: outcome.report.test_mae,
            },
            graph_threshold: config.graph_threshold,
        },
    )?;
    let config_echo = config.out_dir.join(format!("{stem}_config.toml"));
    fs::write(&config_echo, config.effective_toml()).map_err(|e| Error::io(&config_echo, e))?;
    dgcformer_core::training::append_metrics_csv(
        &config.out_dir.join("metrics.csv"),
        &outcome.report,
    )?;
    Ok(outcome.report)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = args.shared.load()?;
    if let Some(horizon) = args.horizon {
        config.horizon = horizon;
    }
    if let Some(ablation) = args.ablation {
        config.train.ablation = ablation;
    }
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    config.validate()?;

    let report = run_one(&config)?;
    let stem = artifact_stem(&config);
    println!(
        "{} h={} {} seed {}: {} epochs, best val {:.6} at epoch {}",
        config.dataset,
        config.horizon,
        config.train.ablation,
        config.train.seed,
        report.epochs_run(),
        report.best_val_pred,
        report.best_epoch
    );
    println!("test mse {:.6} mae {:.6}", report.test_mse, report.test_mae);
    println!(
        "wrote {} and {}",
        config.out_dir.join(format!("{stem}_report.json")).display(),
        config.out_dir.join(format!("{stem}.ckpt")).display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let config = args.shared.load()?;
    let horizons = non_empty("horizon", args.horizons, config.horizon)?;
    let ablations = non_empty("ablation", args.ablations, config.train.ablation)?;
    let seeds = non_empty("seed", args.seeds, config.train.seed)?;

    let mut cells: Vec<Vec<(f64, f64)>> = vec![vec![(0.0, 0.0); ablations.len()]; horizons.len()];
    for (hi, &horizon) in horizons.iter().enumerate() {
        for (ai, &ablation) in ablations.iter().enumerate() {
            let (mut mse_sum, mut mae_sum) = (0.0, 0.0);
            for &seed in &seeds {
                let mut run = config.clone();
                run.horizon = horizon;
                run.train.ablation = ablation;
                run.train.seed = seed;
                run.validate()?;
                println!("running h={horizon} {ablation} seed {seed}");
                let report = run_one(&run)?;
                mse_sum += report.test_mse;
                mae_sum += report.test_mae;
            }
            let n = seeds.len() as f64;
            cells[hi][ai] = (mse_sum / n, mae_sum / n);
        }
    }

    let table = render_table(&horizons, &ablations, &cells);
    print!("{table}");
    ensure_out_dir(&config)?;
    let txt_path = config.out_dir.join("sweep_table.txt");
    fs::write(&txt_path, &table).map_err(|e| Error::io(&txt_path, e))?;

    let mut csv = String::from("horizon");
    for ablation in &ablations {
        let _ = write!(csv, ",{ablation}_mse,{ablation}_mae");
    }
    csv.push('\n');
    for (hi, &horizon) in horizons.iter().enumerate() {
        let _ = write!(csv, "{horizon}");
        for (mse, mae) in &cells[hi] {
            let _ = write!(csv, ",{mse:.6},{mae:.6}");
        }
        csv.push('\n');
    }
    let csv_path = config.out_dir.join("sweep_table.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    println!("wrote {} and {}", csv_path.display(), txt_path.display());
    Ok(())
}

/// Sweep lists fall back to the config's single value; an explicitly empty
/// list is a usage error.
fn non_empty<T: Copy>(what: &str, values: Vec<T>, fallback: T) -> Result<Vec<T>> {
    if values.is_empty() {
        return Ok(vec![fallback]);
    }
    if values.iter().count() == 0 {
        return Err(Error::Config(format!("sweep needs at least one {what}")));
    }
    Ok(values)
}

fn render_table(horizons: &[usize], ablations: &[Ablation], cells: &[Vec<(f64, f64)>]) -> String {
    let labels: Vec<String> = ablations.iter().map(|a| a.to_string()).collect();
    let cell_text: Vec<Vec<String>> = cells
        .iter()
        .map(|row| {
            row.iter()
                .map(|(mse, mae)| format!("{mse:.3} / {mae:.3}"))
                .collect()
        })
        .collect();
    let mut widths: Vec<usize> = labels.iter().map(String::len).collect();
    for row in &cell_text {
        for (w, text) in widths.iter_mut().zip(row) {
            *w = (*w).max(text.len());
        }
    }
    let mut out = String::new();
    let _ = write!(out, "{:>7}", "horizon");
    for (label, w) in labels.iter().zip(&widths) {
        let _ = write!(out, "  {label:>w$}");
    }
    out.push('\n');
    for (hi, &horizon) in horizons.iter().enumerate() {
        let _ = write!(out, "{horizon:>7}");
        for (text, w) in cell_text[hi].iter().zip(&widths) {
            let _ = write!(out, "  {text:>w$}");
        }
        out.push('\n');
    }
    out
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let config = args.shared.load()?;
    let (series, planted) = config.load_series::<f64>()?;
    let corr = pearson_matrix(&series.train());

    let (labels, source) = match &args.checkpoint {
        Some(path) => {
            let header = read_checkpoint_header(path)?;
            if header.cluster.labels.len() != series.channels() {
                return Err(Error::Config(format!(
                    "checkpoint has {} channels but dataset {} has {}",
                    header.cluster.labels.len(),
                    config.dataset,
                    series.channels()
                )));
            }
            (header.cluster.labels, "checkpoint")
        }
        None => {
            let dist = dtw_distance_matrix(&series.train(), DTW_BAND, DTW_CAP);
            let (_, labels) =
                select_cluster_count_from_distances(&dist.view(), &config.train.cluster_counts)?;
            (labels, "dtw")
        }
    };
    let cluster = ClusterState::from_labels(labels);
    let ari = planted
        .as_ref()
        .map(|truth| adjusted_rand_index(&cluster.labels, truth));

    ensure_out_dir(&config)?;
    let heatmap_path = config.out_dir.join(format!("{}_correlation.png", config.dataset));
    render::heatmap(&corr.view(), &heatmap_path)?;

    let mask: Vec<Vec<u8>> = cluster.mask.rows().into_iter().map(|r| r.to_vec()).collect();
    let json = serde_json::json!({
        "dataset": config.dataset,
        "channels": series.channels(),
        "channel_names": series.channel_names,
        "graph_threshold": config.graph_threshold,
        "source": source,
        "n_clusters": cluster.n,
        "labels": cluster.labels,
        "identity_mask": cluster.is_identity(),
        "mask": mask,
        "ari": ari,
    });
    let json_path = config.out_dir.join(format!("{}_clusters.json", config.dataset));
    fs::write(&json_path, serde_json::to_string_pretty(&json).expect("serializable"))
        .map_err(|e| Error::io(&json_path, e))?;

    let groups: BTreeSet<usize> = cluster.labels.iter().copied().collect();
    println!(
        "{}: {} channels in {} clusters (labels from {source})",
        config.dataset,
        series.channels(),
        groups.len()
    );
    if let Some(ari) = ari {
        println!("adjusted rand index vs planted groups: {ari:.3}");
    }
    println!("wrote {} and {}", json_path.display(), heatmap_path.display());
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    let config = args.shared.load()?;
    let (forecaster, cluster, header) = load_checkpoint::<f32>(&args.checkpoint)?;
    let (mut series, _) = config.load_series::<f32>()?;
    if series.channels() != cluster.labels.len() {
        return Err(Error::Config(format!(
            "checkpoint was trained on {} channels but dataset {} has {}",
            cluster.labels.len(),
            config.dataset,
            series.channels()
        )));
    }
    let stats = series.normalize();
    let windows = make_windows(&series.test(), "test", header.lookback, header.horizon)?;
    if args.window >= windows.len() {
        return Err(Error::Config(format!(
            "window index {} out of range: test split has {} windows",
            args.window,
            windows.len()
        )));
    }

    let channels = if args.channels.is_empty() {
        (0..series.channels()).collect::<Vec<_>>()
    } else {
        for &c in &args.channels {
            if c >= series.channels() {
                return Err(Error::Config(format!(
                    "channel {c} out of range: dataset has {} channels",
                    series.channels()
                )));
            }
        }
        args.channels.clone()
    };

    let batch = windows.gather(&[args.window]);
    let prediction = no_grad(|| {
        let x = Tensor32::new(batch.inputs.clone().into_dyn());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        forecaster.forward(&x, &cluster, false, &mut rng).value().clone()
    });

    // Back to original units for plotting.
    let denorm = |channel: usize, values: Vec<f32>| -> Vec<f64> {
        let mut values = values;
        stats.invert_channel(channel, &mut values);
        values.into_iter().map(f64::from).collect()
    };
    let panels: Vec<render::ChannelPanel> = channels
        .iter()
        .map(|&c| render::ChannelPanel {
            history: denorm(c, batch.inputs.slice(ndarray::s![0, c, ..]).to_vec()),
            truth: denorm(c, batch.targets.slice(ndarray::s![0, c, ..]).to_vec()),
            forecast: denorm(
                c,
                prediction
                    .index_axis(ndarray::Axis(0), 0)
                    .index_axis(ndarray::Axis(0), c)
                    .iter()
                    .copied()
                    .collect(),
            ),
        })
        .collect();

    ensure_out_dir(&config)?;
    let path = config
        .out_dir
        .join(format!("{}_w{}_forecast.png", config.dataset, args.window));
    render::forecast_overlay(&panels, &path)?;
    println!(
        "window {} of {}: history black, truth blue, forecast red",
        args.window,
        windows.len()
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_make_synthetic(args: SynthArgs) -> Result<()> {
    let config = args.shared.load()?;
    let spec = config.synthetic_spec();
    let (series, labels) =
        dgcformer_core::data::generate_synthetic::<f64>(&spec)?;

    let out = match &args.shared.out {
        Some(path) if path.extension().is_some() => path.clone(),
        _ => {
            ensure_out_dir(&config)?;
            config.out_dir.join("synthetic.csv")
        }
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    write_csv(&out, &series)?;
    let labels_path = label_path(&out);
    let json = serde_json::json!({
        "n_channels": spec.n_channels,
        "n_groups": spec.n_groups,
        "labels": labels,
    });
    fs::write(&labels_path, serde_json::to_string_pretty(&json).expect("serializable"))
        .map_err(|e| Error::io(&labels_path, e))?;
    println!(
        "wrote {} steps x {} channels to {} (groups in {})",
        series.steps(),
        series.channels(),
        out.display(),
        labels_path.display()
    );
    Ok(())
}

fn label_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_stem().unwrap_or_default().to_os_string();
    name.push("_labels.json");
    csv.with_file_name(name)
}
