//! Command-line interface for the purchase-intention pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numeric error.

mod config_file;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cagru_core::data::{build_activity_matrix, catalog, ingest_transactions};
use cagru_core::encoder::CodeOrder;
use cagru_core::error::{Error, ErrorKind, Result};
use cagru_core::neural::{load_checkpoint, Compression};
use cagru_core::pipeline::{
    self, ablation_csv, metrics_csv, report_json, sweep_csv, DataSource, RunConfig, TrainedModels,
    Variant,
};
use cagru_core::survey::{
    activeness, activeness_histogram, attendance_sequence, hamming_matrix, kmeans_engagement,
};
use cagru_core::synth::{generate, labels_to_csv, preset, GeneratorConfig};
use config_file::{get_parsed, parse_config_file};

#[derive(Parser)]
#[command(name = "cagru", version, about = "Customer purchase-intention prediction: shape-based clustering + attention-GRU forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic transaction log with planted archetypes
    Synth(SynthArgs),
    /// Activeness, Hamming-distance, and engagement-cluster analytics
    Survey(SurveyArgs),
    /// Encode pattern sequences and run k-shape clustering
    Cluster(RunArgs),
    /// Train one forecaster per cluster and save checkpoints
    Train(RunArgs),
    /// Run the full pipeline and report top-N test metrics
    Evaluate(RunArgs),
    /// Compare the CAGRU, CGRU, AGRU, and GRU variants on shared data
    Ablate(RunArgs),
    /// Run the pipeline across several cluster counts
    Sweep(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scale preset: 16K, 20K, 25K, or 30K
    #[arg(long)]
    preset: Option<String>,
    /// Customer count (default-mix generator when no preset is given)
    #[arg(long)]
    customers: Option<u32>,
    #[arg(long)]
    shops: Option<u32>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SurveyArgs {
    /// Transaction log to analyze
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate data from a scale preset instead of reading a file
    #[arg(long)]
    preset: Option<String>,
    /// Engagement cluster count
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Transaction log (CSV with header customer_id,shop_id,date)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate data from a scale preset: 16K, 20K, 25K, or 30K
    #[arg(long)]
    preset: Option<String>,
    /// Override the preset horizon in days (rates re-solved to the target)
    #[arg(long)]
    days: Option<u32>,
    /// Key/value config file; explicit flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_clusters: Option<usize>,
    /// CAGRU, CGRU, AGRU, or GRU
    #[arg(long)]
    variant: Option<String>,
    /// Window length L
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    positional_base: Option<usize>,
    /// Temporal decay factor in (0, 1]
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    top_n_fraction: Option<f64>,
    /// Pattern-code order: activity or frequency
    #[arg(long)]
    code_order: Option<String>,
    /// Attention readout: last-row or mean
    #[arg(long)]
    compression: Option<String>,
    /// Enable the attention value projection
    #[arg(long)]
    value_projection: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Load checkpoints from a directory instead of training (evaluate only)
    #[arg(long)]
    models: Option<PathBuf>,
    /// Cluster counts for `sweep`
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Survey(args) => cmd_survey(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Config => ExitCode::from(2),
                ErrorKind::Data => ExitCode::from(3),
                ErrorKind::Numeric => ExitCode::from(4),
            }
        }
    }
}

fn generator_for(preset_name: &str, days: Option<u32>, seed: u64) -> Result<GeneratorConfig> {
    let mut config = preset(preset_name)?;
    if let Some(days) = days {
        config = config.with_days(days)?;
    }
    config.seed = seed;
    Ok(config)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let seed = args.seed.unwrap_or(0);
    let config = match (&args.preset, args.customers) {
        (Some(name), None) => generator_for(name, args.days, seed)?,
        (None, Some(customers)) => GeneratorConfig::with_default_mix(
            customers,
            args.shops.unwrap_or(5),
            args.days.unwrap_or(120),
            seed,
        ),
        (Some(_), Some(_)) => {
            return Err(Error::Config("give either --preset or --customers, not both".into()))
        }
        (None, None) => return Err(Error::Config("give --preset or --customers".into())),
    };
    let (events, labels) = generate(&config)?;
    std::fs::create_dir_all(&args.out)?;
    let csv = cagru_core::data::transactions_to_csv(&events, "2024-01-01")?;
    std::fs::write(args.out.join("transactions.csv"), csv)?;
    std::fs::write(args.out.join("archetypes.csv"), labels_to_csv(&labels))?;
    println!(
        "wrote {} events for {} customers over {} days to {}",
        events.len(),
        config.customers,
        config.days,
        args.out.display()
    );
    Ok(())
}

fn cmd_survey(args: SurveyArgs) -> Result<()> {
    let seed = args.seed.unwrap_or(0);
    let events = match (&args.data, &args.preset) {
        (Some(path), None) => ingest_transactions(&std::fs::read_to_string(path)?)?,
        (None, Some(name)) => generate(&generator_for(name, None, seed)?)?.0,
        _ => return Err(Error::Config("give exactly one of --data or --preset".into())),
    };
    let (ids, shops, days) = catalog(&events);
    let matrix = build_activity_matrix(&events, &ids, &shops, days)?;

    let scores: Vec<_> = ids
        .iter()
        .map(|id| activeness(&matrix, id))
        .collect::<Result<_>>()?;
    let hist = activeness_histogram(&scores, 10);
    let sequences: Vec<_> = ids
        .iter()
        .map(|id| attendance_sequence(&matrix, id))
        .collect::<Result<_>>()?;
    let distances = hamming_matrix(&sequences)?;
    let labels = kmeans_engagement(&scores, args.clusters, seed, 100)?;

    std::fs::create_dir_all(&args.out)?;
    let mut hist_csv = String::from("bin_low,bin_high,count\n");
    for (i, count) in hist.iter().enumerate() {
        hist_csv.push_str(&format!("{},{},{count}\n", i as f64 / 10.0, (i + 1) as f64 / 10.0));
    }
    std::fs::write(args.out.join("activeness_histogram.csv"), hist_csv)?;
    std::fs::write(args.out.join("hamming_matrix.csv"), distances.to_csv())?;
    let mut labels_csv = String::from("customer_id,activeness,cluster\n");
    for (score, label) in scores.iter().zip(&labels) {
        labels_csv.push_str(&format!("{},{},{label}\n", score.customer_id, score.value));
    }
    std::fs::write(args.out.join("engagement_clusters.csv"), labels_csv)?;
    println!(
        "surveyed {} customers over {days} days; artifacts in {}",
        ids.len(),
        args.out.display()
    );
    Ok(())
}

/// Merge CLI flags, the optional config file, and defaults into a RunConfig.
fn build_run_config(args: &RunArgs) -> Result<RunConfig> {
    let file: BTreeMap<String, String> = match &args.config {
        Some(path) => parse_config_file(path)?,
        None => BTreeMap::new(),
    };

    let seed = match args.seed {
        Some(s) => s,
        None => get_parsed(&file, "seed")?.unwrap_or(0),
    };
    let data: Option<PathBuf> = args.data.clone().or(file.get("data").map(PathBuf::from));
    let preset_name: Option<String> = args.preset.clone().or(file.get("preset").cloned());
    let days: Option<u32> = match args.days {
        Some(d) => Some(d),
        None => get_parsed(&file, "days")?,
    };

    let source = match (data, preset_name) {
        (Some(path), None) => DataSource::TransactionsFile(path),
        (None, Some(name)) => DataSource::Synth(generator_for(&name, days, seed)?),
        (Some(_), Some(_)) => {
            return Err(Error::Config("give either --data or --preset, not both".into()))
        }
        (None, None) => {
            return Err(Error::Config("give --data or --preset (or set one in --config)".into()))
        }
    };

    let window = match args.window {
        Some(w) => w,
        None => get_parsed(&file, "window")?.unwrap_or(10),
    };
    let mut config = RunConfig::new(source, window);
    config.seed = seed;
    config.model.seed = seed;

    if let Some(n) = args.n_clusters {
        config.n_clusters = n;
    } else if let Some(n) = get_parsed(&file, "n_clusters")? {
        config.n_clusters = n;
    }
    let variant = match &args.variant {
        Some(v) => Some(v.clone()),
        None => file.get("variant").cloned(),
    };
    if let Some(v) = variant {
        config.variant = Variant::parse(&v)?;
    }
    if let Some(f) = args.top_n_fraction {
        config.top_n_fraction = f;
    } else if let Some(f) = get_parsed(&file, "top_n_fraction")? {
        config.top_n_fraction = f;
    }

    let model = &mut config.model;
    macro_rules! merge {
        ($field:ident, $key:literal) => {
            if let Some(v) = args.$field {
                model.$field = v;
            } else if let Some(v) = get_parsed(&file, $key)? {
                model.$field = v;
            }
        };
    }
    merge!(embed_dim, "embed_dim");
    merge!(hidden_dim, "hidden_dim");
    merge!(decay, "decay");
    merge!(learning_rate, "learning_rate");
    merge!(batch_size, "batch_size");
    merge!(max_epochs, "max_epochs");
    merge!(patience, "patience");
    model.positional_base = match args.positional_base {
        Some(b) => b,
        None => get_parsed(&file, "positional_base")?.unwrap_or(model.window_len),
    };
    model.use_value_projection =
        args.value_projection || get_parsed::<bool>(&file, "value_projection")?.unwrap_or(false);

    let compression = match &args.compression {
        Some(c) => Some(c.clone()),
        None => file.get("compression").cloned(),
    };
    if let Some(c) = compression {
        model.compression = match c.as_str() {
            "last-row" | "last_row" => Compression::LastRow,
            "mean" => Compression::Mean,
            other => {
                return Err(Error::Config(format!(
                    "unknown compression `{other}`, expected last-row or mean"
                )))
            }
        };
    }
    let code_order = match &args.code_order {
        Some(c) => Some(c.clone()),
        None => file.get("code_order").cloned(),
    };
    if let Some(c) = code_order {
        config.code_order = match c.as_str() {
            "activity" => CodeOrder::ActivityRank,
            "frequency" => CodeOrder::FrequencyRank,
            other => {
                return Err(Error::Config(format!(
                    "unknown code order `{other}`, expected activity or frequency"
                )))
            }
        };
    }

    config.out_dir = args.out.clone().or(file.get("out").map(PathBuf::from));
    Ok(config)
}

fn print_metrics(prefix: &str, m: &cagru_core::MetricsReport) {
    println!(
        "{prefix}acc {:.4}  auc {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  (tp {} fp {} tn {} fn {})",
        m.acc, m.auc, m.precision, m.recall, m.f1, m.tp, m.fp, m.tn, m.fn_
    );
}

fn cmd_cluster(args: RunArgs) -> Result<()> {
    let config = build_run_config(&args)?;
    let out = config
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("--out is required for cluster".into()))?;
    let prepared = pipeline::prepare(&config)?;
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("dictionary.csv"), prepared.dictionary.to_csv())?;
    let mut labels_csv = String::from("customer_id,cluster\n");
    for (id, label) in prepared.matrix.customers().iter().zip(&prepared.cluster_labels) {
        labels_csv.push_str(&format!("{id},{label}\n"));
    }
    std::fs::write(out.join("cluster_labels.csv"), labels_csv)?;
    if let Some(model) = &prepared.cluster_model {
        std::fs::write(out.join("centroids.csv"), model.centroids_csv())?;
        std::fs::write(out.join("cluster_manifest.json"), model.manifest_json())?;
        println!(
            "clustered {} customers into {} clusters in {} iterations (inertia {:.4})",
            prepared.matrix.customers().len(),
            model.k,
            model.iterations_run,
            model.inertia
        );
    } else {
        println!("single cluster requested; all customers labeled 0");
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

fn cmd_train(args: RunArgs) -> Result<()> {
    let config = build_run_config(&args)?;
    let out = config
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("--out is required for train".into()))?;
    let prepared = pipeline::prepare(&config)?;
    let models = pipeline::train_models(&prepared, &config)?;
    pipeline::persist_training(&out, &prepared, &models)?;
    for (c, trace) in models.traces.iter().enumerate() {
        if let Some(trace) = trace {
            println!(
                "cluster {c}: {} epochs, final train loss {:.4}, val auc {:.4}",
                trace.epochs_run,
                trace.epoch_losses.last().copied().unwrap_or(f64::NAN),
                trace.validation_scores.last().copied().unwrap_or(f64::NAN)
            );
        }
    }
    for w in &models.warnings {
        println!("warning: {w}");
    }
    println!("checkpoints in {}", out.display());
    Ok(())
}

fn load_models(dir: &PathBuf, k: usize) -> Result<TrainedModels> {
    let mut per_cluster = Vec::with_capacity(k);
    let mut traces = Vec::with_capacity(k);
    for c in 0..k {
        let path = dir.join(format!("model_cluster{c}.ckpt"));
        per_cluster.push(if path.exists() {
            Some(load_checkpoint(&path)?)
        } else {
            None
        });
        traces.push(None);
    }
    let fallback_path = dir.join("model_fallback.ckpt");
    let fallback = if fallback_path.exists() {
        Some(load_checkpoint(&fallback_path)?)
    } else {
        None
    };
    Ok(TrainedModels {
        per_cluster,
        traces,
        fallback,
        fallback_trace: None,
        warnings: Vec::new(),
    })
}

fn cmd_evaluate(args: RunArgs) -> Result<()> {
    let config = build_run_config(&args)?;
    let report = if let Some(models_dir) = &args.models {
        let prepared = pipeline::prepare(&config)?;
        let k = prepared.cluster_labels.iter().max().map(|&m| m + 1).unwrap_or(1);
        let models = load_models(models_dir, k)?;
        let report = pipeline::evaluate(&prepared, &models, &config)?;
        if let Some(out) = &config.out_dir {
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("report.json"), report_json(&report))?;
            std::fs::write(out.join("metrics.csv"), metrics_csv(&report))?;
        }
        report
    } else {
        pipeline::run_pipeline(&config)?
    };
    println!(
        "{} on {} test windows ({} customers, {} clusters):",
        report.variant,
        report.data.test_windows,
        report.data.customers,
        report.cluster_sizes.len()
    );
    print_metrics("  ", &report.metrics);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    if let Some(out) = &config.out_dir {
        println!("artifacts in {}", out.display());
    }
    Ok(())
}

fn cmd_ablate(args: RunArgs) -> Result<()> {
    let config = build_run_config(&args)?;
    let table = pipeline::run_ablation(&config)?;
    for row in &table.rows {
        print_metrics(&format!("{:<6} ", row.variant), &row.report.metrics);
    }
    if let Some(out) = &config.out_dir {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("report.json"), report_json(&table))?;
        std::fs::write(out.join("ablation.csv"), ablation_csv(&table))?;
        println!("artifacts in {}", out.display());
    }
    Ok(())
}

fn cmd_sweep(args: RunArgs) -> Result<()> {
    let config = build_run_config(&args)?;
    let n_values = args.n_values.clone().unwrap_or_else(|| vec![2, 3, 4, 5]);
    let sweep = pipeline::cluster_sweep(&config, &n_values)?;
    for row in &sweep.rows {
        print_metrics(&format!("n={:<3} ", row.n_clusters), &row.report.metrics);
    }
    println!("best n by F1: {}", sweep.best_n);
    if let Some(out) = &config.out_dir {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("report.json"), report_json(&sweep))?;
        std::fs::write(out.join("sweep.csv"), sweep_csv(&sweep))?;
        println!("artifacts in {}", out.display());
    }
    Ok(())
}
