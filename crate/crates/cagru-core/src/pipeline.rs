//! End-to-end orchestration: encode, cluster, train one forecaster per
//! cluster, pool test probabilities, threshold top-N globally, and report.
//!
//! Everything is deterministic for a fixed config: data generation, the
//! clustering seed, per-cluster model seeds, and shuffling all derive from
//! the master seed, and reports serialize with a fixed field order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::{
    build_activity_matrix, catalog, chronological_split, ingest_transactions, make_windows,
    transactions_to_csv, ActivityMatrix, CustomerFeatures, DatasetSplit, SupervisedWindow,
};
use crate::encoder::{build_dictionary, encode_customer, CodeOrder, PatternDictionary, PatternSequence};
use crate::error::{Error, Result};
use crate::kshape::{kshape_cluster, ClusterModel};
use crate::metrics::{compute_metrics, top_n_threshold, MetricsReport};
use crate::neural::{fit, save_checkpoint, ForecastModel, ModelConfig, TrainingTrace};
use crate::synth::{generate, ArchetypeName, GeneratorConfig};

/// Model variants: with/without the clustering stage and with/without the
/// attention readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Cagru,
    Cgru,
    Agru,
    Gru,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Cagru, Variant::Cgru, Variant::Agru, Variant::Gru];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Cagru => "CAGRU",
            Variant::Cgru => "CGRU",
            Variant::Agru => "AGRU",
            Variant::Gru => "GRU",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s.to_ascii_uppercase().as_str() {
            "CAGRU" => Ok(Variant::Cagru),
            "CGRU" => Ok(Variant::Cgru),
            "AGRU" => Ok(Variant::Agru),
            "GRU" => Ok(Variant::Gru),
            other => Err(Error::Config(format!(
                "unknown variant `{other}`, expected CAGRU, CGRU, AGRU, or GRU"
            ))),
        }
    }

    pub fn uses_clustering(&self) -> bool {
        matches!(self, Variant::Cagru | Variant::Cgru)
    }

    pub fn uses_attention(&self) -> bool {
        matches!(self, Variant::Cagru | Variant::Agru)
    }
}

/// Where the transaction log comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    TransactionsFile(PathBuf),
    Synth(GeneratorConfig),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: DataSource,
    pub n_clusters: usize,
    pub variant: Variant,
    pub model: ModelConfig,
    pub top_n_fraction: f64,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub code_order: CodeOrder,
    pub cluster_max_iter: usize,
}

impl RunConfig {
    pub fn new(source: DataSource, window_len: usize) -> Self {
        RunConfig {
            source,
            n_clusters: 2,
            variant: Variant::Cagru,
            // feature_dim is filled in during preparation.
            model: ModelConfig::new(3, window_len),
            top_n_fraction: 0.3,
            seed: 0,
            out_dir: None,
            code_order: CodeOrder::ActivityRank,
            cluster_max_iter: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 {
            return Err(Error::Config("n_clusters must be at least 1".into()));
        }
        if !(self.top_n_fraction > 0.0 && self.top_n_fraction < 1.0) {
            return Err(Error::Config(format!(
                "top-N fraction {} outside (0, 1)",
                self.top_n_fraction
            )));
        }
        Ok(())
    }
}

/// Everything computed before model training.
pub struct Prepared {
    pub matrix: ActivityMatrix,
    pub dictionary: PatternDictionary,
    pub sequences: Vec<PatternSequence>,
    pub features: Vec<CustomerFeatures>,
    pub split: DatasetSplit,
    pub cluster_labels: Vec<usize>,
    pub cluster_model: Option<ClusterModel>,
    pub train: Vec<SupervisedWindow>,
    pub validation: Vec<SupervisedWindow>,
    pub test: Vec<SupervisedWindow>,
    pub events_count: usize,
    pub synth_events_csv: Option<String>,
    pub synth_labels: Option<Vec<(String, ArchetypeName)>>,
}

/// Per-cluster trained forecasters plus the shared fallback.
pub struct TrainedModels {
    pub per_cluster: Vec<Option<ForecastModel>>,
    pub traces: Vec<Option<TrainingTrace>>,
    pub fallback: Option<ForecastModel>,
    pub fallback_trace: Option<TrainingTrace>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataSummary {
    pub customers: usize,
    pub shops: usize,
    pub days: u32,
    pub events: usize,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub test_windows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterBreakdown {
    pub cluster: usize,
    pub customers: usize,
    pub test_windows: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub version: &'static str,
    pub variant: String,
    pub n_clusters: usize,
    pub seed: u64,
    pub top_n_fraction: f64,
    pub window_len: usize,
    pub data: DataSummary,
    pub cluster_sizes: Vec<usize>,
    pub warnings: Vec<String>,
    pub metrics: MetricsReport,
    pub per_cluster: Vec<ClusterBreakdown>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub report: PipelineReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub n_clusters: usize,
    pub report: PipelineReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// n with the highest pooled F1 (ties to the smaller n).
    pub best_n: usize,
}

fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const FALLBACK_STREAM: u64 = u64::MAX;

/// Load data, encode, cluster, and slice supervised windows.
pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;

    let (events, synth_labels, synth_events_csv) = match &config.source {
        DataSource::TransactionsFile(path) => {
            let text = fs::read_to_string(path)?;
            (ingest_transactions(&text)?, None, None)
        }
        DataSource::Synth(generator) => {
            let (events, labels) = generate(generator)?;
            let csv = transactions_to_csv(&events, "2024-01-01")?;
            (events, Some(labels), Some(csv))
        }
    };
    let (customers, shops, days) = catalog(&events);
    if customers.is_empty() {
        return Err(Error::EmptyDataset("no customers in the transaction log".into()));
    }
    let matrix = build_activity_matrix(&events, &customers, &shops, days)?;

    // Dictionary and code sequences over the full observation range:
    // clustering precedes the supervised split.
    let dictionary = build_dictionary(&matrix, config.code_order)?;
    let sequences: Vec<PatternSequence> = customers
        .iter()
        .map(|c| encode_customer(&matrix, c, &dictionary))
        .collect::<Result<_>>()?;

    let k = if config.variant.uses_clustering() {
        config.n_clusters
    } else {
        1
    };
    let (cluster_labels, cluster_model) = if k > 1 {
        let code_series: Vec<Vec<f64>> = sequences
            .iter()
            .map(|s| s.codes.iter().map(|&c| c as f64).collect())
            .collect();
        let model = kshape_cluster(&code_series, k, config.seed, config.cluster_max_iter)?;
        (model.labels.clone(), Some(model))
    } else {
        (vec![0; customers.len()], None)
    };

    let split = chronological_split(days, (7, 2, 1))?;

    // Default static features, computed on the training range only:
    // train-range activeness and the purchase-day count over the last 7
    // training days (scaled to [0, 1]).
    let train_days = split.train.end - split.train.start;
    let features: Vec<CustomerFeatures> = (0..customers.len())
        .map(|u| {
            let active = (split.train.clone())
                .filter(|&d| matrix.any_purchase(u, d))
                .count() as f64
                / train_days as f64;
            let recent_start = split.train.end.saturating_sub(7).max(split.train.start);
            let recent = (recent_start..split.train.end)
                .filter(|&d| matrix.any_purchase(u, d))
                .count() as f64
                / 7.0;
            CustomerFeatures::new(vec![active], vec![recent])
        })
        .collect::<Result<_>>()?;

    let code_scale = 1.0 / (dictionary.len().saturating_sub(1).max(1)) as f64;
    let window_len = config.model.window_len;
    let train = make_windows(&sequences, &features, &matrix, split.train.clone(), window_len, code_scale)?;
    let validation = make_windows(&sequences, &features, &matrix, split.validation.clone(), window_len, code_scale)?;
    let test = make_windows(&sequences, &features, &matrix, split.test.clone(), window_len, code_scale)?;

    Ok(Prepared {
        matrix,
        dictionary,
        sequences,
        features,
        split,
        cluster_labels,
        cluster_model,
        train,
        validation,
        test,
        events_count: events.len(),
        synth_events_csv,
        synth_labels,
    })
}

fn model_config_for(config: &RunConfig, prepared: &Prepared, seed: u64) -> ModelConfig {
    let mut mc = config.model.clone();
    mc.feature_dim = prepared
        .train
        .first()
        .map(|w| w.feature_dim)
        .unwrap_or(mc.feature_dim);
    mc.use_attention = config.variant.uses_attention();
    mc.seed = seed;
    mc
}

/// Train one forecaster per cluster. A cluster without training windows is
/// recorded as a warning and covered by a single fallback model (plain GRU
/// over all training windows).
pub fn train_models(prepared: &Prepared, config: &RunConfig) -> Result<TrainedModels> {
    let k = prepared
        .cluster_labels
        .iter()
        .max()
        .map(|&m| m + 1)
        .unwrap_or(1);
    let mut per_cluster = Vec::with_capacity(k);
    let mut traces = Vec::with_capacity(k);
    let mut warnings = Vec::new();
    let mut need_fallback = false;

    for c in 0..k {
        let train: Vec<SupervisedWindow> = prepared
            .train
            .iter()
            .filter(|w| prepared.cluster_labels[w.customer] == c)
            .cloned()
            .collect();
        if train.is_empty() {
            warnings.push(format!(
                "cluster {c} has no training windows; its customers use the fallback model"
            ));
            need_fallback = true;
            per_cluster.push(None);
            traces.push(None);
            continue;
        }
        let validation: Vec<SupervisedWindow> = prepared
            .validation
            .iter()
            .filter(|w| prepared.cluster_labels[w.customer] == c)
            .cloned()
            .collect();
        let mc = model_config_for(config, prepared, derive_seed(config.seed, c as u64));
        let (model, trace) = fit(&train, &validation, &mc)?;
        per_cluster.push(Some(model));
        traces.push(Some(trace));
    }

    let (fallback, fallback_trace) = if need_fallback {
        let mut mc = model_config_for(config, prepared, derive_seed(config.seed, FALLBACK_STREAM));
        mc.use_attention = false;
        let (model, trace) = fit(&prepared.train, &prepared.validation, &mc)?;
        (Some(model), Some(trace))
    } else {
        (None, None)
    };

    Ok(TrainedModels {
        per_cluster,
        traces,
        fallback,
        fallback_trace,
        warnings,
    })
}

/// Pool test probabilities from each customer's cluster model, threshold
/// globally, and assemble the report.
pub fn evaluate(prepared: &Prepared, models: &TrainedModels, config: &RunConfig) -> Result<PipelineReport> {
    if prepared.test.is_empty() {
        return Err(Error::EmptyWindows("no test windows to evaluate".into()));
    }
    let mut labels = Vec::with_capacity(prepared.test.len());
    let mut probs = Vec::with_capacity(prepared.test.len());
    for window in &prepared.test {
        let cluster = prepared.cluster_labels[window.customer];
        let model = models.per_cluster[cluster]
            .as_ref()
            .or(models.fallback.as_ref())
            .ok_or_else(|| {
                Error::Config(format!("no model available for cluster {cluster}"))
            })?;
        labels.push(window.label);
        probs.push(model.predict(window)?);
    }
    let predictions = top_n_threshold(&probs, config.top_n_fraction)?;
    let metrics = compute_metrics(&labels, &probs, &predictions)?;

    let k = models.per_cluster.len();
    let mut cluster_sizes = vec![0usize; k];
    for &l in &prepared.cluster_labels {
        cluster_sizes[l] += 1;
    }
    let mut per_cluster = Vec::with_capacity(k);
    for c in 0..k {
        let idx: Vec<usize> = (0..prepared.test.len())
            .filter(|&i| prepared.cluster_labels[prepared.test[i].customer] == c)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let c_labels: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        let c_probs: Vec<f64> = idx.iter().map(|&i| probs[i]).collect();
        let c_preds: Vec<u8> = idx.iter().map(|&i| predictions[i]).collect();
        per_cluster.push(ClusterBreakdown {
            cluster: c,
            customers: cluster_sizes[c],
            test_windows: idx.len(),
            metrics: compute_metrics(&c_labels, &c_probs, &c_preds)?,
        });
    }

    Ok(PipelineReport {
        version: env!("CARGO_PKG_VERSION"),
        variant: config.variant.as_str().to_string(),
        n_clusters: config.n_clusters,
        seed: config.seed,
        top_n_fraction: config.top_n_fraction,
        window_len: config.model.window_len,
        data: DataSummary {
            customers: prepared.matrix.customers().len(),
            shops: prepared.matrix.shops().len(),
            days: prepared.matrix.days(),
            events: prepared.events_count,
            train_windows: prepared.train.len(),
            validation_windows: prepared.validation.len(),
            test_windows: prepared.test.len(),
        },
        cluster_sizes,
        warnings: models.warnings.clone(),
        metrics,
        per_cluster,
    })
}

/// Full pipeline: prepare, train, evaluate, and persist artifacts when an
/// output directory is configured.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineReport> {
    let prepared = prepare(config)?;
    let models = train_models(&prepared, config)?;
    let report = evaluate(&prepared, &models, config)?;
    if let Some(dir) = &config.out_dir {
        persist_artifacts(dir, &prepared, &models, &report)?;
    }
    Ok(report)
}

/// Run all four variants on identical data, split, and seed.
pub fn run_ablation(config: &RunConfig) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    let mut reference: Option<(usize, Vec<u8>)> = None;
    for variant in Variant::ALL {
        let mut vc = config.clone();
        vc.variant = variant;
        vc.out_dir = config
            .out_dir
            .as_ref()
            .map(|d| d.join(variant.as_str()));
        let prepared = prepare(&vc)?;
        // The protocol requires every variant to score the same test pool.
        let signature: Vec<u8> = prepared.test.iter().map(|w| w.label).collect();
        match &reference {
            None => reference = Some((prepared.test.len(), signature)),
            Some((len, sig)) => {
                if *len != prepared.test.len() || *sig != signature {
                    return Err(Error::Integrity(
                        "ablation variants disagree on the test windows".into(),
                    ));
                }
            }
        }
        let models = train_models(&prepared, &vc)?;
        let report = evaluate(&prepared, &models, &vc)?;
        if let Some(dir) = &vc.out_dir {
            persist_artifacts(dir, &prepared, &models, &report)?;
        }
        rows.push(AblationRow {
            variant: variant.as_str().to_string(),
            report,
        });
    }
    Ok(AblationTable { rows })
}

/// One full pipeline run per cluster count, shared data and seed.
pub fn cluster_sweep(config: &RunConfig, n_values: &[usize]) -> Result<SweepReport> {
    if n_values.is_empty() {
        return Err(Error::Config("cluster sweep needs at least one n".into()));
    }
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let mut vc = config.clone();
        vc.n_clusters = n;
        vc.out_dir = config.out_dir.as_ref().map(|d| d.join(format!("n{n}")));
        let report = run_pipeline(&vc)?;
        rows.push(SweepRow {
            n_clusters: n,
            report,
        });
    }
    let best_n = rows
        .iter()
        .max_by(|a, b| {
            a.report
                .metrics
                .f1
                .partial_cmp(&b.report.metrics.f1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.n_clusters.cmp(&a.n_clusters))
        })
        .map(|r| r.n_clusters)
        .unwrap();
    Ok(SweepReport { rows, best_n })
}

pub fn report_json(report: &impl Serialize) -> String {
    let mut json = serde_json::to_string_pretty(report).expect("report serialization cannot fail");
    json.push('\n');
    json
}

pub fn metrics_csv(report: &PipelineReport) -> String {
    let mut out = String::from("scope,acc,auc,precision,recall,f1,tp,fp,tn,fn,samples,positives_predicted\n");
    let line = |scope: &str, m: &MetricsReport| {
        format!(
            "{scope},{},{},{},{},{},{},{},{},{},{},{}\n",
            m.acc, m.auc, m.precision, m.recall, m.f1, m.tp, m.fp, m.tn, m.fn_, m.samples,
            m.positives_predicted
        )
    };
    out.push_str(&line("pooled", &report.metrics));
    for c in &report.per_cluster {
        out.push_str(&line(&format!("cluster{}", c.cluster), &c.metrics));
    }
    out
}

pub fn ablation_csv(table: &AblationTable) -> String {
    let mut out = String::from("variant,acc,auc,precision,recall,f1\n");
    for row in &table.rows {
        let m = &row.report.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.variant, m.acc, m.auc, m.precision, m.recall, m.f1
        ));
    }
    out
}

pub fn sweep_csv(sweep: &SweepReport) -> String {
    let mut out = String::from("n_clusters,acc,auc,precision,recall,f1\n");
    for row in &sweep.rows {
        let m = &row.report.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.n_clusters, m.acc, m.auc, m.precision, m.recall, m.f1
        ));
    }
    out
}

pub fn loss_curve_csv(trace: &TrainingTrace) -> String {
    let mut out = String::from("epoch,train_loss,validation_auc\n");
    for (i, loss) in trace.epoch_losses.iter().enumerate() {
        let val = trace
            .validation_scores
            .get(i)
            .copied()
            .unwrap_or(f64::NAN);
        out.push_str(&format!("{},{loss},{val}\n", i + 1));
    }
    out
}

/// Write the data, encoding, clustering, and model artifacts (everything
/// except the evaluation report) under `dir`.
pub fn persist_training(dir: &Path, prepared: &Prepared, models: &TrainedModels) -> Result<()> {
    fs::create_dir_all(dir)?;

    if let Some(csv) = &prepared.synth_events_csv {
        fs::write(dir.join("transactions.csv"), csv)?;
    }
    if let Some(labels) = &prepared.synth_labels {
        fs::write(dir.join("archetypes.csv"), crate::synth::labels_to_csv(labels))?;
    }

    fs::write(dir.join("dictionary.csv"), prepared.dictionary.to_csv())?;

    let mut labels_csv = String::from("customer_id,cluster\n");
    for (id, &label) in prepared.matrix.customers().iter().zip(&prepared.cluster_labels) {
        labels_csv.push_str(&format!("{id},{label}\n"));
    }
    fs::write(dir.join("cluster_labels.csv"), labels_csv)?;
    if let Some(model) = &prepared.cluster_model {
        fs::write(dir.join("centroids.csv"), model.centroids_csv())?;
        fs::write(dir.join("cluster_manifest.json"), model.manifest_json())?;
    }

    for (c, model) in models.per_cluster.iter().enumerate() {
        if let Some(model) = model {
            save_checkpoint(model, &dir.join(format!("model_cluster{c}.ckpt")))?;
        }
        if let Some(Some(trace)) = models.traces.get(c) {
            fs::write(dir.join(format!("loss_curve_cluster{c}.csv")), loss_curve_csv(trace))?;
        }
    }
    if let Some(fallback) = &models.fallback {
        save_checkpoint(fallback, &dir.join("model_fallback.ckpt"))?;
        if let Some(trace) = &models.fallback_trace {
            fs::write(dir.join("loss_curve_fallback.csv"), loss_curve_csv(trace))?;
        }
    }
    Ok(())
}

fn persist_artifacts(
    dir: &Path,
    prepared: &Prepared,
    models: &TrainedModels,
    report: &PipelineReport,
) -> Result<()> {
    persist_training(dir, prepared, models)?;
    fs::write(dir.join("report.json"), report_json(report))?;
    fs::write(dir.join("metrics.csv"), metrics_csv(report))?;
    Ok(())
}
