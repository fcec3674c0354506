//! The four commands. Artifacts are deterministic: no timestamps, stable
//! field order, stable float formatting, and every file embeds the config
//! hash plus the seed that produced it, so re-running an identical
//! configuration overwrites byte-identical outputs.
//!
//! Seeds are independent jobs; a worker pool runs them concurrently and each
//! job writes only its own per-seed files. Checkpoints make sweeps resumable:
//! a seed whose checkpoint exists is not retrained.

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use ffens_core::analysis::{
    build_representations, method1, method2, negative_fraction_histogram, negative_fractions,
    overlap_matrix, positive_weight_fraction, unseen_category_probe, write_activation_csv,
    write_density_csv, write_overlap_csv, Ensemble, EnsembleSizeRecord, Histogram,
};
use ffens_core::data::{exclude_category, Dataset};
use ffens_core::error::Error;
use ffens_core::inference::{evaluate, EvalReport, InferenceConfig};
use ffens_core::network::{load_checkpoint, save_checkpoint};
use ffens_core::training::{train, write_train_log_csv, ModelKind};

use crate::config::{CliError, CliResult, DatasetId, ExperimentConfig};
use crate::data::{resolve_split, Split};

fn artifact_stem(model: ModelKind, dataset: DatasetId) -> String {
    format!("{}_{}", model.as_str(), dataset.as_str())
}

fn checkpoint_path(cfg: &ExperimentConfig, model: ModelKind, dataset: DatasetId, seed: u64) -> PathBuf {
    cfg.out.join(format!("{}_s{seed}.ffc", artifact_stem(model, dataset)))
}

fn write_json<T: Serialize>(path: &PathBuf, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Run(Error::Format(e.to_string())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Run(e.into()))
}

/// Sample mean and standard error (std / sqrt(n)); a single value has error 0.
fn mean_and_std_err(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs one job per seed on a small worker pool; results come back in seed
/// order and the first failure wins.
fn parallel_seeds<T: Send>(
    seeds: &[u64],
    job: impl Fn(u64) -> CliResult<T> + Sync,
) -> CliResult<Vec<T>> {
    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<(usize, CliResult<T>)>> = Mutex::new(Vec::with_capacity(seeds.len()));
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(seeds.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let result = job(seeds[i]);
                done.lock().unwrap().push((i, result));
            });
        }
    });
    let mut results = done.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}

/// Train split with the exclusion applied; the held-out part is dropped.
fn train_data(cfg: &ExperimentConfig) -> CliResult<(Dataset, String)> {
    let (ds, source) = resolve_split(cfg, Split::Train)?;
    match cfg.exclude_category {
        Some(cat) => Ok((exclude_category(&ds, cat)?.0, source)),
        None => Ok((ds, source)),
    }
}

/// Test split as (seen part, held-out part when a category is excluded).
fn test_data(cfg: &ExperimentConfig) -> CliResult<(Dataset, Option<Dataset>, String)> {
    let (ds, source) = resolve_split(cfg, Split::Test)?;
    match cfg.exclude_category {
        Some(cat) => {
            let (seen, held) = exclude_category(&ds, cat)?;
            Ok((seen, Some(held), source))
        }
        None => Ok((ds, None, source)),
    }
}

fn load_required_checkpoint(path: &PathBuf) -> CliResult<ffens_core::network::NetworkParams> {
    if !path.exists() {
        return Err(CliError::Run(Error::State(format!(
            "checkpoint {} missing; run `ffens train` with the same config first",
            path.display()
        ))));
    }
    Ok(load_checkpoint(path)?)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> CliResult<()> {
    cfg.validate()?;
    let model = cfg.require_model()?;
    let dataset = cfg.require_dataset()?;
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::Run(e.into()))?;
    let (train_set, source) = train_data(cfg)?;
    let seeds = cfg.effective_seeds();
    let pending: Vec<u64> = seeds
        .iter()
        .copied()
        .filter(|&s| !checkpoint_path(cfg, model, dataset, s).exists())
        .collect();
    let skipped = seeds.len() - pending.len();
    let stem = artifact_stem(model, dataset);
    parallel_seeds(&pending, |seed| {
        let out = train(&train_set, &cfg.train_config(model, seed))?;
        save_checkpoint(&out.params, &checkpoint_path(cfg, model, dataset, seed))?;
        let log_path = cfg.out.join(format!("trainlog_{stem}_s{seed}.csv"));
        let mut buf = Vec::new();
        write_train_log_csv(&out.log, &mut buf)?;
        fs::write(&log_path, buf).map_err(Error::from)?;
        eprintln!("[train {stem} s{seed}] done");
        Ok(())
    })?;
    println!(
        "train {stem}: {} trained, {skipped} already present, data {source}, out {}",
        pending.len(),
        cfg.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalArtifact<'a> {
    config_hash: &'a str,
    model: &'a str,
    dataset: &'a str,
    seed: u64,
    data_source: &'a str,
    report: &'a EvalReport,
}

#[derive(Serialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub model: String,
    pub dataset: String,
    pub data_source: String,
    pub n: usize,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_err: f64,
}

pub fn cmd_evaluate(cfg: &ExperimentConfig) -> CliResult<EvalSummary> {
    cfg.validate()?;
    let model = cfg.require_model()?;
    let dataset = cfg.require_dataset()?;
    let hash = cfg.config_hash(model, dataset);
    let (test_seen, _, source) = test_data(cfg)?;
    let seeds = cfg.effective_seeds();
    let stem = artifact_stem(model, dataset);
    let icfg = InferenceConfig {
        model,
        included_layers: cfg.included_layers.clone(),
        bp_normalize: cfg.bp_normalize,
        chunk_rows: cfg.chunk_rows,
    };
    let accuracies = parallel_seeds(&seeds, |seed| {
        let params = load_required_checkpoint(&checkpoint_path(cfg, model, dataset, seed))?;
        let report = evaluate(&params, &test_seen, &icfg)?;
        write_json(
            &cfg.out.join(format!("eval_{stem}_s{seed}.json")),
            &EvalArtifact {
                config_hash: &hash,
                model: model.as_str(),
                dataset: dataset.as_str(),
                seed,
                data_source: &source,
                report: &report,
            },
        )?;
        eprintln!("[evaluate {stem} s{seed}] accuracy {:.4}", report.accuracy);
        Ok(report.accuracy)
    })?;
    let (mean, std_err) = mean_and_std_err(&accuracies);
    let summary = EvalSummary {
        config_hash: hash,
        model: model.as_str().into(),
        dataset: dataset.as_str().into(),
        data_source: source,
        n: seeds.len(),
        seeds,
        accuracies,
        mean_accuracy: mean,
        std_err,
    };
    write_json(&cfg.out.join(format!("eval_{stem}_summary.json")), &summary)?;
    println!(
        "evaluate {stem}: accuracy {:.4} +- {:.4} (n={})",
        summary.mean_accuracy, summary.std_err, summary.n
    );
    Ok(summary)
}

#[derive(Serialize)]
struct WeightArtifact<'a> {
    config_hash: &'a str,
    model: &'a str,
    dataset: &'a str,
    seed: u64,
    /// Indexed by layer-1: fraction of strictly positive weights.
    positive_fraction: Vec<f64>,
    /// Indexed by layer-1: per-unit fraction of negative incoming weights.
    negative_fractions: Vec<Vec<f64>>,
    histograms: Vec<Histogram>,
}

#[derive(Serialize)]
struct ProbeArtifact<'a> {
    config_hash: &'a str,
    model: &'a str,
    dataset: &'a str,
    seed: u64,
    excluded_category: u8,
    data_source: &'a str,
    report: &'a ffens_core::analysis::ProbeReport,
}

#[derive(Serialize, Clone)]
struct LayerMethodSummary {
    layer: usize,
    method: String,
    /// Mean ensemble size over categories, one entry per seed.
    per_seed_category_mean: Vec<f64>,
    mean_size: f64,
    std_err: f64,
}

#[derive(Serialize)]
struct EnsembleArtifact<'a> {
    config_hash: &'a str,
    model: &'a str,
    dataset: &'a str,
    data_source: &'a str,
    q: f64,
    eps: f64,
    rho_max: f64,
    nh_max: usize,
    records: &'a [EnsembleSizeRecord],
    layer_summary: &'a [LayerMethodSummary],
}

#[derive(Serialize)]
struct LayerWeightSummary {
    layer: usize,
    per_seed: Vec<f64>,
    positive_fraction_mean: f64,
    positive_fraction_std_err: f64,
}

#[derive(Serialize)]
struct WeightSummaryArtifact<'a> {
    config_hash: &'a str,
    model: &'a str,
    dataset: &'a str,
    layers: &'a [LayerWeightSummary],
}

#[derive(Serialize)]
struct RegressionArtifact<'a> {
    config_hash: Option<&'a str>,
    scope: &'a str,
    n_points: usize,
    slope: Option<f64>,
    intercept: Option<f64>,
    note: Option<String>,
}

const METHOD_M1: &str = "median_quantile";
const METHOD_M2: &str = "mean_density";

struct SeedAnalysis {
    accuracy: f64,
    records: Vec<EnsembleSizeRecord>,
    /// (median-threshold size, density-outlier size) per (layer, category).
    pairs: Vec<(usize, usize)>,
    positive_fraction: Vec<f64>,
}

pub struct AnalyzeOutput {
    pub summary: EvalSummaryLite,
    pub pairs: Vec<(usize, usize)>,
    pub records: Vec<EnsembleSizeRecord>,
}

pub struct EvalSummaryLite {
    pub mean_accuracy: f64,
    pub std_err: f64,
    pub n: usize,
}

fn analyze_seed(
    cfg: &ExperimentConfig,
    model: ModelKind,
    dataset: DatasetId,
    hash: &str,
    test_seen: &Dataset,
    held_out: Option<&Dataset>,
    source: &str,
    seed: u64,
) -> CliResult<SeedAnalysis> {
    let stem = artifact_stem(model, dataset);
    let params = load_required_checkpoint(&checkpoint_path(cfg, model, dataset, seed))?;
    let icfg = InferenceConfig {
        model,
        included_layers: cfg.included_layers.clone(),
        bp_normalize: cfg.bp_normalize,
        chunk_rows: cfg.chunk_rows,
    };
    let report = evaluate(&params, test_seen, &icfg)?;
    let reps = build_representations(
        &params,
        test_seen,
        &report.correct_mask,
        model,
        cfg.bp_normalize,
        cfg.chunk_rows,
    )?;
    let mut records = Vec::new();
    let mut pairs = Vec::new();
    let mut layer1_m2: Vec<Ensemble> = Vec::new();
    for per_cat in &reps {
        let mut cats = Vec::new();
        let mut m1_ensembles = Vec::new();
        let mut m2_ensembles = Vec::new();
        for rep in per_cat.iter().filter(|r| r.samples() > 0) {
            let layer = rep.layer;
            let e1 = method1(rep, cfg.q)?;
            let (e2, points) = method2(rep, cfg.eps, cfg.rho_max, cfg.nh_max)?;
            let mut buf = Vec::new();
            write_density_csv(&points, &mut buf)?;
            fs::write(
                cfg.out.join(format!("density_{stem}_s{seed}_l{layer}_c{}.csv", rep.category)),
                buf,
            )
            .map_err(Error::from)?;
            if cfg.export_activations {
                let mut buf = Vec::new();
                write_activation_csv(rep, &mut buf)?;
                fs::write(
                    cfg.out
                        .join(format!("activations_{stem}_s{seed}_l{layer}_c{}.csv", rep.category)),
                    buf,
                )
                .map_err(Error::from)?;
            }
            for (method, size) in [(METHOD_M1, e1.size()), (METHOD_M2, e2.size())] {
                records.push(EnsembleSizeRecord {
                    model: model.as_str().into(),
                    dataset: dataset.as_str().into(),
                    seed,
                    layer,
                    category: rep.category,
                    method: method.into(),
                    size,
                });
            }
            pairs.push((e1.size(), e2.size()));
            cats.push(rep.category);
            m1_ensembles.push(e1);
            if rep.layer == 1 {
                layer1_m2.push(e2.clone());
            }
            m2_ensembles.push(e2);
        }
        if cats.is_empty() {
            continue;
        }
        let layer = m1_ensembles[0].layer;
        for (tag, ensembles) in [("m1", &m1_ensembles), ("m2", &m2_ensembles)] {
            let matrix = overlap_matrix(ensembles)?;
            let mut buf = Vec::new();
            write_overlap_csv(&cats, &matrix, &mut buf)?;
            fs::write(cfg.out.join(format!("overlap_{tag}_{stem}_s{seed}_l{layer}.csv")), buf)
                .map_err(Error::from)?;
        }
    }
    let positive_fraction = positive_weight_fraction(&params);
    let negative: Vec<Vec<f64>> = (1..=params.layers.len())
        .map(|l| negative_fractions(&params, l))
        .collect::<Result<_, _>>()?;
    let histograms: Vec<Histogram> = (1..=params.layers.len())
        .map(|l| negative_fraction_histogram(&params, l, cfg.bins))
        .collect::<Result<_, _>>()?;
    write_json(
        &cfg.out.join(format!("weights_{stem}_s{seed}.json")),
        &WeightArtifact {
            config_hash: hash,
            model: model.as_str(),
            dataset: dataset.as_str(),
            seed,
            positive_fraction: positive_fraction.clone(),
            negative_fractions: negative,
            histograms,
        },
    )?;
    if let Some(held) = held_out {
        let probe = unseen_category_probe(
            &params,
            held,
            &layer1_m2,
            cfg.eps,
            cfg.rho_max,
            cfg.nh_max,
            cfg.chunk_rows,
        )?;
        write_json(
            &cfg.out.join(format!("probe_{stem}_s{seed}.json")),
            &ProbeArtifact {
                config_hash: hash,
                model: model.as_str(),
                dataset: dataset.as_str(),
                seed,
                excluded_category: held.labels[0],
                data_source: source,
                report: &probe,
            },
        )?;
    }
    eprintln!("[analyze {stem} s{seed}] accuracy {:.4}, {} ensembles", report.accuracy, records.len());
    Ok(SeedAnalysis { accuracy: report.accuracy, records, pairs, positive_fraction })
}

fn regression_artifact<'a>(
    pairs: &[(usize, usize)],
    config_hash: Option<&'a str>,
    scope: &'a str,
) -> RegressionArtifact<'a> {
    let m1: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let m2: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    match ffens_core::analysis::compare_methods(&m1, &m2) {
        Ok((slope, intercept)) => RegressionArtifact {
            config_hash,
            scope,
            n_points: pairs.len(),
            slope: Some(slope),
            intercept: Some(intercept),
            note: None,
        },
        Err(e) => RegressionArtifact {
            config_hash,
            scope,
            n_points: pairs.len(),
            slope: None,
            intercept: None,
            note: Some(e.to_string()),
        },
    }
}

pub fn cmd_analyze(cfg: &ExperimentConfig) -> CliResult<AnalyzeOutput> {
    cfg.validate()?;
    let model = cfg.require_model()?;
    let dataset = cfg.require_dataset()?;
    let hash = cfg.config_hash(model, dataset);
    let (test_seen, held_out, source) = test_data(cfg)?;
    let seeds = cfg.effective_seeds();
    let stem = artifact_stem(model, dataset);
    let per_seed = parallel_seeds(&seeds, |seed| {
        analyze_seed(cfg, model, dataset, &hash, &test_seen, held_out.as_ref(), &source, seed)
    })?;

    let mut records = Vec::new();
    let mut pairs = Vec::new();
    for sa in &per_seed {
        records.extend(sa.records.iter().cloned());
        pairs.extend(sa.pairs.iter().copied());
    }

    let n_layers = cfg.hidden.len();
    let mut layer_summary = Vec::new();
    for layer in 1..=n_layers {
        for method in [METHOD_M1, METHOD_M2] {
            let per_seed_means: Vec<f64> = per_seed
                .iter()
                .map(|sa| {
                    let sizes: Vec<f64> = sa
                        .records
                        .iter()
                        .filter(|r| r.layer == layer && r.method == method)
                        .map(|r| r.size as f64)
                        .collect();
                    sizes.iter().sum::<f64>() / sizes.len().max(1) as f64
                })
                .collect();
            let (mean, std_err) = mean_and_std_err(&per_seed_means);
            layer_summary.push(LayerMethodSummary {
                layer,
                method: method.into(),
                per_seed_category_mean: per_seed_means,
                mean_size: mean,
                std_err,
            });
        }
    }
    write_json(
        &cfg.out.join(format!("ensembles_{stem}.json")),
        &EnsembleArtifact {
            config_hash: &hash,
            model: model.as_str(),
            dataset: dataset.as_str(),
            data_source: &source,
            q: cfg.q,
            eps: cfg.eps,
            rho_max: cfg.rho_max,
            nh_max: cfg.nh_max,
            records: &records,
            layer_summary: &layer_summary,
        },
    )?;

    let mut weight_layers = Vec::new();
    for layer in 1..=n_layers {
        let per_seed_fracs: Vec<f64> =
            per_seed.iter().map(|sa| sa.positive_fraction[layer - 1]).collect();
        let (mean, std_err) = mean_and_std_err(&per_seed_fracs);
        weight_layers.push(LayerWeightSummary {
            layer,
            per_seed: per_seed_fracs,
            positive_fraction_mean: mean,
            positive_fraction_std_err: std_err,
        });
    }
    write_json(
        &cfg.out.join(format!("weights_{stem}_summary.json")),
        &WeightSummaryArtifact {
            config_hash: &hash,
            model: model.as_str(),
            dataset: dataset.as_str(),
            layers: &weight_layers,
        },
    )?;

    write_json(
        &cfg.out.join(format!("regression_{stem}.json")),
        &regression_artifact(&pairs, Some(&hash), &stem),
    )?;

    let accuracies: Vec<f64> = per_seed.iter().map(|sa| sa.accuracy).collect();
    let (mean, std_err) = mean_and_std_err(&accuracies);
    println!(
        "analyze {stem}: {} seeds, {} ensemble records, accuracy {:.4} +- {:.4}, out {}",
        seeds.len(),
        records.len(),
        mean,
        std_err,
        cfg.out.display()
    );
    Ok(AnalyzeOutput {
        summary: EvalSummaryLite { mean_accuracy: mean, std_err, n: seeds.len() },
        pairs,
        records,
    })
}

#[derive(Serialize)]
struct AccuracyRow {
    model: String,
    dataset: String,
    mean_accuracy: f64,
    std_err: f64,
    n: usize,
}

#[derive(Serialize)]
struct AccuracySummary {
    rows: Vec<AccuracyRow>,
}

/// Full sweep: every model on every dataset, then the cross-sweep method
/// regression. Train is resumable, so an interrupted reproduce continues.
pub fn cmd_reproduce(cfg: &ExperimentConfig) -> CliResult<()> {
    cfg.validate()?;
    if cfg.exclude_category.is_some() {
        return Err(CliError::Config(
            "reproduce runs the standard sweep; run analyze with exclude_category for the \
             held-out-category study"
                .into(),
        ));
    }
    let mut rows = Vec::new();
    let mut all_pairs = Vec::new();
    for dataset in [DatasetId::Mnist, DatasetId::FashionMnist] {
        for model in [ModelKind::Ff, ModelKind::BpFf, ModelKind::Bp] {
            let mut combo = cfg.clone();
            combo.dataset = Some(dataset);
            combo.model = Some(model);
            cmd_train(&combo)?;
            let summary = cmd_evaluate(&combo)?;
            let out = cmd_analyze(&combo)?;
            rows.push(AccuracyRow {
                model: model.as_str().into(),
                dataset: dataset.as_str().into(),
                mean_accuracy: summary.mean_accuracy,
                std_err: summary.std_err,
                n: summary.n,
            });
            all_pairs.extend(out.pairs);
        }
    }
    write_json(&cfg.out.join("accuracy_summary.json"), &AccuracySummary { rows })?;
    write_json(
        &cfg.out.join("regression_all.json"),
        &regression_artifact(&all_pairs, None, "all"),
    )?;
    println!("reproduce: sweep complete, out {}", cfg.out.display());
    Ok(())
}
