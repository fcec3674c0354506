//! Shared reduced-scale experiment fixture for the statistical criteria.
//!
//! Training goes through the real binary into a cache directory under
//! target/, so checkpoints persist across test invocations and only the
//! first run pays for training. Analysis is re-derived in-process from the
//! checkpoints each time: every run is distilled to the statistics the
//! criteria consume, one run in memory at a time.

use std::path::PathBuf;
use std::process::Command;
use std::sync::OnceLock;

use ffens_core::analysis::{
    build_representations, method1, method2, negative_fractions, positive_weight_fraction,
    unseen_category_probe, Ensemble, ProbeReport,
};
use ffens_core::data::{exclude_category, Dataset};
use ffens_core::inference::{evaluate, InferenceConfig};
use ffens_core::network::load_checkpoint;
use ffens_core::training::ModelKind;
use ffens_cli::data::{resolve_split, Split};
use ffens_cli::{DatasetId, ExperimentConfig};

/// Reduced-scale profile: small enough to train on one core in minutes per
/// run, trained hard enough that the published structure (sparse goodness
/// ensembles, sign-segregated weights, dense backprop ensembles) emerges.
pub const SUBSET: usize = 2000;
/// Analysis uses the first slice of the test split; statistics at a few
/// hundred samples per category are stable for every criterion bound.
pub const TEST_CAP: usize = 2500;

pub fn profile(model: ModelKind) -> (usize, f64) {
    match model {
        ModelKind::Ff => (FF_EPOCHS, 0.01),
        ModelKind::BpFf => (BPFF_EPOCHS, 0.01),
        ModelKind::Bp => (BP_EPOCHS, 0.01),
    }
}
const FF_EPOCHS: usize = 150;
const BPFF_EPOCHS: usize = 60;
const BP_EPOCHS: usize = 100;

const SEEDS3: &[u64] = &[0, 1, 2];
const SEEDS1: &[u64] = &[0];

pub struct RunSpec {
    pub model: ModelKind,
    pub dataset: DatasetId,
    pub seeds: &'static [u64],
    pub exclude: Option<u8>,
}

pub const SPECS: &[RunSpec] = &[
    RunSpec { model: ModelKind::Ff, dataset: DatasetId::Mnist, seeds: SEEDS3, exclude: None },
    RunSpec { model: ModelKind::BpFf, dataset: DatasetId::Mnist, seeds: SEEDS3, exclude: None },
    RunSpec { model: ModelKind::Bp, dataset: DatasetId::Mnist, seeds: SEEDS3, exclude: None },
    RunSpec { model: ModelKind::Ff, dataset: DatasetId::FashionMnist, seeds: SEEDS3, exclude: None },
    RunSpec { model: ModelKind::BpFf, dataset: DatasetId::FashionMnist, seeds: SEEDS1, exclude: None },
    RunSpec { model: ModelKind::Bp, dataset: DatasetId::FashionMnist, seeds: SEEDS1, exclude: None },
    RunSpec { model: ModelKind::Ff, dataset: DatasetId::FashionMnist, seeds: SEEDS1, exclude: Some(0) },
];

/// Everything a criterion reads from one trained network.
pub struct RunStats {
    pub model: ModelKind,
    pub dataset: DatasetId,
    pub seed: u64,
    pub exclude: Option<u8>,
    pub accuracy: f64,
    /// (layer, category, ensemble size) triples per detector setting.
    pub m1_q95: Vec<(usize, u8, usize)>,
    pub m1_q99: Vec<(usize, u8, usize)>,
    pub m2: Vec<(usize, u8, usize)>,
    /// Full layer-1 ensembles at the overlap-figure threshold q=0.90.
    pub l1_m1_q90: Vec<Ensemble>,
    /// Per layer: fraction of strictly positive weights.
    pub positive_fraction: Vec<f64>,
    /// Per layer-2 unit: fraction of negative incoming weights.
    pub l2_negative_fractions: Vec<f64>,
    pub probe: Option<ProbeReport>,
}

pub struct Fixture {
    pub runs: Vec<RunStats>,
    pub data_source: String,
}

impl Fixture {
    pub fn runs_for(&self, model: ModelKind, dataset: DatasetId) -> Vec<&RunStats> {
        self.runs
            .iter()
            .filter(|r| r.model == model && r.dataset == dataset && r.exclude.is_none())
            .collect()
    }

    pub fn exclusion_run(&self) -> &RunStats {
        self.runs.iter().find(|r| r.exclude.is_some()).expect("exclusion run in fixture")
    }
}

pub fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(build)
}

pub fn cache_dir() -> PathBuf {
    let target = std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target"));
    target.join("acceptance")
}

pub fn data_dir() -> Option<PathBuf> {
    std::env::var_os("FFENS_DATA_DIR").map(PathBuf::from)
}

pub fn data_source_name() -> String {
    match data_dir() {
        Some(d) => format!("idx:{}", d.display()),
        None => "surrogate".into(),
    }
}

fn group_dir(spec: &RunSpec) -> PathBuf {
    let tag = match spec.exclude {
        Some(c) => format!("{}_{}_x{c}", spec.model.as_str(), spec.dataset.as_str()),
        None => format!("{}_{}", spec.model.as_str(), spec.dataset.as_str()),
    };
    cache_dir().join(tag)
}

/// Trains any missing checkpoints for a spec through the binary; existing
/// checkpoints are skipped by the binary itself.
fn ensure_trained(spec: &RunSpec) {
    let out = group_dir(spec);
    std::fs::create_dir_all(&out).expect("cache dir");
    let (epochs, lr) = profile(spec.model);
    let seed_list =
        spec.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ffens"));
    cmd.args(["train", "--dataset", spec.dataset.as_str(), "--model", spec.model.as_str()])
        .args(["--seed-list", &seed_list])
        .args(["--subset", &SUBSET.to_string()])
        .args(["--epochs", &epochs.to_string()])
        .args(["--lr", &lr.to_string()])
        .args(["--out", out.to_str().unwrap()]);
    if let Some(c) = spec.exclude {
        cmd.args(["--exclude-category", &c.to_string()]);
    }
    if let Some(d) = data_dir() {
        cmd.args(["--data-dir", d.to_str().unwrap()]);
    }
    let status = cmd.status().expect("spawn ffens train");
    assert!(status.success(), "fixture training failed for {}", out.display());
}

/// Test split resolved the same way the binary resolves it, capped for
/// analysis, split into (seen, held-out) when a category is excluded.
fn test_data(spec: &RunSpec) -> (Dataset, Option<Dataset>) {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset = Some(spec.dataset);
    cfg.data_dir = data_dir();
    let (full, _) = resolve_split(&cfg, Split::Test).expect("test split");
    let capped = full.take(TEST_CAP.min(full.len())).expect("cap");
    match spec.exclude {
        Some(c) => {
            let (seen, held) = exclude_category(&capped, c).expect("exclusion split");
            (seen, Some(held))
        }
        None => (capped, None),
    }
}

fn sizes(per_layer: &[Vec<ffens_core::analysis::RepresentationMatrix>], q: f64) -> Vec<(usize, u8, usize)> {
    let mut out = Vec::new();
    for per_cat in per_layer {
        for rep in per_cat.iter().filter(|r| r.samples() > 0) {
            let e = method1(rep, q).expect("method1");
            out.push((rep.layer, rep.category, e.size()));
        }
    }
    out
}

fn distill(spec: &RunSpec, seed: u64) -> RunStats {
    let ckpt = group_dir(spec).join(format!(
        "{}_{}_s{seed}.ffc",
        spec.model.as_str(),
        spec.dataset.as_str()
    ));
    let params = load_checkpoint(&ckpt).expect("fixture checkpoint");
    let (test_seen, held_out) = test_data(spec);
    let icfg = InferenceConfig {
        model: spec.model,
        included_layers: vec![1, 2, 3],
        bp_normalize: true,
        chunk_rows: 4096,
    };
    let report = evaluate(&params, &test_seen, &icfg).expect("evaluate");
    let reps = build_representations(&params, &test_seen, &report.correct_mask, spec.model, true, 4096)
        .expect("representations");

    let mut m2_sizes = Vec::new();
    let mut l1_m1_q90 = Vec::new();
    let mut l1_m2_ensembles = Vec::new();
    for per_cat in &reps {
        for rep in per_cat.iter().filter(|r| r.samples() > 0) {
            let (e2, _) = method2(rep, 0.2, 25.0, 20).expect("method2");
            m2_sizes.push((rep.layer, rep.category, e2.size()));
            if rep.layer == 1 {
                l1_m1_q90.push(method1(rep, 0.90).expect("method1 q90"));
                l1_m2_ensembles.push(e2);
            }
        }
    }

    let probe = held_out.as_ref().map(|held| {
        unseen_category_probe(&params, held, &l1_m2_ensembles, 0.2, 25.0, 20, 4096)
            .expect("unseen-category probe")
    });

    RunStats {
        model: spec.model,
        dataset: spec.dataset,
        seed,
        exclude: spec.exclude,
        accuracy: report.accuracy,
        m1_q95: sizes(&reps, 0.95),
        m1_q99: sizes(&reps, 0.99),
        m2: m2_sizes,
        l1_m1_q90,
        positive_fraction: positive_weight_fraction(&params),
        l2_negative_fractions: negative_fractions(&params, 2).expect("layer 2 fractions"),
        probe,
    }
}

fn build() -> Fixture {
    let mut runs = Vec::new();
    for spec in SPECS {
        ensure_trained(spec);
        for &seed in spec.seeds {
            runs.push(distill(spec, seed));
        }
    }
    Fixture { runs, data_source: data_source_name() }
}

/// Mean of an iterator of f64 values; NaN when empty, which no criterion
/// bound accepts.
pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-seed mean layer-1 Method-1 size over categories, then mean over seeds.
pub fn l1_m1_mean(fx: &Fixture, model: ModelKind, dataset: DatasetId) -> f64 {
    mean(fx.runs_for(model, dataset).iter().map(|r| {
        mean(r.m1_q95.iter().filter(|(l, _, _)| *l == 1).map(|(_, _, s)| *s as f64))
    }))
}
