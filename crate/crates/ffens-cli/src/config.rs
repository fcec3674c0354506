//! Experiment configuration: flat key=value files plus flag overrides.
//!
//! Precedence is defaults < config file < command-line flags. The effective
//! configuration is hashed (FNV-1a over its canonical form) and the hash is
//! embedded in every artifact, so outputs are traceable to the exact settings
//! that produced them and identical re-runs overwrite byte-identical files.

use std::fmt;
use std::path::PathBuf;

use ffens_core::rng::fnv1a_64;
use ffens_core::training::{ModelKind, TrainConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config file, or invalid settings. Exit code 1.
    Config(String),
    /// Everything downstream of a valid configuration. Exit code 2.
    Run(ffens_core::error::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Run(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<ffens_core::error::Error> for CliError {
    fn from(e: ffens_core::error::Error) -> Self {
        CliError::Run(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetId {
    Mnist,
    FashionMnist,
}

impl DatasetId {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::FashionMnist => "fashion-mnist",
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "mnist" => Ok(DatasetId::Mnist),
            "fashion-mnist" => Ok(DatasetId::FashionMnist),
            other => Err(CliError::Config(format!(
                "unknown dataset '{other}' (mnist, fashion-mnist)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: Option<DatasetId>,
    pub model: Option<ModelKind>,
    /// Number of seeds, values seed_base..seed_base+seeds.
    pub seeds: usize,
    pub seed_base: u64,
    /// Explicit seed values; overrides seeds/seed_base when present.
    pub seed_list: Option<Vec<u64>>,
    /// None falls back to the model's default epoch count.
    pub epochs: Option<usize>,
    pub lr: f64,
    pub theta: f64,
    /// Train on the first `subset` samples; 0 means the whole split.
    pub subset: usize,
    pub hidden: Vec<usize>,
    pub q: f64,
    pub eps: f64,
    pub rho_max: f64,
    pub nh_max: usize,
    pub exclude_category: Option<u8>,
    pub out: PathBuf,
    pub data_dir: Option<PathBuf>,
    pub chunk_rows: usize,
    pub bp_normalize: bool,
    pub bpff_per_layer_loss: bool,
    pub included_layers: Vec<usize>,
    /// Also dump the (large) per-category activation matrices during analyze.
    pub export_activations: bool,
    /// Bins of the negative-weight-fraction histograms.
    pub bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            model: None,
            seeds: 15,
            seed_base: 0,
            seed_list: None,
            epochs: None,
            lr: 1e-2,
            theta: 0.5,
            subset: 0,
            hidden: vec![784, 784, 784],
            q: 0.95,
            eps: 0.2,
            rho_max: 25.0,
            nh_max: 20,
            exclude_category: None,
            out: PathBuf::from("runs"),
            data_dir: None,
            chunk_rows: 4096,
            bp_normalize: true,
            bpff_per_layer_loss: false,
            included_layers: vec![1, 2, 3],
            export_activations: false,
            bins: 50,
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("bad value '{value}' for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<Vec<T>> {
    value.split(',').map(|v| parse_as(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!("bad value '{value}' for {key}"))),
    }
}

impl ExperimentConfig {
    /// Applies one key=value pair; used for config files.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        match key {
            "dataset" => self.dataset = Some(DatasetId::parse(value)?),
            "model" => {
                self.model = Some(
                    ModelKind::parse(value).map_err(|e| CliError::Config(e.to_string()))?,
                )
            }
            "seeds" => self.seeds = parse_as(key, value)?,
            "seed_base" => self.seed_base = parse_as(key, value)?,
            "seed_list" => self.seed_list = Some(parse_list(key, value)?),
            "epochs" => self.epochs = Some(parse_as(key, value)?),
            "lr" => self.lr = parse_as(key, value)?,
            "theta" => self.theta = parse_as(key, value)?,
            "subset" => self.subset = parse_as(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "q" => self.q = parse_as(key, value)?,
            "eps" => self.eps = parse_as(key, value)?,
            "rho_max" => self.rho_max = parse_as(key, value)?,
            "nh_max" => self.nh_max = parse_as(key, value)?,
            "exclude_category" => self.exclude_category = Some(parse_as(key, value)?),
            "out" => self.out = PathBuf::from(value),
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "chunk_rows" => self.chunk_rows = parse_as(key, value)?,
            "bp_normalize" => self.bp_normalize = parse_bool(key, value)?,
            "bpff_per_layer_loss" => self.bpff_per_layer_loss = parse_bool(key, value)?,
            "included_layers" => self.included_layers = parse_list(key, value)?,
            "export_activations" => self.export_activations = parse_bool(key, value)?,
            "bins" => self.bins = parse_as(key, value)?,
            _ => return Err(CliError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Reads a flat key = value file; '#' starts a comment, blanks ignored.
    pub fn apply_file(&mut self, path: &std::path::Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{}:{}: expected key = value", path.display(), lineno + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        }
        Ok(())
    }

    pub fn effective_seeds(&self) -> Vec<u64> {
        match &self.seed_list {
            Some(list) => list.clone(),
            None => (0..self.seeds as u64).map(|i| self.seed_base + i).collect(),
        }
    }

    pub fn require_model(&self) -> CliResult<ModelKind> {
        self.model.ok_or_else(|| CliError::Config("model not set (--model ff|bpff|bp)".into()))
    }

    pub fn require_dataset(&self) -> CliResult<DatasetId> {
        self.dataset.ok_or_else(|| {
            CliError::Config("dataset not set (--dataset mnist|fashion-mnist)".into())
        })
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.effective_seeds().is_empty() {
            return Err(CliError::Config("need at least one seed".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(CliError::Config(format!("bad hidden widths {:?}", self.hidden)));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(CliError::Config(format!("quantile {} outside (0, 1]", self.q)));
        }
        if self.eps <= 0.0 || self.rho_max <= 0.0 {
            return Err(CliError::Config("eps and rho_max must be positive".into()));
        }
        if self.bins == 0 {
            return Err(CliError::Config("bins must be positive".into()));
        }
        if let Some(c) = self.exclude_category {
            if c >= 10 {
                return Err(CliError::Config(format!("exclude_category {c} outside 0..10")));
            }
        }
        for &l in &self.included_layers {
            if l == 0 || l > self.hidden.len() {
                return Err(CliError::Config(format!(
                    "included layer {l} outside 1..={}",
                    self.hidden.len()
                )));
            }
        }
        Ok(())
    }

    /// Effective epoch count for the configured model.
    pub fn epochs_for(&self, model: ModelKind) -> usize {
        self.epochs.unwrap_or_else(|| TrainConfig::for_model(model).epochs)
    }

    pub fn train_config(&self, model: ModelKind, seed: u64) -> TrainConfig {
        TrainConfig {
            model,
            hidden: self.hidden.clone(),
            epochs: self.epochs_for(model),
            lr: self.lr,
            theta: self.theta,
            seed,
            chunk_rows: self.chunk_rows,
            included_layers: self.included_layers.clone(),
            bp_normalize: self.bp_normalize,
            bpff_per_layer_loss: self.bpff_per_layer_loss,
        }
    }

    /// FNV-1a hash of the canonical settings; out and data paths excluded so
    /// moving results or data does not re-key them.
    pub fn config_hash(&self, model: ModelKind, dataset: DatasetId) -> String {
        let seeds: Vec<String> =
            self.effective_seeds().iter().map(|s| s.to_string()).collect();
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let layers: Vec<String> =
            self.included_layers.iter().map(|l| l.to_string()).collect();
        let exclude =
            self.exclude_category.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
        let canon = format!(
            "bins={}\nbp_normalize={}\nbpff_per_layer_loss={}\nchunk_rows={}\n\
             dataset={}\nepochs={}\neps={}\nexclude_category={}\nhidden={}\n\
             included_layers={}\nlr={}\nmodel={}\nnh_max={}\nq={}\nrho_max={}\n\
             seeds={}\nsubset={}\ntheta={}\n",
            self.bins,
            self.bp_normalize,
            self.bpff_per_layer_loss,
            self.chunk_rows,
            dataset.as_str(),
            self.epochs_for(model),
            self.eps,
            exclude,
            hidden.join(","),
            layers.join(","),
            self.lr,
            model.as_str(),
            self.nh_max,
            self.q,
            self.rho_max,
            seeds.join(","),
            self.subset,
            self.theta,
        );
        format!("{:016x}", fnv1a_64(canon.as_bytes()))
    }
}
