//! Data resolution: real IDX files when a data directory is given, otherwise
//! a deterministic synthetic stand-in with the standard split sizes.
//!
//! The stand-in keeps the pipeline runnable end to end on a machine without
//! the datasets; artifacts record which source fed them. Synthetic splits are
//! prefix-stable, so `subset = n` sees the same images whether the split was
//! generated at size n or in full.

use std::path::Path;

use ffens_core::data::{load_idx, split_paths, Dataset};
use ffens_core::error::Error;
use ffens_core::synth;

use crate::config::{CliError, CliResult, DatasetId, ExperimentConfig};

pub const NUM_CLASSES: usize = 10;
const TRAIN_FULL: usize = 60_000;
const TEST_FULL: usize = 10_000;
/// Master seed of the synthetic streams; data is fixed, like a real corpus.
const SYNTH_SEED: u64 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn file_stem(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

fn load_real(root: &Path, split: Split) -> CliResult<Dataset> {
    let (images, labels) = split_paths(root, split.file_stem()).map_err(|_| {
        CliError::Run(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!(
                "no {0}-images-idx3-ubyte[.gz] under {1}; place the IDX files there \
                 or drop data_dir to run on synthetic data",
                split.file_stem(),
                root.display()
            ),
        )))
    })?;
    Ok(load_idx(&images, &labels, NUM_CLASSES)?)
}

fn synthesize(dataset: DatasetId, split: Split, n: usize) -> Dataset {
    let tag = split.file_stem();
    match dataset {
        DatasetId::Mnist => synth::digits(n, SYNTH_SEED, tag),
        DatasetId::FashionMnist => synth::garments(n, SYNTH_SEED, tag),
    }
}

/// Loads one split, applying the train subset. Returns the set and a source
/// tag ("surrogate" or "idx:<dir>") that artifacts embed.
pub fn resolve_split(cfg: &ExperimentConfig, split: Split) -> CliResult<(Dataset, String)> {
    let dataset = cfg.require_dataset()?;
    match &cfg.data_dir {
        Some(dir) => {
            let root = dir.join(dataset.as_str());
            let ds = load_real(&root, split)?;
            let ds = match (split, cfg.subset) {
                (Split::Train, n) if n > 0 => {
                    if n > ds.len() {
                        return Err(CliError::Config(format!(
                            "subset {n} exceeds the {} train samples",
                            ds.len()
                        )));
                    }
                    ds.take(n)?
                }
                _ => ds,
            };
            Ok((ds, format!("idx:{}", root.display())))
        }
        None => {
            let n = match split {
                Split::Train if cfg.subset > 0 => cfg.subset.min(TRAIN_FULL),
                Split::Train => TRAIN_FULL,
                Split::Test => TEST_FULL,
            };
            Ok((synthesize(dataset, split, n), "surrogate".into()))
        }
    }
}
