//! Classification and accuracy reports.
//!
//! Goodness-trained networks classify by label enumeration: the image is
//! re-embedded with every candidate label, each candidate is forwarded, and
//! the label whose embedding yields the highest aggregate goodness wins.
//! Ties go to the lowest label. The softmax classifier reads its head.

use serde::Serialize;

use crate::data::{embed_with_label_batch, Dataset};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::network::{aggregate_goodness, forward_bp_batch, forward_ff_batch, layer_goodness, NetworkParams};
use crate::training::{chunk_ranges, ModelKind, TrainConfig};

#[derive(Debug, Clone)]
pub struct Prediction {
    pub label: u8,
    /// Per-candidate aggregate goodness, or head logits for the softmax model.
    pub scores: Vec<f64>,
}

/// Inference-time knobs, a strict subset of the training configuration.
#[derive(Debug, Clone)]
pub struct InferenceConfig {
    pub model: ModelKind,
    pub included_layers: Vec<usize>,
    pub bp_normalize: bool,
    pub chunk_rows: usize,
}

impl From<&TrainConfig> for InferenceConfig {
    fn from(cfg: &TrainConfig) -> Self {
        InferenceConfig {
            model: cfg.model,
            included_layers: cfg.included_layers.clone(),
            bp_normalize: cfg.bp_normalize,
            chunk_rows: cfg.chunk_rows,
        }
    }
}

fn argmax_lowest(scores: &[f64]) -> u8 {
    let mut best = 0usize;
    for (j, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = j;
        }
    }
    best as u8
}

/// Label-enumeration classification on raw (label-free) images.
pub fn classify_goodness(
    params: &NetworkParams,
    images: &Mat,
    num_classes: usize,
    included_layers: &[usize],
    chunk_rows: usize,
) -> Result<Vec<Prediction>> {
    if num_classes == 0 || num_classes > u8::MAX as usize + 1 {
        return Err(Error::Domain(format!("{num_classes} classes")));
    }
    let mut preds = Vec::with_capacity(images.rows());
    for (s, e) in chunk_ranges(images.rows(), chunk_rows) {
        let chunk = images.rows_range(s, e);
        let mut scores = Mat::zeros(chunk.rows(), num_classes);
        for k in 0..num_classes {
            let embedded = embed_with_label_batch(&chunk, k as u8, num_classes)?;
            let trace = forward_ff_batch(params, &embedded)?;
            let g = layer_goodness(&trace);
            let agg = aggregate_goodness(&g, included_layers)?;
            for (i, v) in agg.into_iter().enumerate() {
                scores.set(i, k, v);
            }
        }
        for i in 0..chunk.rows() {
            let row = scores.row(i).to_vec();
            preds.push(Prediction { label: argmax_lowest(&row), scores: row });
        }
    }
    Ok(preds)
}

/// Softmax-head classification on raw images.
pub fn classify_softmax(
    params: &NetworkParams,
    images: &Mat,
    bp_normalize: bool,
    chunk_rows: usize,
) -> Result<Vec<Prediction>> {
    let mut preds = Vec::with_capacity(images.rows());
    for (s, e) in chunk_ranges(images.rows(), chunk_rows) {
        let chunk = images.rows_range(s, e);
        let (_, logits) = forward_bp_batch(params, &chunk, bp_normalize)?;
        for i in 0..chunk.rows() {
            let row = logits.row(i).to_vec();
            preds.push(Prediction { label: argmax_lowest(&row), scores: row });
        }
    }
    Ok(preds)
}

/// Routes to the model's classification rule.
pub fn classify(
    params: &NetworkParams,
    images: &Mat,
    num_classes: usize,
    cfg: &InferenceConfig,
) -> Result<Vec<Prediction>> {
    match cfg.model {
        ModelKind::Ff | ModelKind::BpFf => {
            classify_goodness(params, images, num_classes, &cfg.included_layers, cfg.chunk_rows)
        }
        ModelKind::Bp => classify_softmax(params, images, cfg.bp_normalize, cfg.chunk_rows),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    /// Indexed by category; null where the set has no samples of it.
    pub per_category_accuracy: Vec<Option<f64>>,
    /// confusion[true][predicted]
    pub confusion: Vec<Vec<usize>>,
    /// Per-sample hit flags, kept so representation builders can filter.
    pub correct_mask: Vec<bool>,
}

/// Classifies the whole set and tallies accuracy.
pub fn evaluate(params: &NetworkParams, ds: &Dataset, cfg: &InferenceConfig) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::Domain("empty evaluation set".into()));
    }
    let c = ds.num_classes;
    let preds = classify(params, &ds.images, c, cfg)?;
    let mut confusion = vec![vec![0usize; c]; c];
    let mut correct_mask = Vec::with_capacity(ds.len());
    for (p, &t) in preds.iter().zip(&ds.labels) {
        confusion[t as usize][p.label as usize] += 1;
        correct_mask.push(p.label == t);
    }
    let mut correct = 0usize;
    let mut per_cat = Vec::with_capacity(c);
    for t in 0..c {
        let total: usize = confusion[t].iter().sum();
        let hit = confusion[t][t];
        correct += hit;
        per_cat.push(if total > 0 { Some(hit as f64 / total as f64) } else { None });
    }
    Ok(EvalReport {
        n: ds.len(),
        accuracy: correct as f64 / ds.len() as f64,
        per_category_accuracy: per_cat,
        confusion,
        correct_mask,
    })
}
