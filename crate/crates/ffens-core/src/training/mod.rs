//! The three trainers.
//!
//! `ff` trains one hidden layer at a time with the layers below frozen: each
//! epoch takes one full-batch Adam step that pushes positive-sample goodness
//! above theta and negative-sample goodness below it. `bpff` optimizes the
//! same objective on the layer-summed goodness, end to end. `bp` is a
//! conventional softmax classifier on raw images.
//!
//! Full batches are accumulated in row chunks so memory stays flat; chunking
//! never changes the draws or the update. Negative labels are re-drawn every
//! epoch from a stream derived from (seed, layer, epoch).

pub mod adam;
pub mod grad;
pub mod loss;

use std::io::Write;

use crate::data::{embed_label, embed_positive_batch, wrong_label, Dataset};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::network::{init_params, layer_forward, normalize_rows, NetworkParams};
use crate::rng;
use adam::Adam;
use grad::{bp_chunk, bpff_chunk, ff_layer_chunk, GradSet, LayerGrad, PhaseStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ff,
    BpFf,
    Bp,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Ff => "ff",
            ModelKind::BpFf => "bpff",
            ModelKind::Bp => "bp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ff" => Ok(ModelKind::Ff),
            "bpff" => Ok(ModelKind::BpFf),
            "bp" => Ok(ModelKind::Bp),
            other => Err(Error::Domain(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// Hidden layer widths, input width comes from the data.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub theta: f64,
    pub seed: u64,
    /// Rows per accumulation chunk; affects memory only.
    pub chunk_rows: usize,
    /// 1-based hidden layers whose goodness enters the aggregate score.
    pub included_layers: Vec<usize>,
    /// Keep the inter-layer normalization in the softmax classifier.
    pub bp_normalize: bool,
    /// Swap the summed-goodness objective for a sum of per-layer losses.
    pub bpff_per_layer_loss: bool,
}

impl TrainConfig {
    pub fn for_model(model: ModelKind) -> Self {
        TrainConfig {
            model,
            hidden: vec![784, 784, 784],
            epochs: match model {
                ModelKind::Ff | ModelKind::BpFf => 1000,
                ModelKind::Bp => 20,
            },
            lr: 1e-2,
            theta: 0.5,
            seed: 0,
            chunk_rows: 4096,
            included_layers: vec![1, 2, 3],
            bp_normalize: true,
            bpff_per_layer_loss: false,
        }
    }

    fn validate(&self, ds: &Dataset) -> Result<()> {
        if ds.is_empty() {
            return Err(Error::Domain("empty training set".into()));
        }
        if self.hidden.is_empty() {
            return Err(Error::Domain("no hidden layers".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Domain("zero-width hidden layer".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Domain(format!("learning rate {}", self.lr)));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Domain(format!("theta {}", self.theta)));
        }
        if self.chunk_rows == 0 {
            return Err(Error::Domain("zero chunk size".into()));
        }
        if self.included_layers.is_empty() {
            return Err(Error::Domain("no layers included in the aggregate".into()));
        }
        for &l in &self.included_layers {
            if l == 0 || l > self.hidden.len() {
                return Err(Error::Domain(format!(
                    "included layer {l} outside 1..={}",
                    self.hidden.len()
                )));
            }
        }
        Ok(())
    }

    fn widths(&self, input_dim: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 1);
        w.push(input_dim);
        w.extend_from_slice(&self.hidden);
        w
    }
}

/// One log row. `layer` is 1-based for layer-local phases and 0 when the
/// epoch optimized a whole-network objective. Goodness fields are absent for
/// the softmax classifier.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub layer: usize,
    pub mean_loss: f64,
    pub mean_pos_goodness: Option<f64>,
    pub mean_neg_goodness: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: NetworkParams,
    pub log: Vec<TrainLogRecord>,
}

pub(crate) fn chunk_ranges(n: usize, size: usize) -> impl Iterator<Item = (usize, usize)> {
    let size = size.max(1);
    (0..n.div_ceil(size)).map(move |c| (c * size, ((c + 1) * size).min(n)))
}

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate(ds)?;
    match cfg.model {
        ModelKind::Ff => train_ff(ds, cfg),
        ModelKind::BpFf => train_bpff(ds, cfg),
        ModelKind::Bp => train_bp(ds, cfg),
    }
}

/// Embeds rows [start, end) with freshly drawn wrong labels. Draws are
/// sequential in row order, so chunk boundaries do not move them.
fn embedded_negative_chunk(
    ds: &Dataset,
    start: usize,
    end: usize,
    rng: &mut impl rand::Rng,
) -> Result<Mat> {
    let mut m = ds.images.rows_range(start, end);
    for (r, i) in (start..end).enumerate() {
        let neg = wrong_label(ds.labels[i], ds.num_classes, rng)?;
        embed_label(m.row_mut(r), neg, ds.num_classes)?;
    }
    Ok(m)
}

/// Pushes a batch through already-trained layers `0..upto`, chunked.
fn forward_prefix(params: &NetworkParams, x: &Mat, upto: usize, chunk_rows: usize) -> Result<Mat> {
    if upto == 0 {
        return Ok(x.clone());
    }
    let mut out = Mat::zeros(x.rows(), params.layers[upto - 1].fan_out());
    for (s, e) in chunk_ranges(x.rows(), chunk_rows) {
        let mut cur = x.rows_range(s, e);
        for layer in &params.layers[..upto] {
            let (_, post) = layer_forward(layer, &cur)?;
            cur = normalize_rows(&post);
        }
        out.copy_rows_from(s, &cur);
    }
    Ok(out)
}

fn stats_record(epoch: usize, layer: usize, stats: &PhaseStats) -> TrainLogRecord {
    let n = stats.pos_count + stats.neg_count;
    TrainLogRecord {
        epoch,
        layer,
        mean_loss: stats.loss_sum / n as f64,
        mean_pos_goodness: Some(stats.pos_g_sum / stats.pos_count.max(1) as f64),
        mean_neg_goodness: Some(stats.neg_g_sum / stats.neg_count.max(1) as f64),
    }
}

fn train_ff(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    let mut params = init_params(&cfg.widths(ds.dim()), None, cfg.seed)?;
    let mut log = Vec::with_capacity(cfg.hidden.len() * cfg.epochs);
    let n = ds.len();

    // layer-l input for the positive batch; advanced as layers freeze
    let mut pos_input = embed_positive_batch(ds)?;

    for l in 0..params.layers.len() {
        let mut opt_w = Adam::new(params.layers[l].w.data().len(), cfg.lr);
        let mut opt_b = Adam::new(params.layers[l].b.len(), cfg.lr);

        for epoch in 0..cfg.epochs {
            let mut grad = LayerGrad {
                dw: Mat::zeros(params.layers[l].fan_in(), params.layers[l].fan_out()),
                db: vec![0.0; params.layers[l].fan_out()],
            };
            let mut stats = PhaseStats::default();
            let mut neg_rng = rng::stream(cfg.seed, &format!("neg:{l}:{epoch}"));

            for (s, e) in chunk_ranges(n, cfg.chunk_rows) {
                let pos = pos_input.rows_range(s, e);
                stats.absorb(ff_layer_chunk(&params.layers[l], &mut grad, &pos, true, cfg.theta)?);
            }
            for (s, e) in chunk_ranges(n, cfg.chunk_rows) {
                let neg0 = embedded_negative_chunk(ds, s, e, &mut neg_rng)?;
                let neg = forward_prefix(&params, &neg0, l, cfg.chunk_rows)?;
                stats.absorb(ff_layer_chunk(&params.layers[l], &mut grad, &neg, false, cfg.theta)?);
            }

            grad.dw.data_mut().iter_mut().for_each(|v| *v /= (2 * n) as f64);
            grad.db.iter_mut().for_each(|v| *v /= (2 * n) as f64);
            opt_w.step(params.layers[l].w.data_mut(), grad.dw.data());
            opt_b.step(&mut params.layers[l].b, &grad.db);

            log.push(stats_record(epoch, l + 1, &stats));
        }

        // freeze this layer: advance the positive cache through it
        let mut advanced = Mat::zeros(n, params.layers[l].fan_out());
        for (s, e) in chunk_ranges(n, cfg.chunk_rows) {
            let (_, post) = layer_forward(&params.layers[l], &pos_input.rows_range(s, e))?;
            advanced.copy_rows_from(s, &normalize_rows(&post));
        }
        pos_input = advanced;
    }
    Ok(TrainOutput { params, log })
}

fn train_bpff(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    let mut params = init_params(&cfg.widths(ds.dim()), None, cfg.seed)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    let n = ds.len();
    let pos = embed_positive_batch(ds)?;

    let mut opts: Vec<(Adam, Adam)> = params
        .layers
        .iter()
        .map(|l| (Adam::new(l.w.data().len(), cfg.lr), Adam::new(l.b.len(), cfg.lr)))
        .collect();

    for epoch in 0..cfg.epochs {
        let mut grad = GradSet::zeros_like(&params);
        let mut stats = PhaseStats::default();
        let mut neg_rng = rng::stream(cfg.seed, &format!("neg:g:{epoch}"));

        for (s, e) in chunk_ranges(n, cfg.chunk_rows) {
            let chunk = pos.rows_range(s, e);
            stats.absorb(bpff_chunk(
                &params,
                &mut grad,
                &chunk,
                true,
                cfg.theta,
                &cfg.included_layers,
                cfg.bpff_per_layer_loss,
            )?);
        }
        for (s, e) in chunk_ranges(n, cfg.chunk_rows) {
            let chunk = embedded_negative_chunk(ds, s, e, &mut neg_rng)?;
            stats.absorb(bpff_chunk(
                &params,
                &mut grad,
                &chunk,
                false,
                cfg.theta,
                &cfg.included_layers,
                cfg.bpff_per_layer_loss,
            )?);
        }

        grad.scale(1.0 / (2 * n) as f64);
        for (l, (ow, ob)) in opts.iter_mut().enumerate() {
            ow.step(params.layers[l].w.data_mut(), grad.layers[l].dw.data());
            ob.step(&mut params.layers[l].b, &grad.layers[l].db);
        }
        log.push(stats_record(epoch, 0, &stats));
    }
    Ok(TrainOutput { params, log })
}

fn train_bp(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    let mut params = init_params(&cfg.widths(ds.dim()), Some(ds.num_classes), cfg.seed)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    let n = ds.len();

    let mut opts: Vec<(Adam, Adam)> = params
        .layers
        .iter()
        .chain(params.head.as_ref())
        .map(|l| (Adam::new(l.w.data().len(), cfg.lr), Adam::new(l.b.len(), cfg.lr)))
        .collect();

    for epoch in 0..cfg.epochs {
        let mut grad = GradSet::zeros_like(&params);
        let mut loss_sum = 0.0;
        for (s, e) in chunk_ranges(n, cfg.chunk_rows) {
            let chunk = ds.images.rows_range(s, e);
            let (ls, _) = bp_chunk(&params, &mut grad, &chunk, &ds.labels[s..e], cfg.bp_normalize)?;
            loss_sum += ls;
        }
        grad.scale(1.0 / n as f64);
        for (l, (ow, ob)) in opts.iter_mut().enumerate() {
            if l < params.layers.len() {
                ow.step(params.layers[l].w.data_mut(), grad.layers[l].dw.data());
                ob.step(&mut params.layers[l].b, &grad.layers[l].db);
            } else {
                let head = params.head.as_mut().unwrap();
                let hg = grad.head.as_ref().unwrap();
                ow.step(head.w.data_mut(), hg.dw.data());
                ob.step(&mut head.b, &hg.db);
            }
        }
        log.push(TrainLogRecord {
            epoch,
            layer: 0,
            mean_loss: loss_sum / n as f64,
            mean_pos_goodness: None,
            mean_neg_goodness: None,
        });
    }
    Ok(TrainOutput { params, log })
}

/// Writes the log as CSV: epoch,layer,mean_loss,mean_pos_goodness,mean_neg_goodness.
/// Absent goodness fields stay empty.
pub fn write_train_log_csv<W: Write>(log: &[TrainLogRecord], mut w: W) -> Result<()> {
    writeln!(w, "epoch,layer,mean_loss,mean_pos_goodness,mean_neg_goodness")?;
    let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in log {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.epoch,
            r.layer,
            r.mean_loss,
            opt(&r.mean_pos_goodness),
            opt(&r.mean_neg_goodness)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::two_class_bars;

    fn bars_config(model: ModelKind) -> TrainConfig {
        let mut cfg = TrainConfig::for_model(model);
        cfg.hidden = vec![16, 16, 16];
        cfg.epochs = 150;
        cfg.seed = 1;
        cfg
    }

    fn params_bits(p: &NetworkParams) -> Vec<u64> {
        let mut v = Vec::new();
        for l in p.layers.iter().chain(p.head.as_ref()) {
            v.extend(l.w.data().iter().map(|x| x.to_bits()));
            v.extend(l.b.iter().map(|x| x.to_bits()));
        }
        v
    }

    #[test]
    fn ff_separates_the_bars() {
        let ds = two_class_bars(60, 2);
        let out = train(&ds, &bars_config(ModelKind::Ff)).unwrap();

        assert_eq!(out.log.len(), 3 * 150);
        for layer in 1..=3 {
            let rows: Vec<&TrainLogRecord> =
                out.log.iter().filter(|r| r.layer == layer).collect();
            assert_eq!(rows.len(), 150);
            let first = rows[0];
            let last = rows[rows.len() - 1];
            // perfect separation still pays softplus(-theta) per sample, so
            // judge progress absolutely, not as a ratio
            assert!(
                last.mean_loss < first.mean_loss - 0.08,
                "layer {layer}: loss {} -> {}",
                first.mean_loss,
                last.mean_loss
            );
            let pos = last.mean_pos_goodness.unwrap();
            let neg = last.mean_neg_goodness.unwrap();
            assert!(pos > neg + 0.1, "layer {layer}: pos {pos} vs neg {neg}");
        }
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let ds = two_class_bars(30, 5);
        for model in [ModelKind::Ff, ModelKind::BpFf, ModelKind::Bp] {
            let mut cfg = bars_config(model);
            cfg.epochs = 8;
            let a = train(&ds, &cfg).unwrap();
            let b = train(&ds, &cfg).unwrap();
            assert_eq!(params_bits(&a.params), params_bits(&b.params), "{model:?}");
            cfg.seed = 9;
            let c = train(&ds, &cfg).unwrap();
            assert_ne!(params_bits(&a.params), params_bits(&c.params), "{model:?}");
        }
    }

    #[test]
    fn zero_epochs_returns_the_init() {
        let ds = two_class_bars(12, 3);
        for model in [ModelKind::Ff, ModelKind::BpFf, ModelKind::Bp] {
            let mut cfg = bars_config(model);
            cfg.epochs = 0;
            let out = train(&ds, &cfg).unwrap();
            let head = match model {
                ModelKind::Bp => Some(ds.num_classes),
                _ => None,
            };
            let init = init_params(&cfg.widths(ds.dim()), head, cfg.seed).unwrap();
            assert_eq!(params_bits(&out.params), params_bits(&init));
            assert!(out.log.is_empty());
        }
    }

    #[test]
    fn chunk_size_changes_nothing_material() {
        let ds = two_class_bars(30, 7);
        for model in [ModelKind::Ff, ModelKind::BpFf, ModelKind::Bp] {
            let mut cfg = bars_config(model);
            cfg.epochs = 6;
            cfg.chunk_rows = 4096;
            let whole = train(&ds, &cfg).unwrap();
            cfg.chunk_rows = 7;
            let parts = train(&ds, &cfg).unwrap();
            for (a, b) in whole.params.layers.iter().zip(&parts.params.layers) {
                for (x, y) in a.w.data().iter().zip(b.w.data()) {
                    assert!((x - y).abs() < 1e-9, "{model:?}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn bpff_and_bp_losses_fall() {
        let ds = two_class_bars(40, 4);
        for model in [ModelKind::BpFf, ModelKind::Bp] {
            let mut cfg = bars_config(model);
            cfg.epochs = 120;
            let out = train(&ds, &cfg).unwrap();
            assert_eq!(out.log.len(), 120);
            assert!(out.log.iter().all(|r| r.layer == 0));
            let first = out.log[0].mean_loss;
            let last = out.log[119].mean_loss;
            assert!(last < first * 0.7, "{model:?}: {first} -> {last}");
            if model == ModelKind::Bp {
                assert!(out.log[0].mean_pos_goodness.is_none());
            } else {
                let pos = out.log[119].mean_pos_goodness.unwrap();
                let neg = out.log[119].mean_neg_goodness.unwrap();
                assert!(pos > neg, "{pos} vs {neg}");
            }
        }
    }

    #[test]
    fn bpff_per_layer_objective_also_learns() {
        let ds = two_class_bars(40, 4);
        let mut cfg = bars_config(ModelKind::BpFf);
        cfg.epochs = 120;
        cfg.bpff_per_layer_loss = true;
        let out = train(&ds, &cfg).unwrap();
        // three softplus terms per sample, floor 3*softplus(-theta)
        assert!(out.log[119].mean_loss < out.log[0].mean_loss - 0.2);
    }

    #[test]
    fn config_validation() {
        let ds = two_class_bars(10, 0);
        let good = bars_config(ModelKind::Ff);

        let mut c = good.clone();
        c.lr = 0.0;
        assert!(matches!(train(&ds, &c), Err(Error::Domain(_))));
        let mut c = good.clone();
        c.hidden.clear();
        assert!(matches!(train(&ds, &c), Err(Error::Domain(_))));
        let mut c = good.clone();
        c.included_layers = vec![4];
        assert!(matches!(train(&ds, &c), Err(Error::Domain(_))));
        let mut c = good.clone();
        c.included_layers.clear();
        assert!(matches!(train(&ds, &c), Err(Error::Domain(_))));
        let mut c = good.clone();
        c.chunk_rows = 0;
        assert!(matches!(train(&ds, &c), Err(Error::Domain(_))));
        let mut c = good.clone();
        c.theta = -1.0;
        assert!(matches!(train(&ds, &c), Err(Error::Domain(_))));

        let empty = Dataset::from_parts(Mat::zeros(0, 64), vec![], 8, 8, 2).unwrap();
        assert!(matches!(train(&empty, &good), Err(Error::Domain(_))));
    }

    #[test]
    fn csv_layout() {
        let log = vec![
            TrainLogRecord {
                epoch: 0,
                layer: 1,
                mean_loss: 0.5,
                mean_pos_goodness: Some(0.75),
                mean_neg_goodness: Some(0.25),
            },
            TrainLogRecord {
                epoch: 1,
                layer: 0,
                mean_loss: 0.125,
                mean_pos_goodness: None,
                mean_neg_goodness: None,
            },
        ];
        let mut buf = Vec::new();
        write_train_log_csv(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "epoch,layer,mean_loss,mean_pos_goodness,mean_neg_goodness\n0,1,0.5,0.75,0.25\n1,0,0.125,,\n"
        );
    }
}
