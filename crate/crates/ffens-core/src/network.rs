//! Network parameters, forward passes, goodness, and checkpointing.
//!
//! All hidden layers are sigmoid. A layer's goodness for one sample is the
//! MAXIMUM of its post-sigmoid activations. Between contiguous hidden layers
//! the activation vector is divided by its infinity norm, so only the pattern
//! of relative activity propagates; the raw input is fed to layer 1 as-is.
//!
//! Weights live in f64 for the math but stay on the f32 lattice (every value
//! is exactly representable as f32), so the f32 checkpoint format below
//! round-trips bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mat::{matmul, Mat};
use crate::rng;

/// Divisor floor for infinity-norm normalization.
pub const NORM_EPS: f64 = 1e-12;

const CHECKPOINT_MAGIC: &[u8; 4] = b"FFC1";

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// (fan_in x fan_out); row i holds input i's outgoing weights.
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.w.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
    /// Linear softmax head; present only for the plain-backprop classifier.
    pub head: Option<Layer>,
}

impl NetworkParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn num_hidden(&self) -> usize {
        self.layers.len()
    }

    fn validate_chain(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no hidden layers".into()));
        }
        for l in 0..self.layers.len() {
            let lay = &self.layers[l];
            if lay.b.len() != lay.fan_out() {
                return Err(Error::Shape(format!(
                    "layer {l}: {} biases for {} units",
                    lay.b.len(),
                    lay.fan_out()
                )));
            }
            if l > 0 && lay.fan_in() != self.layers[l - 1].fan_out() {
                return Err(Error::Consistency(format!(
                    "layer {l} expects {} inputs, layer {} emits {}",
                    lay.fan_in(),
                    l - 1,
                    self.layers[l - 1].fan_out()
                )));
            }
        }
        if let Some(h) = &self.head {
            if h.fan_in() != self.layers[self.layers.len() - 1].fan_out() {
                return Err(Error::Consistency(format!(
                    "head expects {} inputs, last layer emits {}",
                    h.fan_in(),
                    self.layers[self.layers.len() - 1].fan_out()
                )));
            }
            if h.b.len() != h.fan_out() {
                return Err(Error::Shape("head bias length".into()));
            }
        }
        Ok(())
    }
}

/// Nearest f32, widened back. Keeps parameter updates on the checkpoint
/// lattice so save/load is lossless.
#[inline]
pub fn to_f32_lattice(x: f64) -> f64 {
    x as f32 as f64
}

/// Uniform init in (-1/sqrt(fan_in), +1/sqrt(fan_in)), zero biases.
/// `widths` is the full chain starting with the input dimension.
pub fn init_params(widths: &[usize], head_classes: Option<usize>, master_seed: u64) -> Result<NetworkParams> {
    if widths.len() < 2 {
        return Err(Error::Domain("need an input width and at least one layer".into()));
    }
    if let Some(&w) = widths.iter().find(|&&w| w == 0) {
        return Err(Error::Domain(format!("zero layer width {w}")));
    }
    if head_classes == Some(0) {
        return Err(Error::Domain("zero-way head".into()));
    }
    let mut rng = rng::stream(master_seed, "init");
    let mut draw_layer = |fan_in: usize, fan_out: usize| -> Layer {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Mat::from_fn(fan_in, fan_out, |_, _| {
            to_f32_lattice(rng.random_range(-bound..bound))
        });
        Layer { w, b: vec![0.0; fan_out] }
    };
    let layers: Vec<Layer> = widths.windows(2).map(|p| draw_layer(p[0], p[1])).collect();
    let head = head_classes.map(|c| draw_layer(widths[widths.len() - 1], c));
    let params = NetworkParams { layers, head };
    params.validate_chain()?;
    Ok(params)
}

/// Infinity norm: max absolute entry.
pub fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
}

/// Divides each row by max(linf, NORM_EPS). A zero row stays zero.
pub fn normalize_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let inv = 1.0 / linf_norm(row).max(NORM_EPS);
        for v in row {
            *v *= inv;
        }
    }
    out
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// One linear+sigmoid layer over a batch. Returns (pre_activation, post_sigmoid).
pub fn layer_forward(layer: &Layer, x: &Mat) -> Result<(Mat, Mat)> {
    if x.cols() != layer.fan_in() {
        return Err(Error::Shape(format!(
            "{}-wide input into {}-input layer",
            x.cols(),
            layer.fan_in()
        )));
    }
    let mut pre = matmul(x, &layer.w);
    for i in 0..pre.rows() {
        let row = pre.row_mut(i);
        for (v, b) in row.iter_mut().zip(&layer.b) {
            *v += b;
        }
    }
    let mut post = pre.clone();
    for v in post.data_mut() {
        *v = sigmoid(*v);
    }
    Ok((pre, post))
}

/// Per-layer tensors for a batch. `out` is what the next layer consumed:
/// the normalized activations, or `post` itself when normalization is off.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pre: Vec<Mat>,
    pub post: Vec<Mat>,
    pub out: Vec<Mat>,
    pub normalized: bool,
}

/// Runs the hidden chain. `normalize` inserts the infinity-norm division
/// between layers (always on for goodness-trained nets).
pub fn forward_hidden(params: &NetworkParams, x: &Mat, normalize: bool) -> Result<ForwardTrace> {
    params.validate_chain()?;
    let n_layers = params.layers.len();
    let mut trace = ForwardTrace {
        pre: Vec::with_capacity(n_layers),
        post: Vec::with_capacity(n_layers),
        out: Vec::with_capacity(n_layers),
        normalized: normalize,
    };
    for (l, layer) in params.layers.iter().enumerate() {
        let input = if l == 0 { x } else { &trace.out[l - 1] };
        let (pre, post) = layer_forward(layer, input)?;
        let out = if normalize { normalize_rows(&post) } else { post.clone() };
        trace.pre.push(pre);
        trace.post.push(post);
        trace.out.push(out);
    }
    Ok(trace)
}

/// Forward pass for goodness models (normalization on).
pub fn forward_ff_batch(params: &NetworkParams, x: &Mat) -> Result<ForwardTrace> {
    forward_hidden(params, x, true)
}

/// Forward pass for the softmax classifier. Returns the hidden trace and the
/// head logits.
pub fn forward_bp_batch(params: &NetworkParams, x: &Mat, normalize: bool) -> Result<(ForwardTrace, Mat)> {
    let head = params.head.as_ref().ok_or_else(|| Error::State("network has no head".into()))?;
    let trace = forward_hidden(params, x, normalize)?;
    let hin = &trace.out[trace.out.len() - 1];
    if hin.cols() != head.fan_in() {
        return Err(Error::Shape("head input width".into()));
    }
    let mut logits = matmul(hin, &head.w);
    for i in 0..logits.rows() {
        for (v, b) in logits.row_mut(i).iter_mut().zip(&head.b) {
            *v += b;
        }
    }
    Ok((trace, logits))
}

/// Per-sample, per-layer goodness: the max post-sigmoid activation.
pub fn layer_goodness(trace: &ForwardTrace) -> Mat {
    let n = trace.post[0].rows();
    let l = trace.post.len();
    let mut g = Mat::zeros(n, l);
    for (li, post) in trace.post.iter().enumerate() {
        for i in 0..n {
            g.set(i, li, linf_norm(post.row(i)));
        }
    }
    g
}

/// Sums per-layer goodness over the included layers (1-based indices).
pub fn aggregate_goodness(per_layer: &Mat, included: &[usize]) -> Result<Vec<f64>> {
    for &l in included {
        if l == 0 || l > per_layer.cols() {
            return Err(Error::Domain(format!(
                "layer {l} outside 1..={}",
                per_layer.cols()
            )));
        }
    }
    Ok((0..per_layer.rows())
        .map(|i| included.iter().map(|&l| per_layer.get(i, l - 1)).sum())
        .collect())
}

fn write_layer(w: &mut impl Write, layer: &Layer) -> Result<()> {
    w.write_all(&(layer.fan_out() as u32).to_le_bytes())?;
    w.write_all(&(layer.fan_in() as u32).to_le_bytes())?;
    // stored row-major (fan_out x fan_in): unit-major, matching per-unit reads
    for j in 0..layer.fan_out() {
        for i in 0..layer.fan_in() {
            w.write_all(&(layer.w.get(i, j) as f32).to_le_bytes())?;
        }
    }
    for &b in &layer.b {
        w.write_all(&(b as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_or_len(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Length(format!("checkpoint ends inside {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_len(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_layer(r: &mut impl Read) -> Result<Layer> {
    let fan_out = read_u32(r, "layer rows")? as usize;
    let fan_in = read_u32(r, "layer cols")? as usize;
    if fan_out == 0 || fan_in == 0 {
        return Err(Error::Format(format!("degenerate layer {fan_out}x{fan_in}")));
    }
    let mut wbuf = vec![0u8; fan_out * fan_in * 4];
    read_exact_or_len(r, &mut wbuf, "weights")?;
    let mut w = Mat::zeros(fan_in, fan_out);
    for j in 0..fan_out {
        for i in 0..fan_in {
            let off = (j * fan_in + i) * 4;
            let v = f32::from_le_bytes([wbuf[off], wbuf[off + 1], wbuf[off + 2], wbuf[off + 3]]);
            w.set(i, j, v as f64);
        }
    }
    let mut bbuf = vec![0u8; fan_out * 4];
    read_exact_or_len(r, &mut bbuf, "bias")?;
    let b = bbuf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Layer { w, b })
}

/// Serializes parameters. Payload is f32; in-memory values are already on the
/// f32 lattice, so saving then loading reproduces them exactly.
pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    params.validate_chain()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(params.layers.len() as u32).to_le_bytes())?;
    for layer in &params.layers {
        write_layer(&mut w, layer)?;
    }
    w.write_all(&[params.head.is_some() as u8])?;
    if let Some(h) = &params.head {
        write_layer(&mut w, h)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_len(&mut r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:02x?}")));
    }
    let n_layers = read_u32(&mut r, "layer count")? as usize;
    if n_layers == 0 {
        return Err(Error::Format("checkpoint has zero layers".into()));
    }
    let layers = (0..n_layers).map(|_| read_layer(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut flag = [0u8; 1];
    read_exact_or_len(&mut r, &mut flag, "head flag")?;
    let head = match flag[0] {
        0 => None,
        1 => Some(read_layer(&mut r)?),
        x => return Err(Error::Format(format!("head flag {x}"))),
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let params = NetworkParams { layers, head };
    params.validate_chain()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice_ok(m: &Mat) -> bool {
        m.data().iter().all(|&v| v == to_f32_lattice(v))
    }

    #[test]
    fn init_ranges_and_determinism() {
        let p = init_params(&[784, 784, 784, 784], None, 5).unwrap();
        assert_eq!(p.layers.len(), 3);
        assert!(p.head.is_none());
        let bound = 1.0 / (784.0_f64).sqrt();
        for layer in &p.layers {
            assert!(layer.b.iter().all(|&b| b == 0.0));
            assert!(layer.w.data().iter().all(|&w| w.abs() < bound));
            assert!(lattice_ok(&layer.w));
            // not degenerate
            assert!(layer.w.data().iter().any(|&w| w.abs() > bound / 10.0));
        }
        let q = init_params(&[784, 784, 784, 784], None, 5).unwrap();
        assert_eq!(p, q);
        let r = init_params(&[784, 784, 784, 784], None, 6).unwrap();
        assert_ne!(p, r);

        let h = init_params(&[64, 8, 8], Some(10), 1).unwrap();
        let head = h.head.unwrap();
        assert_eq!(head.fan_in(), 8);
        assert_eq!(head.fan_out(), 10);

        assert!(matches!(init_params(&[784], None, 0), Err(Error::Domain(_))));
        assert!(matches!(init_params(&[784, 0, 3], None, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn linf_examples_and_properties() {
        assert_eq!(linf_norm(&[0.2, 0.9, 0.5]), 0.9);
        assert_eq!(linf_norm(&[-0.7, 0.3]), 0.7);
        assert_eq!(linf_norm(&[]), 0.0);
        // brute scan oracle
        let v: Vec<f64> = (0..100).map(|i| ((i * 37 % 100) as f64 - 50.0) / 7.0).collect();
        let brute = v.iter().map(|x| x.abs()).fold(0.0_f64, f64::max);
        assert_eq!(linf_norm(&v), brute);
    }

    #[test]
    fn normalize_rows_unit_peak_and_zero_guard() {
        let m = Mat::from_vec(2, 3, vec![0.2, 0.9, 0.5, 0.0, 0.0, 0.0]);
        let n = normalize_rows(&m);
        assert!((n.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((n.get(0, 0) - 0.2 / 0.9).abs() < 1e-15);
        // zero row: divisor clamps to NORM_EPS, row stays zero
        assert_eq!(n.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn sigmoid_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn zero_weights_forward() {
        let mut p = init_params(&[12, 5, 5], None, 0).unwrap();
        for l in &mut p.layers {
            l.w.data_mut().fill(0.0);
        }
        let x = Mat::from_fn(3, 12, |i, j| (i + j) as f64 / 20.0);
        let t = forward_ff_batch(&p, &x).unwrap();
        for l in 0..2 {
            assert!(t.post[l].data().iter().all(|&v| v == 0.5));
            assert!(t.out[l].data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        // 2 inputs -> 2 units, hand-wired
        let layer = Layer {
            w: Mat::from_vec(2, 2, vec![0.1, -0.2, 0.3, 0.4]),
            b: vec![0.05, -0.05],
        };
        let p = NetworkParams { layers: vec![layer], head: None };
        let x = Mat::from_vec(1, 2, vec![1.0, 0.5]);
        let t = forward_ff_batch(&p, &x).unwrap();
        for j in 0..2 {
            let z = 1.0 * p.layers[0].w.get(0, j) + 0.5 * p.layers[0].w.get(1, j) + p.layers[0].b[j];
            let s = 1.0 / (1.0 + (-z).exp());
            assert!((t.pre[0].get(0, j) - z).abs() < 1e-15);
            assert!((t.post[0].get(0, j) - s).abs() < 1e-15);
        }
    }

    #[test]
    fn batched_equals_per_sample_bitwise() {
        let p = init_params(&[40, 17, 13, 11], None, 9).unwrap();
        let x = Mat::from_fn(8, 40, |i, j| ((i * 41 + j * 7) % 100) as f64 / 100.0);
        let full = forward_ff_batch(&p, &x).unwrap();
        for i in 0..x.rows() {
            let one = forward_ff_batch(&p, &Mat::from_vec(1, 40, x.row(i).to_vec())).unwrap();
            for l in 0..3 {
                for (a, b) in full.post[l].row(i).iter().zip(one.post[l].row(0)) {
                    assert_eq!(a.to_bits(), b.to_bits(), "layer {l} row {i}");
                }
                for (a, b) in full.out[l].row(i).iter().zip(one.out[l].row(0)) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn goodness_is_max_post_sigmoid() {
        let p = init_params(&[6, 4, 4], None, 2).unwrap();
        let x = Mat::from_fn(5, 6, |i, j| ((i + 2 * j) % 7) as f64 / 7.0);
        let t = forward_ff_batch(&p, &x).unwrap();
        let g = layer_goodness(&t);
        assert_eq!(g.rows(), 5);
        assert_eq!(g.cols(), 2);
        for i in 0..5 {
            for l in 0..2 {
                let brute = t.post[l].row(i).iter().cloned().fold(0.0_f64, f64::max);
                assert_eq!(g.get(i, l), brute);
            }
        }
        let agg = aggregate_goodness(&g, &[1, 2]).unwrap();
        for i in 0..5 {
            assert!((agg[i] - (g.get(i, 0) + g.get(i, 1))).abs() < 1e-15);
        }
        let only2 = aggregate_goodness(&g, &[2]).unwrap();
        assert_eq!(only2[3], g.get(3, 1));
        assert!(matches!(aggregate_goodness(&g, &[0]), Err(Error::Domain(_))));
        assert!(matches!(aggregate_goodness(&g, &[3]), Err(Error::Domain(_))));
    }

    #[test]
    fn head_forward_and_missing_head() {
        let p = init_params(&[10, 6, 6], Some(4), 3).unwrap();
        let x = Mat::from_fn(3, 10, |i, j| (i * j % 5) as f64 / 5.0);
        let (t, logits) = forward_bp_batch(&p, &x, true).unwrap();
        assert_eq!(logits.rows(), 3);
        assert_eq!(logits.cols(), 4);
        // head consumed the normalized last layer
        let head = p.head.as_ref().unwrap();
        let mut z = 0.0;
        for i in 0..6 {
            z += t.out[1].get(0, i) * head.w.get(i, 0);
        }
        z += head.b[0];
        assert!((logits.get(0, 0) - z).abs() < 1e-12);

        let no_head = init_params(&[10, 6, 6], None, 3).unwrap();
        assert!(matches!(forward_bp_batch(&no_head, &x, true), Err(Error::State(_))));
    }

    #[test]
    fn forward_rejects_bad_width() {
        let p = init_params(&[10, 6, 6], None, 3).unwrap();
        let x = Mat::zeros(2, 9);
        assert!(matches!(forward_ff_batch(&p, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn unnormalized_trace_feeds_post() {
        let p = init_params(&[8, 5, 5], None, 4).unwrap();
        let x = Mat::from_fn(2, 8, |i, j| (i + j) as f64 / 10.0);
        let t = forward_hidden(&p, &x, false).unwrap();
        assert_eq!(t.post[0].data(), t.out[0].data());
        assert!(!t.normalized);
    }

    #[test]
    fn checkpoint_roundtrip_bitwise_and_deterministic_bytes() {
        let dir = tempfile::tempdir().unwrap();
        for head in [None, Some(7)] {
            let p = init_params(&[30, 12, 9], head, 11).unwrap();
            let path = dir.path().join(format!("h{}.ffc", head.is_some() as u8));
            save_checkpoint(&p, &path).unwrap();
            let q = load_checkpoint(&path).unwrap();
            assert_eq!(p.layers.len(), q.layers.len());
            for (a, b) in p.layers.iter().zip(&q.layers) {
                for (x, y) in a.w.data().iter().zip(b.w.data()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
                assert_eq!(a.b, b.b);
            }
            assert_eq!(p.head.is_some(), q.head.is_some());

            let path2 = dir.path().join("again.ffc");
            save_checkpoint(&q, &path2).unwrap();
            assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        }
    }

    #[test]
    fn checkpoint_error_classes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ffc");

        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Length(_) | Error::Format(_))));

        std::fs::write(&path, b"FFC1\x01\x00\x00\x00").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Length(_))));

        // valid file, then truncate the tail
        let p = init_params(&[20, 8, 8], None, 1).unwrap();
        save_checkpoint(&p, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Length(_))));

        // trailing garbage
        let mut long = bytes.clone();
        long.push(0);
        std::fs::write(&path, &long).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}
