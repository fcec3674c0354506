//! Batch gradients for the three objectives.
//!
//! Layer-local goodness gradients are sparse: a sample's loss sees one unit,
//! the argmax (first index on ties), so only that unit's column moves.
//! End-to-end variants also differentiate through the inter-layer
//! normalization y = a / M with M = max(linf(a), NORM_EPS):
//!   dL/da_j   = dy_j / M                 for j != kmax
//!   dL/da_kmax = dy_kmax / M - (dy . a) / M^2
//! where kmax is the argmax used for M (when M > NORM_EPS; otherwise the
//! division is by the constant floor and no kmax term exists).

use crate::error::Result;
use crate::mat::{matmul_bt, tmatmul, Mat};
use crate::network::{layer_forward, Layer, NetworkParams, NORM_EPS};
use crate::training::loss::{goodness_loss, goodness_loss_grad, softmax_ce_sum};

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub dw: Mat,
    pub db: Vec<f64>,
}

impl LayerGrad {
    fn zeros_like(layer: &Layer) -> Self {
        LayerGrad { dw: Mat::zeros(layer.fan_in(), layer.fan_out()), db: vec![0.0; layer.fan_out()] }
    }

    fn scale(&mut self, f: f64) {
        for v in self.dw.data_mut() {
            *v *= f;
        }
        for v in &mut self.db {
            *v *= f;
        }
    }

    fn add(&mut self, other: &LayerGrad) {
        for (a, b) in self.dw.data_mut().iter_mut().zip(other.dw.data()) {
            *a += b;
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradSet {
    pub layers: Vec<LayerGrad>,
    pub head: Option<LayerGrad>,
}

impl GradSet {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        GradSet {
            layers: params.layers.iter().map(LayerGrad::zeros_like).collect(),
            head: params.head.as_ref().map(LayerGrad::zeros_like),
        }
    }

    pub fn scale(&mut self, f: f64) {
        for l in &mut self.layers {
            l.scale(f);
        }
        if let Some(h) = &mut self.head {
            h.scale(f);
        }
    }

    pub fn add(&mut self, other: &GradSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add(b);
        }
        if let (Some(a), Some(b)) = (&mut self.head, &other.head) {
            a.add(b);
        }
    }
}

/// First index of the row maximum.
#[inline]
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Running sums a goodness phase reports per epoch.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseStats {
    pub loss_sum: f64,
    pub pos_g_sum: f64,
    pub neg_g_sum: f64,
    pub pos_count: usize,
    pub neg_count: usize,
}

impl PhaseStats {
    pub fn absorb(&mut self, o: PhaseStats) {
        self.loss_sum += o.loss_sum;
        self.pos_g_sum += o.pos_g_sum;
        self.neg_g_sum += o.neg_g_sum;
        self.pos_count += o.pos_count;
        self.neg_count += o.neg_count;
    }
}

/// One layer-local goodness pass over a chunk: forwards the chunk through the
/// layer, adds d(sum loss)/dparams into `grad`, and reports the sums.
pub fn ff_layer_chunk(
    layer: &Layer,
    grad: &mut LayerGrad,
    x: &Mat,
    positive: bool,
    theta: f64,
) -> Result<PhaseStats> {
    let (_, post) = layer_forward(layer, x)?;
    let mut stats = PhaseStats::default();
    let fan_out = layer.fan_out();
    for i in 0..x.rows() {
        let row = post.row(i);
        let jstar = argmax(row);
        let g = row[jstar];
        stats.loss_sum += goodness_loss(g, positive, theta);
        if positive {
            stats.pos_g_sum += g;
            stats.pos_count += 1;
        } else {
            stats.neg_g_sum += g;
            stats.neg_count += 1;
        }
        let delta = goodness_loss_grad(g, positive, theta) * g * (1.0 - g);
        let xrow = x.row(i);
        let dw = grad.dw.data_mut();
        for (ii, &xv) in xrow.iter().enumerate() {
            dw[ii * fan_out + jstar] += delta * xv;
        }
        grad.db[jstar] += delta;
    }
    Ok(stats)
}

/// Backward through y = a / max(linf(a), NORM_EPS) for every row.
/// `dy` is consumed and returned as da.
fn normalization_backward(mut dy: Mat, a: &Mat) -> Mat {
    for i in 0..a.rows() {
        let arow = a.row(i);
        let kmax = argmax_abs(arow);
        let m = arow[kmax].abs();
        let dyrow = dy.row_mut(i);
        if m <= NORM_EPS {
            for v in dyrow.iter_mut() {
                *v /= NORM_EPS;
            }
        } else {
            let dot: f64 = dyrow.iter().zip(arow).map(|(d, x)| d * x).sum();
            let inv = 1.0 / m;
            for v in dyrow.iter_mut() {
                *v *= inv;
            }
            // d/da_kmax of (1/M): the peak scales every output down
            dyrow[kmax] -= dot * inv * inv * arow[kmax].signum();
        }
    }
    dy
}

#[inline]
fn argmax_abs(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate().skip(1) {
        if v.abs() > row[best].abs() {
            best = j;
        }
    }
    best
}

/// dz = da elementwise-times sigmoid'(z), expressed through post = sigmoid(z).
fn sigmoid_backward(mut da: Mat, post: &Mat) -> Mat {
    for (d, &p) in da.data_mut().iter_mut().zip(post.data()) {
        *d *= p * (1.0 - p);
    }
    da
}

fn accumulate_linear(grad: &mut LayerGrad, x: &Mat, dz: &Mat) {
    let dw = tmatmul(x, dz);
    for (a, b) in grad.dw.data_mut().iter_mut().zip(dw.data()) {
        *a += b;
    }
    for i in 0..dz.rows() {
        for (b, &d) in grad.db.iter_mut().zip(dz.row(i)) {
            *b += d;
        }
    }
}

/// End-to-end goodness pass over a chunk. With `per_layer_loss` false the
/// objective is softplus(-s * (sum_l g_l - L*theta)) over the included
/// layers; with it true, sum_l softplus(-s * (g_l - theta)).
#[allow(clippy::too_many_arguments)]
pub fn bpff_chunk(
    params: &NetworkParams,
    grad: &mut GradSet,
    x: &Mat,
    positive: bool,
    theta: f64,
    included: &[usize],
    per_layer_loss: bool,
) -> Result<PhaseStats> {
    let trace = crate::network::forward_ff_batch(params, x)?;
    let n_layers = params.layers.len();
    let n = x.rows();
    let mut stats = PhaseStats::default();

    // per-sample goodness per layer, plus the loss terms
    let mut gstars: Vec<Vec<usize>> = Vec::with_capacity(n_layers);
    let mut gvals = Mat::zeros(n, n_layers);
    for l in 0..n_layers {
        let mut stars = Vec::with_capacity(n);
        for i in 0..n {
            let row = trace.post[l].row(i);
            let j = argmax(row);
            stars.push(j);
            gvals.set(i, l, row[j]);
        }
        gstars.push(stars);
    }

    let theta_sum = theta * included.len() as f64;
    let mut dg = Mat::zeros(n, n_layers);
    for i in 0..n {
        let gsum: f64 = included.iter().map(|&l| gvals.get(i, l - 1)).sum();
        if positive {
            stats.pos_g_sum += gsum;
            stats.pos_count += 1;
        } else {
            stats.neg_g_sum += gsum;
            stats.neg_count += 1;
        }
        if per_layer_loss {
            for &l in included {
                let g = gvals.get(i, l - 1);
                stats.loss_sum += goodness_loss(g, positive, theta);
                dg.set(i, l - 1, goodness_loss_grad(g, positive, theta));
            }
        } else {
            stats.loss_sum += goodness_loss(gsum, positive, theta_sum);
            let d = goodness_loss_grad(gsum, positive, theta_sum);
            for &l in included {
                dg.set(i, l - 1, d);
            }
        }
    }

    // top-down
    let mut dy: Option<Mat> = None;
    for l in (0..n_layers).rev() {
        let mut da = match dy.take() {
            Some(d) => normalization_backward(d, &trace.post[l]),
            None => Mat::zeros(n, params.layers[l].fan_out()),
        };
        for i in 0..n {
            let d = dg.get(i, l);
            if d != 0.0 {
                let j = gstars[l][i];
                *da.row_mut(i).get_mut(j).unwrap() += d;
            }
        }
        let dz = sigmoid_backward(da, &trace.post[l]);
        let input = if l == 0 { x } else { &trace.out[l - 1] };
        accumulate_linear(&mut grad.layers[l], input, &dz);
        if l > 0 {
            dy = Some(matmul_bt(&dz, &params.layers[l].w));
        }
    }
    Ok(stats)
}

/// Softmax-classifier pass over a chunk: adds d(sum CE)/dparams, returns
/// (sum loss, rows). `normalize` must match the forward convention the
/// network is trained and evaluated with.
pub fn bp_chunk(
    params: &NetworkParams,
    grad: &mut GradSet,
    x: &Mat,
    labels: &[u8],
    normalize: bool,
) -> Result<(f64, usize)> {
    let (trace, logits) = crate::network::forward_bp_batch(params, x, normalize)?;
    let (loss_sum, dlogits) = softmax_ce_sum(&logits, labels)?;
    let n_layers = params.layers.len();
    let head = grad.head.as_mut().expect("bp grad needs a head");
    let hin = &trace.out[n_layers - 1];
    accumulate_linear(head, hin, &dlogits);

    let head_w = &params.head.as_ref().expect("params head").w;
    let mut dy = Some(matmul_bt(&dlogits, head_w));
    for l in (0..n_layers).rev() {
        let da = if normalize {
            normalization_backward(dy.take().unwrap(), &trace.post[l])
        } else {
            dy.take().unwrap()
        };
        let dz = sigmoid_backward(da, &trace.post[l]);
        let input = if l == 0 { x } else { &trace.out[l - 1] };
        accumulate_linear(&mut grad.layers[l], input, &dz);
        if l > 0 {
            dy = Some(matmul_bt(&dz, &params.layers[l].w));
        }
    }
    Ok((loss_sum, x.rows()))
}
