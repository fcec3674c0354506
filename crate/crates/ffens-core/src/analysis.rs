//! Ensemble detection over internal representations.
//!
//! Representations are post-sigmoid activations captured before inter-layer
//! normalization, restricted to correctly classified test images and grouped
//! by true category. Two detectors work over the column statistics of those
//! matrices: `method1` thresholds column medians at a quantile of the whole
//! matrix; `method2` isolates high-mean outlier columns in a
//! (mean, higher-count, density) diagram.

use std::io::Write;

use serde::Serialize;

use crate::data::{embed_label, embed_with_label_batch, Dataset};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::network::{forward_bp_batch, forward_ff_batch, NetworkParams};
use crate::training::{chunk_ranges, ModelKind};

/// Activations of one layer for one category, one row per test image.
#[derive(Debug, Clone)]
pub struct RepresentationMatrix {
    /// m correctly-classified images x n units, values in (0,1).
    pub x: Mat,
    pub category: u8,
    /// 1-based hidden layer index.
    pub layer: usize,
}

impl RepresentationMatrix {
    pub fn samples(&self) -> usize {
        self.x.rows()
    }

    pub fn units(&self) -> usize {
        self.x.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectionMethod {
    /// Column median strictly above a quantile of the flattened matrix.
    MedianQuantile { q: f64 },
    /// High-mean outliers: few columns above, low local density of means.
    MeanDensity { eps: f64, rho_max: f64, nh_max: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct Ensemble {
    pub category: u8,
    pub layer: usize,
    /// Active unit indices, unique and ascending.
    pub units: Vec<usize>,
    /// Per-unit statistic, parallel to `units`: the column median for
    /// MedianQuantile, the column mean for MeanDensity.
    pub unit_stats: Vec<f64>,
    pub method: DetectionMethod,
}

impl Ensemble {
    pub fn size(&self) -> usize {
        self.units.len()
    }
}

/// One column's coordinates in the mean/higher-count/density diagram.
#[derive(Debug, Clone, Serialize)]
pub struct NeuronDensityPoint {
    pub neuron: usize,
    pub mean: f64,
    pub n_h: usize,
    pub rho: f64,
}

/// Forwards the test set and groups per-layer post-sigmoid activations of the
/// correctly classified samples by true category. Goodness-trained models see
/// each image embedded with its true label; the softmax model sees it raw.
/// Outer index: layer-1; inner: category. A category with no correct samples
/// yields an empty matrix, which downstream detectors reject.
pub fn build_representations(
    params: &NetworkParams,
    ds: &Dataset,
    correct_mask: &[bool],
    model: ModelKind,
    bp_normalize: bool,
    chunk_rows: usize,
) -> Result<Vec<Vec<RepresentationMatrix>>> {
    if correct_mask.len() != ds.len() {
        return Err(Error::Consistency(format!(
            "mask covers {} samples, set has {}",
            correct_mask.len(),
            ds.len()
        )));
    }
    let c = ds.num_classes;
    let mut counts = vec![0usize; c];
    for (i, &ok) in correct_mask.iter().enumerate() {
        if ok {
            counts[ds.labels[i] as usize] += 1;
        }
    }
    let mut reps: Vec<Vec<RepresentationMatrix>> = params
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            (0..c)
                .map(|cat| RepresentationMatrix {
                    x: Mat::zeros(counts[cat], layer.fan_out()),
                    category: cat as u8,
                    layer: l + 1,
                })
                .collect()
        })
        .collect();
    let mut cursor = vec![0usize; c];
    for (s, e) in chunk_ranges(ds.len(), chunk_rows) {
        let chunk = ds.images.rows_range(s, e);
        let trace = match model {
            ModelKind::Ff | ModelKind::BpFf => {
                let mut embedded = chunk;
                for i in 0..embedded.rows() {
                    embed_label(embedded.row_mut(i), ds.labels[s + i], c)?;
                }
                forward_ff_batch(params, &embedded)?
            }
            ModelKind::Bp => forward_bp_batch(params, &chunk, bp_normalize)?.0,
        };
        for i in 0..e - s {
            if !correct_mask[s + i] {
                continue;
            }
            let cat = ds.labels[s + i] as usize;
            for (l, post) in trace.post.iter().enumerate() {
                reps[l][cat].x.row_mut(cursor[cat]).copy_from_slice(post.row(i));
            }
            cursor[cat] += 1;
        }
    }
    Ok(reps)
}

/// Median with the even-count convention of averaging the two middles.
fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        (values[m / 2 - 1] + values[m / 2]) / 2.0
    }
}

/// Nearest-rank quantile of the values: the ceil(q*N)-th smallest.
fn nearest_rank_quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (q * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

/// Median-threshold detector: a unit is active iff its column median is
/// strictly above the nearest-rank q-quantile of the flattened matrix.
pub fn method1(rep: &RepresentationMatrix, q: f64) -> Result<Ensemble> {
    if rep.samples() == 0 || rep.units() == 0 {
        return Err(Error::Domain(format!("empty representation for category {}", rep.category)));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!("quantile {q} outside (0, 1]")));
    }
    let threshold = nearest_rank_quantile(&mut rep.x.data().to_vec(), q);
    let mut units = Vec::new();
    let mut unit_stats = Vec::new();
    let mut col = vec![0.0; rep.samples()];
    for j in 0..rep.units() {
        for i in 0..rep.samples() {
            col[i] = rep.x.get(i, j);
        }
        let med = median(&mut col);
        if med > threshold {
            units.push(j);
            unit_stats.push(med);
        }
    }
    Ok(Ensemble {
        category: rep.category,
        layer: rep.layer,
        units,
        unit_stats,
        method: DetectionMethod::MedianQuantile { q },
    })
}

/// Density-outlier detector over column means. For unit j with mean m_j:
/// n_h = #{k != j : m_k > m_j}, rho = #{k : |m_k - m_j| <= eps} / d where
/// d = 2*eps, shrunk to eps + min(eps, 1 - m_j) when the window would pass 1
/// so densities near the ceiling stay comparable. Active iff rho < rho_max
/// and n_h < nh_max. All diagram points are returned for export.
pub fn method2(
    rep: &RepresentationMatrix,
    eps: f64,
    rho_max: f64,
    nh_max: usize,
) -> Result<(Ensemble, Vec<NeuronDensityPoint>)> {
    if rep.samples() == 0 || rep.units() == 0 {
        return Err(Error::Domain(format!("empty representation for category {}", rep.category)));
    }
    if eps <= 0.0 {
        return Err(Error::Domain(format!("window {eps} not positive")));
    }
    let n = rep.units();
    let m = rep.samples() as f64;
    let means: Vec<f64> = (0..n)
        .map(|j| (0..rep.samples()).map(|i| rep.x.get(i, j)).sum::<f64>() / m)
        .collect();
    let mut units = Vec::new();
    let mut unit_stats = Vec::new();
    let mut points = Vec::with_capacity(n);
    for j in 0..n {
        let n_h = means.iter().filter(|&&v| v > means[j]).count();
        let in_window = means.iter().filter(|&&v| (v - means[j]).abs() <= eps).count();
        let divisor =
            if means[j] + eps > 1.0 { eps + eps.min(1.0 - means[j]) } else { 2.0 * eps };
        let rho = in_window as f64 / divisor;
        if rho < rho_max && n_h < nh_max {
            units.push(j);
            unit_stats.push(means[j]);
        }
        points.push(NeuronDensityPoint { neuron: j, mean: means[j], n_h, rho });
    }
    Ok((
        Ensemble {
            category: rep.category,
            layer: rep.layer,
            units,
            unit_stats,
            method: DetectionMethod::MeanDensity { eps, rho_max, nh_max },
        },
        points,
    ))
}

/// Units active for both categories. Errors when layers differ.
pub fn shared_units(a: &Ensemble, b: &Ensemble) -> Result<(Vec<usize>, usize)> {
    if a.layer != b.layer {
        return Err(Error::Domain(format!("layer {} vs {}", a.layer, b.layer)));
    }
    let set: Vec<usize> = a.units.iter().copied().filter(|u| b.units.contains(u)).collect();
    let count = set.len();
    Ok((set, count))
}

/// Pairwise shared-unit counts; diagonal holds ensemble sizes.
pub fn overlap_matrix(ensembles: &[Ensemble]) -> Result<Vec<Vec<usize>>> {
    let c = ensembles.len();
    let mut out = vec![vec![0usize; c]; c];
    for i in 0..c {
        for j in 0..c {
            out[i][j] = shared_units(&ensembles[i], &ensembles[j])?.1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub layer: usize,
    pub category: u8,
    /// Units the density detector marks active for the held-out category.
    pub units: Vec<usize>,
    pub unit_means: Vec<f64>,
    /// Mean activity over the detected units; null when none were found.
    pub unseen_mean_activity: Option<f64>,
    /// Mean activity over every unit of the seen-category ensembles.
    pub seen_mean_activity: Option<f64>,
    /// unseen_mean_activity / seen_mean_activity.
    pub activity_ratio: Option<f64>,
    pub points: Vec<NeuronDensityPoint>,
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Asks whether a network trained without one category still dedicates units
/// to it. Every held-out sample is embedded with the held-out label (no
/// correctness filter is possible for an untrained class), forwarded, and the
/// density detector is run on the seen ensembles' layer. The report compares
/// mean activity of the detected units against the seen ensembles' units.
pub fn unseen_category_probe(
    params: &NetworkParams,
    held_out: &Dataset,
    seen: &[Ensemble],
    eps: f64,
    rho_max: f64,
    nh_max: usize,
    chunk_rows: usize,
) -> Result<ProbeReport> {
    if held_out.is_empty() {
        return Err(Error::Domain("empty held-out set".into()));
    }
    let cat = held_out.labels[0];
    if held_out.labels.iter().any(|&l| l != cat) {
        return Err(Error::Consistency("held-out set mixes categories".into()));
    }
    let first = seen.first().ok_or_else(|| Error::Domain("no seen ensembles".into()))?;
    let layer = first.layer;
    if seen.iter().any(|e| e.layer != layer) {
        return Err(Error::Domain("seen ensembles span layers".into()));
    }
    if layer == 0 || layer > params.layers.len() {
        return Err(Error::Domain(format!("layer {layer} outside the network")));
    }
    let mut x = Mat::zeros(held_out.len(), params.layers[layer - 1].fan_out());
    for (s, e) in chunk_ranges(held_out.len(), chunk_rows) {
        let chunk = held_out.images.rows_range(s, e);
        let embedded = embed_with_label_batch(&chunk, cat, held_out.num_classes)?;
        let trace = forward_ff_batch(params, &embedded)?;
        x.copy_rows_from(s, &trace.post[layer - 1]);
    }
    let rep = RepresentationMatrix { x, category: cat, layer };
    let (ensemble, points) = method2(&rep, eps, rho_max, nh_max)?;
    let unseen_mean = mean_of(&ensemble.unit_stats);
    let seen_stats: Vec<f64> = seen.iter().flat_map(|e| e.unit_stats.iter().copied()).collect();
    let seen_mean = mean_of(&seen_stats);
    let ratio = match (unseen_mean, seen_mean) {
        (Some(u), Some(s)) if s != 0.0 => Some(u / s),
        _ => None,
    };
    Ok(ProbeReport {
        layer,
        category: cat,
        units: ensemble.units,
        unit_means: ensemble.unit_stats,
        unseen_mean_activity: unseen_mean,
        seen_mean_activity: seen_mean,
        activity_ratio: ratio,
        points,
    })
}

/// Fraction of strictly positive weights per hidden layer, biases excluded.
pub fn positive_weight_fraction(params: &NetworkParams) -> Vec<f64> {
    params
        .layers
        .iter()
        .map(|layer| {
            let pos = layer.w.data().iter().filter(|&&w| w > 0.0).count();
            pos as f64 / layer.w.data().len() as f64
        })
        .collect()
}

/// Per-unit fraction of strictly negative incoming weights (1-based layer).
pub fn negative_fractions(params: &NetworkParams, layer: usize) -> Result<Vec<f64>> {
    if layer == 0 || layer > params.layers.len() {
        return Err(Error::Domain(format!("layer {layer} outside the network")));
    }
    let l = &params.layers[layer - 1];
    Ok((0..l.fan_out())
        .map(|j| {
            let neg = (0..l.fan_in()).filter(|&i| l.w.get(i, j) < 0.0).count();
            neg as f64 / l.fan_in() as f64
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    /// bins+1 edges spanning [0, 1].
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Histogram over units of the per-unit negative-incoming-weight fraction.
pub fn negative_fraction_histogram(
    params: &NetworkParams,
    layer: usize,
    bins: usize,
) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Domain("zero histogram bins".into()));
    }
    let fractions = negative_fractions(params, layer)?;
    let edges: Vec<f64> = (0..=bins).map(|b| b as f64 / bins as f64).collect();
    let mut counts = vec![0usize; bins];
    for f in fractions {
        // fraction 1.0 belongs to the last bin, not a phantom one past it
        let b = ((f * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Ordinary least squares of median-threshold sizes (y) against
/// density-outlier sizes (x), paired per (model, dataset, layer, category).
pub fn compare_methods(m1_sizes: &[usize], m2_sizes: &[usize]) -> Result<(f64, f64)> {
    if m1_sizes.len() != m2_sizes.len() {
        return Err(Error::Consistency(format!(
            "{} vs {} sizes",
            m1_sizes.len(),
            m2_sizes.len()
        )));
    }
    let n = m1_sizes.len();
    if n < 2 {
        return Err(Error::Domain(format!("{n} points cannot fix a line")));
    }
    let xs: Vec<f64> = m2_sizes.iter().map(|&v| v as f64).collect();
    let ys: Vec<f64> = m1_sizes.iter().map(|&v| v as f64).collect();
    let xm = xs.iter().sum::<f64>() / n as f64;
    let ym = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("degenerate regressor: all x equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    Ok((slope, ym - slope * xm))
}

/// One ensemble-size observation for the cross-experiment JSON summary.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSizeRecord {
    pub model: String,
    pub dataset: String,
    pub seed: u64,
    pub layer: usize,
    pub category: u8,
    pub method: String,
    pub size: usize,
}

/// Activation map, one CSV row per test image, unit-indexed header.
pub fn write_activation_csv(rep: &RepresentationMatrix, w: &mut impl Write) -> Result<()> {
    let header: Vec<String> = (0..rep.units()).map(|j| format!("u{j}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..rep.samples() {
        let row: Vec<String> = rep.x.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Decision-diagram points as CSV.
pub fn write_density_csv(points: &[NeuronDensityPoint], w: &mut impl Write) -> Result<()> {
    writeln!(w, "neuron,mean,n_h,rho")?;
    for p in points {
        writeln!(w, "{},{},{},{}", p.neuron, p.mean, p.n_h, p.rho)?;
    }
    Ok(())
}

/// Square shared-unit-count matrix as CSV. `cats` names row i and column i;
/// the positions need not be contiguous category ids.
pub fn write_overlap_csv(cats: &[u8], matrix: &[Vec<usize>], w: &mut impl Write) -> Result<()> {
    if cats.len() != matrix.len() {
        return Err(Error::Consistency(format!(
            "{} category labels for a {}-row matrix",
            cats.len(),
            matrix.len()
        )));
    }
    let header: Vec<String> = std::iter::once("category".to_string())
        .chain(cats.iter().map(|c| c.to_string()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (i, row) in matrix.iter().enumerate() {
        let cells: Vec<String> = std::iter::once(cats[i].to_string())
            .chain(row.iter().map(|v| v.to_string()))
            .collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}
