//! Procedural 28x28 grayscale category sets, for tests and offline smoke
//! runs when no real data directory is available.
//!
//! Two families: `digits` renders jittered pen strokes of the ten digit
//! shapes; `garments` renders filled clothing silhouettes where categories
//! 0 (tee), 2 (pullover), 4 (coat) and 6 (shirt) share one parameterized
//! torso template, so 0 and 6 are near neighbours by construction. Images
//! are quantized to bytes exactly like the on-disk IDX form, so a set
//! written with `write_*` and loaded back equals the in-memory one.
//!
//! Everything derives from (seed, tag) streams; the same call is the same
//! data on every platform.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::data::{write_idx_images, write_idx_labels, Dataset};
use crate::error::Result;
use crate::mat::Mat;
use crate::rng;

pub const SIDE: usize = 28;
const DIM: usize = SIDE * SIDE;
// drawing box inside the frame, content stays clear of the label corner
const BOX_LO: f64 = 3.5;
const BOX_SPAN: f64 = 21.0;

type Pt = (f64, f64);

fn ring(cx: f64, cy: f64, rx: f64, ry: f64) -> Vec<Pt> {
    let n = 14;
    let mut pts: Vec<Pt> = (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64 * std::f64::consts::TAU;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect();
    pts[n] = pts[0];
    pts
}

fn digit_strokes(d: u8) -> Vec<Vec<Pt>> {
    match d {
        0 => vec![ring(0.5, 0.5, 0.26, 0.37)],
        1 => vec![vec![(0.36, 0.26), (0.55, 0.1), (0.55, 0.9)]],
        2 => vec![vec![
            (0.26, 0.3),
            (0.32, 0.14),
            (0.52, 0.08),
            (0.7, 0.16),
            (0.73, 0.33),
            (0.55, 0.52),
            (0.27, 0.85),
            (0.74, 0.85),
        ]],
        3 => vec![vec![
            (0.28, 0.18),
            (0.5, 0.09),
            (0.68, 0.2),
            (0.66, 0.36),
            (0.48, 0.47),
            (0.68, 0.58),
            (0.7, 0.75),
            (0.5, 0.9),
            (0.28, 0.8),
        ]],
        4 => vec![
            vec![(0.63, 0.08), (0.63, 0.92)],
            vec![(0.24, 0.12), (0.18, 0.58), (0.8, 0.58)],
        ],
        5 => vec![vec![
            (0.72, 0.12),
            (0.32, 0.12),
            (0.29, 0.45),
            (0.55, 0.42),
            (0.71, 0.55),
            (0.71, 0.73),
            (0.52, 0.89),
            (0.28, 0.82),
        ]],
        6 => vec![vec![
            (0.63, 0.08),
            (0.45, 0.28),
            (0.32, 0.52),
            (0.3, 0.72),
            (0.44, 0.89),
            (0.62, 0.83),
            (0.68, 0.66),
            (0.56, 0.52),
            (0.36, 0.58),
        ]],
        7 => vec![vec![(0.26, 0.12), (0.74, 0.12), (0.46, 0.9)]],
        8 => vec![ring(0.5, 0.3, 0.17, 0.17), ring(0.5, 0.67, 0.21, 0.21)],
        _ => vec![
            ring(0.52, 0.3, 0.18, 0.19),
            vec![(0.7, 0.34), (0.67, 0.6), (0.55, 0.9)],
        ],
    }
}

struct Affine {
    rot: f64,
    scale: f64,
    dx: f64,
    dy: f64,
    warp_amp: f64,
    warp_freq: f64,
    warp_phase: f64,
}

impl Affine {
    fn apply(&self, p: Pt) -> Pt {
        let (mut x, y) = p;
        x += self.warp_amp * (self.warp_freq * y + self.warp_phase).sin();
        let (cx, cy) = (x - 0.5, y - 0.5);
        let (s, c) = self.rot.sin_cos();
        let xr = (cx * c - cy * s) * self.scale + 0.5 + self.dx;
        let yr = (cx * s + cy * c) * self.scale + 0.5 + self.dy;
        (xr, yr)
    }
}

fn sample_affine(rng: &mut ChaCha12Rng, rot_range: f64) -> Affine {
    Affine {
        rot: rng.random_range(-rot_range..rot_range),
        scale: rng.random_range(0.85..1.08),
        dx: rng.random_range(-0.05..0.05),
        dy: rng.random_range(-0.05..0.05),
        warp_amp: rng.random_range(0.0..0.035),
        warp_freq: rng.random_range(3.0..9.0),
        warp_phase: rng.random_range(0.0..std::f64::consts::TAU),
    }
}

fn to_px(p: Pt) -> Pt {
    (BOX_LO + p.0 * BOX_SPAN, BOX_LO + p.1 * BOX_SPAN)
}

/// Stamps a soft pen dab, keeping the max ink per pixel.
fn stamp(ink: &mut [f64], px: f64, py: f64, sigma: f64) {
    let r = 2.2 * sigma;
    let x0 = ((px - r).floor().max(0.0)) as usize;
    let x1 = ((px + r).ceil().min((SIDE - 1) as f64)) as usize;
    let y0 = ((py - r).floor().max(0.0)) as usize;
    let y1 = ((py + r).ceil().min((SIDE - 1) as f64)) as usize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for iy in y0..=y1 {
        for ix in x0..=x1 {
            let d2 = (ix as f64 - px).powi(2) + (iy as f64 - py).powi(2);
            let v = (-d2 * inv).exp();
            let cell = &mut ink[iy * SIDE + ix];
            if v > *cell {
                *cell = v;
            }
        }
    }
}

fn draw_stroke(ink: &mut [f64], pts: &[Pt], aff: &Affine, sigma: f64, jitter: &[Pt]) {
    for seg in 0..pts.len().saturating_sub(1) {
        let a = (pts[seg].0 + jitter[seg].0, pts[seg].1 + jitter[seg].1);
        let b = (pts[seg + 1].0 + jitter[seg + 1].0, pts[seg + 1].1 + jitter[seg + 1].1);
        let (ax, ay) = to_px(aff.apply(a));
        let (bx, by) = to_px(aff.apply(b));
        let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
        let steps = (len / 0.3).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            stamp(ink, ax + t * (bx - ax), ay + t * (by - ay), sigma);
        }
    }
}

fn render_digit(d: u8, rng: &mut ChaCha12Rng) -> Vec<u8> {
    let mut ink = vec![0.0; DIM];
    let aff = sample_affine(rng, 0.2);
    let sigma = rng.random_range(0.8..1.35);
    let gain = rng.random_range(0.78..1.0);
    for stroke in digit_strokes(d) {
        let jitter: Vec<Pt> = stroke
            .iter()
            .map(|_| (rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03)))
            .collect();
        draw_stroke(&mut ink, &stroke, &aff, sigma, &jitter);
    }
    ink.iter().map(|&v| ((v * gain).clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

// --- garments ---

/// Shared torso template: sleeves end at (sleeve_x, sleeve_y), hem at hem_y,
/// neckline dips by `neck`. Categories 0/2/4/6 are all instances of this.
fn torso(sleeve_x: f64, sleeve_y: f64, hem_y: f64, neck: f64, flare: f64) -> Vec<Pt> {
    vec![
        (0.1, 0.2),
        (0.32, 0.12),
        (0.42, 0.12),
        (0.5, 0.12 + neck),
        (0.58, 0.12),
        (0.68, 0.12),
        (0.9, 0.2),
        (1.0 - sleeve_x, sleeve_y),
        (0.68, 0.34),
        (0.66 + flare, hem_y),
        (0.34 - flare, hem_y),
        (0.32, 0.34),
        (sleeve_x, sleeve_y),
    ]
}

struct GarmentSpec {
    poly: Vec<Pt>,
    extra_poly: Option<Vec<Pt>>,
    strokes: Vec<Vec<Pt>>,
    /// darkened vertical seam (x position), e.g. a coat opening
    seam: Option<f64>,
}

fn garment_spec(cat: u8) -> GarmentSpec {
    let none = GarmentSpec { poly: vec![], extra_poly: None, strokes: vec![], seam: None };
    match cat {
        // tee: short sleeves, visible neck dip
        0 => GarmentSpec { poly: torso(0.12, 0.38, 0.88, 0.07, 0.0), ..none },
        1 => GarmentSpec {
            poly: vec![
                (0.32, 0.08),
                (0.68, 0.08),
                (0.72, 0.92),
                (0.56, 0.92),
                (0.5, 0.38),
                (0.44, 0.92),
                (0.28, 0.92),
            ],
            ..none
        },
        // pullover: long sleeves, crew neck
        2 => GarmentSpec { poly: torso(0.07, 0.72, 0.88, 0.02, 0.0), ..none },
        3 => GarmentSpec {
            poly: vec![(0.38, 0.1), (0.62, 0.1), (0.58, 0.42), (0.79, 0.92), (0.21, 0.92), (0.42, 0.42)],
            ..none
        },
        // coat: long sleeves, long hem, open front
        4 => GarmentSpec { poly: torso(0.07, 0.8, 0.94, 0.02, 0.03), seam: Some(0.5), ..none },
        5 => GarmentSpec {
            poly: vec![(0.12, 0.72), (0.88, 0.72), (0.9, 0.82), (0.1, 0.82)],
            strokes: vec![
                vec![(0.3, 0.72), (0.42, 0.55), (0.58, 0.55), (0.68, 0.72)],
                vec![(0.22, 0.72), (0.3, 0.62)],
            ],
            ..none
        },
        // shirt: the tee silhouette with slightly longer sleeves, a collar
        // notch and a button seam
        6 => GarmentSpec {
            poly: torso(0.1, 0.48, 0.88, 0.04, 0.0),
            strokes: vec![vec![(0.44, 0.12), (0.5, 0.2), (0.56, 0.12)]],
            seam: Some(0.5),
            ..none
        },
        7 => GarmentSpec {
            poly: vec![
                (0.1, 0.62),
                (0.32, 0.5),
                (0.55, 0.52),
                (0.88, 0.66),
                (0.9, 0.8),
                (0.1, 0.8),
            ],
            ..none
        },
        8 => GarmentSpec {
            poly: vec![(0.2, 0.42), (0.8, 0.42), (0.78, 0.88), (0.22, 0.88)],
            strokes: vec![vec![(0.36, 0.42), (0.38, 0.24), (0.62, 0.24), (0.64, 0.42)]],
            ..none
        },
        _ => GarmentSpec {
            poly: vec![
                (0.3, 0.14),
                (0.56, 0.14),
                (0.6, 0.52),
                (0.86, 0.64),
                (0.88, 0.82),
                (0.12, 0.82),
                (0.28, 0.52),
            ],
            ..none
        },
    }
}

/// Even-odd scanline fill at pixel centers.
fn fill_polygon(mask: &mut [bool], poly: &[Pt], aff: &Affine, jitter: &[Pt]) {
    if poly.is_empty() {
        return;
    }
    let pts: Vec<Pt> = poly
        .iter()
        .zip(jitter)
        .map(|(p, j)| to_px(aff.apply((p.0 + j.0, p.1 + j.1))))
        .collect();
    for iy in 0..SIDE {
        let yc = iy as f64;
        let mut xs: Vec<f64> = Vec::new();
        for e in 0..pts.len() {
            let (x0, y0) = pts[e];
            let (x1, y1) = pts[(e + 1) % pts.len()];
            if (y0 <= yc) != (y1 <= yc) {
                xs.push(x0 + (yc - y0) / (y1 - y0) * (x1 - x0));
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in xs.chunks_exact(2) {
            let lo = pair[0].ceil().max(0.0) as usize;
            let hi = pair[1].floor().min((SIDE - 1) as f64);
            if hi < 0.0 {
                continue;
            }
            for ix in lo..=(hi as usize) {
                mask[iy * SIDE + ix] = true;
            }
        }
    }
}

fn render_garment(cat: u8, rng: &mut ChaCha12Rng) -> Vec<u8> {
    let spec = garment_spec(cat);
    let aff = sample_affine(rng, 0.06);
    let base = rng.random_range(0.55..0.85);

    let mut mask = vec![false; DIM];
    let jit = |rng: &mut ChaCha12Rng, n: usize| -> Vec<Pt> {
        (0..n).map(|_| (rng.random_range(-0.025..0.025), rng.random_range(-0.025..0.025))).collect()
    };
    let j = jit(rng, spec.poly.len());
    fill_polygon(&mut mask, &spec.poly, &aff, &j);
    if let Some(extra) = &spec.extra_poly {
        let j = jit(rng, extra.len());
        fill_polygon(&mut mask, extra, &aff, &j);
    }

    let mut ink: Vec<f64> = vec![0.0; DIM];
    for (cell, &m) in ink.iter_mut().zip(&mask) {
        if m {
            let noise: f64 = rng.random_range(-0.09..0.09);
            *cell = (base + noise).clamp(0.0, 1.0);
        }
    }
    for stroke in &spec.strokes {
        let j = jit(rng, stroke.len());
        let mut pen = vec![0.0; DIM];
        draw_stroke(&mut pen, stroke, &aff, 0.7, &j);
        for (cell, &p) in ink.iter_mut().zip(&pen) {
            *cell = (*cell).max(p * base);
        }
    }
    if let Some(sx) = spec.seam {
        // darker opening running down the garment
        let top = to_px(aff.apply((sx, 0.16)));
        let bot = to_px(aff.apply((sx, 0.84)));
        let mut pen = vec![0.0; DIM];
        let steps = 40;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            stamp(&mut pen, top.0 + t * (bot.0 - top.0), top.1 + t * (bot.1 - top.1), 0.55);
        }
        for (cell, &p) in ink.iter_mut().zip(&pen) {
            *cell *= 1.0 - 0.75 * p;
        }
    }
    ink.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

fn build_set(n: usize, seed: u64, tag: &str, render: impl Fn(u8, &mut ChaCha12Rng) -> Vec<u8>) -> (Vec<u8>, Vec<u8>) {
    let mut rng = rng::stream(seed, tag);
    let mut pixels = Vec::with_capacity(n * DIM);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let cat = (i % 10) as u8;
        pixels.extend(render(cat, &mut rng));
        labels.push(cat);
    }
    (pixels, labels)
}

fn to_dataset(pixels: Vec<u8>, labels: Vec<u8>) -> Dataset {
    let n = labels.len();
    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    Dataset::from_parts(Mat::from_vec(n, DIM, data), labels, SIDE, SIDE, 10).unwrap()
}

/// Handwritten-digit-like set; labels cycle 0..9 so any prefix is balanced.
pub fn digits(n: usize, seed: u64, tag: &str) -> Dataset {
    let (p, l) = build_set(n, seed, &format!("synth:digits:{tag}"), render_digit);
    to_dataset(p, l)
}

/// Clothing-silhouette set with the same label cycling.
pub fn garments(n: usize, seed: u64, tag: &str) -> Dataset {
    let (p, l) = build_set(n, seed, &format!("synth:garments:{tag}"), render_garment);
    to_dataset(p, l)
}

/// Tiny linearly separable 2-class set on 8x8 images: class 0 lights the
/// left half, class 1 the right half.
pub fn two_class_bars(n: usize, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed, "synth:bars");
    let mut data = Vec::with_capacity(n * 64);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let cls = (i % 2) as u8;
        for _row in 0..8 {
            for c in 0..8 {
                let bright = (cls == 0) == (c < 4);
                let v: f64 = if bright { rng.random_range(0.6..1.0) } else { rng.random_range(0.0..0.15) };
                data.push((v * 255.0).round() / 255.0);
            }
        }
        labels.push(cls);
    }
    Dataset::from_parts(Mat::from_vec(n, 64, data), labels, 8, 8, 2).unwrap()
}

fn write_split(dir: &Path, split: &str, pixels: &[u8], labels: &[u8]) -> Result<()> {
    write_idx_images(&dir.join(format!("{split}-images-idx3-ubyte.gz")), pixels, labels.len(), SIDE, SIDE)?;
    write_idx_labels(&dir.join(format!("{split}-labels-idx1-ubyte.gz")), labels)
}

/// Writes a digit-style train/t10k IDX pair under `dir`.
pub fn write_digit_files(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<()> {
    let (p, l) = build_set(n_train, seed, "synth:digits:train", render_digit);
    write_split(dir, "train", &p, &l)?;
    let (p, l) = build_set(n_test, seed, "synth:digits:t10k", render_digit);
    write_split(dir, "t10k", &p, &l)
}

/// Writes a garment-style train/t10k IDX pair under `dir`.
pub fn write_garment_files(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<()> {
    let (p, l) = build_set(n_train, seed, "synth:garments:train", render_garment);
    write_split(dir, "train", &p, &l)?;
    let (p, l) = build_set(n_test, seed, "synth:garments:t10k", render_garment);
    write_split(dir, "t10k", &p, &l)
}
