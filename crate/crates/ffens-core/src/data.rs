//! Dataset loading and the label-in-corner encoding.
//!
//! Images travel as rows of a matrix, pixel values in [0,1] (byte / 255).
//! A label is written into an image by zeroing the first `num_classes`
//! pixels of the top row and setting pixel `label` to the image maximum,
//! where the maximum is taken BEFORE the corner is cleared. Positive samples
//! carry their true label, negative samples a uniformly random wrong one.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Mat,
    pub labels: Vec<u8>,
    pub num_classes: usize,
    pub img_rows: usize,
    pub img_cols: usize,
}

impl Dataset {
    pub fn from_parts(
        images: Mat,
        labels: Vec<u8>,
        img_rows: usize,
        img_cols: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if images.cols() != img_rows * img_cols {
            return Err(Error::Shape(format!(
                "image width {} does not match {}x{}",
                images.cols(),
                img_rows,
                img_cols
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= num_classes) {
            return Err(Error::Consistency(format!(
                "label {bad} outside {num_classes} classes"
            )));
        }
        Ok(Dataset { images, labels, num_classes, img_rows, img_cols })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    /// First `n` samples, in stored order.
    pub fn take(&self, n: usize) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::Domain(format!("subset {n} exceeds {} samples", self.len())));
        }
        let idx: Vec<usize> = (0..n).collect();
        Ok(Dataset {
            images: self.images.select_rows(&idx),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            img_rows: self.img_rows,
            img_cols: self.img_cols,
        })
    }

    /// Samples of one category, in stored order.
    pub fn category(&self, cat: u8) -> Dataset {
        let idx: Vec<usize> =
            (0..self.len()).filter(|&i| self.labels[i] == cat).collect();
        Dataset {
            images: self.images.select_rows(&idx),
            labels: vec![cat; idx.len()],
            num_classes: self.num_classes,
            img_rows: self.img_rows,
            img_cols: self.img_cols,
        }
    }
}

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], off: usize, what: &str) -> Result<u32> {
    let end = off + 4;
    if bytes.len() < end {
        return Err(Error::Length(format!("file ends inside {what}")));
    }
    Ok(u32::from_be_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]))
}

fn parse_idx_images(bytes: &[u8]) -> Result<(Mat, usize, usize)> {
    let magic = be_u32(bytes, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image magic {magic:#010x}, want {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "image rows")? as usize;
    let cols = be_u32(bytes, 12, "image cols")? as usize;
    let want = 16 + n * rows * cols;
    if bytes.len() < want {
        return Err(Error::Length(format!(
            "image payload {} bytes, header promises {}",
            bytes.len() - 16.min(bytes.len()),
            n * rows * cols
        )));
    }
    if bytes.len() > want {
        return Err(Error::Format(format!("{} trailing bytes after images", bytes.len() - want)));
    }
    let data: Vec<f64> = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((Mat::from_vec(n, rows * cols, data), rows, cols))
}

fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label magic {magic:#010x}, want {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "label count")? as usize;
    let want = 8 + n;
    if bytes.len() < want {
        return Err(Error::Length(format!(
            "label payload {} bytes, header promises {n}",
            bytes.len() - 8.min(bytes.len())
        )));
    }
    if bytes.len() > want {
        return Err(Error::Format(format!("{} trailing bytes after labels", bytes.len() - want)));
    }
    Ok(bytes[8..].to_vec())
}

/// Loads an images/labels IDX pair (plain or gzip, sniffed per file).
pub fn load_idx(images_path: &Path, labels_path: &Path, num_classes: usize) -> Result<Dataset> {
    let (images, rows, cols) = parse_idx_images(&read_maybe_gzip(images_path)?)?;
    let labels = parse_idx_labels(&read_maybe_gzip(labels_path)?)?;
    Dataset::from_parts(images, labels, rows, cols, num_classes)
}

/// Resolves the conventional file pair for a split under a dataset root:
/// `<root>/<split>-images-idx3-ubyte[.gz]`, preferring the uncompressed file.
pub fn split_paths(root: &Path, split: &str) -> Result<(PathBuf, PathBuf)> {
    let pick = |stem: String| -> Result<PathBuf> {
        let plain = root.join(&stem);
        if plain.exists() {
            return Ok(plain);
        }
        let gz = root.join(format!("{stem}.gz"));
        if gz.exists() {
            return Ok(gz);
        }
        Err(Error::Format(format!("no {stem}[.gz] under {}", root.display())))
    };
    Ok((
        pick(format!("{split}-images-idx3-ubyte"))?,
        pick(format!("{split}-labels-idx1-ubyte"))?,
    ))
}

/// Writes images in IDX format, gzipped when the path ends in `.gz`.
pub fn write_idx_images(path: &Path, pixels: &[u8], n: usize, rows: usize, cols: usize) -> Result<()> {
    if pixels.len() != n * rows * cols {
        return Err(Error::Shape(format!(
            "{} pixel bytes for {n} images of {rows}x{cols}",
            pixels.len()
        )));
    }
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(n as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    bytes.extend_from_slice(pixels);
    write_maybe_gzip(path, &bytes)
}

/// Writes labels in IDX format, gzipped when the path ends in `.gz`.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    write_maybe_gzip(path, &bytes)
}

fn write_maybe_gzip(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(File::create(path)?, Compression::fast());
        enc.write_all(bytes)?;
        enc.finish()?;
        Ok(())
    } else {
        Ok(File::create(path)?.write_all(bytes)?)
    }
}

/// Writes `label` into the image corner. The first `num_classes` pixels of
/// row 0 are cleared and pixel `label` is set to the pre-clear image maximum.
pub fn embed_label(pixels: &mut [f64], label: u8, num_classes: usize) -> Result<()> {
    if pixels.len() < num_classes {
        return Err(Error::Shape(format!(
            "image of {} pixels cannot hold a {num_classes}-way label corner",
            pixels.len()
        )));
    }
    if (label as usize) >= num_classes {
        return Err(Error::Domain(format!("label {label} outside {num_classes} classes")));
    }
    let max = pixels.iter().cloned().fold(0.0_f64, f64::max);
    pixels[..num_classes].fill(0.0);
    pixels[label as usize] = max;
    Ok(())
}

/// Draws a label uniformly from the wrong ones.
pub fn wrong_label(true_label: u8, num_classes: usize, rng: &mut impl Rng) -> Result<u8> {
    if num_classes < 2 {
        return Err(Error::Domain("need at least 2 classes for negatives".into()));
    }
    if (true_label as usize) >= num_classes {
        return Err(Error::Domain(format!("label {true_label} outside {num_classes} classes")));
    }
    let r = rng.random_range(0..num_classes - 1) as u8;
    Ok(if r >= true_label { r + 1 } else { r })
}

/// All images embedded with their true labels.
pub fn embed_positive_batch(ds: &Dataset) -> Result<Mat> {
    let mut out = ds.images.clone();
    for i in 0..ds.len() {
        embed_label(out.row_mut(i), ds.labels[i], ds.num_classes)?;
    }
    Ok(out)
}

/// All images embedded with independently drawn wrong labels. Returns the
/// embedded batch and the labels used.
pub fn embed_negative_batch(ds: &Dataset, rng: &mut impl Rng) -> Result<(Mat, Vec<u8>)> {
    let mut out = ds.images.clone();
    let mut negs = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let neg = wrong_label(ds.labels[i], ds.num_classes, rng)?;
        embed_label(out.row_mut(i), neg, ds.num_classes)?;
        negs.push(neg);
    }
    Ok((out, negs))
}

/// Every image embedded with the same candidate label (for label enumeration
/// at inference time).
pub fn embed_with_label_batch(images: &Mat, label: u8, num_classes: usize) -> Result<Mat> {
    let mut out = images.clone();
    for i in 0..out.rows() {
        embed_label(out.row_mut(i), label, num_classes)?;
    }
    Ok(out)
}

/// Splits off one category. Returns (remaining, held_out); both keep the
/// original class count so label embeddings stay compatible.
pub fn exclude_category(ds: &Dataset, cat: u8) -> Result<(Dataset, Dataset)> {
    if (cat as usize) >= ds.num_classes {
        return Err(Error::Domain(format!("category {cat} outside {} classes", ds.num_classes)));
    }
    let keep: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] != cat).collect();
    let out: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == cat).collect();
    let sub = |idx: &[usize]| Dataset {
        images: ds.images.select_rows(idx),
        labels: idx.iter().map(|&i| ds.labels[i]).collect(),
        num_classes: ds.num_classes,
        img_rows: ds.img_rows,
        img_cols: ds.img_cols,
    };
    Ok((sub(&keep), sub(&out)))
}
