//! MNIST ingestion (IDX and 785-column CSV), pixel normalization, class
//! filtering and seeded sub-sampling.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const CSV_FIELDS: usize = IMAGE_PIXELS + 1;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Value range of the pixels held by a [`LabeledDataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PixelRange {
    /// Raw bytes, `[0, 255]`.
    Raw0_255,
    /// `[0, 1]`, used as t-SNE input.
    Unit0_1,
    /// `[-1, 1]`, matching a tanh generator.
    Sym1_1,
}

impl PixelRange {
    fn bounds(self) -> (f64, f64) {
        match self {
            PixelRange::Raw0_255 => (0.0, 255.0),
            PixelRange::Unit0_1 => (0.0, 1.0),
            PixelRange::Sym1_1 => (-1.0, 1.0),
        }
    }

    fn to_raw(self, v: f64) -> f64 {
        match self {
            PixelRange::Raw0_255 => v,
            PixelRange::Unit0_1 => v * 255.0,
            PixelRange::Sym1_1 => (v + 1.0) * 127.5,
        }
    }

    fn from_raw(self, raw: f64) -> f64 {
        match self {
            PixelRange::Raw0_255 => raw,
            PixelRange::Unit0_1 => raw / 255.0,
            PixelRange::Sym1_1 => raw / 127.5 - 1.0,
        }
    }
}

/// N images of 784 pixels with one digit label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Matrix,
    labels: Vec<u8>,
    pixel_range: PixelRange,
}

impl LabeledDataset {
    pub fn new(images: Matrix, labels: Vec<u8>, pixel_range: PixelRange) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if images.rows() > 0 && images.cols() != IMAGE_PIXELS {
            return Err(Error::Input(format!(
                "images must have {IMAGE_PIXELS} columns, got {}",
                images.cols()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::Value(format!("label {l} outside 0..=9")));
        }
        let (lo, hi) = pixel_range.bounds();
        if let Some(v) = images.as_slice().iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::Value(format!(
                "pixel {v} outside {pixel_range:?} range [{lo}, {hi}]"
            )));
        }
        let images = if images.rows() == 0 {
            Matrix::zeros(0, IMAGE_PIXELS)
        } else {
            images
        };
        Ok(Self {
            images,
            labels,
            pixel_range,
        })
    }

    pub fn empty(pixel_range: PixelRange) -> Self {
        Self {
            images: Matrix::zeros(0, IMAGE_PIXELS),
            labels: Vec::new(),
            pixel_range,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Matrix {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixel_range(&self) -> PixelRange {
        self.pixel_range
    }

    pub fn into_parts(self) -> (Matrix, Vec<u8>, PixelRange) {
        (self.images, self.labels, self.pixel_range)
    }

    pub fn select(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            images: self.images.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            pixel_range: self.pixel_range,
        }
    }

    /// Rows of `self` followed by rows of `other`; both must share a pixel range.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.pixel_range != other.pixel_range {
            return Err(Error::Consistency(format!(
                "cannot concatenate {:?} with {:?} data",
                self.pixel_range, other.pixel_range
            )));
        }
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(LabeledDataset {
            images: self.images.vstack(&other.images)?,
            labels,
            pixel_range: self.pixel_range,
        })
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn idx_header(path: &Path, bytes: &[u8], magic: u32, header_len: usize) -> Result<()> {
    if bytes.len() < header_len {
        return Err(Error::Length {
            path: path.into(),
            expected: header_len,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::format(
            path,
            format!("bad magic number 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    Ok(())
}

fn check_payload(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::Length {
            path: path.into(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after payload", bytes.len() - expected),
        ));
    }
    Ok(())
}

/// Reads an IDX image/label file pair. The image count comes from the headers.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let img = read_file(images_path)?;
    idx_header(images_path, &img, IDX_IMAGES_MAGIC, 16)?;
    let n = be_u32(&img, 4) as usize;
    let rows = be_u32(&img, 8) as usize;
    let cols = be_u32(&img, 12) as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::format(
            images_path,
            format!("images are {rows}x{cols}, expected {IMAGE_SIDE}x{IMAGE_SIDE}"),
        ));
    }
    check_payload(images_path, &img, 16 + n * IMAGE_PIXELS)?;

    let lab = read_file(labels_path)?;
    idx_header(labels_path, &lab, IDX_LABELS_MAGIC, 8)?;
    let n_labels = be_u32(&lab, 4) as usize;
    if n_labels != n {
        return Err(Error::Consistency(format!(
            "{} declares {n} images but {} declares {n_labels} labels",
            images_path.display(),
            labels_path.display()
        )));
    }
    check_payload(labels_path, &lab, 8 + n)?;

    let data = img[16..].iter().map(|&b| f64::from(b)).collect();
    let images = Matrix::from_vec(n, IMAGE_PIXELS, data)?;
    LabeledDataset::new(images, lab[8..].to_vec(), PixelRange::Raw0_255)
}

fn raw_bytes(ds: &LabeledDataset) -> Vec<u8> {
    ds.images
        .as_slice()
        .iter()
        .map(|&v| ds.pixel_range.to_raw(v).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Writes the dataset as an IDX pair. Non-raw pixels are mapped back to bytes.
pub fn save_idx(ds: &LabeledDataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let n = u32::try_from(ds.len()).map_err(|_| Error::Input("too many images for IDX".into()))?;

    let mut img = Vec::with_capacity(16 + ds.len() * IMAGE_PIXELS);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&n.to_be_bytes());
    img.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    img.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    img.extend_from_slice(&raw_bytes(ds));
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;

    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend_from_slice(&ds.labels);
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}

/// Reads the 785-column layout: label first, then 784 raw pixels.
///
/// A single header line is skipped when its first field is not numeric.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    let mut pixels = Vec::new();

    for (line_no, line) in text.lines().enumerate() {
        let row = line_no + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if line_no == 0 && fields[0].trim().parse::<f64>().is_err() {
            continue;
        }
        if fields.len() != CSV_FIELDS {
            return Err(Error::format(
                path,
                format!("row {row} has {} fields, expected {CSV_FIELDS}", fields.len()),
            ));
        }
        let label: f64 = fields[0].trim().parse().map_err(|_| Error::Parse {
            path: path.into(),
            row,
            msg: format!("label {:?} is not numeric", fields[0]),
        })?;
        if label.fract() != 0.0 || !(0.0..=9.0).contains(&label) {
            return Err(Error::Value(format!(
                "{} row {row}: label {label} outside 0..=9",
                path.display()
            )));
        }
        labels.push(label as u8);
        for (col, f) in fields[1..].iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                path: path.into(),
                row,
                msg: format!("pixel {col} value {f:?} is not numeric"),
            })?;
            if !(0.0..=255.0).contains(&v) {
                return Err(Error::Value(format!(
                    "{} row {row}: pixel {col} value {v} outside [0, 255]",
                    path.display()
                )));
            }
            pixels.push(v);
        }
    }

    let images = Matrix::from_vec(labels.len(), IMAGE_PIXELS, pixels)?;
    LabeledDataset::new(images, labels, PixelRange::Raw0_255)
}

/// Formats the dataset as header-less 785-column CSV in raw pixel units.
pub fn to_csv_string(ds: &LabeledDataset) -> String {
    let mut out = String::with_capacity(ds.len() * (CSV_FIELDS * 2 + 1));
    for (i, &label) in ds.labels.iter().enumerate() {
        write!(out, "{label}").unwrap();
        for &v in ds.images.row(i) {
            let raw = ds.pixel_range.to_raw(v);
            let snapped = raw.round();
            let raw = if (raw - snapped).abs() < 1e-9 { snapped } else { raw };
            write!(out, ",{raw}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_csv_string(ds)).map_err(|e| Error::io(path, e))
}

/// Affine remap of every pixel into `target`. Labels are untouched.
pub fn normalize(ds: &LabeledDataset, target: PixelRange) -> LabeledDataset {
    if ds.pixel_range == target {
        return ds.clone();
    }
    let from = ds.pixel_range;
    let (lo, hi) = target.bounds();
    let images = ds.images.map(|v| target.from_raw(from.to_raw(v)).clamp(lo, hi));
    LabeledDataset {
        images,
        labels: ds.labels.clone(),
        pixel_range: target,
    }
}

pub fn filter_by_label(ds: &LabeledDataset, digit: u8) -> Result<LabeledDataset> {
    if digit > 9 {
        return Err(Error::Input(format!("digit {digit} outside 0..=9")));
    }
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == digit).collect();
    Ok(ds.select(&idx))
}

/// Uniform sample of `n` rows without replacement.
pub fn sample_n(ds: &LabeledDataset, n: usize, rng: &mut RngState) -> Result<LabeledDataset> {
    if n > ds.len() {
        return Err(Error::Input(format!(
            "cannot sample {n} rows from a dataset of {}",
            ds.len()
        )));
    }
    let idx = rng.sample_indices(ds.len(), n);
    Ok(ds.select(&idx))
}
