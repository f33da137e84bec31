//! Loading, validation and preprocessing of time-series datasets.
//!
//! Samples are stored as rows of an `n × m` matrix: one row per time series
//! (or per flattened image frame). Modules that need the column orientation
//! transpose internally.
//!
//! # FSK1 frame stacks
//!
//! Image sequences use a small little-endian binary container:
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 4    | magic `b"FSK1"`                           |
//! | 4      | 4    | `n_frames` (u32)                          |
//! | 8      | 4    | `height` (u32)                            |
//! | 12     | 4    | `width` (u32)                             |
//! | 16     | 8·N  | `n_frames·height·width` f64 values        |
//!
//! Values are frame-major, then row-major inside a frame, so frame `t`
//! pixel `(y, x)` lives at index `t·height·width + y·width + x`.

use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FSK1_MAGIC: &[u8; 4] = b"FSK1";
const FSK1_HEADER_LEN: usize = 16;

/// An `n × m` data matrix with optional labels and frame geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    data: DMatrix<f64>,
    labels: Option<Vec<i64>>,
    frame_shape: Option<(usize, usize)>,
}

impl Dataset {
    /// Validates and wraps a data matrix.
    pub fn new(
        data: DMatrix<f64>,
        labels: Option<Vec<i64>>,
        frame_shape: Option<(usize, usize)>,
    ) -> Result<Self> {
        let (n, m) = data.shape();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 samples, got {n}"
            )));
        }
        if m < 1 {
            return Err(Error::InsufficientData("samples have no features".into()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            // column-major storage
            let (row, col) = (pos % n, pos / n);
            return Err(Error::Parse {
                row,
                col,
                message: "non-finite value".into(),
            });
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {n} samples",
                    labels.len()
                )));
            }
        }
        if let Some((h, w)) = frame_shape {
            if h * w != m {
                return Err(Error::DimensionMismatch(format!(
                    "frame shape {h}x{w} does not match {m} features"
                )));
            }
        }
        Ok(Self {
            data,
            labels,
            frame_shape,
        })
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<i64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(Error::Format {
                row,
                message: format!("expected {m} columns, found {}", r.len()),
            });
        }
        let data = DMatrix::from_fn(n, m, |i, j| rows[i][j]);
        Self::new(data, labels, None)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn m(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn frame_shape(&self) -> Option<(usize, usize)> {
        self.frame_shape
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.row(i)).collect()
    }

    /// Same labels and geometry, new values. The shape must not change.
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<Self> {
        if data.shape() != self.data.shape() {
            return Err(Error::DimensionMismatch(format!(
                "replacement matrix {:?} vs {:?}",
                data.shape(),
                self.data.shape()
            )));
        }
        Self::new(data, self.labels.clone(), self.frame_shape)
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    /// Restricts every frame to the half-open rectangle `[x0, x1) × [y0, y1)`.
    pub fn crop_frames(&self, roi: Roi) -> Result<Self> {
        let (h, w) = self.frame_shape.ok_or_else(|| {
            Error::InvalidArgument("region of interest needs a frame dataset".into())
        })?;
        if roi.x0 >= roi.x1 || roi.y0 >= roi.y1 || roi.x1 > w || roi.y1 > h {
            return Err(Error::InvalidArgument(format!(
                "region {roi:?} outside {h}x{w} frame"
            )));
        }
        let (ch, cw) = (roi.y1 - roi.y0, roi.x1 - roi.x0);
        let data = DMatrix::from_fn(self.n(), ch * cw, |t, p| {
            let (y, x) = (roi.y0 + p / cw, roi.x0 + p % cw);
            self.data[(t, y * w + x)]
        });
        Self::new(data, self.labels.clone(), Some((ch, cw)))
    }

    /// Hex SHA-256 over the shape and the little-endian bytes of every value
    /// (row-major), then labels if present.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.n() as u64).to_le_bytes());
        hasher.update((self.m() as u64).to_le_bytes());
        for i in 0..self.n() {
            for v in self.data.row(i).iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        if let Some(labels) = &self.labels {
            for l in labels {
                hasher.update(l.to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Rectangle in frame pixel coordinates, half-open on the upper bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl std::str::FromStr for Roi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("roi '{s}': {e}")))?;
        match parts[..] {
            [x0, y0, x1, y1] => Ok(Roi { x0, y0, x1, y1 }),
            _ => Err(Error::InvalidArgument(format!(
                "roi '{s}' must be x0,y0,x1,y1"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CsvOptions {
    /// Column 0 holds an integer class label.
    pub has_labels: bool,
    /// Skip the first line.
    pub header: bool,
}

/// Reads comma-separated rows; one sample per line.
pub fn load_csv(path: impl AsRef<Path>, opts: CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, opts)
}

pub fn parse_csv(text: &str, opts: CsvOptions) -> Result<Dataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;

    let lines = text
        .lines()
        .skip(usize::from(opts.header))
        .filter(|l| !l.trim().is_empty());
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Format {
                    row,
                    message: format!("expected {w} columns, found {}", cells.len()),
                })
            }
            _ => {}
        }
        let mut values = Vec::with_capacity(cells.len());
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                col,
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    col,
                    message: format!("'{cell}' is not finite"),
                });
            }
            values.push(v);
        }
        if opts.has_labels {
            let label = values.remove(0);
            if label.fract() != 0.0 {
                return Err(Error::Parse {
                    row,
                    col: 0,
                    message: format!("label '{}' is not an integer", cells[0]),
                });
            }
            labels.push(label as i64);
        }
        rows.push(values);
    }

    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 rows, got {}",
            rows.len()
        )));
    }
    Dataset::from_rows(&rows, opts.has_labels.then_some(labels))
}

pub fn write_csv(path: impl AsRef<Path>, d: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for i in 0..d.n() {
        if let Some(labels) = d.labels() {
            out.push_str(&labels[i].to_string());
            out.push(',');
        }
        let row: Vec<String> = d.data.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_frames(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_frames(&bytes)
}

pub fn decode_frames(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < FSK1_HEADER_LEN || &bytes[..4] != FSK1_MAGIC {
        return Err(Error::FrameStack("missing FSK1 magic".into()));
    }
    let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (n, h, w) = (read_u32(4), read_u32(8), read_u32(12));
    let m = h * w;
    let expected = n
        .checked_mul(m)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::FrameStack("declared size overflows".into()))?;
    let payload = &bytes[FSK1_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::FrameStack(format!(
            "header declares {n} frames of {h}x{w} ({expected} bytes), payload has {}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Dataset::new(DMatrix::from_row_slice(n, m, &values), None, Some((h, w)))
}

pub fn encode_frames(d: &Dataset) -> Result<Vec<u8>> {
    let (h, w) = d
        .frame_shape
        .ok_or_else(|| Error::InvalidArgument("dataset has no frame shape".into()))?;
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::FrameStack(format!("{v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(FSK1_HEADER_LEN + d.n() * d.m() * 8);
    out.extend_from_slice(FSK1_MAGIC);
    out.extend_from_slice(&to_u32(d.n())?.to_le_bytes());
    out.extend_from_slice(&to_u32(h)?.to_le_bytes());
    out.extend_from_slice(&to_u32(w)?.to_le_bytes());
    for i in 0..d.n() {
        for v in d.data.row(i).iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_frames(path: impl AsRef<Path>, d: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_frames(d)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StandardizeMode {
    /// Each row to mean 0 / variance 1.
    #[default]
    Row,
    /// One mean and variance over every value in the matrix.
    Global,
    None,
}

#[derive(Debug, Clone)]
pub struct Standardized {
    pub dataset: Dataset,
    /// Rows with no spread; they are returned as zeros.
    pub constant_rows: Vec<usize>,
}

fn moments(values: &[f64]) -> (f64, f64) {
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    (mean, var)
}

fn is_flat(std: f64, values: impl Iterator<Item = f64>) -> bool {
    let scale = values.fold(1.0_f64, |a, v| a.max(v.abs()));
    std <= 16.0 * f64::EPSILON * scale
}

/// Shifts and scales each row to mean 0 and population variance 1.
pub fn standardize(d: &Dataset) -> Standardized {
    let mut data = d.data.clone();
    let mut constant_rows = Vec::new();
    for i in 0..d.n() {
        let mut row = data.row_mut(i);
        let values: Vec<f64> = row.iter().copied().collect();
        let (mean, var) = moments(&values);
        let std = var.sqrt();
        if is_flat(std, row.iter().copied()) {
            warn!("row {i} is constant; standardized to zeros");
            constant_rows.push(i);
            row.fill(0.0);
        } else {
            row.apply(|v| *v = (*v - mean) / std);
        }
    }
    Standardized {
        dataset: Dataset { data, ..d.clone() },
        constant_rows,
    }
}

/// One mean and population variance for the whole matrix.
pub fn standardize_global(d: &Dataset) -> Standardized {
    let (mean, var) = moments(d.data.as_slice());
    let std = var.sqrt();
    if is_flat(std, d.data.iter().copied()) {
        warn!("dataset is constant; standardized to zeros");
        return Standardized {
            dataset: Dataset {
                data: DMatrix::zeros(d.n(), d.m()),
                ..d.clone()
            },
            constant_rows: (0..d.n()).collect(),
        };
    }
    Standardized {
        dataset: Dataset {
            data: d.data.map(|v| (v - mean) / std),
            ..d.clone()
        },
        constant_rows: Vec::new(),
    }
}

pub fn standardize_with(d: &Dataset, mode: StandardizeMode) -> Standardized {
    match mode {
        StandardizeMode::Row => standardize(d),
        StandardizeMode::Global => standardize_global(d),
        StandardizeMode::None => Standardized {
            dataset: d.clone(),
            constant_rows: Vec::new(),
        },
    }
}

/// Subtracts each row's mean. Cosine similarity of near-constant frames is
/// dominated by the shared offset unless it is removed first.
pub fn center_rows(d: &Dataset) -> Dataset {
    let mut data = d.data.clone();
    for mut row in data.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    Dataset { data, ..d.clone() }
}
