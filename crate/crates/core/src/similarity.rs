//! Pairwise similarity matrices feeding the clustering objective.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Floor applied to Euclidean distances before inversion.
pub const DISTANCE_FLOOR: f64 = 1e-9;

const CLAMP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityKind {
    #[serde(rename = "inv-euclid")]
    InverseEuclidean,
    Cosine,
}

/// Symmetric `n × n` similarity with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: DMatrix<f64>,
    kind: SimilarityKind,
}

impl SimilarityMatrix {
    /// Wraps an arbitrary symmetric matrix; the diagonal is zeroed.
    pub fn from_matrix(mut values: DMatrix<f64>, kind: SimilarityKind) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "similarity must be square, got {}x{}",
                n,
                values.ncols()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "non-finite similarity at ({i}, {j})"
                    )));
                }
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "similarity not symmetric at ({i}, {j})"
                    )));
                }
            }
            values[(i, i)] = 0.0;
        }
        Ok(Self { values, kind })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Same kind, rows and columns reordered: `out[a][b] = self[perm[a]][perm[b]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        Self {
            values: DMatrix::from_fn(n, n, |a, b| self.values[(perm[a], perm[b])]),
            kind: self.kind,
        }
    }
}

/// Angular distance `|sin(θ/2)|` between samples, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularDistanceMatrix {
    values: DMatrix<f64>,
}

impl AngularDistanceMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Any symmetric zero-diagonal matrix with entries in `[0, 1]`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(Error::DimensionMismatch(
                "distance matrix must be square".into(),
            ));
        }
        for i in 0..n {
            if values[(i, i)] != 0.0 {
                return Err(Error::InvalidArgument(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = values[(i, j)];
                if !(0.0..=1.0).contains(&v) || (v - values[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "invalid distance {v} at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { values })
    }
}

/// `cos θ_ij = <x_i, x_j> / (‖x_i‖ ‖x_j‖)`.
pub fn cosine_similarity(d: &Dataset) -> Result<SimilarityMatrix> {
    let mut unit = d.data().clone();
    for (i, mut row) in unit.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm(i));
        }
        row /= norm;
    }
    let mut values = &unit * unit.transpose();
    let n = values.nrows();
    for i in 0..n {
        values[(i, i)] = 0.0;
        for j in 0..i {
            let c = values[(i, j)];
            debug_assert!(c.abs() <= 1.0 + CLAMP_TOL, "cosine {c} out of range");
            let c = c.clamp(-1.0, 1.0);
            values[(i, j)] = c;
            values[(j, i)] = c;
        }
    }
    Ok(SimilarityMatrix {
        values,
        kind: SimilarityKind::Cosine,
    })
}

/// `1 / max(‖x_i − x_j‖, DISTANCE_FLOOR)`, zero diagonal.
pub fn inverse_euclidean(d: &Dataset) -> SimilarityMatrix {
    let n = d.n();
    let rows = d.rows();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| {
                    let dist = rows[i]
                        .iter()
                        .zip(&rows[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    1.0 / dist.max(DISTANCE_FLOOR)
                })
                .collect()
        })
        .collect();
    let mut values = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    SimilarityMatrix {
        values,
        kind: SimilarityKind::InverseEuclidean,
    }
}

pub fn compute(d: &Dataset, kind: SimilarityKind) -> Result<SimilarityMatrix> {
    match kind {
        SimilarityKind::Cosine => cosine_similarity(d),
        SimilarityKind::InverseEuclidean => Ok(inverse_euclidean(d)),
    }
}

/// `sqrt((1 − cos θ) / 2)`, which equals `|sin(θ/2)|`.
pub fn angular_distance_value(cos: f64) -> f64 {
    ((1.0 - cos.clamp(-1.0, 1.0)) / 2.0).sqrt()
}

pub fn angular_distance(s: &SimilarityMatrix) -> Result<AngularDistanceMatrix> {
    if s.kind != SimilarityKind::Cosine {
        return Err(Error::InvalidArgument(
            "angular distance needs a cosine similarity matrix".into(),
        ));
    }
    let n = s.n();
    let values = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            angular_distance_value(s.values[(i, j)])
        }
    });
    Ok(AngularDistanceMatrix { values })
}
