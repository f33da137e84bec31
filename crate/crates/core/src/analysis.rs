//! Turning solver output into clusters and measuring them: decoding with
//! outlier semantics, ensemble means, per-class RMSE, classical MDS and the
//! angular overlap diagnostic.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::{DMatrix, SymmetricEigen};
use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::qubo::var_index;
use crate::similarity::{AngularDistanceMatrix, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignmentSource {
    Qubo,
    Kmeans,
}

/// A point that was set in several clusters and kept in one of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Repair {
    pub point: usize,
    pub kept: usize,
    pub discarded: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `None` marks an outlier.
    pub cluster_of: Vec<Option<usize>>,
    pub k: usize,
    pub repaired: Vec<Repair>,
    pub source: AssignmentSource,
}

impl Assignment {
    pub fn from_kmeans(assignments: &[usize], k: usize) -> Self {
        Self {
            cluster_of: assignments.iter().map(|&c| Some(c)).collect(),
            k,
            repaired: Vec::new(),
            source: AssignmentSource::Kmeans,
        }
    }

    pub fn n(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn outlier_count(&self) -> usize {
        self.cluster_of.iter().filter(|c| c.is_none()).count()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for c in self.cluster_of.iter().flatten() {
            sizes[*c] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.cluster_of[i] == Some(cluster))
            .collect()
    }

    /// One-hot bits in `c·n + i` layout; outliers have no bit set.
    pub fn encode(&self) -> Vec<u8> {
        let n = self.n();
        let mut bits = vec![0u8; n * self.k];
        for (i, c) in self.cluster_of.iter().enumerate() {
            if let Some(c) = c {
                bits[var_index(*c, i, n)] = 1;
            }
        }
        bits
    }
}

/// Reads cluster membership from a solved bitstring.
///
/// One set bit assigns the point; none makes it an outlier. A point set in
/// several clusters is kept in the one whose single-membership points it is
/// most similar to (summed similarity; lowest id on ties), or the lowest id
/// when no similarity is supplied.
pub fn decode(
    bits: &[u8],
    n: usize,
    k: usize,
    similarity: Option<&SimilarityMatrix>,
) -> Result<Assignment> {
    if bits.len() != n * k {
        return Err(Error::DimensionMismatch(format!(
            "{} bits for n·k = {}",
            bits.len(),
            n * k
        )));
    }
    if let Some(s) = similarity {
        if s.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "similarity over {} points, assignment over {n}",
                s.n()
            )));
        }
    }
    let sets: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..k).filter(|&c| bits[var_index(c, i, n)] == 1).collect())
        .collect();
    let mut cluster_of: Vec<Option<usize>> = sets
        .iter()
        .map(|s| if s.len() == 1 { Some(s[0]) } else { None })
        .collect();
    let clean = cluster_of.clone();

    let mut repaired = Vec::new();
    for (i, set) in sets.iter().enumerate().filter(|(_, s)| s.len() > 1) {
        let kept = match similarity {
            Some(s) => {
                let affinity = |c: usize| -> f64 {
                    (0..n)
                        .filter(|&j| j != i && clean[j] == Some(c))
                        .map(|j| s.get(i, j))
                        .sum()
                };
                set.iter()
                    .copied()
                    .map(|c| (c, affinity(c)))
                    .fold(None, |best: Option<(usize, f64)>, cur| match best {
                        Some(b) if b.1 >= cur.1 => Some(b),
                        _ => Some(cur),
                    })
                    .map(|(c, _)| c)
                    .expect("non-empty set")
            }
            None => set[0],
        };
        cluster_of[i] = Some(kept);
        repaired.push(Repair {
            point: i,
            kept,
            discarded: set.iter().copied().filter(|&c| c != kept).collect(),
        });
    }
    Ok(Assignment {
        cluster_of,
        k,
        repaired,
        source: AssignmentSource::Qubo,
    })
}

/// Per-cluster arithmetic mean of the rows of `d`; `None` for empty clusters.
/// Outliers are left out.
pub fn ensemble_average(d: &Dataset, a: &Assignment) -> Result<Vec<Option<Vec<f64>>>> {
    if a.n() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "assignment covers {} points, dataset has {}",
            a.n(),
            d.n()
        )));
    }
    let m = d.m();
    let data = d.data();
    let mut sums = vec![vec![0.0; m]; a.k];
    let mut counts = vec![0usize; a.k];
    for (i, c) in a.cluster_of.iter().enumerate() {
        if let Some(c) = *c {
            counts[c] += 1;
            for (j, s) in sums[c].iter_mut().enumerate() {
                *s += data[(i, j)];
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(mut s, cnt)| {
            (cnt > 0).then(|| {
                s.iter_mut().for_each(|v| *v /= cnt as f64);
                s
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRmse {
    pub label: i64,
    pub cluster: usize,
    /// `None` when the matched cluster is empty.
    pub rmse: Option<f64>,
    /// Points of this class that landed in the matched cluster.
    pub overlap: usize,
}

/// `table[c][l]` = number of points of class `labels[l]` in cluster `c`.
pub fn contingency(a: &Assignment, labels: &[i64]) -> (Vec<i64>, Vec<Vec<i64>>) {
    let classes: Vec<i64> = {
        let mut v: Vec<i64> = labels.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let index: BTreeMap<i64, usize> = classes.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut table = vec![vec![0i64; classes.len()]; a.k];
    for (c, l) in a.cluster_of.iter().zip(labels) {
        if let Some(c) = c {
            table[*c][index[l]] += 1;
        }
    }
    (classes, table)
}

/// Cluster → class matching maximizing the total contingency overlap.
/// Returns `matched[c] = class column`.
pub fn match_clusters(table: &[Vec<i64>]) -> Result<Vec<usize>> {
    let k = table.len();
    if k == 0 || table.iter().any(|r| r.len() != k) {
        return Err(Error::DimensionMismatch(
            "contingency table must be square and non-empty".into(),
        ));
    }
    let weights = Matrix::from_rows(table.iter().cloned())
        .map_err(|e| Error::DimensionMismatch(format!("contingency table: {e:?}")))?;
    Ok(kuhn_munkres(&weights).1)
}

/// RMSE between each class mean and the mean of its matched cluster.
pub fn rmse(means: &[Option<Vec<f64>>], d: &Dataset, a: &Assignment) -> Result<Vec<ClassRmse>> {
    let labels = d
        .labels()
        .ok_or_else(|| Error::InvalidArgument("RMSE needs ground-truth labels".into()))?;
    let (classes, table) = contingency(a, labels);
    if classes.len() != a.k || means.len() != a.k {
        return Err(Error::DimensionMismatch(format!(
            "{} clusters but {} label classes",
            a.k,
            classes.len()
        )));
    }
    let matched = match_clusters(&table)?;
    let m = d.m();
    let data = d.data();

    let mut out = Vec::with_capacity(a.k);
    for (cluster, &col) in matched.iter().enumerate() {
        let label = classes[col];
        let rows: Vec<usize> = (0..d.n()).filter(|&i| labels[i] == label).collect();
        let class_mean: Vec<f64> = (0..m)
            .map(|j| rows.iter().map(|&i| data[(i, j)]).sum::<f64>() / rows.len() as f64)
            .collect();
        let rmse = means[cluster].as_ref().map(|cm| {
            (cm.iter()
                .zip(&class_mean)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / m as f64)
                .sqrt()
        });
        out.push(ClassRmse {
            label,
            cluster,
            rmse,
            overlap: table[cluster][col] as usize,
        });
    }
    out.sort_by_key(|r| r.label);
    Ok(out)
}

/// Classical (Torgerson) MDS of angular distances into the plane.
pub fn classical_mds(dist: &AngularDistanceMatrix) -> Result<Vec<[f64; 2]>> {
    classical_mds_from_distances(dist.values())
}

/// Classical MDS of any symmetric distance matrix: double-centre the squared
/// distances and scale the two leading eigenvectors by the root of their
/// eigenvalues. A non-positive second eigenvalue leaves the second axis at 0.
pub fn classical_mds_from_distances(dist: &DMatrix<f64>) -> Result<Vec<[f64; 2]>> {
    let n = dist.nrows();
    if n < 2 || dist.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "MDS needs a square matrix with n >= 2, got {}x{}",
            n,
            dist.ncols()
        )));
    }
    let sq = dist.map(|v| v * v);
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).mean()).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| {
        -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand)
    });
    let eig = SymmetricEigen::try_new(b, 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("MDS eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));

    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    if eig.eigenvalues[order[0]] <= tol {
        return Err(Error::Numerical(
            "leading MDS eigenvalues are not positive; geometry is degenerate".into(),
        ));
    }
    let mut coords = vec![[0.0; 2]; n];
    for axis in 0..2 {
        let idx = order[axis];
        let lambda = eig.eigenvalues[idx];
        if lambda <= tol {
            continue;
        }
        let vec = eig.eigenvectors.column(idx);
        let pivot = vec
            .iter()
            .copied()
            .fold(0.0_f64, |a, v| if v.abs() > a.abs() { v } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let root = lambda.sqrt();
        for (i, c) in coords.iter_mut().enumerate() {
            c[axis] = sign * vec[i] * root;
        }
    }
    Ok(coords)
}

/// Distance of each embedded point from the embedding's centroid.
pub fn radii(coords: &[[f64; 2]]) -> Vec<f64> {
    let n = coords.len() as f64;
    let cx = coords.iter().map(|c| c[0]).sum::<f64>() / n;
    let cy = coords.iter().map(|c| c[1]).sum::<f64>() / n;
    coords
        .iter()
        .map(|c| ((c[0] - cx).powi(2) + (c[1] - cy).powi(2)).sqrt())
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Points whose embedded radius is within ±25% of the median radius.
pub fn ring_inliers(coords: &[[f64; 2]]) -> Vec<bool> {
    let r = radii(coords);
    let med = median(&r);
    r.iter().map(|&x| (x - med).abs() <= 0.25 * med).collect()
}

/// Smallest arc `(start, length)` containing every angle, in radians.
pub fn covering_arc(angles: &[f64]) -> (f64, f64) {
    let mut a: Vec<f64> = angles.iter().map(|x| x.rem_euclid(TAU)).collect();
    a.sort_by(f64::total_cmp);
    let n = a.len();
    let (mut gap, mut start) = (TAU - a[n - 1] + a[0], a[0]);
    for w in 0..n - 1 {
        let g = a[w + 1] - a[w];
        if g > gap {
            gap = g;
            start = a[w + 1];
        }
    }
    (start, TAU - gap)
}

/// Length of the intersection of two arcs on the circle.
pub fn arc_overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (s1, s2) = (a.0.rem_euclid(TAU), b.0.rem_euclid(TAU));
    [-TAU, 0.0, TAU]
        .iter()
        .map(|shift| {
            let lo = s1.max(s2 + shift);
            let hi = (s1 + a.1).min(s2 + shift + b.1);
            (hi - lo).max(0.0)
        })
        .sum()
}

/// Total pairwise overlap of the clusters' angular intervals on the MDS
/// ring, as a fraction of the full circle (capped at 1). Only ring inliers
/// that belong to a cluster take part. Zero means phase-disjoint clusters.
pub fn overlap_diagnostic(coords: &[[f64; 2]], cluster_of: &[Option<usize>]) -> Result<f64> {
    if coords.len() != cluster_of.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} coordinates for {} points",
            coords.len(),
            cluster_of.len()
        )));
    }
    let inlier = ring_inliers(coords);
    let n = coords.len() as f64;
    let cx = coords.iter().map(|c| c[0]).sum::<f64>() / n;
    let cy = coords.iter().map(|c| c[1]).sum::<f64>() / n;
    let mut angles: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (i, c) in cluster_of.iter().enumerate() {
        if let (Some(c), true) = (c, inlier[i]) {
            angles
                .entry(*c)
                .or_default()
                .push((coords[i][1] - cy).atan2(coords[i][0] - cx));
        }
    }
    if angles.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "overlap needs at least 2 clusters on the ring, found {}",
            angles.len()
        )));
    }
    let arcs: Vec<(f64, f64)> = angles.values().map(|a| covering_arc(a)).collect();
    let mut total = 0.0;
    for i in 0..arcs.len() {
        for j in (i + 1)..arcs.len() {
            total += arc_overlap(arcs[i], arcs[j]);
        }
    }
    Ok((total / TAU).min(1.0))
}

/// Circular standard deviation `sqrt(−2 ln R)` of angles in radians.
pub fn circular_std(angles: &[f64]) -> f64 {
    let n = angles.len() as f64;
    let c = angles.iter().map(|a| a.cos()).sum::<f64>() / n;
    let s = angles.iter().map(|a| a.sin()).sum::<f64>() / n;
    let r = (c * c + s * s).sqrt().min(1.0);
    (-2.0 * r.ln()).max(0.0).sqrt()
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let pairs = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&v| pairs(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| pairs(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| pairs(v)).sum();
    let total = pairs(a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
