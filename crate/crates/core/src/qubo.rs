//! The balanced clustering objective as a QUBO.
//!
//! For `n` points and `k` clusters there is one binary variable per
//! (cluster, point) pair, `q[c·n + i] = 1` when point `i` is in cluster `c`.
//! The objective is
//!
//! ```text
//! E(q) = − Σ_c Σ_{i<j} d_ij q_ci q_cj          (similarity)
//!        + λ₁ Σ_i (Σ_c q_ci − 1)²              (one-hot)
//!        + λ₂ Σ_c (Σ_i q_ci)²                  (cluster-size balance)
//! ```
//!
//! Expanding with `q² = q` gives the stored coefficients: `2λ₂ − d_ij` for
//! the same-cluster pair `(c,i),(c,j)`, `2λ₁` for the same-point pair
//! `(c,i),(c',i)`, `λ₂ − λ₁` on every variable and a constant `n·λ₁`.

use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

/// Quadratic coefficient on the pair `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadTerm(pub usize, pub usize, pub f64);

/// Clustering metadata attached to a model produced by [`build`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterLayout {
    pub n: usize,
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Variable index of `q_{c,i}`.
pub fn var_index(cluster: usize, point: usize, n: usize) -> usize {
    cluster * n + point
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuboModel {
    n_vars: usize,
    linear: Vec<f64>,
    /// Sorted by `(u, v)`, strictly upper triangular, no duplicates.
    quadratic: Vec<QuadTerm>,
    offset: f64,
    layout: Option<ClusterLayout>,
}

impl QuboModel {
    /// A general model. Quadratic keys must satisfy `u < v < n_vars` and be unique.
    pub fn from_terms(linear: Vec<f64>, mut quadratic: Vec<QuadTerm>, offset: f64) -> Result<Self> {
        let n_vars = linear.len();
        if linear.iter().any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(Error::InvalidArgument("non-finite coefficient".into()));
        }
        for &QuadTerm(u, v, c) in &quadratic {
            if u >= v {
                return Err(Error::InvalidArgument(format!(
                    "quadratic key ({u}, {v}) is not strictly upper triangular"
                )));
            }
            if v >= n_vars {
                return Err(Error::DimensionMismatch(format!(
                    "quadratic key ({u}, {v}) beyond {n_vars} variables"
                )));
            }
            if !c.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite coefficient on ({u}, {v})"
                )));
            }
        }
        quadratic.sort_by_key(|t| (t.0, t.1));
        if let Some(w) = quadratic
            .windows(2)
            .find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
        {
            return Err(Error::InvalidArgument(format!(
                "duplicate quadratic key ({}, {})",
                w[0].0, w[0].1
            )));
        }
        Ok(Self {
            n_vars,
            linear,
            quadratic,
            offset,
            layout: None,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn quadratic(&self) -> &[QuadTerm] {
        &self.quadratic
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn layout(&self) -> Option<&ClusterLayout> {
        self.layout.as_ref()
    }

    /// Largest absolute linear or quadratic coefficient.
    pub fn max_abs_coefficient(&self) -> f64 {
        self.coefficients().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// Smallest nonzero absolute linear or quadratic coefficient.
    pub fn min_abs_nonzero_coefficient(&self) -> Option<f64> {
        self.coefficients()
            .map(f64::abs)
            .filter(|c| *c > 0.0)
            .min_by(f64::total_cmp)
    }

    fn coefficients(&self) -> impl Iterator<Item = f64> + '_ {
        self.linear
            .iter()
            .copied()
            .chain(self.quadratic.iter().map(|t| t.2))
    }

    /// `offset + Σ linear·b + Σ quadratic·b_u·b_v`.
    pub fn energy(&self, bits: &[u8]) -> Result<f64> {
        self.check_bits(bits)?;
        Ok(self.energy_unchecked(bits))
    }

    pub(crate) fn energy_unchecked(&self, bits: &[u8]) -> f64 {
        let lin: f64 = self
            .linear
            .iter()
            .zip(bits)
            .filter(|(_, &b)| b == 1)
            .map(|(c, _)| c)
            .sum();
        let quad: f64 = self
            .quadratic
            .iter()
            .filter(|t| bits[t.0] == 1 && bits[t.1] == 1)
            .map(|t| t.2)
            .sum();
        self.offset + lin + quad
    }

    pub fn check_bits(&self, bits: &[u8]) -> Result<()> {
        if bits.len() != self.n_vars {
            return Err(Error::DimensionMismatch(format!(
                "{} bits for {} variables",
                bits.len(),
                self.n_vars
            )));
        }
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(Error::InvalidArgument(format!(
                "bit {i} has non-binary value {}",
                bits[i]
            )));
        }
        Ok(())
    }

    pub fn to_export(&self) -> QuboExport {
        let layout = self.layout.unwrap_or(ClusterLayout {
            n: self.n_vars,
            k: 1,
            lambda1: 0.0,
            lambda2: 0.0,
        });
        QuboExport {
            n: layout.n,
            k: layout.k,
            lambda1: layout.lambda1,
            lambda2: layout.lambda2,
            offset: self.offset,
            linear: self.linear.clone(),
            quadratic: self.quadratic.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_export()).expect("model serializes")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ex: QuboExport = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("qubo json: {e}")))?;
        if ex.n * ex.k != ex.linear.len() {
            return Err(Error::DimensionMismatch(format!(
                "n·k = {} but {} linear coefficients",
                ex.n * ex.k,
                ex.linear.len()
            )));
        }
        let mut model = Self::from_terms(ex.linear, ex.quadratic, ex.offset)?;
        model.layout = Some(ClusterLayout {
            n: ex.n,
            k: ex.k,
            lambda1: ex.lambda1,
            lambda2: ex.lambda2,
        });
        Ok(model)
    }
}

/// Interchange format for external annealers. Variable `c·n + i` is `q_{c,i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuboExport {
    pub n: usize,
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub offset: f64,
    pub linear: Vec<f64>,
    pub quadratic: Vec<QuadTerm>,
}

fn check_lambdas(k: usize, lambda1: f64, lambda2: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one cluster".into()));
    }
    for (name, l) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !l.is_finite() || l < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "{name} must be finite and non-negative, got {l}"
            )));
        }
    }
    Ok(())
}

/// Builds the balanced clustering QUBO from a similarity matrix.
pub fn build(s: &SimilarityMatrix, k: usize, lambda1: f64, lambda2: f64) -> Result<QuboModel> {
    if s.n() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 points, got {}",
            s.n()
        )));
    }
    check_lambdas(k, lambda1, lambda2)?;
    Ok(expand(s.n(), |i, j| s.get(i, j), k, lambda1, lambda2))
}

pub(crate) fn expand(
    n: usize,
    d: impl Fn(usize, usize) -> f64,
    k: usize,
    lambda1: f64,
    lambda2: f64,
) -> QuboModel {
    let n_vars = n * k;
    let linear = vec![lambda2 - lambda1; n_vars];
    let mut quadratic = Vec::with_capacity(k * n * (n - 1) / 2 + n * k * (k - 1) / 2);
    // Emitted in (u, v) order: for each u, same-cluster partners then the
    // same point in later clusters.
    for c in 0..k {
        for i in 0..n {
            let u = var_index(c, i, n);
            for j in (i + 1)..n {
                let coef = 2.0 * lambda2 - d(i, j);
                if coef != 0.0 {
                    quadratic.push(QuadTerm(u, var_index(c, j, n), coef));
                }
            }
            if lambda1 != 0.0 {
                for c2 in (c + 1)..k {
                    quadratic.push(QuadTerm(u, var_index(c2, i, n), 2.0 * lambda1));
                }
            }
        }
    }
    quadratic.sort_by_key(|t| (t.0, t.1));
    QuboModel {
        n_vars,
        linear,
        quadratic,
        offset: n as f64 * lambda1,
        layout: Some(ClusterLayout {
            n,
            k,
            lambda1,
            lambda2,
        }),
    }
}

/// The three objective terms evaluated directly from the assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// `−Σ_c Σ_{i<j} d_ij q_ci q_cj`.
    pub similarity_term: f64,
    pub onehot_penalty: f64,
    pub balance_penalty: f64,
    pub total: f64,
}

/// Per-cluster member counts `S_c = Σ_i q_ci`.
pub fn cluster_sizes(bits: &[u8], n: usize, k: usize) -> Vec<usize> {
    (0..k)
        .map(|c| (0..n).filter(|&i| bits[var_index(c, i, n)] == 1).count())
        .collect()
}

pub fn energy_breakdown(
    s: &SimilarityMatrix,
    k: usize,
    lambda1: f64,
    lambda2: f64,
    bits: &[u8],
) -> Result<EnergyBreakdown> {
    check_lambdas(k, lambda1, lambda2)?;
    let n = s.n();
    if bits.len() != n * k {
        return Err(Error::DimensionMismatch(format!(
            "{} bits for n·k = {}",
            bits.len(),
            n * k
        )));
    }
    if let Some(i) = bits.iter().position(|&b| b > 1) {
        return Err(Error::InvalidArgument(format!("bit {i} is not binary")));
    }

    let mut similarity_term = 0.0;
    for c in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| bits[var_index(c, i, n)] == 1).collect();
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                similarity_term -= s.get(i, j);
            }
        }
    }
    let onehot_penalty = lambda1
        * (0..n)
            .map(|i| {
                let memberships = (0..k).filter(|&c| bits[var_index(c, i, n)] == 1).count();
                (memberships as f64 - 1.0).powi(2)
            })
            .sum::<f64>();
    let balance_penalty = lambda2
        * cluster_sizes(bits, n, k)
            .iter()
            .map(|&s| (s * s) as f64)
            .sum::<f64>();
    Ok(EnergyBreakdown {
        similarity_term,
        onehot_penalty,
        balance_penalty,
        total: similarity_term + onehot_penalty + balance_penalty,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaRegime {
    /// Every point must be assigned; λ₁ = 100·λ₂.
    Strict,
    /// Weak one-hot penalty so poorly-fitting points can stay unassigned; λ₁ = 30·λ₂.
    OutlierPermitting,
}

impl LambdaRegime {
    pub fn ratio(self) -> f64 {
        match self {
            LambdaRegime::Strict => 100.0,
            LambdaRegime::OutlierPermitting => 30.0,
        }
    }
}

/// Default `(λ₁, λ₂)` from the similarity scale and the regime's ratio.
///
/// `λ₂ = mean(positive off-diagonal d)` and `λ₁ = ratio · λ₂`. With equal
/// cluster sizes `S = n/k`, the ordered-pair similarity sum inside clusters
/// is about `d̄·k·S²` and the balance term is `λ₂·k·S²`, so this choice puts
/// the two on the same scale independently of `n` and `k`.
///
/// Smaller λ₂ lets large clusters absorb their neighbours and leaves some of
/// the `k` clusters empty; much larger λ₂ makes leaving a point unassigned
/// cheaper than growing a cluster.
pub fn auto_lambda(s: &SimilarityMatrix, k: usize, regime: LambdaRegime) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one cluster".into()));
    }
    let n = s.n();
    let (count, sum) = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| s.get(i, j))
        .filter(|&v| v > 0.0)
        .fold((0usize, 0.0), |(c, t), v| (c + 1, t + v));
    if count == 0 {
        return Err(Error::InvalidArgument(
            "similarity matrix has no positive off-diagonal entries".into(),
        ));
    }
    let mean = sum / count as f64;
    let lambda2 = mean;
    let lambda1 = regime.ratio() * lambda2;
    info!("auto lambda ({regime:?}): lambda1 = {lambda1}, lambda2 = {lambda2}");
    Ok((lambda1, lambda2))
}
