//! Serialized run reports and side-by-side comparison of two runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{overlap_diagnostic, Assignment, AssignmentSource, ClassRmse};
use crate::annealer::AnnealParams;
use crate::error::{Error, Result};
use crate::pipeline::RunConfig;
use crate::qubo::EnergyBreakdown;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub kind: String,
    pub params: Option<AnnealParams>,
    /// Whether the annealed bits were refined by local search.
    pub polished: bool,
    /// Best energy before refinement.
    pub annealed_energy: f64,
    pub best_energy: f64,
    pub energy_trace: Vec<f64>,
    pub restarts_hitting_best: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansSummary {
    pub inertia: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub method: AssignmentSource,
    /// Fully resolved configuration of the run.
    pub config: RunConfig,
    pub dataset_digest: String,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub sizes: Vec<usize>,
    pub outlier_count: usize,
    pub assignment: Assignment,
    /// Ensemble mean of the original rows per cluster; `null` when empty.
    pub means: Vec<Option<Vec<f64>>>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub energy: Option<EnergyBreakdown>,
    pub solver: Option<SolverSummary>,
    pub kmeans: Option<KMeansSummary>,
    pub rmse: Option<Vec<ClassRmse>>,
    pub mds: Option<Vec<[f64; 2]>>,
    pub warnings: Vec<String>,
    /// Seconds since the Unix epoch; the only field that differs between
    /// otherwise identical runs.
    pub created_at: Option<u64>,
}

impl ClusterReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("report json: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: AssignmentSource,
    pub sizes: Vec<usize>,
    pub size_variance: f64,
    pub outlier_count: usize,
    pub rmse: Option<Vec<ClassRmse>>,
    pub energy: Option<EnergyBreakdown>,
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset_digest: String,
    pub a: RunSummary,
    pub b: RunSummary,
    /// `a − b` for sizes (sorted descending first), outlier count, and
    /// overlap where both exist.
    pub size_deltas: Vec<i64>,
    pub outlier_delta: i64,
    pub overlap_delta: Option<f64>,
    /// Per class label, `a − b` RMSE where both exist.
    pub rmse_deltas: Vec<(i64, Option<f64>)>,
}

/// Population variance of cluster sizes.
pub fn size_variance(sizes: &[usize]) -> f64 {
    let k = sizes.len() as f64;
    let mean = sizes.iter().sum::<usize>() as f64 / k;
    sizes
        .iter()
        .map(|&s| (s as f64 - mean).powi(2))
        .sum::<f64>()
        / k
}

fn summarize(r: &ClusterReport, mds: Option<&[[f64; 2]]>) -> RunSummary {
    let overlap = mds.and_then(|c| overlap_diagnostic(c, &r.assignment.cluster_of).ok());
    RunSummary {
        method: r.method,
        sizes: r.sizes.clone(),
        size_variance: size_variance(&r.sizes),
        outlier_count: r.outlier_count,
        rmse: r.rmse.clone(),
        energy: r.energy,
        overlap,
    }
}

/// Compares two reports over the same dataset. A report without MDS
/// coordinates borrows the other's for the overlap diagnostic.
pub fn run_eval(a: &ClusterReport, b: &ClusterReport) -> Result<Comparison> {
    if a.dataset_digest != b.dataset_digest {
        return Err(Error::InvalidArgument(format!(
            "reports describe different datasets ({} vs {})",
            a.dataset_digest, b.dataset_digest
        )));
    }
    let mds = a.mds.as_deref().or(b.mds.as_deref());
    let sa = summarize(a, a.mds.as_deref().or(mds));
    let sb = summarize(b, b.mds.as_deref().or(mds));

    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable_by(|x, y| y.cmp(x));
        v
    };
    let (za, zb) = (sorted(&sa.sizes), sorted(&sb.sizes));
    let size_deltas = (0..za.len().max(zb.len()))
        .map(|i| *za.get(i).unwrap_or(&0) as i64 - *zb.get(i).unwrap_or(&0) as i64)
        .collect();

    let mut rmse_deltas = Vec::new();
    if let (Some(ra), Some(rb)) = (&sa.rmse, &sb.rmse) {
        for x in ra {
            let other = rb.iter().find(|y| y.label == x.label);
            let delta = match (x.rmse, other.and_then(|y| y.rmse)) {
                (Some(p), Some(q)) => Some(p - q),
                _ => None,
            };
            rmse_deltas.push((x.label, delta));
        }
    }

    Ok(Comparison {
        dataset_digest: a.dataset_digest.clone(),
        size_deltas,
        outlier_delta: sa.outlier_count as i64 - sb.outlier_count as i64,
        overlap_delta: sa.overlap.zip(sb.overlap).map(|(x, y)| x - y),
        rmse_deltas,
        a: sa,
        b: sb,
    })
}
