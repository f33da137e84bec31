//! End-to-end runs driven by a serializable [`RunConfig`].
//!
//! Two preprocessing paths are supported:
//!
//! * series path (`inv-euclid`): per-row standardization, inverse Euclidean
//!   similarity on the standardized rows;
//! * image path (`cosine`): optional region of interest, row-mean removal,
//!   rank-`r` SVD denoising, cosine similarity; MDS coordinates are added.
//!
//! Ensemble means in the report always come from the original rows.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, Assignment, AssignmentSource};
use crate::annealer::{self, AnnealParams};
use crate::baselines;
use crate::dataset::{self, CsvOptions, Dataset, Roi, StandardizeMode};
use crate::error::{Error, Result};
use crate::lowrank;
use crate::qubo::{self, LambdaRegime, QuboModel};
use crate::report::{ClusterReport, KMeansSummary, SolverSummary};
use crate::similarity::{self, SimilarityKind, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    Csv,
    Fsk1,
}

impl InputFormat {
    /// `.fsk` / `.fsk1` files are frame stacks; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("fsk") || ext.eq_ignore_ascii_case("fsk1") => {
                InputFormat::Fsk1
            }
            _ => InputFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputConfig {
    pub path: PathBuf,
    pub format: InputFormat,
    pub labels: bool,
    pub header: bool,
    pub roi: Option<Roi>,
}

impl InputConfig {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        Self {
            format: InputFormat::from_path(&path),
            path,
            labels: false,
            header: false,
            roi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub standardize: StandardizeMode,
    /// Remove each row's mean before similarity.
    pub center: bool,
    /// 0 disables denoising.
    pub svd_rank: usize,
}

impl PreprocessConfig {
    /// Defaults of the series path or the image path.
    pub fn for_metric(metric: SimilarityKind) -> Self {
        match metric {
            SimilarityKind::InverseEuclidean => Self {
                standardize: StandardizeMode::Row,
                center: false,
                svd_rank: 0,
            },
            SimilarityKind::Cosine => Self {
                standardize: StandardizeMode::None,
                center: true,
                svd_rank: lowrank::DEFAULT_RANK,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum LambdaMode {
    Auto { regime: LambdaRegime },
    Explicit { lambda1: f64, lambda2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Anneal,
    BruteForce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Unset fields fall back to [`annealer::default_params`].
    pub sweeps: Option<usize>,
    pub restarts: Option<usize>,
    pub t_initial: Option<f64>,
    pub t_final: Option<f64>,
    /// Finish an annealed solution with [`annealer::polish`].
    pub polish: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: SolverKind::Anneal,
            sweeps: None,
            restarts: None,
            t_initial: None,
            t_final: None,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub n_init: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iter: baselines::DEFAULT_MAX_ITER,
            n_init: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub report: Option<PathBuf>,
    pub dump_spectrum: Option<PathBuf>,
    pub dump_similarity: Option<PathBuf>,
    pub dump_mds: Option<PathBuf>,
    pub dump_means: Option<PathBuf>,
    /// Cluster means as an FSK1 stack (frame datasets only).
    pub dump_means_fsk: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub input: InputConfig,
    pub metric: SimilarityKind,
    pub k: usize,
    pub lambda: LambdaMode,
    pub preprocess: PreprocessConfig,
    pub solver: SolverConfig,
    pub kmeans: KMeansConfig,
    /// Add MDS coordinates to the report.
    pub mds: bool,
    pub outputs: OutputConfig,
    pub seed: u64,
}

impl RunConfig {
    /// A `cluster` run with the metric's default preprocessing.
    pub fn new(input: InputConfig, metric: SimilarityKind, k: usize) -> Self {
        Self {
            subcommand: "cluster".into(),
            input,
            metric,
            k,
            lambda: LambdaMode::Auto {
                regime: LambdaRegime::Strict,
            },
            preprocess: PreprocessConfig::for_metric(metric),
            solver: SolverConfig::default(),
            kmeans: KMeansConfig::default(),
            mds: metric == SimilarityKind::Cosine,
            outputs: OutputConfig::default(),
            seed: 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("config json: {e}")))
    }
}

/// The dataset at each preprocessing stage.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// As loaded.
    pub original: Dataset,
    /// After the standardization step; RMSE is measured here.
    pub standardized: Dataset,
    /// Input to the similarity computation.
    pub working: Dataset,
    pub spectrum: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

pub fn load_input(input: &InputConfig) -> Result<Dataset> {
    match input.format {
        InputFormat::Csv => dataset::load_csv(
            &input.path,
            CsvOptions {
                has_labels: input.labels,
                header: input.header,
            },
        ),
        InputFormat::Fsk1 => {
            if input.labels {
                return Err(Error::InvalidArgument(
                    "frame stacks carry no labels".into(),
                ));
            }
            dataset::load_frames(&input.path)
        }
    }
}

/// Preprocesses an already-loaded dataset according to `cfg`.
pub fn prepare_dataset(cfg: &RunConfig, original: Dataset) -> Result<Prepared> {
    let mut warnings = Vec::new();
    let region = match cfg.input.roi {
        Some(roi) => original.crop_frames(roi)?,
        None => original.clone(),
    };
    let st = dataset::standardize_with(&region, cfg.preprocess.standardize);
    if !st.constant_rows.is_empty() {
        warnings.push(format!(
            "{} constant rows standardized to zeros: {:?}",
            st.constant_rows.len(),
            st.constant_rows
        ));
    }
    let standardized = st.dataset;
    let mut working = if cfg.preprocess.center {
        dataset::center_rows(&standardized)
    } else {
        standardized.clone()
    };
    let mut spectrum = None;
    if cfg.preprocess.svd_rank > 0 {
        let basis = lowrank::truncated_svd(&working, cfg.preprocess.svd_rank)?;
        working = working.with_data(basis.reconstruct())?;
        spectrum = Some(basis.spectrum);
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(Prepared {
        original,
        standardized,
        working,
        spectrum,
        warnings,
    })
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    prepare_dataset(cfg, load_input(&cfg.input)?)
}

pub fn resolve_lambdas(cfg: &RunConfig, s: &SimilarityMatrix) -> Result<(f64, f64)> {
    match cfg.lambda {
        LambdaMode::Auto { regime } => qubo::auto_lambda(s, cfg.k, regime),
        LambdaMode::Explicit { lambda1, lambda2 } => Ok((lambda1, lambda2)),
    }
}

pub fn resolve_anneal_params(cfg: &RunConfig, model: &QuboModel) -> AnnealParams {
    let mut p = annealer::default_params(model);
    let s = &cfg.solver;
    if let Some(v) = s.sweeps {
        p.sweeps = v;
    }
    if let Some(v) = s.restarts {
        p.restarts = v;
    }
    if let Some(v) = s.t_initial {
        p.t_initial = v;
    }
    if let Some(v) = s.t_final {
        p.t_final = v;
    }
    p.seed = cfg.seed;
    p
}

/// Cosine geometry used for the MDS diagnostic.
fn mds_coordinates(prep: &Prepared, s: Option<&SimilarityMatrix>) -> Result<Vec<[f64; 2]>> {
    let cos = match s.filter(|s| s.kind() == SimilarityKind::Cosine) {
        Some(s) => s.clone(),
        None => similarity::cosine_similarity(&prep.working)?,
    };
    analysis::classical_mds(&similarity::angular_distance(&cos)?)
}

fn now() -> Option<u64> {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_rows<'a>(rows: impl Iterator<Item = &'a [f64]>) -> String {
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

fn write_dumps(
    cfg: &RunConfig,
    prep: &Prepared,
    s: Option<&SimilarityMatrix>,
    report: &ClusterReport,
) -> Result<()> {
    let o = &cfg.outputs;
    if let (Some(path), Some(spec)) = (&o.dump_spectrum, &prep.spectrum) {
        let mut text = String::from("index,singular_value\n");
        for (i, v) in spec.iter().enumerate() {
            let _ = writeln!(text, "{i},{v}");
        }
        write_text(path, &text)?;
    }
    if let (Some(path), Some(s)) = (&o.dump_similarity, s) {
        let rows: Vec<Vec<f64>> = (0..s.n())
            .map(|i| s.values().row(i).iter().copied().collect())
            .collect();
        write_text(path, &csv_rows(rows.iter().map(Vec::as_slice)))?;
    }
    if let (Some(path), Some(mds)) = (&o.dump_mds, &report.mds) {
        let inlier = analysis::ring_inliers(mds);
        let mut text = String::from("index,x,y,cluster,ring_inlier\n");
        for (i, c) in mds.iter().enumerate() {
            let cl =
                report.assignment.cluster_of[i].map_or("outlier".to_string(), |c| c.to_string());
            let _ = writeln!(text, "{i},{},{},{cl},{}", c[0], c[1], inlier[i]);
        }
        write_text(path, &text)?;
    }
    if let Some(path) = &o.dump_means {
        let mut text = String::new();
        for (c, mean) in report.means.iter().enumerate() {
            if let Some(mean) = mean {
                let cells: Vec<String> = mean.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(text, "{c},{}", cells.join(","));
            }
        }
        write_text(path, &text)?;
    }
    if let Some(path) = &o.dump_means_fsk {
        let shape = prep.original.frame_shape().ok_or_else(|| {
            Error::InvalidArgument("FSK1 mean export needs a frame dataset".into())
        })?;
        let rows: Vec<Vec<f64>> = report.means.iter().flatten().cloned().collect();
        if rows.len() < 2 {
            return Err(Error::InsufficientData(
                "FSK1 mean export needs at least 2 non-empty clusters".into(),
            ));
        }
        let flat: Vec<f64> = rows.concat();
        let stack = Dataset::new(
            nalgebra::DMatrix::from_row_slice(rows.len(), shape.0 * shape.1, &flat),
            None,
            Some(shape),
        )?;
        dataset::write_frames(path, &stack)?;
    }
    if let Some(path) = &o.report {
        report.write(path)?;
    }
    Ok(())
}

fn label_rmse(
    prep: &Prepared,
    a: &Assignment,
    warnings: &mut Vec<String>,
) -> Result<Option<Vec<analysis::ClassRmse>>> {
    let Some(labels) = prep.standardized.labels() else {
        return Ok(None);
    };
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() != a.k {
        warnings.push(format!(
            "RMSE skipped: {} label classes for {} clusters",
            classes.len(),
            a.k
        ));
        return Ok(None);
    }
    let means = analysis::ensemble_average(&prep.standardized, a)?;
    analysis::rmse(&means, &prep.standardized, a).map(Some)
}

/// Clusters an already-loaded dataset with the QUBO objective.
pub fn cluster_dataset(cfg: &RunConfig, original: Dataset) -> Result<ClusterReport> {
    let prep = prepare_dataset(cfg, original)?;
    let s = similarity::compute(&prep.working, cfg.metric)?;
    let (lambda1, lambda2) = resolve_lambdas(cfg, &s)?;
    let model = qubo::build(&s, cfg.k, lambda1, lambda2)?;
    info!(
        "QUBO: {} variables, {} quadratic terms",
        model.n_vars(),
        model.quadratic().len()
    );

    let (mut result, params) = match cfg.solver.kind {
        SolverKind::Anneal => {
            let p = resolve_anneal_params(cfg, &model);
            (annealer::solve(&model, &p)?, Some(p))
        }
        SolverKind::BruteForce => (annealer::brute_force(&model)?, None),
    };
    let annealed_energy = result.best_energy;
    let polished = cfg.solver.polish && cfg.solver.kind == SolverKind::Anneal;
    if polished {
        let (bits, energy) = annealer::polish(&model, &result.best_bits)?;
        info!("polish: {annealed_energy} -> {energy}");
        result.best_bits = bits;
        result.best_energy = energy;
    }
    let n = prep.original.n();
    let assignment = analysis::decode(&result.best_bits, n, cfg.k, Some(&s))?;
    let energy = qubo::energy_breakdown(&s, cfg.k, lambda1, lambda2, &result.best_bits)?;

    let mut warnings = prep.warnings.clone();
    if !assignment.repaired.is_empty() {
        warnings.push(format!(
            "{} points were set in several clusters and repaired",
            assignment.repaired.len()
        ));
    }
    let rmse = label_rmse(&prep, &assignment, &mut warnings)?;
    let mds = if cfg.mds {
        Some(mds_coordinates(&prep, Some(&s))?)
    } else {
        None
    };

    let report = ClusterReport {
        method: AssignmentSource::Qubo,
        config: cfg.clone(),
        dataset_digest: prep.original.digest(),
        n,
        m: prep.original.m(),
        k: cfg.k,
        sizes: assignment.sizes(),
        outlier_count: assignment.outlier_count(),
        means: analysis::ensemble_average(&prep.original, &assignment)?,
        assignment,
        lambda1: Some(lambda1),
        lambda2: Some(lambda2),
        energy: Some(energy),
        solver: Some(SolverSummary {
            kind: match cfg.solver.kind {
                SolverKind::Anneal => "anneal".into(),
                SolverKind::BruteForce => "brute-force".into(),
            },
            params,
            polished,
            annealed_energy,
            best_energy: result.best_energy,
            energy_trace: result.energy_trace,
            restarts_hitting_best: result.restarts_hitting_best,
        }),
        kmeans: None,
        rmse,
        mds,
        warnings,
        created_at: now(),
    };
    write_dumps(cfg, &prep, Some(&s), &report)?;
    Ok(report)
}

pub fn run_cluster(cfg: &RunConfig) -> Result<ClusterReport> {
    cluster_dataset(cfg, load_input(&cfg.input)?)
}

/// k-means++ on the standardized rows of an already-loaded dataset.
pub fn baseline_dataset(cfg: &RunConfig, original: Dataset) -> Result<ClusterReport> {
    let prep = prepare_dataset(cfg, original)?;
    let km = baselines::kmeans_best_of(
        &prep.standardized,
        cfg.k,
        cfg.seed,
        cfg.kmeans.max_iter,
        cfg.kmeans.n_init,
    )?;
    let assignment = Assignment::from_kmeans(&km.assignments, cfg.k);
    let mut warnings = prep.warnings.clone();
    let rmse = label_rmse(&prep, &assignment, &mut warnings)?;
    let mds = if cfg.mds {
        Some(mds_coordinates(&prep, None)?)
    } else {
        None
    };
    let report = ClusterReport {
        method: AssignmentSource::Kmeans,
        config: cfg.clone(),
        dataset_digest: prep.original.digest(),
        n: prep.original.n(),
        m: prep.original.m(),
        k: cfg.k,
        sizes: assignment.sizes(),
        outlier_count: 0,
        means: analysis::ensemble_average(&prep.original, &assignment)?,
        assignment,
        lambda1: None,
        lambda2: None,
        energy: None,
        solver: None,
        kmeans: Some(KMeansSummary {
            inertia: km.inertia,
            iterations: km.iterations,
        }),
        rmse,
        mds,
        warnings,
        created_at: now(),
    };
    write_dumps(cfg, &prep, None, &report)?;
    Ok(report)
}

pub fn run_baseline(cfg: &RunConfig) -> Result<ClusterReport> {
    baseline_dataset(cfg, load_input(&cfg.input)?)
}

/// MDS coordinates of the image-path cosine geometry.
pub fn run_mds(cfg: &RunConfig) -> Result<Vec<[f64; 2]>> {
    let prep = prepare(cfg)?;
    let coords = mds_coordinates(&prep, None)?;
    if let Some(path) = &cfg.outputs.dump_mds {
        let mut text = String::from("index,x,y\n");
        for (i, c) in coords.iter().enumerate() {
            let _ = writeln!(text, "{i},{},{}", c[0], c[1]);
        }
        write_text(path, &text)?;
    }
    Ok(coords)
}

/// The QUBO model a `cluster` run with `cfg` would solve.
pub fn export_qubo(cfg: &RunConfig) -> Result<QuboModel> {
    let prep = prepare(cfg)?;
    let s = similarity::compute(&prep.working, cfg.metric)?;
    let (lambda1, lambda2) = resolve_lambdas(cfg, &s)?;
    let model = qubo::build(&s, cfg.k, lambda1, lambda2)?;
    if let Some(path) = &cfg.outputs.report {
        model.write_json(path)?;
    }
    if let Some(path) = &cfg.outputs.dump_similarity {
        let rows: Vec<Vec<f64>> = (0..s.n())
            .map(|i| s.values().row(i).iter().copied().collect())
            .collect();
        write_text(path, &csv_rows(rows.iter().map(Vec::as_slice)))?;
    }
    Ok(model)
}
