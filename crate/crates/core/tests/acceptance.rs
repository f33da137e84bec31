//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Criterion 7 needs the UCR "crop" data, which is not shipped. Point
//! `QUBITS_CROP_CSV` at a comma-separated copy (class label in the first
//! column) to run it; `QUBITS_CROP_PER_CLASS` (default 10) sets how many
//! series per class are clustered, since the dense model grows as n²·k.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use qubits::analysis::{self, Assignment, AssignmentSource};
use qubits::annealer;
use qubits::baselines;
use qubits::dataset::{self, CsvOptions, Dataset};
use qubits::lowrank;
use qubits::pipeline::{self, InputConfig, LambdaMode, RunConfig};
use qubits::qubo::{self, LambdaRegime};
use qubits::similarity::{self, SimilarityKind, SimilarityMatrix};
use qubits::synth::{self, SynthSpec};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn random_similarity(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> SimilarityMatrix {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.random_range(lo..hi);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    SimilarityMatrix::from_matrix(m, SimilarityKind::InverseEuclidean).unwrap()
}

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..m).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// The clustering objective evaluated term by term from cluster memberships.
fn direct_objective(d: &SimilarityMatrix, k: usize, l1: f64, l2: f64, bits: &[u8]) -> f64 {
    let n = d.n();
    let q = |c: usize, i: usize| f64::from(bits[c * n + i]);
    let mut similarity = 0.0;
    for c in 0..k {
        for i in 0..n {
            for j in (i + 1)..n {
                similarity += d.get(i, j) * q(c, i) * q(c, j);
            }
        }
    }
    let onehot: f64 = (0..n)
        .map(|i| ((0..k).map(|c| q(c, i)).sum::<f64>() - 1.0).powi(2))
        .sum();
    let balance: f64 = (0..k)
        .map(|c| (0..n).map(|i| q(c, i)).sum::<f64>().powi(2))
        .sum();
    -similarity + l1 * onehot + l2 * balance
}

fn population_variance(sizes: &[usize]) -> f64 {
    let k = sizes.len() as f64;
    let mean = sizes.iter().sum::<usize>() as f64 / k;
    sizes
        .iter()
        .map(|&s| (s as f64 - mean).powi(2))
        .sum::<f64>()
        / k
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut matches = 0;
    for trial in 0..100u64 {
        let n = rng.random_range(4..=6);
        let k = rng.random_range(2..=3);
        let s = random_similarity(&mut rng, n, 0.0, 1.0);
        let regime = if trial % 2 == 0 {
            LambdaRegime::Strict
        } else {
            LambdaRegime::OutlierPermitting
        };
        let (l1, l2) = qubo::auto_lambda(&s, k, regime).unwrap();
        let model = qubo::build(&s, k, l1, l2).unwrap();
        let mut params = annealer::default_params(&model);
        params.seed = trial;
        let sa = annealer::solve(&model, &params).unwrap();
        let exact = annealer::brute_force(&model).unwrap();
        if (sa.best_energy - exact.best_energy).abs() <= 1e-9 * (1.0 + exact.best_energy.abs()) {
            matches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        matches >= 95 && secs < 30.0,
        format!("annealer matched brute force on {matches}/100 instances in {secs:.1} s"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.random_range(2..=8);
        let k = rng.random_range(1..=4);
        let s = random_similarity(&mut rng, n, -1.0, 1.0);
        let l1 = rng.random_range(0.0..10.0);
        let l2 = rng.random_range(0.0..10.0);
        let model = qubo::build(&s, k, l1, l2).unwrap();
        let bits: Vec<u8> = (0..n * k).map(|_| rng.random_range(0..2u8)).collect();
        let err = (model.energy(&bits).unwrap() - direct_objective(&s, k, l1, l2, &bits)).abs();
        worst = worst.max(err);
    }
    verdict(
        worst <= 1e-9,
        format!("500 random pairs, worst |expanded - direct| = {worst:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut clean = 0;
    let mut notes = Vec::new();
    for trial in 0..20u64 {
        let n = rng.random_range(12..=30);
        let k = rng.random_range(2..=5);
        let centres = gaussian_rows(&mut rng, k, 6);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                centres[i % k]
                    .iter()
                    .map(|c| 3.0 * c + rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let data = dataset::standardize(&Dataset::from_rows(&rows, None).unwrap()).dataset;
        let s = similarity::inverse_euclidean(&data);
        let (l1, l2) = qubo::auto_lambda(&s, k, LambdaRegime::Strict).unwrap();
        let model = qubo::build(&s, k, l1, l2).unwrap();
        let mut params = annealer::default_params(&model);
        params.seed = trial;
        let r = annealer::solve(&model, &params).unwrap();
        let a = analysis::decode(&r.best_bits, n, k, Some(&s)).unwrap();
        let e = qubo::energy_breakdown(&s, k, l1, l2, &r.best_bits).unwrap();
        if a.outlier_count() == 0 && a.repaired.is_empty() && e.onehot_penalty == 0.0 {
            clean += 1;
        } else {
            notes.push(format!(
                "trial {trial}: {} outliers, {} multi",
                a.outlier_count(),
                a.repaired.len()
            ));
        }
    }
    verdict(
        clean == 20,
        format!("{clean}/20 strict-regime solutions fully one-hot {notes:?}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, k) = (24, 4);
    let mut wins = 0;
    let mut identity_worst: f64 = 0.0;
    let mut mean_with = 0.0;
    let mut mean_without = 0.0;
    for trial in 0..20u64 {
        // structureless cloud: no preferred partition
        let rows = gaussian_rows(&mut rng, n, 3);
        let s = similarity::inverse_euclidean(&Dataset::from_rows(&rows, None).unwrap());
        let (l1, l2) = qubo::auto_lambda(&s, k, LambdaRegime::Strict).unwrap();
        let mut variances = [0.0; 2];
        for (slot, lambda2) in [(0, l2), (1, 0.0)] {
            let model = qubo::build(&s, k, l1, lambda2).unwrap();
            let mut params = annealer::default_params(&model);
            params.seed = trial;
            let r = annealer::solve(&model, &params).unwrap();
            let a = analysis::decode(&r.best_bits, n, k, Some(&s)).unwrap();
            let sizes = a.sizes();
            let mu = sizes.iter().sum::<usize>() as f64 / k as f64;
            let sum_sq: f64 = sizes.iter().map(|&x| (x * x) as f64).sum();
            let var = population_variance(&sizes);
            identity_worst = identity_worst.max((sum_sq - k as f64 * (var + mu * mu)).abs());
            if a.outlier_count() == 0 {
                let mu = n as f64 / k as f64;
                identity_worst = identity_worst.max((sum_sq - k as f64 * (var + mu * mu)).abs());
            }
            variances[slot] = var;
        }
        mean_with += variances[0] / 20.0;
        mean_without += variances[1] / 20.0;
        if variances[0] <= variances[1] {
            wins += 1;
        }
    }
    verdict(
        wins >= 18 && identity_worst <= 1e-9,
        format!(
            "size variance with balance <= without in {wins}/20 (mean {mean_with:.2} vs \
             {mean_without:.2}); sum-of-squares identity worst error {identity_worst:.1e}"
        ),
    )
}

struct Karman {
    synth: synth::SynthOutput,
    report: qubits::ClusterReport,
}

fn karman_config() -> RunConfig {
    let mut cfg = RunConfig::new(InputConfig::new("synthetic.fsk"), SimilarityKind::Cosine, 9);
    cfg.preprocess.svd_rank = 5;
    cfg.lambda = LambdaMode::Auto {
        regime: LambdaRegime::OutlierPermitting,
    };
    // The default sweep count (100 per variable) is far beyond what this
    // 2430-variable model needs once refined by local search.
    cfg.solver.sweeps = Some(5000);
    cfg.solver.restarts = Some(4);
    cfg
}

fn criterion_5(karman: &mut Option<Karman>) -> Outcome {
    let start = Instant::now();
    let out = synth::generate(&SynthSpec::default()).unwrap();
    let cfg = karman_config();
    let report = match pipeline::cluster_dataset(&cfg, out.dataset.clone()) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("pipeline error: {e}")),
    };
    let coords = report
        .mds
        .clone()
        .expect("cosine runs carry MDS coordinates");

    let radii = analysis::radii(&coords);
    let inlier = analysis::ring_inliers(&coords);
    let inlier_radii: Vec<f64> = radii
        .iter()
        .zip(&inlier)
        .filter(|(_, &ok)| ok)
        .map(|(&r, _)| r)
        .collect();
    let worst_radius = inlier_radii
        .iter()
        .map(|r| (r - 0.5).abs())
        .fold(0.0_f64, f64::max);
    let a_ok = worst_radius <= 0.05;

    let overlap = analysis::overlap_diagnostic(&coords, &report.assignment.cluster_of).unwrap();
    let b_ok = overlap <= 0.02;

    let mut baseline_worse = 0;
    let mut baseline_overlaps = Vec::new();
    for seed in 0..10 {
        let mut bcfg = cfg.clone();
        bcfg.subcommand = "baseline".into();
        bcfg.seed = seed;
        bcfg.mds = false;
        let b = pipeline::baseline_dataset(&bcfg, out.dataset.clone()).unwrap();
        let o = analysis::overlap_diagnostic(&coords, &b.assignment.cluster_of).unwrap();
        baseline_overlaps.push(o);
        if o > overlap {
            baseline_worse += 1;
        }
    }
    let c_ok = baseline_worse >= 8;

    let spreads: Vec<f64> = (0..9)
        .map(|c| report.assignment.members(c))
        .filter(|m| !m.is_empty())
        .map(|m| analysis::circular_std(&m.iter().map(|&i| out.phases[i]).collect::<Vec<_>>()))
        .collect();
    let max_spread = spreads.iter().copied().fold(0.0_f64, f64::max);
    let d_ok = max_spread < TAU / 9.0;

    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "(a) {} inliers, max |r - 0.5| = {worst_radius:.4} {}; (b) overlap {overlap:.4} {}; \
         (c) baseline overlap larger for {baseline_worse}/10 seeds, range {:.3}..{:.3} {}; \
         (d) max phase spread {max_spread:.3} < {:.3} {}; sizes {:?}, {} outliers; {secs:.1} s",
        inlier_radii.len(),
        tag(a_ok),
        tag(b_ok),
        baseline_overlaps
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min),
        baseline_overlaps.iter().copied().fold(0.0_f64, f64::max),
        tag(c_ok),
        TAU / 9.0,
        tag(d_ok),
        report.sizes,
        report.outlier_count,
    );
    *karman = Some(Karman { synth: out, report });
    verdict(a_ok && b_ok && c_ok && d_ok && secs < 120.0, detail)
}

fn tag(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn criterion_6(karman: &Option<Karman>) -> Outcome {
    let Some(Karman { synth, report }) = karman else {
        return Outcome::Fail("criterion 5 run unavailable".into());
    };
    let clean = synth.clean.rows();
    let noisy = synth.dataset.rows();
    let mut worst_ratio = f64::INFINITY;
    let mut ratios = Vec::new();
    for (c, mean) in report.means.iter().enumerate() {
        let Some(mean) = mean else { continue };
        let members = report.assignment.members(c);
        let m = mean.len();
        let mut clean_mean = vec![0.0; m];
        for &i in &members {
            for (acc, v) in clean_mean.iter_mut().zip(&clean[i]) {
                *acc += v / members.len() as f64;
            }
        }
        let frame_err = members
            .iter()
            .map(|&i| rms(&noisy[i], &clean[i]))
            .sum::<f64>()
            / members.len() as f64;
        let ratio = frame_err / rms(mean, &clean_mean);
        ratios.push((members.len(), ratio));
        worst_ratio = worst_ratio.min(ratio);
    }
    let detail = ratios
        .iter()
        .map(|(s, r)| format!("{s}:{r:.2}"))
        .collect::<Vec<_>>()
        .join(" ");
    verdict(
        worst_ratio >= 5.0,
        format!("frame/ensemble RMS error ratio per cluster (size:ratio) {detail}; min {worst_ratio:.2}"),
    )
}

fn criterion_7() -> Outcome {
    let Ok(path) = std::env::var("QUBITS_CROP_CSV") else {
        return Outcome::Skip("QUBITS_CROP_CSV not set; crop data is not shipped".into());
    };
    let per_class: usize = std::env::var("QUBITS_CROP_PER_CLASS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(10);
    let full = match dataset::load_csv(
        &path,
        CsvOptions {
            has_labels: true,
            header: false,
        },
    ) {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(format!("cannot load {path}: {e}")),
    };
    let labels = full.labels().unwrap().to_vec();
    let mut taken: BTreeMap<i64, usize> = BTreeMap::new();
    let mut rows = Vec::new();
    let mut kept_labels = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        let count = taken.entry(l).or_default();
        if *count < per_class {
            *count += 1;
            rows.push(full.row(i));
            kept_labels.push(l);
        }
    }
    let data = Dataset::from_rows(&rows, Some(kept_labels)).unwrap();
    let mut cfg = RunConfig::new(
        InputConfig::new(&path),
        SimilarityKind::InverseEuclidean,
        24,
    );
    cfg.input.labels = true;
    cfg.solver.sweeps = Some(20_000);
    cfg.solver.restarts = Some(4);
    let proposed = match pipeline::cluster_dataset(&cfg, data.clone()) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("cluster run failed: {e}")),
    };
    let mut bcfg = cfg.clone();
    bcfg.subcommand = "baseline".into();
    let baseline = pipeline::baseline_dataset(&bcfg, data).unwrap();
    let class1 = |r: &qubits::ClusterReport| {
        r.rmse
            .as_ref()
            .and_then(|v| v.iter().find(|c| c.label == 1))
            .and_then(|c| c.rmse)
    };
    match (class1(&proposed), class1(&baseline)) {
        (Some(p), Some(b)) => verdict(
            (p - 0.013).abs() <= 0.005 && (b - 0.015).abs() <= 0.005,
            format!("class 1 RMSE proposed {p:.4} (target 0.013), baseline {b:.4} (target 0.015)"),
        ),
        other => Outcome::Fail(format!("class 1 RMSE unavailable: {other:?}")),
    }
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();

    // Truncation error equals the discarded spectrum of an independent full SVD.
    for _ in 0..30 {
        let (n, m) = (rng.random_range(3..12), rng.random_range(3..12));
        let x = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = rng.random_range(1..=n.min(m));
        let d = Dataset::new(x.clone(), None, None).unwrap();
        let approx = lowrank::truncated_svd(&d, r).unwrap().reconstruct();
        let mut sv: Vec<f64> = x
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .copied()
            .collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let tail: f64 = sv[r..].iter().map(|s| s * s).sum();
        let err = (&x - approx).norm_squared();
        if (err - tail).abs() > 1e-8 * (1.0 + x.norm_squared()) {
            failures.push(format!("eckart-young {err} vs {tail}"));
        }
    }

    // Angular distance identity and invariance to positive rescaling.
    for _ in 0..30 {
        let n = rng.random_range(2..8);
        let rows = gaussian_rows(&mut rng, n, 5);
        let d = Dataset::from_rows(&rows, None).unwrap();
        let cos = similarity::cosine_similarity(&d).unwrap();
        let ang = similarity::angular_distance(&cos).unwrap();
        let scaled: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let a = rng.random_range(0.1..10.0);
                r.iter().map(|v| v * a).collect()
            })
            .collect();
        let cos2 =
            similarity::cosine_similarity(&Dataset::from_rows(&scaled, None).unwrap()).unwrap();
        for i in 0..n {
            for j in 0..n {
                if i != j && (ang.get(i, j).powi(2) - (1.0 - cos.get(i, j)) / 2.0).abs() > 1e-12 {
                    failures.push(format!("angular identity at ({i},{j})"));
                }
                if (cos.get(i, j) - cos2.get(i, j)).abs() > 1e-12 {
                    failures.push(format!("scale invariance at ({i},{j})"));
                }
            }
        }
    }

    // MDS reproduces planar configurations.
    for _ in 0..20 {
        let n = rng.random_range(3..15);
        let pts = gaussian_rows(&mut rng, n, 2);
        let dist = DMatrix::from_fn(n, n, |i, j| {
            ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt()
        });
        let coords = analysis::classical_mds_from_distances(&dist).unwrap();
        for i in 0..n {
            for j in 0..n {
                let e = ((coords[i][0] - coords[j][0]).powi(2)
                    + (coords[i][1] - coords[j][1]).powi(2))
                .sqrt();
                if (e - dist[(i, j)]).abs() > 1e-6 {
                    failures.push(format!("mds distance ({i},{j}) {e} vs {}", dist[(i, j)]));
                }
            }
        }
    }

    // decode(encode(a)) == a for one-hot assignments with outliers.
    for _ in 0..50 {
        let (n, k) = (rng.random_range(1..20), rng.random_range(1..6));
        let cluster_of: Vec<Option<usize>> = (0..n)
            .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0..k)))
            .collect();
        let a = Assignment {
            cluster_of,
            k,
            repaired: Vec::new(),
            source: AssignmentSource::Qubo,
        };
        let back = analysis::decode(&a.encode(), n, k, None).unwrap();
        if back != a {
            failures.push("decode/encode round trip".into());
        }
    }

    // Lloyd iterations never increase inertia.
    for seed in 0..20 {
        let n = rng.random_range(5..40);
        let rows = gaussian_rows(&mut rng, n, 3);
        let d = Dataset::from_rows(&rows, None).unwrap();
        let k = rng.random_range(1..=n.min(6));
        let km = baselines::kmeans_pp(&d, k, seed, 50).unwrap();
        if km
            .inertia_trace
            .windows(2)
            .any(|w| w[1] > w[0] + 1e-9 * (1.0 + w[0]))
        {
            failures.push(format!("lloyd trace not monotone {:?}", km.inertia_trace));
        }
    }

    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "eckart-young, angular identity, scale invariance, MDS, round trip, Lloyd all hold \
             (full property suites run in tests/properties.rs)"
                .into()
        } else {
            format!("{} violations, first: {}", failures.len(), failures[0])
        },
    )
}

fn main() -> ExitCode {
    let mut karman = None;
    let results = [
        (1, "solver oracle equivalence", criterion_1()),
        (2, "QUBO expansion correctness", criterion_2()),
        (3, "strict-regime constraint satisfaction", criterion_3()),
        (4, "balance-term effect", criterion_4()),
        (
            5,
            "synthetic periodic-flow reproduction",
            criterion_5(&mut karman),
        ),
        (6, "ensemble-average denoising", criterion_6(&karman)),
        (7, "crop reproduction (optional)", criterion_7()),
        (8, "numerical invariant suites", criterion_8()),
    ];
    let mut failed = 0;
    for (id, name, outcome) in &results {
        let (status, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {id} [{status}] {name}: {detail}");
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all required criteria passed");
        ExitCode::SUCCESS
    }
}
