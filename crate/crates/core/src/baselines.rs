//! k-means with k-means++ seeding over Euclidean distance, the reference
//! method the QUBO clustering is compared against.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Iteration cap used when none is given.
pub const DEFAULT_MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    /// `k` rows of length `m`.
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, cent)| (c, sq_dist(x, cent)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

/// D² sampling: each new centre is drawn with probability proportional to
/// the squared distance to the closest centre chosen so far.
fn plus_plus_seeds(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centroids = vec![rows[rng.random_range(0..n)].clone()];
    let mut closest: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&closest) {
            Ok(dist) => dist.sample(rng),
            // every point already coincides with a centre
            Err(_) => rng.random_range(0..n),
        };
        centroids.push(rows[next].clone());
        let latest = centroids.last().unwrap();
        for (d, r) in closest.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, latest));
        }
    }
    centroids
}

fn means(
    rows: &[Vec<f64>],
    assignments: &[usize],
    k: usize,
    m: usize,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; m]; k];
    let mut counts = vec![0usize; k];
    for (r, &c) in rows.iter().zip(assignments) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(r) {
            *s += v;
        }
    }
    for (s, &cnt) in sums.iter_mut().zip(&counts) {
        if cnt > 0 {
            s.iter_mut().for_each(|v| *v /= cnt as f64);
        }
    }
    (sums, counts)
}

/// Moves the point farthest from its own centroid into each empty cluster,
/// which is re-centred on it. Donor clusters keep at least one member.
fn repair_empty(
    rows: &[Vec<f64>],
    assignments: &mut [usize],
    centroids: &mut [Vec<f64>],
    counts: &mut [usize],
) {
    for empty in 0..counts.len() {
        if counts[empty] > 0 {
            continue;
        }
        let far = (0..rows.len())
            .filter(|&i| counts[assignments[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(&rows[a], &centroids[assignments[a]])
                    .total_cmp(&sq_dist(&rows[b], &centroids[assignments[b]]))
                    .then(b.cmp(&a))
            });
        if let Some(i) = far {
            counts[assignments[i]] -= 1;
            assignments[i] = empty;
            counts[empty] = 1;
            centroids[empty] = rows[i].clone();
        }
    }
}

/// One k-means run: k-means++ seeding, then Lloyd iterations until the
/// assignment stops changing or `max_iter` is reached.
pub fn kmeans_pp(d: &Dataset, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let (n, m) = (d.n(), d.m());
    if n == 0 {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={n}"
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let rows = d.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(&rows, k, &mut rng);

    let mut assignments = vec![usize::MAX; n];
    let mut inertia_trace = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut changed = false;
        for (a, r) in assignments.iter_mut().zip(&rows) {
            let (c, _) = nearest(r, &centroids);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        let (_, mut counts) = means(&rows, &assignments, k, m);
        if counts.contains(&0) {
            repair_empty(&rows, &mut assignments, &mut centroids, &mut counts);
            changed = true;
        }
        inertia_trace.push(inertia(&rows, &assignments, &centroids));
        if !changed {
            break;
        }
        centroids = means(&rows, &assignments, k, m).0;
    }
    let inertia = inertia(&rows, &assignments, &centroids);
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia,
        iterations,
        inertia_trace,
    })
}

fn inertia(rows: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    rows.iter()
        .zip(assignments)
        .map(|(r, &c)| sq_dist(r, &centroids[c]))
        .sum()
}

/// Best of `n_init` runs with seeds `seed, seed + 1, …`; lowest inertia wins,
/// earlier seed on ties.
pub fn kmeans_best_of(
    d: &Dataset,
    k: usize,
    seed: u64,
    max_iter: usize,
    n_init: usize,
) -> Result<KMeansResult> {
    let mut best: Option<KMeansResult> = None;
    for r in 0..n_init.max(1) as u64 {
        let run = kmeans_pp(d, k, seed.wrapping_add(r), max_iter)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("n_init >= 1"))
}
