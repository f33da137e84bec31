//! Simulated annealing over a [`QuboModel`], plus an exhaustive solver used
//! as the ground-truth oracle on small instances.
//!
//! Each restart starts from random bits and runs single-bit-flip Metropolis
//! sweeps over a geometric temperature schedule. The energy change of a flip
//! is read from a maintained local field, so a rejected move costs O(1) and
//! an accepted one O(degree).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubo::QuboModel;

/// Largest problem [`brute_force`] will enumerate.
pub const BRUTE_FORCE_MAX_VARS: usize = 24;

const MAX_DEFAULT_SWEEPS: usize = 1_000_000;
const DEFAULT_RESTARTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealParams {
    /// Full passes over the variables per restart.
    pub sweeps: usize,
    pub restarts: usize,
    pub t_initial: f64,
    pub t_final: f64,
    pub seed: u64,
    pub schedule: Schedule,
}

impl AnnealParams {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument(
                "sweeps and restarts must be at least 1".into(),
            ));
        }
        if !(self.t_final > 0.0 && self.t_final < self.t_initial && self.t_initial.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < t_final < t_initial, got {} and {}",
                self.t_final, self.t_initial
            )));
        }
        Ok(())
    }

    /// Temperature at sweep `s` of `sweeps`.
    pub fn temperature(&self, s: usize) -> f64 {
        if self.sweeps == 1 {
            return self.t_final;
        }
        let frac = s as f64 / (self.sweeps - 1) as f64;
        self.t_initial * (self.t_final / self.t_initial).powf(frac)
    }
}

/// Temperatures spanning the coefficient scale of `m`.
pub fn default_params(m: &QuboModel) -> AnnealParams {
    let (t_initial, t_final) = match m.min_abs_nonzero_coefficient() {
        Some(min) => (m.max_abs_coefficient(), 1e-3 * min),
        None => (1.0, 1e-3),
    };
    AnnealParams {
        sweeps: (100 * m.n_vars()).clamp(1, MAX_DEFAULT_SWEEPS),
        restarts: DEFAULT_RESTARTS,
        t_initial,
        t_final,
        seed: 0,
        schedule: Schedule::Geometric,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub best_bits: Vec<u8>,
    pub best_energy: f64,
    /// Best energy of each restart, in restart order.
    pub energy_trace: Vec<f64>,
    pub restarts_hitting_best: usize,
}

/// Compressed adjacency: neighbours of `v` are `cols[starts[v]..starts[v+1]]`.
struct Adjacency {
    starts: Vec<usize>,
    cols: Vec<u32>,
    coefs: Vec<f64>,
}

impl Adjacency {
    fn new(m: &QuboModel) -> Self {
        let n = m.n_vars();
        let mut degree = vec![0usize; n];
        for t in m.quadratic() {
            degree[t.0] += 1;
            degree[t.1] += 1;
        }
        let mut starts = vec![0usize; n + 1];
        for v in 0..n {
            starts[v + 1] = starts[v] + degree[v];
        }
        let mut fill = starts.clone();
        let total = starts[n];
        let mut cols = vec![0u32; total];
        let mut coefs = vec![0.0; total];
        for t in m.quadratic() {
            for (a, b) in [(t.0, t.1), (t.1, t.0)] {
                cols[fill[a]] = b as u32;
                coefs[fill[a]] = t.2;
                fill[a] += 1;
            }
        }
        Self {
            starts,
            cols,
            coefs,
        }
    }

    fn neighbours(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.starts[v]..self.starts[v + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.coefs[r])
            .map(|(&c, &w)| (c as usize, w))
    }
}

/// Bits, energy and the local fields `h_v = linear_v + Σ_u Q_uv b_u`.
struct State<'a> {
    model: &'a QuboModel,
    adj: &'a Adjacency,
    bits: Vec<u8>,
    field: Vec<f64>,
    energy: f64,
}

impl<'a> State<'a> {
    fn new(model: &'a QuboModel, adj: &'a Adjacency, bits: Vec<u8>) -> Self {
        let mut field = model.linear().to_vec();
        for t in model.quadratic() {
            if bits[t.1] == 1 {
                field[t.0] += t.2;
            }
            if bits[t.0] == 1 {
                field[t.1] += t.2;
            }
        }
        let energy = model.energy_unchecked(&bits);
        Self {
            model,
            adj,
            bits,
            field,
            energy,
        }
    }

    #[inline]
    fn delta(&self, v: usize) -> f64 {
        if self.bits[v] == 0 {
            self.field[v]
        } else {
            -self.field[v]
        }
    }

    fn flip(&mut self, v: usize, delta: f64) {
        let sign = if self.bits[v] == 0 { 1.0 } else { -1.0 };
        self.bits[v] ^= 1;
        self.energy += delta;
        for (u, w) in self.adj.neighbours(v) {
            self.field[u] += sign * w;
        }
    }

    /// Recomputes energy and fields from scratch, returning the drift that was removed.
    fn resync(&mut self) -> f64 {
        let fresh = State::new(self.model, self.adj, std::mem::take(&mut self.bits));
        let drift = (fresh.energy - self.energy).abs();
        *self = fresh;
        drift
    }
}

fn drift_tolerance(m: &QuboModel) -> f64 {
    1e-9 * (1.0 + m.offset().abs() + m.max_abs_coefficient() * m.n_vars() as f64)
}

struct RestartOutcome {
    bits: Vec<u8>,
    energy: f64,
}

fn run_restart(m: &QuboModel, adj: &Adjacency, p: &AnnealParams, restart: usize) -> RestartOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    rng.set_stream(restart as u64);
    let n = m.n_vars();
    let bits: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
    let mut state = State::new(m, adj, bits);
    let mut best_bits = state.bits.clone();
    let mut best_energy = state.energy;

    // Amortized drift check: full recomputation costs O(terms).
    let check_every = 1000 * (1 + m.quadratic().len() / 10_000);
    let mut accepted = 0usize;

    for s in 0..p.sweeps {
        let beta = 1.0 / p.temperature(s);
        for v in 0..n {
            let delta = state.delta(v);
            // exp(-40) is below the resolution of a uniform f64 draw
            let x = delta * beta;
            if x <= 0.0 || (x < 40.0 && rng.random::<f64>() < (-x).exp()) {
                state.flip(v, delta);
                accepted += 1;
                if state.energy < best_energy {
                    best_energy = state.energy;
                    best_bits.copy_from_slice(&state.bits);
                }
                if cfg!(debug_assertions) && accepted.is_multiple_of(check_every) {
                    let drift = state.resync();
                    debug_assert!(
                        drift <= drift_tolerance(m),
                        "incremental energy drifted by {drift}"
                    );
                }
            }
        }
    }
    let energy = m.energy_unchecked(&best_bits);
    RestartOutcome {
        bits: best_bits,
        energy,
    }
}

/// Descends from `bits` until no single flip and no flip of a coupled pair
/// lowers the energy. Pair moves cover moving a point between clusters,
/// which single flips can only do through a higher-energy intermediate.
pub fn polish(m: &QuboModel, bits: &[u8]) -> Result<(Vec<u8>, f64)> {
    m.check_bits(bits)?;
    let adj = Adjacency::new(m);
    let mut state = State::new(m, &adj, bits.to_vec());
    let tol = drift_tolerance(m);
    let step = |b: u8| if b == 0 { 1.0 } else { -1.0 };
    loop {
        let mut improved = false;
        for v in 0..m.n_vars() {
            let d = state.delta(v);
            if d < -tol {
                state.flip(v, d);
                improved = true;
            }
        }
        for t in m.quadratic() {
            let (u, v) = (t.0, t.1);
            let du = state.delta(u);
            let joint = du + state.delta(v) + t.2 * step(state.bits[u]) * step(state.bits[v]);
            if joint < -tol {
                state.flip(u, du);
                let dv = state.delta(v);
                state.flip(v, dv);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    let energy = m.energy_unchecked(&state.bits);
    Ok((state.bits, energy))
}

/// Anneals `m`; deterministic for a fixed `p.seed` regardless of thread count.
pub fn solve(m: &QuboModel, p: &AnnealParams) -> Result<SolveResult> {
    p.validate()?;
    let adj = Adjacency::new(m);
    let outcomes: Vec<RestartOutcome> = (0..p.restarts)
        .into_par_iter()
        .map(|r| run_restart(m, &adj, p, r))
        .collect();

    let energy_trace: Vec<f64> = outcomes.iter().map(|o| o.energy).collect();
    // first restart wins ties
    let best = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.energy.total_cmp(&b.1.energy).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("at least one restart");
    let best_energy = outcomes[best].energy;
    let tol = drift_tolerance(m);
    let restarts_hitting_best = energy_trace
        .iter()
        .filter(|&&e| e - best_energy <= tol)
        .count();
    Ok(SolveResult {
        best_bits: outcomes[best].bits.clone(),
        best_energy,
        energy_trace,
        restarts_hitting_best,
    })
}

/// Exact minimum by enumeration; ties go to the lexicographically smallest
/// bitstring (bit 0 most significant).
pub fn brute_force(m: &QuboModel) -> Result<SolveResult> {
    let n = m.n_vars();
    if n > BRUTE_FORCE_MAX_VARS {
        return Err(Error::TooLarge(format!(
            "{n} variables; enumeration is limited to {BRUTE_FORCE_MAX_VARS}"
        )));
    }
    let adj = Adjacency::new(m);
    let mut state = State::new(m, &adj, vec![0u8; n]);
    let tie_tol = drift_tolerance(m);
    let mut best_bits = state.bits.clone();
    let mut best_energy = state.energy;

    // Gray-code walk: step g flips the lowest set bit of g.
    let total: u64 = 1 << n;
    for g in 1..total {
        let v = g.trailing_zeros() as usize;
        let delta = state.delta(v);
        state.flip(v, delta);
        if g % 65_536 == 0 {
            state.resync();
        }
        if state.energy < best_energy - tie_tol {
            best_energy = state.energy;
            best_bits.copy_from_slice(&state.bits);
        } else if state.energy <= best_energy + tie_tol && state.bits < best_bits {
            best_energy = best_energy.min(state.energy);
            best_bits.copy_from_slice(&state.bits);
        }
    }
    let best_energy = m.energy_unchecked(&best_bits);
    Ok(SolveResult {
        best_bits,
        best_energy,
        energy_trace: vec![best_energy],
        restarts_hitting_best: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubo::QuadTerm;

    fn model(linear: Vec<f64>, quad: Vec<QuadTerm>) -> QuboModel {
        QuboModel::from_terms(linear, quad, 0.0).unwrap()
    }

    #[test]
    fn single_negative_variable() {
        let m = model(vec![-1.0], vec![]);
        let r = solve(&m, &default_params(&m)).unwrap();
        assert_eq!(r.best_bits, vec![1]);
        assert_eq!(r.best_energy, -1.0);
    }

    #[test]
    fn polish_moves_a_point_between_clusters() {
        // Point 0 sits in cluster 0 but is strongly similar to point 1 in
        // cluster 1; every single flip is uphill, the transfer is not.
        let mut s = nalgebra::DMatrix::zeros(2, 2);
        s[(0, 1)] = 3.0;
        s[(1, 0)] = 3.0;
        let s = crate::similarity::SimilarityMatrix::from_matrix(
            s,
            crate::similarity::SimilarityKind::Cosine,
        )
        .unwrap();
        let m = crate::qubo::build(&s, 2, 10.0, 0.0).unwrap();
        // bits: (c0,p0) (c0,p1) (c1,p0) (c1,p1)
        let start = vec![1, 0, 0, 1];
        let adj = Adjacency::new(&m);
        let st = State::new(&m, &adj, start.clone());
        assert!((0..4).all(|v| st.delta(v) > 0.0));
        let (bits, e) = polish(&m, &start).unwrap();
        assert!(
            bits == vec![0, 0, 1, 1] || bits == vec![1, 1, 0, 0],
            "{bits:?}"
        );
        assert!((e + 3.0).abs() < 1e-12);
        assert!((e - m.energy(&bits).unwrap()).abs() < 1e-12);
        assert!(e < m.energy(&start).unwrap());
    }

    #[test]
    fn polish_reaches_pair_flip_local_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = 10;
            let linear: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut quad = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    if rng.random_bool(0.4) {
                        quad.push(QuadTerm(u, v, rng.random_range(-3.0..3.0)));
                    }
                }
            }
            let m = model(linear, quad);
            let start: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
            let (bits, e) = polish(&m, &start).unwrap();
            assert!(e <= m.energy(&start).unwrap() + 1e-12);
            for u in 0..n {
                let mut b = bits.clone();
                b[u] ^= 1;
                assert!(m.energy(&b).unwrap() >= e - 1e-9);
            }
            for t in m.quadratic() {
                let mut b = bits.clone();
                b[t.0] ^= 1;
                b[t.1] ^= 1;
                assert!(m.energy(&b).unwrap() >= e - 1e-9);
            }
        }
    }

    #[test]
    fn flat_landscape() {
        let m = model(vec![0.0; 5], vec![]);
        let p = default_params(&m);
        assert_eq!((p.t_initial, p.t_final), (1.0, 1e-3));
        let r = solve(&m, &p).unwrap();
        assert_eq!(r.best_energy, 0.0);
        assert_eq!(r.restarts_hitting_best, p.restarts);
    }

    #[test]
    fn default_param_rules() {
        let m = model(
            vec![-5.0, 2.0, 0.5],
            vec![QuadTerm(0, 1, 5.0), QuadTerm(1, 2, -0.25)],
        );
        let p = default_params(&m);
        assert_eq!(p.t_initial, 5.0);
        assert_eq!(p.t_final, 0.25e-3);
        assert_eq!(p.sweeps, 300);
        assert_eq!(p.restarts, 16);

        let big = model(vec![1.0; 24 * 24 * 24], vec![]);
        assert_eq!(default_params(&big).sweeps, 1_000_000);
    }

    #[test]
    fn invalid_params() {
        let m = model(vec![1.0], vec![]);
        let mut p = default_params(&m);
        p.t_final = p.t_initial;
        assert!(solve(&m, &p).is_err());
        p = default_params(&m);
        p.restarts = 0;
        assert!(solve(&m, &p).is_err());
    }

    #[test]
    fn brute_force_small_cases() {
        let m = model(vec![1.0], vec![]);
        let r = brute_force(&m).unwrap();
        assert_eq!((r.best_bits, r.best_energy), (vec![0], 0.0));

        let m = model(vec![1.0, 1.0], vec![QuadTerm(0, 1, -2.0)]);
        let r = brute_force(&m).unwrap();
        assert_eq!((r.best_bits, r.best_energy), (vec![0, 0], 0.0));

        let m = model(vec![0.0; 25], vec![]);
        assert!(matches!(brute_force(&m), Err(Error::TooLarge(_))));
    }

    #[test]
    fn brute_force_beats_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 12;
        let linear: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut quad = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random_bool(0.5) {
                    quad.push(QuadTerm(u, v, rng.random_range(-1.0..1.0)));
                }
            }
        }
        let m = model(linear, quad);
        let best = brute_force(&m).unwrap();
        assert!((m.energy(&best.best_bits).unwrap() - best.best_energy).abs() < 1e-12);
        for _ in 0..100 {
            let bits: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
            assert!(best.best_energy <= m.energy(&bits).unwrap() + 1e-12);
        }
    }

    #[test]
    fn temperature_schedule_endpoints() {
        let p = AnnealParams {
            sweeps: 11,
            restarts: 1,
            t_initial: 10.0,
            t_final: 0.01,
            seed: 0,
            schedule: Schedule::Geometric,
        };
        assert_eq!(p.temperature(0), 10.0);
        assert!((p.temperature(10) - 0.01).abs() < 1e-15);
        assert!((p.temperature(5) - 10.0 * 0.001_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn local_fields_track_flips() {
        let m = model(
            vec![0.5, -1.0, 0.25, 2.0],
            vec![
                QuadTerm(0, 1, 1.5),
                QuadTerm(1, 3, -0.75),
                QuadTerm(0, 2, 0.3),
            ],
        );
        let adj = Adjacency::new(&m);
        let mut st = State::new(&m, &adj, vec![0, 1, 0, 1]);
        for v in [2, 0, 1, 3, 0] {
            let d = st.delta(v);
            let before = m.energy(&st.bits).unwrap();
            st.flip(v, d);
            let after = m.energy(&st.bits).unwrap();
            assert!((after - before - d).abs() < 1e-12);
            assert!((st.energy - after).abs() < 1e-12);
        }
    }
}
