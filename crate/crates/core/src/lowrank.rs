//! Truncated SVD of the data matrix and rank-`r` denoising.
//!
//! The factorization is of `Y = dataᵀ` (`m × n`, one series per column). It
//! is computed from the eigendecomposition of the smaller Gram matrix, so a
//! stack of a few hundred 780×780 frames only ever needs an `n × n` problem.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Rank used for denoising when none is given.
pub const DEFAULT_RANK: usize = 5;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// Leading singular triplets of `Y = U Σ Vᵀ`.
#[derive(Debug, Clone)]
pub struct TruncatedBasis {
    /// `m × r`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Descending, non-negative.
    pub s: Vec<f64>,
    /// `n × r`, orthonormal columns.
    pub v: DMatrix<f64>,
    pub rank: usize,
    /// Every singular value, `min(n, m)` of them.
    pub spectrum: Vec<f64>,
}

impl TruncatedBasis {
    /// `Ũ Σ̃ Ṽᵀ` in dataset orientation (`n × m`).
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut vs = self.v.clone();
        for (mut col, s) in vs.column_iter_mut().zip(&self.s) {
            col *= *s;
        }
        vs * self.u.transpose()
    }
}

/// Top-`rank` SVD factors of the data matrix with series as columns.
pub fn truncated_svd(d: &Dataset, rank: usize) -> Result<TruncatedBasis> {
    let (n, m) = (d.n(), d.m());
    let full = n.min(m);
    if rank == 0 || rank > full {
        return Err(Error::InvalidArgument(format!(
            "truncation rank {rank} outside 1..={full}"
        )));
    }
    let x = d.data();

    // Eigenvectors of the small Gram matrix give one side; the other side
    // follows from a single product with the data.
    let series_side = n <= m;
    let gram = if series_side {
        x * x.transpose()
    } else {
        x.transpose() * x
    };
    let eig = SymmetricEigen::try_new(gram, EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(|| {
        Error::Numerical(format!(
            "Gram eigendecomposition did not converge in {EIGEN_MAX_ITER} iterations"
        ))
    })?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }
    // Singular values as norms of the projected eigenvectors. Square roots
    // of Gram eigenvalues lose everything below sqrt(eps) * sigma_max.
    let projected = if series_side {
        x.transpose() * &eig.eigenvectors
    } else {
        x * &eig.eigenvectors
    };
    let norms: Vec<f64> = projected.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..full).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let spectrum: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let tol = spectrum[0] * (n.max(m) as f64) * 1e-12;

    let other_dim = if series_side { m } else { n };
    let mut direct = DMatrix::zeros(if series_side { n } else { m }, rank);
    let mut derived = DMatrix::zeros(other_dim, rank);
    for (c, &i) in order.iter().take(rank).enumerate() {
        let vec = eig.eigenvectors.column(i);
        direct.set_column(c, &vec);
        let sigma = spectrum[c];
        let mut w: DVector<f64> = if sigma > tol {
            projected.column(i) / sigma
        } else {
            DVector::zeros(other_dim)
        };
        orthonormalize_against(&mut w, &derived, c)?;
        derived.set_column(c, &w);
    }

    let (mut u, mut v) = if series_side {
        (derived, direct)
    } else {
        (direct, derived)
    };
    for c in 0..rank {
        let (imax, _) = u
            .column(c)
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |best, (i, val)| {
                if val.abs() > best.1 {
                    (i, val.abs())
                } else {
                    best
                }
            });
        if u[(imax, c)] < 0.0 {
            u.column_mut(c).neg_mut();
            v.column_mut(c).neg_mut();
        }
    }

    Ok(TruncatedBasis {
        u,
        s: spectrum[..rank].to_vec(),
        v,
        rank,
        spectrum,
    })
}

/// Makes `w` unit length and orthogonal to the first `count` columns of
/// `basis`. A (near-)zero `w` is replaced by a completing basis vector.
fn orthonormalize_against(w: &mut DVector<f64>, basis: &DMatrix<f64>, count: usize) -> Result<()> {
    let project_out = |w: &mut DVector<f64>| {
        for _ in 0..2 {
            for j in 0..count {
                let b = basis.column(j);
                let dot = b.dot(w);
                w.axpy(-dot, &b, 1.0);
            }
        }
    };
    project_out(w);
    let norm = w.norm();
    if norm > 1e-8 {
        *w /= norm;
        return Ok(());
    }
    for e in 0..w.len() {
        let mut cand = DVector::zeros(w.len());
        cand[e] = 1.0;
        project_out(&mut cand);
        let cn = cand.norm();
        if cn > 0.5 {
            *w = cand / cn;
            return Ok(());
        }
    }
    Err(Error::Numerical("could not complete singular basis".into()))
}

/// Rank-`rank` approximation of the data; labels and frame geometry are kept.
pub fn denoise(d: &Dataset, rank: usize) -> Result<Dataset> {
    let basis = truncated_svd(d, rank)?;
    d.with_data(basis.reconstruct())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, m: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        Dataset::new(data, None, None).unwrap()
    }

    fn orthonormal(a: &DMatrix<f64>) -> bool {
        let g = a.transpose() * a;
        (g - DMatrix::identity(a.ncols(), a.ncols())).amax() < 1e-8
    }

    #[test]
    fn rank_one_outer_product() {
        let a = [1.0, -2.0, 0.5];
        let b = [3.0, 1.0, 4.0, -1.0, 2.0];
        let data = DMatrix::from_fn(3, 5, |i, j| a[i] * b[j]);
        let d = Dataset::new(data.clone(), None, None).unwrap();
        let basis = truncated_svd(&d, 1).unwrap();
        assert!((basis.reconstruct() - data).norm() < 1e-10);
    }

    #[test]
    fn diagonal_matrix_drops_smallest() {
        let data = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let d = Dataset::new(data.clone(), None, None).unwrap();
        let basis = truncated_svd(&d, 2).unwrap();
        assert!((basis.s[0] - 3.0).abs() < 1e-12 && (basis.s[1] - 2.0).abs() < 1e-12);
        assert!(((basis.reconstruct() - data).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_bounds() {
        let d = random(4, 3, 1);
        assert!(matches!(
            truncated_svd(&d, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            truncated_svd(&d, 4),
            Err(Error::InvalidArgument(_))
        ));
        assert!(truncated_svd(&d, 3).is_ok());
    }

    #[test]
    fn bases_are_orthonormal_both_orientations() {
        for (n, m) in [(20, 15), (15, 20), (6, 6)] {
            let b = truncated_svd(&random(n, m, 7), 5).unwrap();
            assert!(orthonormal(&b.u), "u for {n}x{m}");
            assert!(orthonormal(&b.v), "v for {n}x{m}");
            assert_eq!((b.u.nrows(), b.v.nrows()), (m, n));
            assert!(b.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_deficient_basis_is_completed() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let d = Dataset::new(DMatrix::from_fn(4, 3, |i, _| a[i]), None, None).unwrap();
        let b = truncated_svd(&d, 3).unwrap();
        assert!(orthonormal(&b.u) && orthonormal(&b.v));
        assert!(b.s[1] < 1e-6);
    }

    #[test]
    fn sign_convention_largest_left_entry_positive() {
        let b = truncated_svd(&random(8, 12, 3), 4).unwrap();
        for c in 0..4 {
            let col = b.u.column(c);
            let max = col
                .iter()
                .fold(0.0_f64, |a, v| if v.abs() > a.abs() { *v } else { a });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn full_rank_denoise_is_identity() {
        let d = random(9, 6, 11);
        let out = denoise(&d, 6).unwrap();
        assert!((out.data() - d.data()).amax() < 1e-8);
    }

    #[test]
    fn denoise_keeps_labels_and_shape() {
        let data = DMatrix::from_fn(3, 4, |i, j| (i + 2 * j) as f64);
        let d = Dataset::new(data, Some(vec![1, 2, 3]), Some((2, 2))).unwrap();
        let out = denoise(&d, 1).unwrap();
        assert_eq!(out.labels(), d.labels());
        assert_eq!(out.frame_shape(), Some((2, 2)));
    }
}
