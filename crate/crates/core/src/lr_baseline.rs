//! Low-rank SRP: truncated SVD of the complex steering matrix `H`.
//!
//! The decomposition goes through the smaller Gram matrix. When `J` does not
//! exceed the column count, `H H^H = U S^2 U^H` and the factors are
//! `H_tall = U_R`, `H_fat = U_R^H H`, which equals `S_R V_R^H` without dividing
//! by singular values. Otherwise `H^H H = V S^2 V^H` gives
//! `H_tall = H V_R`, `H_fat = V_R^H`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Result, SrpError};
use crate::frontend::FdGcc;
use crate::srp_exact::{check_len, SrpMap, SrpMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankSrp {
    pairs: usize,
    half_length: usize,
    tall: DMatrix<Complex64>,
    fat: DMatrix<Complex64>,
    singular_values: Vec<f64>,
    tail_sq: f64,
}

impl LowRankSrp {
    pub fn from_factors(
        pairs: usize,
        half_length: usize,
        tall: DMatrix<Complex64>,
        fat: DMatrix<Complex64>,
        singular_values: Vec<f64>,
        tail_sq: f64,
    ) -> Result<Self> {
        check_len("low-rank inner dimension", tall.ncols(), fat.nrows())?;
        check_len("low-rank columns", pairs * (half_length - 1), fat.ncols())?;
        check_len("retained singular values", tall.ncols(), singular_values.len())?;
        Ok(Self {
            pairs,
            half_length,
            tall,
            fat,
            singular_values,
            tail_sq,
        })
    }

    pub fn rank(&self) -> usize {
        self.tall.ncols()
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn half_length(&self) -> usize {
        self.half_length
    }

    pub fn candidates(&self) -> usize {
        self.tall.nrows()
    }

    pub fn tall(&self) -> &DMatrix<Complex64> {
        &self.tall
    }

    pub fn fat(&self) -> &DMatrix<Complex64> {
        &self.fat
    }

    /// Retained singular values, descending.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Sum of squared discarded singular values.
    pub fn tail_sq(&self) -> f64 {
        self.tail_sq
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        &self.tall * &self.fat
    }
}

/// Eigenpairs of a Hermitian matrix, eigenvalues descending.
fn sorted_eigen(gram: DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let n = eig.eigenvectors.nrows();
    let vectors = DMatrix::from_fn(n, order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Full Gram-route decomposition of `H`, truncated on demand so that sweeps
/// over several ranks decompose once.
#[derive(Debug, Clone)]
pub struct SrpDecomposition {
    pairs: usize,
    half_length: usize,
    tall: DMatrix<Complex64>,
    fat: DMatrix<Complex64>,
    eigenvalues: Vec<f64>,
}

impl SrpDecomposition {
    pub fn new(h: &SrpMatrix) -> Self {
        let m = h.matrix();
        let (tall, fat, eigenvalues) = if m.nrows() <= m.ncols() {
            let (values, u) = sorted_eigen(m * m.adjoint());
            let fat = u.adjoint() * m;
            (u, fat, values)
        } else {
            let (values, v) = sorted_eigen(m.adjoint() * m);
            (m * &v, v.adjoint(), values)
        };
        Self {
            pairs: h.pairs(),
            half_length: h.half_length(),
            tall,
            fat,
            eigenvalues,
        }
    }

    pub fn max_rank(&self) -> usize {
        self.tall.nrows().min(self.fat.ncols())
    }

    /// Squared singular values, descending.
    pub fn squared_singular_values(&self) -> &[f64] {
        &self.eigenvalues[..self.max_rank()]
    }

    pub fn truncate(&self, rank: usize) -> Result<LowRankSrp> {
        let max = self.max_rank();
        if rank == 0 || rank > max {
            return Err(SrpError::InvalidRank { rank, max });
        }
        let singular_values = self.eigenvalues[..rank].iter().map(|v| v.sqrt()).collect();
        let tail_sq = self.eigenvalues[rank..].iter().sum();
        LowRankSrp::from_factors(
            self.pairs,
            self.half_length,
            self.tall.columns(0, rank).into_owned(),
            self.fat.rows(0, rank).into_owned(),
            singular_values,
            tail_sq,
        )
    }
}

pub fn truncate_srp_matrix(h: &SrpMatrix, rank: usize) -> Result<LowRankSrp> {
    let max = h.candidates().min(h.matrix().ncols());
    if rank == 0 || rank > max {
        return Err(SrpError::InvalidRank { rank, max });
    }
    SrpDecomposition::new(h).truncate(rank)
}

/// `z_lr = 2 Re[H_tall (H_fat psi)]`.
pub fn lr_map(lr: &LowRankSrp, psi: &FdGcc) -> Result<SrpMap> {
    check_len("GCC pairs", lr.pairs, psi.pairs())?;
    check_len("GCC vector", lr.fat.ncols(), psi.values().len())?;
    let inner = &lr.fat * DVector::from_column_slice(psi.values());
    let z = &lr.tall * inner;
    Ok(SrpMap::new(z.iter().map(|c| 2.0 * c.re).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::Weighting;
    use crate::srp_exact::srp_map_exact;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_complex(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
        DMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn random_psi(pairs: usize, k: usize, rng: &mut ChaCha8Rng) -> FdGcc {
        let values = (0..pairs * (k - 1))
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        FdGcc::from_values(pairs, k, values, Weighting::Unweighted).unwrap()
    }

    /// Squared singular values from a direct complex SVD, descending.
    fn svd_oracle(m: &DMatrix<Complex64>) -> Vec<f64> {
        let mut s: Vec<f64> = m
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .map(|v| v * v)
            .collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    #[test]
    fn residual_matches_svd_tail_wide_and_tall() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // 24 x 30 and 35 x 30 exercise both Gram branches
        for (rows, pairs, k) in [(24, 5, 7), (35, 5, 7)] {
            let m = random_complex(rows, pairs * (k - 1), &mut rng);
            let h = SrpMatrix::from_matrix(pairs, k, m.clone()).unwrap();
            let lr = truncate_srp_matrix(&h, 6).unwrap();
            let tail: f64 = svd_oracle(&m)[6..].iter().sum();
            let residual = (lr.to_dense() - &m).norm_squared();
            assert_relative_eq!(residual, tail, max_relative = 1e-9);
            assert_relative_eq!(lr.tail_sq(), tail, max_relative = 1e-9);
        }
    }

    #[test]
    fn full_rank_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_complex(10, 3 * 7, &mut rng);
        let h = SrpMatrix::from_matrix(3, 8, m.clone()).unwrap();
        let lr = truncate_srp_matrix(&h, 10).unwrap();
        assert!((lr.to_dense() - &m).norm() < 1e-10);
        let psi = random_psi(3, 8, &mut rng);
        let z = srp_map_exact(&h, &psi).unwrap();
        let z_lr = lr_map(&lr, &psi).unwrap();
        for (a, b) in z_lr.values().iter().zip(z.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn replicated_row_is_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let row = random_complex(1, 14, &mut rng);
        let m = DMatrix::from_fn(5, 14, |_, c| row[(0, c)]);
        let h = SrpMatrix::from_matrix(2, 8, m.clone()).unwrap();
        let lr = truncate_srp_matrix(&h, 1).unwrap();
        assert!((lr.to_dense() - &m).norm_squared() < 1e-20 * m.norm_squared());
        assert!(lr.tail_sq() < 1e-12 * m.norm_squared());
    }

    #[test]
    fn cascade_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_complex(16, 3 * 7, &mut rng);
        let h = SrpMatrix::from_matrix(3, 8, m).unwrap();
        let lr = truncate_srp_matrix(&h, 4).unwrap();
        let psi = random_psi(3, 8, &mut rng);
        let dense = lr.to_dense() * DVector::from_column_slice(psi.values());
        let z = lr_map(&lr, &psi).unwrap();
        for (a, b) in z.values().iter().zip(dense.iter()) {
            assert_relative_eq!(*a, 2.0 * b.re, epsilon = 1e-12);
        }
        assert!(lr_map(&lr, &FdGcc::zeros(3, 8))
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        assert!(lr_map(&lr, &FdGcc::zeros(2, 8)).is_err());
    }

    #[test]
    fn invalid_rank() {
        let h = SrpMatrix::from_matrix(1, 4, DMatrix::from_element(2, 3, Complex64::new(1.0, 0.0))).unwrap();
        assert!(matches!(truncate_srp_matrix(&h, 0), Err(SrpError::InvalidRank { .. })));
        assert!(matches!(
            truncate_srp_matrix(&h, 3),
            Err(SrpError::InvalidRank { max: 2, .. })
        ));
    }

    #[test]
    fn singular_values_descend() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_complex(8, 14, &mut rng);
        let h = SrpMatrix::from_matrix(2, 8, m.clone()).unwrap();
        let lr = truncate_srp_matrix(&h, 8).unwrap();
        let oracle = svd_oracle(&m);
        for (s, o) in lr.singular_values().iter().zip(&oracle) {
            assert_relative_eq!(s * s, *o, max_relative = 1e-9);
        }
        assert!(lr.singular_values().windows(2).all(|w| w[0] >= w[1]));
    }
}
