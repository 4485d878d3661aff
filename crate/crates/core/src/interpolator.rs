//! Sinc interpolation of TD-GCC samples and its low-rank and sparse
//! approximations.
//!
//! The interpolation matrix `Lambda` is `J x PN'` with blocks
//! `[Lambda_p]_{i, n mod (2N_p+1)} = sinc(dt_p(i)/T - n)`. SI-SRP evaluates
//! `z = Lambda xi`; SLRI-SRP replaces `Lambda` by its truncated SVD and SSPI-SRP
//! keeps only its `Q` largest-magnitude entries.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, SrpError};
use crate::frontend::FrameSpec;
use crate::sampler::{SampleSpec, TdGccSamples};
use crate::scene::TdoaTable;
use crate::srp_exact::{check_capacity, check_len, SrpMap};

/// Normalized sinc, exact at integers.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.fract() == 0.0 {
        0.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Anything that maps stacked TD-GCC samples to an SRP map.
pub trait InterpolationOperator: Sync {
    fn shape(&self) -> (usize, usize);

    /// Dense `J x PN'` equivalent, for error analysis on small instances.
    fn to_dense(&self) -> DMatrix<f64>;

    fn apply(&self, xi: &TdGccSamples) -> Result<SrpMap>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpMatrix {
    matrix: DMatrix<f64>,
}

impl InterpMatrix {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn candidates(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn samples(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.matrix.norm_squared()
    }
}

pub fn build_interp_matrix(
    tdoa: &TdoaTable,
    spec: &SampleSpec,
    frame: &FrameSpec,
    cap_bytes: u128,
) -> Result<InterpMatrix> {
    check_len("sample spec pairs", tdoa.pairs(), spec.pairs())?;
    let (j, cols) = (tdoa.candidates(), spec.total_len());
    check_capacity("interpolation matrix", (j * cols) as u128, 8, cap_bytes)?;
    let t = frame.sample_period();
    let mut matrix = DMatrix::zeros(j, cols);
    for p in 0..spec.pairs() {
        for (local, n) in spec.lags(p) {
            let col = spec.offset(p) + local;
            for i in 0..j {
                matrix[(i, col)] = sinc(tdoa.delay(i, p) / t - n as f64);
            }
        }
    }
    Ok(InterpMatrix { matrix })
}

fn check_samples(cols: usize, xi: &TdGccSamples) -> Result<DVector<f64>> {
    check_len("TD-GCC samples", cols, xi.len())?;
    Ok(DVector::from_column_slice(xi.values()))
}

/// `z_si = Lambda xi`. Rows accumulate in column order, the same order
/// [`sspi_map`] uses, so keeping every entry reproduces this map bit for bit.
pub fn si_map(lambda: &InterpMatrix, xi: &TdGccSamples) -> Result<SrpMap> {
    check_len("TD-GCC samples", lambda.samples(), xi.len())?;
    let x = xi.values();
    let m = &lambda.matrix;
    let values = (0..m.nrows())
        .into_par_iter()
        .map(|i| (0..m.ncols()).map(|c| m[(i, c)] * x[c]).sum())
        .collect();
    Ok(SrpMap::new(values))
}

impl InterpolationOperator for InterpMatrix {
    fn shape(&self) -> (usize, usize) {
        self.matrix.shape()
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.matrix.clone()
    }

    fn apply(&self, xi: &TdGccSamples) -> Result<SrpMap> {
        si_map(self, xi)
    }
}

/// `Lambda_lr = Lambda_tall Lambda_fat` with `Lambda_tall = U Sigma`, `Lambda_fat = V^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankInterp {
    tall: DMatrix<f64>,
    fat: DMatrix<f64>,
    singular_values: Vec<f64>,
    tail_sq: f64,
}

impl LowRankInterp {
    pub fn from_factors(
        tall: DMatrix<f64>,
        fat: DMatrix<f64>,
        singular_values: Vec<f64>,
        tail_sq: f64,
    ) -> Result<Self> {
        check_len("low-rank inner dimension", tall.ncols(), fat.nrows())?;
        check_len("retained singular values", tall.ncols(), singular_values.len())?;
        Ok(Self {
            tall,
            fat,
            singular_values,
            tail_sq,
        })
    }

    pub fn rank(&self) -> usize {
        self.tall.ncols()
    }

    pub fn tall(&self) -> &DMatrix<f64> {
        &self.tall
    }

    pub fn fat(&self) -> &DMatrix<f64> {
        &self.fat
    }

    /// Retained singular values, descending.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Sum of squared discarded singular values, `||Lambda_lr - Lambda||_F^2`.
    pub fn tail_sq(&self) -> f64 {
        self.tail_sq
    }
}

/// Full SVD of `Lambda`, truncated on demand.
#[derive(Debug, Clone)]
pub struct InterpDecomposition {
    /// `U Sigma`, columns ordered by descending singular value.
    tall: DMatrix<f64>,
    fat: DMatrix<f64>,
    singular_values: Vec<f64>,
}

impl InterpDecomposition {
    pub fn new(lambda: &InterpMatrix) -> Self {
        let (rows, cols) = lambda.matrix.shape();
        let svd = lambda.matrix.clone().svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let singular_values: Vec<f64> = order.iter().map(|&idx| svd.singular_values[idx]).collect();
        let tall = DMatrix::from_fn(rows, order.len(), |i, r| u[(i, order[r])] * singular_values[r]);
        let fat = DMatrix::from_fn(order.len(), cols, |r, c| v_t[(order[r], c)]);
        Self {
            tall,
            fat,
            singular_values,
        }
    }

    pub fn max_rank(&self) -> usize {
        self.singular_values.len()
    }

    /// All singular values, descending.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn truncate(&self, rank: usize) -> Result<LowRankInterp> {
        let max = self.max_rank();
        if rank == 0 || rank > max {
            return Err(SrpError::InvalidRank { rank, max });
        }
        let tail_sq = self.singular_values[rank..].iter().map(|s| s * s).sum();
        LowRankInterp::from_factors(
            self.tall.columns(0, rank).into_owned(),
            self.fat.rows(0, rank).into_owned(),
            self.singular_values[..rank].to_vec(),
            tail_sq,
        )
    }
}

pub fn truncate_low_rank(lambda: &InterpMatrix, rank: usize) -> Result<LowRankInterp> {
    let max = lambda.candidates().min(lambda.samples());
    if rank == 0 || rank > max {
        return Err(SrpError::InvalidRank { rank, max });
    }
    InterpDecomposition::new(lambda).truncate(rank)
}

/// `z_slri = Lambda_tall (Lambda_fat xi)`.
pub fn slri_map(lr: &LowRankInterp, xi: &TdGccSamples) -> Result<SrpMap> {
    let v = check_samples(lr.fat.ncols(), xi)?;
    let inner = &lr.fat * v;
    Ok(SrpMap::new((&lr.tall * inner).as_slice().to_vec()))
}

impl InterpolationOperator for LowRankInterp {
    fn shape(&self) -> (usize, usize) {
        (self.tall.nrows(), self.fat.ncols())
    }

    fn to_dense(&self) -> DMatrix<f64> {
        &self.tall * &self.fat
    }

    fn apply(&self, xi: &TdGccSamples) -> Result<SrpMap> {
        slri_map(self, xi)
    }
}

/// Row-compressed sparse interpolation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInterp {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseInterp {
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_len("CSR row pointer", rows + 1, row_ptr.len())?;
        check_len("CSR values", col_idx.len(), values.len())?;
        let valid = row_ptr.first() == Some(&0)
            && row_ptr.windows(2).all(|w| w[0] <= w[1])
            && row_ptr.last() == Some(&values.len())
            && col_idx.iter().all(|&c| c < cols);
        if !valid {
            return Err(SrpError::Format("inconsistent CSR structure".into()));
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs of row `i`, ascending in column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }
}

/// Keeps the `q` largest-magnitude entries of `Lambda`. Equal magnitudes are
/// resolved in favour of the smaller row, then the smaller column.
pub fn truncate_sparse(lambda: &InterpMatrix, q: usize) -> Result<SparseInterp> {
    let (rows, cols) = lambda.matrix.shape();
    let max = rows * cols;
    if q > max {
        return Err(SrpError::InvalidSparsity { nnz: q, max });
    }
    let m = &lambda.matrix;
    let rank =
        |a: &(usize, usize), b: &(usize, usize)| -> Ordering { m[*b].abs().total_cmp(&m[*a].abs()).then(a.cmp(b)) };
    let mut entries: Vec<(usize, usize)> = Vec::with_capacity(max);
    for i in 0..rows {
        for c in 0..cols {
            entries.push((i, c));
        }
    }
    if q < max && q > 0 {
        entries.select_nth_unstable_by(q - 1, rank);
    }
    entries.truncate(q);
    entries.sort_unstable();

    let mut row_ptr = vec![0; rows + 1];
    for &(i, _) in &entries {
        row_ptr[i + 1] += 1;
    }
    for i in 0..rows {
        row_ptr[i + 1] += row_ptr[i];
    }
    let col_idx = entries.iter().map(|&(_, c)| c).collect();
    let values = entries.iter().map(|&e| m[e]).collect();
    SparseInterp::from_csr(rows, cols, row_ptr, col_idx, values)
}

/// `z_sspi = Lambda_sp xi`, one output row per task.
pub fn sspi_map(sp: &SparseInterp, xi: &TdGccSamples) -> Result<SrpMap> {
    check_len("TD-GCC samples", sp.cols, xi.len())?;
    let x = xi.values();
    let values = (0..sp.rows)
        .into_par_iter()
        .map(|i| sp.row(i).map(|(c, v)| v * x[c]).sum())
        .collect();
    Ok(SrpMap::new(values))
}

impl InterpolationOperator for SparseInterp {
    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (c, v) in self.row(i) {
                out[(i, c)] = v;
            }
        }
        out
    }

    fn apply(&self, xi: &TdGccSamples) -> Result<SrpMap> {
        sspi_map(self, xi)
    }
}
