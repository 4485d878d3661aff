//! Multiplication counts and approximation / localization metrics.
//!
//! Counts are returned as `f64`. They are exact integers for every method
//! except those whose sampling term involves the mean sample count `N`,
//! which is generally fractional; those are reported unrounded.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SrpError};
use crate::frontend::FrameSpec;
use crate::interpolator::InterpolationOperator;
use crate::lr_baseline::LowRankSrp;
use crate::sampler::{SampleSpec, SamplingPath};
use crate::scene::{distance, dot, CandidateGrid, Point3, Propagation, TdoaTable};
use crate::srp_exact::{check_len, SrpMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Conv,
    Lr,
    Si,
    Slri,
    Sspi,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Conv, Method::Lr, Method::Si, Method::Slri, Method::Sspi];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Conv => "conv",
            Method::Lr => "lr",
            Method::Si => "si",
            Method::Slri => "slri",
            Method::Sspi => "sspi",
        }
    }

    /// Whether the method runs on TD-GCC samples.
    pub fn is_sampled(self) -> bool {
        matches!(self, Method::Si | Method::Slri | Method::Sspi)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = SrpError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| SrpError::Config(format!("unknown method `{s}` (expected conv, lr, si, slri or sspi)")))
    }
}

/// Problem dimensions plus the method's budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub candidates: usize,
    pub pairs: usize,
    pub half_length: usize,
    /// Mean samples per pair `N`; only used by sampled methods.
    pub mean_samples: f64,
    /// `R_H` for LR-SRP, `R_Lambda` for SLRI-SRP.
    pub rank: usize,
    /// `Q_Lambda` for SSPI-SRP.
    pub sparsity: usize,
    pub path: SamplingPath,
}

impl CostParams {
    pub fn new(candidates: usize, pairs: usize, half_length: usize) -> Self {
        Self {
            candidates,
            pairs,
            half_length,
            mean_samples: 1.0,
            rank: 0,
            sparsity: 0,
            path: SamplingPath::Auto,
        }
    }

    pub fn with_samples(mut self, mean_samples: f64, path: SamplingPath) -> Self {
        self.mean_samples = mean_samples;
        self.path = path;
        self
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = rank;
        self
    }

    pub fn with_sparsity(mut self, sparsity: usize) -> Self {
        self.sparsity = sparsity;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport {
    pub method: Method,
    pub params: CostParams,
    /// Sampling path after resolving `Auto`; `None` for unsampled methods.
    pub path: Option<SamplingPath>,
    pub multiplications: f64,
    /// `multiplications / (2 J P (K-1))`.
    pub relative: f64,
}

/// `C = 2 J P (K-1)`.
pub fn conventional_cost(candidates: usize, pairs: usize, half_length: usize) -> f64 {
    2.0 * candidates as f64 * pairs as f64 * (half_length as f64 - 1.0)
}

/// `J P (K-1)`, one count per complex steering term. Some cost tables
/// quote `C` this way, half of [`conventional_cost`].
pub fn complex_term_cost(candidates: usize, pairs: usize, half_length: usize) -> f64 {
    conventional_cost(candidates, pairs, half_length) / 2.0
}

/// `C_samp` for the resolved path: `2 P N (K-1)` by matrix, `8 P K log2(2K)` by inverse FFT.
pub fn sampling_cost(pairs: usize, half_length: usize, mean_samples: f64, path: SamplingPath) -> (f64, SamplingPath) {
    let (p, k) = (pairs as f64, half_length as f64);
    match path.resolve(mean_samples, half_length) {
        SamplingPath::Matrix => (2.0 * p * mean_samples * (k - 1.0), SamplingPath::Matrix),
        _ => (8.0 * p * k * (2.0 * k).log2(), SamplingPath::Ifft),
    }
}

pub fn cost(method: Method, params: &CostParams) -> CostReport {
    let (j, p, k) = (params.candidates as f64, params.pairs as f64, params.half_length as f64);
    let pn = p * params.mean_samples;
    let (samp, path) = sampling_cost(params.pairs, params.half_length, params.mean_samples, params.path);
    let (multiplications, path) = match method {
        Method::Conv => (2.0 * j * p * (k - 1.0), None),
        Method::Lr => {
            let r = params.rank as f64;
            (2.0 * j * r + 4.0 * r * p * (k - 1.0), None)
        }
        Method::Si => (j * pn + samp, Some(path)),
        Method::Slri => {
            let r = params.rank as f64;
            (j * r + r * pn + samp, Some(path))
        }
        Method::Sspi => (params.sparsity as f64 + samp, Some(path)),
    };
    CostReport {
        method,
        params: *params,
        path,
        multiplications,
        relative: multiplications / conventional_cost(params.candidates, params.pairs, params.half_length),
    }
}

/// `10 log10(num / den)`, with `-inf` for an exact match.
pub fn relative_error_db(num_sq: f64, den_sq: f64) -> Result<f64> {
    if den_sq == 0.0 {
        return Err(SrpError::UndefinedReference);
    }
    if num_sq == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (num_sq / den_sq).log10())
}

/// `eps_H = 10 log10(||H_type - H||^2 / ||H||^2)`.
pub fn matrix_error(h_type: &DMatrix<Complex64>, h: &DMatrix<Complex64>) -> Result<f64> {
    if h_type.shape() != h.shape() {
        return Err(SrpError::Dimension {
            what: "matrix error operands",
            expected: h.len(),
            found: h_type.len(),
        });
    }
    relative_error_db((h_type - h).norm_squared(), h.norm_squared())
}

/// `eps_z` in decibels.
pub fn map_error(z_type: &SrpMap, z: &SrpMap) -> Result<f64> {
    check_len("map length", z.len(), z_type.len())?;
    let num = z_type
        .values()
        .iter()
        .zip(z.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let den = z.values().iter().map(|v| v * v).sum();
    relative_error_db(num, den)
}

/// `eps_H` of LR-SRP from the singular-value tail, given `||H||_F^2`.
pub fn lr_matrix_error(lr: &LowRankSrp, h_norm_sq: f64) -> Result<f64> {
    relative_error_db(lr.tail_sq(), h_norm_sq)
}

/// `Lambda_type S`, the steering matrix implied by an interpolation operator.
/// Each row block goes through one length-`2K` inverse FFT.
pub fn implied_steering(op: &dyn InterpolationOperator, spec: &SampleSpec) -> Result<DMatrix<Complex64>> {
    let dense = op.to_dense();
    check_len("interpolation columns", spec.total_len(), dense.ncols())?;
    let (j, k) = (dense.nrows(), spec.half_length());
    let bins = k - 1;
    let rows: Vec<Vec<Complex64>> = (0..j).into_par_iter().map(|i| steering_row(&dense, i, spec)).collect();
    Ok(DMatrix::from_fn(j, spec.pairs() * bins, |i, c| rows[i][c]))
}

fn steering_row(dense: &DMatrix<f64>, i: usize, spec: &SampleSpec) -> Vec<Complex64> {
    let k = spec.half_length();
    let ifft = FftPlanner::new().plan_fft_inverse(2 * k);
    let mut out = Vec::with_capacity(spec.pairs() * (k - 1));
    let mut buf = vec![Complex64::default(); 2 * k];
    for p in 0..spec.pairs() {
        buf.fill(Complex64::default());
        for (local, n) in spec.lags(p) {
            buf[spec.fft_index(n)] = Complex64::new(dense[(i, spec.offset(p) + local)], 0.0);
        }
        // unnormalized inverse: sum_n lambda_n e^{j pi k n / K}
        ifft.process(&mut buf);
        out.extend_from_slice(&buf[1..k]);
    }
    out
}

/// `eps_H` of a sampled method, comparing `Lambda_type S` against the exact
/// phases `e^{j w_k dt_p(i)}` row by row.
pub fn interp_matrix_error(
    op: &dyn InterpolationOperator,
    spec: &SampleSpec,
    tdoa: &TdoaTable,
    frame: &FrameSpec,
) -> Result<f64> {
    check_len("candidates", tdoa.candidates(), op.shape().0)?;
    check_len("pairs", tdoa.pairs(), spec.pairs())?;
    let dense = op.to_dense();
    check_len("interpolation columns", spec.total_len(), dense.ncols())?;
    let k = spec.half_length();
    let per_row: Vec<f64> = (0..tdoa.candidates())
        .into_par_iter()
        .map(|i| {
            let row = steering_row(&dense, i, spec);
            let mut acc = 0.0;
            for p in 0..spec.pairs() {
                for kk in 1..k {
                    let exact = Complex64::from_polar(1.0, frame.bin_frequency(kk as i64) * tdoa.delay(i, p));
                    acc += (row[p * (k - 1) + kk - 1] - exact).norm_sqr();
                }
            }
            acc
        })
        .collect();
    // sequential sum keeps the result independent of the thread count
    let num: f64 = per_row.iter().sum();
    let den = (tdoa.candidates() * tdoa.pairs() * (k - 1)) as f64;
    relative_error_db(num, den)
}

pub const DEFAULT_SIGMA: f64 = 6.0;
pub const NEAR_FIELD_THRESHOLD_M: f64 = 0.2;
pub const FAR_FIELD_THRESHOLD_DEG: f64 = 2.5;

/// `eps_th` in metres (near field) or radians (far field).
pub fn default_threshold(mode: Propagation) -> f64 {
    match mode {
        Propagation::NearField => NEAR_FIELD_THRESHOLD_M,
        Propagation::FarField => FAR_FIELD_THRESHOLD_DEG.to_radians(),
    }
}

/// Euclidean distance (near field) or angle in radians (far field).
pub fn loc_error(estimate: Point3, truth: Point3, mode: Propagation) -> f64 {
    match mode {
        Propagation::NearField => distance(&estimate, &truth),
        Propagation::FarField => dot(&estimate, &truth).clamp(-1.0, 1.0).acos(),
    }
}

/// `rho_s = 1 / (1 + e^{sigma (eps - eps_th) / eps_th})`.
pub fn loc_accuracy(error: f64, threshold: f64, sigma: f64) -> f64 {
    1.0 / (1.0 + (sigma * (error - threshold) / threshold).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocResult {
    pub index: usize,
    pub estimate: Point3,
    /// Metres or radians; present when the truth is known.
    pub error: Option<f64>,
    pub accuracy: Option<f64>,
}

impl LocResult {
    /// Error in reporting units: metres near field, degrees far field.
    pub fn reported_error(&self, mode: Propagation) -> Option<f64> {
        self.error.map(|e| match mode {
            Propagation::NearField => e,
            Propagation::FarField => e.to_degrees(),
        })
    }
}

pub fn evaluate_location(map: &SrpMap, grid: &CandidateGrid, truth: Option<Point3>) -> Result<LocResult> {
    let loc = crate::srp_exact::locate(map, grid)?;
    let error = truth.map(|t| loc_error(loc.point, t, grid.mode()));
    Ok(LocResult {
        index: loc.index,
        estimate: loc.point,
        error,
        accuracy: error.map(|e| loc_accuracy(e, default_threshold(grid.mode()), DEFAULT_SIGMA)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpolator::{build_interp_matrix, truncate_low_rank, InterpMatrix};
    use crate::sampler::sample_spec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn near_field_conventional_cost() {
        assert_eq!(conventional_cost(73084, 6, 256), 223_637_040.0);
        assert_relative_eq!(complex_term_cost(73084, 6, 256), 111.8e6, max_relative = 1e-3);
        assert_relative_eq!(complex_term_cost(8101, 15, 512), 62.1e6, max_relative = 1e-3);
    }

    #[test]
    fn far_field_si_cost() {
        let params = CostParams::new(8101, 15, 512).with_samples(46.6, SamplingPath::Ifft);
        let report = cost(Method::Si, &params);
        assert_relative_eq!(report.multiplications, 6_276_999.0, epsilon = 1e-6);
        assert_relative_eq!(report.relative, 0.0505, epsilon = 1e-3);
        assert_eq!(report.path, Some(SamplingPath::Ifft));
    }

    #[test]
    fn sparse_cost_without_entries_is_sampling_only() {
        let params = CostParams::new(100, 15, 512).with_samples(46.6, SamplingPath::Ifft);
        let report = cost(Method::Sspi, &params);
        assert_eq!(report.multiplications, 8.0 * 15.0 * 512.0 * 10.0);
    }

    #[test]
    fn zero_samples_matrix_path_degenerates() {
        let params = CostParams::new(50, 3, 64).with_samples(1.0, SamplingPath::Matrix);
        assert_eq!(cost(Method::Si, &params).multiplications, 50.0 * 3.0 + 2.0 * 3.0 * 63.0);
    }

    #[test]
    fn remaining_cost_formulas() {
        let base = CostParams::new(40, 6, 256).with_samples(10.0, SamplingPath::Matrix);
        let samp = 2.0 * 6.0 * 10.0 * 255.0;
        assert_eq!(
            cost(Method::Lr, &base.with_rank(7)).multiplications,
            2.0 * 40.0 * 7.0 + 4.0 * 7.0 * 6.0 * 255.0
        );
        assert_eq!(
            cost(Method::Slri, &base.with_rank(7)).multiplications,
            40.0 * 7.0 + 7.0 * 60.0 + samp
        );
        assert_eq!(
            cost(Method::Sspi, &base.with_sparsity(123)).multiplications,
            123.0 + samp
        );
        assert_eq!(cost(Method::Conv, &base).relative, 1.0);
        assert_eq!(cost(Method::Conv, &base).path, None);
    }

    #[test]
    fn auto_path_follows_crossover() {
        for (n, expected) in [(40.0, SamplingPath::Matrix), (40.2, SamplingPath::Ifft)] {
            let params = CostParams::new(10, 15, 512).with_samples(n, SamplingPath::Auto);
            assert_eq!(cost(Method::Si, &params).path, Some(expected));
        }
        // the selected path is never the more expensive one
        for n in [1.0, 5.0, 20.0, 40.0, 41.0, 80.0, 200.0] {
            let (auto, _) = sampling_cost(6, 256, n, SamplingPath::Auto);
            let (m, _) = sampling_cost(6, 256, n, SamplingPath::Matrix);
            let (f, _) = sampling_cost(6, 256, n, SamplingPath::Ifft);
            assert_eq!(auto, m.min(f));
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("fast".parse::<Method>().is_err());
    }

    #[test]
    fn matrix_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = DMatrix::from_fn(4, 5, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        assert_eq!(matrix_error(&h, &h).unwrap(), f64::NEG_INFINITY);
        assert_eq!(matrix_error(&DMatrix::zeros(4, 5), &h).unwrap(), 0.0);
        assert!(matches!(
            matrix_error(&h, &DMatrix::zeros(4, 5)),
            Err(SrpError::UndefinedReference)
        ));
        assert!(matrix_error(&DMatrix::zeros(4, 4), &h).is_err());
    }

    #[test]
    fn map_error_cases() {
        let z = SrpMap::new(vec![3.0, 4.0]);
        assert_eq!(map_error(&z, &z).unwrap(), f64::NEG_INFINITY);
        assert_eq!(map_error(&SrpMap::new(vec![0.0, 0.0]), &z).unwrap(), 0.0);
        // ||(0.5, 0)||^2 / 25 = 0.01 -> -20 dB
        assert_relative_eq!(
            map_error(&SrpMap::new(vec![3.5, 4.0]), &z).unwrap(),
            -20.0,
            epsilon = 1e-12
        );
        assert!(map_error(&z, &SrpMap::new(vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn localization_error_cases() {
        let nf = Propagation::NearField;
        assert_eq!(loc_error([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], nf), 0.0);
        assert_relative_eq!(loc_error([1.3, 2.0, 3.4], [1.0, 2.0, 3.0], nf), 0.5, epsilon = 1e-12);
        let ff = Propagation::FarField;
        assert_eq!(loc_error([0.0, 0.0, -1.0], [0.0, 0.0, -1.0], ff), 0.0);
        assert_relative_eq!(
            loc_error([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], ff),
            std::f64::consts::FRAC_PI_2
        );
        // rounding slightly above one is clamped
        let q = [0.6, 0.8, 0.0];
        assert_eq!(loc_error(q, q, ff), 0.0);
    }

    #[test]
    fn accuracy_values() {
        let th = 0.2;
        assert_eq!(loc_accuracy(th, th, 6.0), 0.5);
        assert_relative_eq!(loc_accuracy(0.0, th, 6.0), 0.99753, epsilon = 1e-5);
        assert_relative_eq!(loc_accuracy(2.0 * th, th, 6.0), 0.00247, epsilon = 1e-5);
        assert_relative_eq!(default_threshold(Propagation::FarField), 2.5f64.to_radians());
    }

    proptest! {
        #[test]
        fn accuracy_is_strictly_decreasing(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!((a - b).abs() > 1e-6);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(loc_accuracy(lo, 0.2, 6.0) > loc_accuracy(hi, 0.2, 6.0));
        }
    }

    fn small_scene(n_aux: usize) -> (TdoaTable, FrameSpec, SampleSpec) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frame = FrameSpec::new(32, 8000.0).unwrap();
        let limits = vec![4.2e-4, 6.1e-4];
        let delays = (0..30)
            .flat_map(|_| limits.iter().map(|&l| rng.random_range(-l..l)).collect::<Vec<_>>())
            .collect();
        let tdoa = TdoaTable::from_raw(30, limits, delays).unwrap();
        let spec = sample_spec(&tdoa, &frame, n_aux).unwrap();
        (tdoa, frame, spec)
    }

    #[test]
    fn implied_steering_matches_dense_sampling_product() {
        let (tdoa, frame, spec) = small_scene(2);
        let lambda = build_interp_matrix(&tdoa, &spec, &frame, u128::MAX).unwrap();
        let s = crate::sampler::SamplingMatrix::new(&spec).dense();
        let dense = lambda.matrix().map(|v| Complex64::new(v, 0.0)) * s;
        let fast = implied_steering(&lambda, &spec).unwrap();
        assert!((dense - fast).norm() < 1e-10);
    }

    #[test]
    fn interp_error_matches_dense_computation() {
        let (tdoa, frame, spec) = small_scene(2);
        let lambda = build_interp_matrix(&tdoa, &spec, &frame, u128::MAX).unwrap();
        let h = crate::srp_exact::build_srp_matrix(&tdoa, &frame, u128::MAX).unwrap();
        let h_si = implied_steering(&lambda, &spec).unwrap();
        let dense = matrix_error(&h_si, h.matrix()).unwrap();
        let fast = interp_matrix_error(&lambda, &spec, &tdoa, &frame).unwrap();
        assert_relative_eq!(dense, fast, epsilon = 1e-9);
    }

    #[test]
    fn si_matrix_error_improves_with_aux_samples() {
        let mut last = f64::INFINITY;
        for n_aux in [0, 1, 2, 4, 8] {
            let (tdoa, frame, spec) = small_scene(n_aux);
            let lambda = build_interp_matrix(&tdoa, &spec, &frame, u128::MAX).unwrap();
            let e = interp_matrix_error(&lambda, &spec, &tdoa, &frame).unwrap();
            assert!(e <= last + 1e-9, "eps_H rose to {e} dB at N_aux = {n_aux}");
            last = e;
        }
    }

    #[test]
    fn truncation_error_db_matches_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lambda = InterpMatrix::from_matrix(DMatrix::from_fn(15, 10, |_, _| rng.random_range(-1.0..1.0)));
        let lr = truncate_low_rank(&lambda, 4).unwrap();
        let dense = (lr.to_dense() - lambda.matrix()).norm_squared();
        let from_tail = relative_error_db(lr.tail_sq(), lambda.frobenius_sq()).unwrap();
        assert_relative_eq!(
            relative_error_db(dense, lambda.frobenius_sq()).unwrap(),
            from_tail,
            max_relative = 1e-9
        );
    }
}
