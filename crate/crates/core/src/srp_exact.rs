//! Conventional SRP: the dense steering transform `H` and `z = 2 Re[H psi]`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Result, SrpError};
use crate::frontend::{FdGcc, FrameSpec};
use crate::scene::{CandidateGrid, Point3, TdoaTable};

/// Default cap on a single dense operator, 1 GiB.
pub const DEFAULT_MATRIX_CAP: u128 = 1 << 30;

pub(crate) fn check_capacity(what: &'static str, elements: u128, elem_bytes: u128, cap: u128) -> Result<()> {
    let bytes = elements * elem_bytes;
    if bytes > cap {
        Err(SrpError::Capacity { what, bytes, cap })
    } else {
        Ok(())
    }
}

/// `J x P(K-1)` matrix of unit-magnitude steering phases `e^{j w_k dt_p(i)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SrpMatrix {
    pairs: usize,
    half_length: usize,
    matrix: DMatrix<Complex64>,
}

impl SrpMatrix {
    pub fn from_matrix(pairs: usize, half_length: usize, matrix: DMatrix<Complex64>) -> Result<Self> {
        let expected = pairs * (half_length - 1);
        if matrix.ncols() != expected {
            return Err(SrpError::Dimension {
                what: "SRP matrix columns",
                expected,
                found: matrix.ncols(),
            });
        }
        Ok(Self {
            pairs,
            half_length,
            matrix,
        })
    }

    pub fn candidates(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn half_length(&self) -> usize {
        self.half_length
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    /// Squared Frobenius norm, equal to `J P (K-1)` for steering phases.
    pub fn frobenius_sq(&self) -> f64 {
        self.matrix.iter().map(|v| v.norm_sqr()).sum()
    }
}

pub fn build_srp_matrix(tdoa: &TdoaTable, frame: &FrameSpec, cap_bytes: u128) -> Result<SrpMatrix> {
    let (j, p, bins) = (tdoa.candidates(), tdoa.pairs(), frame.bins());
    check_capacity("SRP matrix", (j * p * bins) as u128, 16, cap_bytes)?;
    let step = frame.bin_frequency(1);
    let matrix = DMatrix::from_fn(j, p * bins, |i, col| {
        let (pair, k) = (col / bins, col % bins + 1);
        Complex64::from_polar(1.0, step * k as f64 * tdoa.delay(i, pair))
    });
    Ok(SrpMatrix {
        pairs: p,
        half_length: frame.half_length(),
        matrix,
    })
}

/// Real-valued SRP map over the candidate grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SrpMap {
    values: Vec<f64>,
}

impl SrpMap {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the maximum; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, v) in self.values.iter().enumerate() {
            match best {
                Some(b) if *v <= self.values[b] => {}
                _ => best = Some(i),
            }
        }
        best
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(SrpError::Dimension { what, expected, found })
    }
}

/// `z = 2 Re[H psi]`.
pub fn srp_map_exact(h: &SrpMatrix, psi: &FdGcc) -> Result<SrpMap> {
    check_len("GCC pairs", h.pairs, psi.pairs())?;
    check_len("GCC vector", h.matrix.ncols(), psi.values().len())?;
    let v = DVector::from_column_slice(psi.values());
    let prod = &h.matrix * v;
    Ok(SrpMap::new(prod.iter().map(|c| 2.0 * c.re).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub index: usize,
    pub point: Point3,
}

pub fn locate(map: &SrpMap, grid: &CandidateGrid) -> Result<Location> {
    check_len("map length", grid.len(), map.len())?;
    let index = map.argmax().ok_or_else(|| SrpError::InvalidGrid("empty map".into()))?;
    Ok(Location {
        index,
        point: grid.point(index),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::Weighting;
    use crate::scene::Propagation;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(j: usize, p: usize, k: usize, seed: u64) -> (TdoaTable, FrameSpec, FdGcc) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame = FrameSpec::new(2 * k, 8000.0).unwrap();
        let limits: Vec<f64> = (0..p).map(|_| rng.random_range(1e-4..2e-3)).collect();
        let delays = (0..j * p)
            .map(|idx| {
                let l = limits[idx % p];
                rng.random_range(-l..l)
            })
            .collect();
        let tdoa = TdoaTable::from_raw(j, limits, delays).unwrap();
        let values = (0..p * (k - 1))
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let psi = FdGcc::from_values(p, k, values, Weighting::Unweighted).unwrap();
        (tdoa, frame, psi)
    }

    #[test]
    fn zero_tdoa_gives_all_ones() {
        let tdoa = TdoaTable::from_raw(3, vec![1e-3], vec![0.0; 3]).unwrap();
        let frame = FrameSpec::new(8, 1000.0).unwrap();
        let h = build_srp_matrix(&tdoa, &frame, DEFAULT_MATRIX_CAP).unwrap();
        assert!(h.matrix().iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn quarter_turn_at_first_bin() {
        // K = 2: w_1 = pi / (2T), so a delay of T gives a phase of pi/2 and T/2 gives pi/4
        let frame = FrameSpec::new(4, 1000.0).unwrap();
        let t = frame.sample_period();
        let tdoa = TdoaTable::from_raw(2, vec![1e-3], vec![t, t / 2.0]).unwrap();
        let h = build_srp_matrix(&tdoa, &frame, DEFAULT_MATRIX_CAP).unwrap();
        assert_eq!(h.matrix().shape(), (2, 1));
        assert!((h.matrix()[(0, 0)] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        let eighth = Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4);
        assert!((h.matrix()[(1, 0)] - eighth).norm() < 1e-15);
    }

    #[test]
    fn capacity_cap_is_enforced() {
        let (tdoa, frame, _) = random_instance(16, 3, 8, 1);
        assert!(matches!(
            build_srp_matrix(&tdoa, &frame, 100),
            Err(SrpError::Capacity { .. })
        ));
        // full-scale near-field dimensions exceed the default cap
        let elements = 73084u128 * 6 * 255;
        assert!(check_capacity("SRP matrix", elements, 16, DEFAULT_MATRIX_CAP).is_err());
    }

    #[test]
    fn entries_have_unit_magnitude() {
        let (tdoa, frame, _) = random_instance(16, 3, 8, 2);
        let h = build_srp_matrix(&tdoa, &frame, DEFAULT_MATRIX_CAP).unwrap();
        assert!(h.matrix().iter().all(|v| (v.norm() - 1.0).abs() < 1e-14));
        assert_relative_eq!(h.frobenius_sq(), (16 * 3 * 7) as f64, max_relative = 1e-14);
    }

    #[test]
    fn zero_gcc_gives_zero_map() {
        let (tdoa, frame, _) = random_instance(16, 3, 8, 3);
        let h = build_srp_matrix(&tdoa, &frame, DEFAULT_MATRIX_CAP).unwrap();
        let z = srp_map_exact(&h, &FdGcc::zeros(3, 8)).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_active_bin_is_a_cosine() {
        let (tdoa, frame, _) = random_instance(16, 1, 8, 4);
        let h = build_srp_matrix(&tdoa, &frame, DEFAULT_MATRIX_CAP).unwrap();
        let k = 3;
        let mut values = vec![Complex64::default(); 7];
        values[k - 1] = Complex64::new(1.0, 0.0);
        let psi = FdGcc::from_values(1, 8, values, Weighting::Phat).unwrap();
        let z = srp_map_exact(&h, &psi).unwrap();
        for i in 0..16 {
            let expected = 2.0 * (frame.bin_frequency(k as i64) * tdoa.delay(i, 0)).cos();
            assert_relative_eq!(z.values()[i], expected, epsilon = 1e-13);
        }
    }

    #[test]
    fn matrix_product_matches_double_loop() {
        let (tdoa, frame, psi) = random_instance(16, 3, 8, 5);
        let h = build_srp_matrix(&tdoa, &frame, DEFAULT_MATRIX_CAP).unwrap();
        let z = srp_map_exact(&h, &psi).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..16 {
            let mut acc = 0.0;
            for p in 0..3 {
                for k in 1..8 {
                    let w = k as f64 * std::f64::consts::PI / (8.0 * frame.sample_period());
                    acc += 2.0 * (psi.pair(p)[k - 1] * Complex64::from_polar(1.0, w * tdoa.delay(i, p))).re;
                }
            }
            num += (acc - z.values()[i]).powi(2);
            den += acc * acc;
        }
        assert!((num / den).sqrt() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (tdoa, frame, _) = random_instance(4, 3, 8, 6);
        let h = build_srp_matrix(&tdoa, &frame, DEFAULT_MATRIX_CAP).unwrap();
        assert!(srp_map_exact(&h, &FdGcc::zeros(2, 8)).is_err());
        assert!(srp_map_exact(&h, &FdGcc::zeros(3, 9)).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let z = SrpMap::new(vec![0.0, 5.0, 5.0, 1.0]);
        assert_eq!(z.argmax(), Some(1));
        let grid = CandidateGrid::from_points(Propagation::NearField, (0..10).map(|i| [i as f64, 0.0, 0.0]).collect())
            .unwrap();
        let mut v = vec![0.0; 10];
        v[7] = 3.0;
        let loc = locate(&SrpMap::new(v), &grid).unwrap();
        assert_eq!(loc.index, 7);
        assert_eq!(loc.point, [7.0, 0.0, 0.0]);
    }

    #[test]
    fn positive_scaling_is_equivariant() {
        let (tdoa, frame, psi) = random_instance(16, 3, 8, 7);
        let h = build_srp_matrix(&tdoa, &frame, DEFAULT_MATRIX_CAP).unwrap();
        let z = srp_map_exact(&h, &psi).unwrap();
        let z3 = srp_map_exact(&h, &psi.scaled(3.5)).unwrap();
        for (a, b) in z.values().iter().zip(z3.values()) {
            assert_relative_eq!(3.5 * a, *b, max_relative = 1e-12);
        }
        assert_eq!(z.argmax(), z3.argmax());
    }
}
