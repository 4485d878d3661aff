//! Critical sampling of the time-domain GCC.
//!
//! Pair `p` needs the lags `n = -N_p..=N_p` with `N_p = floor(dt_p0 / T) + N_aux`.
//! Lag `n` lives at local index `n mod (2N_p + 1)`, so lag 0 comes first,
//! then the positive lags, then the negative lags in ascending order.
//!
//! The samples can be produced either by the (never materialized) block
//! sampling matrix `xi = 2 Re[S psi]` or by one length-`2K` inverse FFT per
//! pair followed by index selection.
//!
//! **Normalization:** the inverse transform here is *unnormalized*,
//! `xi_p(nT) = sum_k psi_p(w_k) e^{j w_k n T}`, with no `1/2K` factor. This
//! matches `rustfft`'s inverse but differs from e.g. numpy's `ifft`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SrpError};
use crate::frontend::{FdGcc, FrameSpec};
use crate::scene::TdoaTable;
use crate::srp_exact::{check_capacity, check_len};

pub const DEFAULT_AUX_SAMPLES: usize = 2;

/// Per-pair sample counts `N_p` for a frame of `2K` samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSpec {
    counts: Vec<usize>,
    half_length: usize,
    offsets: Vec<usize>,
}

impl SampleSpec {
    pub fn new(counts: Vec<usize>, half_length: usize) -> Result<Self> {
        for (p, &n) in counts.iter().enumerate() {
            if 2 * n + 1 > 2 * half_length {
                return Err(SrpError::Config(format!(
                    "pair {p} needs {} TD-GCC samples but a frame only has {}; \
                     the frame length 2K should well exceed twice the largest TDOA",
                    2 * n + 1,
                    2 * half_length
                )));
            }
        }
        let mut offsets = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &n in &counts {
            acc += 2 * n + 1;
            offsets.push(acc);
        }
        Ok(Self {
            counts,
            half_length,
            offsets,
        })
    }

    /// `N_p` for every pair.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn pairs(&self) -> usize {
        self.counts.len()
    }

    pub fn half_length(&self) -> usize {
        self.half_length
    }

    /// `2 N_p + 1`.
    pub fn block_len(&self, p: usize) -> usize {
        2 * self.counts[p] + 1
    }

    /// First stacked index of pair `p`.
    pub fn offset(&self, p: usize) -> usize {
        self.offsets[p]
    }

    /// Stacked sample count `sum_p (2 N_p + 1)`.
    pub fn total_len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Average samples per pair, `N = 1 + (2/P) sum_p N_p`.
    pub fn mean_samples(&self) -> f64 {
        let sum: usize = self.counts.iter().sum();
        1.0 + 2.0 * sum as f64 / self.counts.len() as f64
    }

    /// Local index of lag `n` within pair `p`'s block.
    pub fn local_index(&self, p: usize, n: i64) -> usize {
        n.rem_euclid(self.block_len(p) as i64) as usize
    }

    /// Index of lag `n` in a length-`2K` inverse transform.
    pub fn fft_index(&self, n: i64) -> usize {
        n.rem_euclid(2 * self.half_length as i64) as usize
    }

    /// `(local index, lag)` for all lags of pair `p`.
    pub fn lags(&self, p: usize) -> impl Iterator<Item = (usize, i64)> + '_ {
        let n = self.counts[p] as i64;
        (-n..=n).map(move |lag| (self.local_index(p, lag), lag))
    }
}

pub fn sample_spec(tdoa: &TdoaTable, frame: &FrameSpec, n_aux: usize) -> Result<SampleSpec> {
    let counts = tdoa
        .limits()
        .iter()
        .map(|&limit| {
            let ratio = limit * frame.sample_rate();
            // guard against ratios a hair below an integer
            (ratio + 1e-9).floor() as usize + n_aux
        })
        .collect();
    SampleSpec::new(counts, frame.half_length())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingPath {
    /// `xi = 2 Re[S psi]`.
    Matrix,
    /// Inverse FFT of the two-sided GCC plus index selection.
    Ifft,
    /// Whichever needs fewer multiplications.
    #[default]
    Auto,
}

/// The inverse FFT is cheaper exactly when `N > 4 K / (K-1) log2(2K)`.
pub fn ifft_is_cheaper(mean_samples: f64, half_length: usize) -> bool {
    let k = half_length as f64;
    mean_samples > 4.0 * k / (k - 1.0) * (2.0 * k).log2()
}

impl SamplingPath {
    pub fn resolve(self, mean_samples: f64, half_length: usize) -> SamplingPath {
        match self {
            SamplingPath::Auto if ifft_is_cheaper(mean_samples, half_length) => SamplingPath::Ifft,
            SamplingPath::Auto => SamplingPath::Matrix,
            other => other,
        }
    }
}

/// Stacked real TD-GCC samples, pair-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TdGccSamples {
    values: Vec<f64>,
    offsets: Vec<usize>,
}

impl TdGccSamples {
    pub fn new(spec: &SampleSpec, values: Vec<f64>) -> Result<Self> {
        check_len("TD-GCC samples", spec.total_len(), values.len())?;
        Ok(Self {
            values,
            offsets: spec.offsets.clone(),
        })
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

    pub fn pair(&self, p: usize) -> &[f64] {
        &self.values[self.offsets[p]..self.offsets[p + 1]]
    }
}

/// Produces TD-GCC samples for a fixed [`SampleSpec`], reusing the FFT plan.
pub struct Sampler {
    spec: SampleSpec,
    ifft: Arc<dyn Fft<f64>>,
    // e^{j pi m / K} for m = 0..2K
    twiddles: Vec<Complex64>,
}

impl Sampler {
    pub fn new(spec: SampleSpec) -> Self {
        let two_k = 2 * spec.half_length();
        let ifft = FftPlanner::new().plan_fft_inverse(two_k);
        let twiddles = (0..two_k)
            .map(|m| Complex64::from_polar(1.0, PI * m as f64 / spec.half_length() as f64))
            .collect();
        Self { spec, ifft, twiddles }
    }

    pub fn spec(&self) -> &SampleSpec {
        &self.spec
    }

    pub fn sample(&self, psi: &FdGcc, path: SamplingPath) -> Result<TdGccSamples> {
        check_len("GCC pairs", self.spec.pairs(), psi.pairs())?;
        check_len("GCC half length", self.spec.half_length(), psi.half_length())?;
        let mut values = vec![0.0; self.spec.total_len()];
        match path.resolve(self.spec.mean_samples(), self.spec.half_length()) {
            SamplingPath::Matrix => self.sample_matrix(psi, &mut values),
            _ => self.sample_ifft(psi, &mut values),
        }
        TdGccSamples::new(&self.spec, values)
    }

    fn sample_matrix(&self, psi: &FdGcc, out: &mut [f64]) {
        let two_k = 2 * self.spec.half_length() as i64;
        for p in 0..self.spec.pairs() {
            let block = &mut out[self.spec.offset(p)..self.spec.offset(p) + self.spec.block_len(p)];
            let gcc = psi.pair(p);
            for (local, n) in self.spec.lags(p) {
                let acc: f64 = gcc
                    .iter()
                    .enumerate()
                    .map(|(idx, v)| {
                        let k = idx as i64 + 1;
                        let w = self.twiddles[(k * n).rem_euclid(two_k) as usize];
                        v.re * w.re - v.im * w.im
                    })
                    .sum();
                block[local] = 2.0 * acc;
            }
        }
    }

    fn sample_ifft(&self, psi: &FdGcc, out: &mut [f64]) {
        let two_k = 2 * self.spec.half_length();
        let mut buf = vec![Complex64::default(); two_k];
        let mut scratch = vec![Complex64::default(); self.ifft.get_inplace_scratch_len()];
        for p in 0..self.spec.pairs() {
            fill_two_sided(psi.pair(p), &mut buf);
            self.ifft.process_with_scratch(&mut buf, &mut scratch);
            let block = &mut out[self.spec.offset(p)..self.spec.offset(p) + self.spec.block_len(p)];
            for (local, n) in self.spec.lags(p) {
                block[local] = buf[self.spec.fft_index(n)].re;
            }
        }
    }
}

pub fn td_gcc_samples(psi: &FdGcc, spec: &SampleSpec, path: SamplingPath) -> Result<TdGccSamples> {
    Sampler::new(spec.clone()).sample(psi, path)
}

/// Two-sided spectrum of one pair at indices `k mod 2K`; bins 0 and K are zero.
fn fill_two_sided(single: &[Complex64], buf: &mut [Complex64]) {
    let two_k = buf.len();
    buf.fill(Complex64::default());
    for (idx, v) in single.iter().enumerate() {
        let k = idx + 1;
        buf[k] = *v;
        buf[two_k - k] = v.conj();
    }
}

/// Stacked two-sided GCC, `2K` entries per pair indexed by `k mod 2K`.
pub fn two_sided_gcc(psi: &FdGcc) -> Vec<Complex64> {
    let two_k = 2 * psi.half_length();
    let mut out = vec![Complex64::default(); psi.pairs() * two_k];
    for p in 0..psi.pairs() {
        fill_two_sided(psi.pair(p), &mut out[p * two_k..(p + 1) * two_k]);
    }
    out
}

/// Two-sided steering matrix, `J x 2PK`, entries `e^{j w_k dt_p(i)}` for
/// `k = -K+1..=K` at column `p 2K + (k mod 2K)`.
pub fn two_sided_srp_matrix(tdoa: &TdoaTable, frame: &FrameSpec, cap_bytes: u128) -> Result<DMatrix<Complex64>> {
    let (j, p) = (tdoa.candidates(), tdoa.pairs());
    let two_k = frame.frame_length();
    check_capacity("two-sided SRP matrix", (j * p * two_k) as u128, 16, cap_bytes)?;
    let half = frame.half_length() as i64;
    Ok(DMatrix::from_fn(j, p * two_k, |i, col| {
        let (pair, kmod) = (col / two_k, (col % two_k) as i64);
        let k = if kmod > half { kmod - 2 * half } else { kmod };
        Complex64::from_polar(1.0, frame.bin_frequency(k) * tdoa.delay(i, pair))
    }))
}

/// Block-diagonal sampling matrix. Dense forms exist for verification and
/// error analysis only; sampling at run time never builds them.
#[derive(Debug, Clone, Copy)]
pub struct SamplingMatrix<'a> {
    spec: &'a SampleSpec,
}

impl<'a> SamplingMatrix<'a> {
    pub fn new(spec: &'a SampleSpec) -> Self {
        Self { spec }
    }

    /// Single-sided `S`, `sum_p(2N_p+1) x P(K-1)`, `[S_p]_{n_mod,k} = e^{j pi k n / K}`.
    pub fn dense(&self) -> DMatrix<Complex64> {
        let k_half = self.spec.half_length();
        let bins = k_half - 1;
        let mut s = DMatrix::zeros(self.spec.total_len(), self.spec.pairs() * bins);
        for p in 0..self.spec.pairs() {
            for (local, n) in self.spec.lags(p) {
                for k in 1..k_half {
                    s[(self.spec.offset(p) + local, p * bins + k - 1)] =
                        Complex64::from_polar(1.0, PI * (k as i64 * n) as f64 / k_half as f64);
                }
            }
        }
        s
    }

    /// Two-sided `S-bar`, `sum_p(2N_p+1) x 2PK`, over `k = -K+1..=K`.
    pub fn two_sided(&self) -> DMatrix<Complex64> {
        let half = self.spec.half_length() as i64;
        let two_k = 2 * self.spec.half_length();
        let mut s = DMatrix::zeros(self.spec.total_len(), self.spec.pairs() * two_k);
        for p in 0..self.spec.pairs() {
            for (local, n) in self.spec.lags(p) {
                for k in -half + 1..=half {
                    let col = p * two_k + k.rem_euclid(2 * half) as usize;
                    s[(self.spec.offset(p) + local, col)] =
                        Complex64::from_polar(1.0, PI * (k * n) as f64 / half as f64);
                }
            }
        }
        s
    }
}
