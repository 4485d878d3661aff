//! STFT framing and frequency-domain GCC.
//!
//! A frame of `2K` samples yields bins `0..=K`. Only the single-sided bins
//! `k = 1..K-1` enter the stacked GCC vector; the DC and Nyquist bins are
//! dropped so that the single- and two-sided formulations coincide exactly.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SrpError};
use crate::scene::PairTable;

/// Relative PHAT floor, scaled by the frame energy.
pub const DEFAULT_PHAT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    #[default]
    SqrtHann,
    /// No tapering; handy for checking transforms against closed forms.
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            // square root of the periodic Hann window
            Window::SqrtHann => (0..len).map(|n| (PI * n as f64 / len as f64).sin()).collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    frame_length: usize,
    sample_rate: f64,
    hop: usize,
    window: Window,
}

impl FrameSpec {
    /// Frame of `frame_length = 2K` samples with the default hop of `K`.
    pub fn new(frame_length: usize, sample_rate: f64) -> Result<Self> {
        if frame_length < 4 || !frame_length.is_multiple_of(2) {
            return Err(SrpError::Config(format!(
                "frame length must be even and at least 4, got {frame_length}"
            )));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(SrpError::Config(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            frame_length,
            sample_rate,
            hop: frame_length / 2,
            window: Window::SqrtHann,
        })
    }

    pub fn with_hop(mut self, hop: usize) -> Result<Self> {
        if hop == 0 {
            return Err(SrpError::Config("hop must be at least 1".into()));
        }
        self.hop = hop;
        Ok(self)
    }

    pub fn with_window(mut self, window: Window) -> Self {
        self.window = window;
        self
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }

    /// `K`, half the frame length.
    pub fn half_length(&self) -> usize {
        self.frame_length / 2
    }

    /// Number of single-sided bins kept in the GCC vector, `K - 1`.
    pub fn bins(&self) -> usize {
        self.half_length() - 1
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// `T`.
    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// `pi / T` in rad/s.
    pub fn bandlimit(&self) -> f64 {
        PI * self.sample_rate
    }

    /// Radial frequency of bin `k`, `k * pi / (K T)`.
    pub fn bin_frequency(&self, k: i64) -> f64 {
        k as f64 * self.bandlimit() / self.half_length() as f64
    }

    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.frame_length {
            0
        } else {
            (samples - self.frame_length) / self.hop + 1
        }
    }
}

/// Channel-major multichannel audio.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSignal {
    pub sample_rate: f64,
    pub channels: Vec<Vec<f64>>,
}

impl MultichannelSignal {
    pub fn new(sample_rate: f64, channels: Vec<Vec<f64>>) -> Result<Self> {
        let len = channels.first().map_or(0, Vec::len);
        if let Some(bad) = channels.iter().find(|c| c.len() != len) {
            return Err(SrpError::Dimension {
                what: "channel length",
                expected: len,
                found: bad.len(),
            });
        }
        Ok(Self { sample_rate, channels })
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Spectra of one frame, bins `0..=K` for every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectra {
    pub channels: Vec<Vec<Complex64>>,
}

impl Spectra {
    /// Mean per-channel spectral energy over bins `0..=K`.
    pub fn energy(&self) -> f64 {
        if self.channels.is_empty() {
            return 0.0;
        }
        let total: f64 = self.channels.iter().flatten().map(|y| y.norm_sqr()).sum();
        total / self.channels.len() as f64
    }
}

/// Windowed length-`2K` forward transforms with a cached plan.
pub struct Stft {
    spec: FrameSpec,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(spec: FrameSpec) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(spec.frame_length());
        Self {
            window: spec.window().coefficients(spec.frame_length()),
            spec,
            fft,
        }
    }

    pub fn spec(&self) -> &FrameSpec {
        &self.spec
    }

    pub fn frame(&self, signal: &MultichannelSignal, frame: usize) -> Result<Spectra> {
        let frames = self.spec.frame_count(signal.len());
        if frame >= frames {
            return Err(SrpError::FrameOutOfRange { frame, frames });
        }
        let len = self.spec.frame_length();
        let start = frame * self.spec.hop();
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        let channels = signal
            .channels
            .iter()
            .map(|x| {
                let mut buf: Vec<Complex64> = x[start..start + len]
                    .iter()
                    .zip(&self.window)
                    .map(|(s, w)| Complex64::new(s * w, 0.0))
                    .collect();
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                buf.truncate(self.spec.half_length() + 1);
                buf
            })
            .collect();
        Ok(Spectra { channels })
    }
}

/// Convenience wrapper that plans a transform for a single frame.
pub fn stft_frame(signal: &MultichannelSignal, spec: &FrameSpec, frame: usize) -> Result<Spectra> {
    Stft::new(*spec).frame(signal, frame)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    Phat,
    Unweighted,
}

/// Stacked single-sided frequency-domain GCC vector, pair-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FdGcc {
    pairs: usize,
    half_length: usize,
    values: Vec<Complex64>,
    weighting: Weighting,
}

impl FdGcc {
    /// Wraps `P (K-1)` stacked values (bins `1..K-1` of each pair in turn).
    pub fn from_values(pairs: usize, half_length: usize, values: Vec<Complex64>, weighting: Weighting) -> Result<Self> {
        if half_length < 2 {
            return Err(SrpError::Config(format!("K must be at least 2, got {half_length}")));
        }
        let expected = pairs * (half_length - 1);
        if values.len() != expected {
            return Err(SrpError::Dimension {
                what: "stacked GCC vector",
                expected,
                found: values.len(),
            });
        }
        Ok(Self {
            pairs,
            half_length,
            values,
            weighting,
        })
    }

    pub fn zeros(pairs: usize, half_length: usize) -> Self {
        Self {
            pairs,
            half_length,
            values: vec![Complex64::default(); pairs * (half_length - 1)],
            weighting: Weighting::Unweighted,
        }
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn half_length(&self) -> usize {
        self.half_length
    }

    pub fn bins(&self) -> usize {
        self.half_length - 1
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Bins `1..K-1` of pair `p`.
    pub fn pair(&self, p: usize) -> &[Complex64] {
        let b = self.bins();
        &self.values[p * b..(p + 1) * b]
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * a).collect(),
            ..self.clone()
        }
    }

    /// Applies PHAT normalization to already-computed cross spectra.
    pub fn phat(&self, floor: f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| phat_weight(v, floor)).collect(),
            weighting: Weighting::Phat,
            ..self.clone()
        }
    }
}

fn phat_weight(x: Complex64, floor: f64) -> Complex64 {
    let denom = x.norm().max(floor);
    if denom > 0.0 {
        x / denom
    } else {
        Complex64::default()
    }
}

/// Default PHAT floor for a frame: `1e-12` times its spectral energy.
pub fn default_phat_floor(spectra: &Spectra) -> f64 {
    DEFAULT_PHAT_FLOOR * spectra.energy()
}

/// `psi_p(w_k) = gamma * y_m * conj(y_m')` for `k = 1..K-1`, stacked by pair.
pub fn fd_gcc(spectra: &Spectra, pairs: &PairTable, weighting: Weighting, floor: f64) -> Result<FdGcc> {
    let needed = pairs.pairs().iter().map(|p| p.m.max(p.m_prime) + 1).max().unwrap_or(0);
    if spectra.channels.len() < needed {
        return Err(SrpError::Dimension {
            what: "spectra channel count",
            expected: needed,
            found: spectra.channels.len(),
        });
    }
    let bins_plus = spectra.channels[0].len();
    if bins_plus < 3 {
        return Err(SrpError::Dimension {
            what: "spectrum length",
            expected: 3,
            found: bins_plus,
        });
    }
    let half_length = bins_plus - 1;
    let mut values = Vec::with_capacity(pairs.len() * (half_length - 1));
    for pr in pairs.pairs() {
        let (ym, yn) = (&spectra.channels[pr.m], &spectra.channels[pr.m_prime]);
        for k in 1..half_length {
            let cross = ym[k] * yn[k].conj();
            values.push(match weighting {
                Weighting::Phat => phat_weight(cross, floor),
                Weighting::Unweighted => cross,
            });
        }
    }
    FdGcc::from_values(pairs.len(), half_length, values, weighting)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{enumerate_pairs, MicrophoneArray};
    use approx::assert_relative_eq;

    fn two_mics() -> PairTable {
        enumerate_pairs(&MicrophoneArray::new(vec![[0.0; 3], [1.0, 0.0, 0.0]], 340.0).unwrap())
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        // small LCG keeps this test independent of the RNG crates
        let mut s = seed;
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn frame_spec_validation() {
        assert!(FrameSpec::new(3, 1000.0).is_err());
        assert!(FrameSpec::new(2, 1000.0).is_err());
        assert!(FrameSpec::new(8, 0.0).is_err());
        let f = FrameSpec::new(512, 4000.0).unwrap();
        assert_eq!(f.hop(), 256);
        assert_eq!(f.bins(), 255);
        assert_relative_eq!(f.bandlimit(), PI * 4000.0);
        assert_relative_eq!(f.bin_frequency(256), f.bandlimit());
        assert!(f.with_hop(0).is_err());
    }

    #[test]
    fn zero_input_gives_zero_spectra() {
        let spec = FrameSpec::new(16, 8000.0).unwrap();
        let sig = MultichannelSignal::new(8000.0, vec![vec![0.0; 32]; 2]).unwrap();
        let s = stft_frame(&sig, &spec, 0).unwrap();
        assert!(s.channels.iter().flatten().all(|y| y.norm() == 0.0));
        assert_eq!(s.channels[0].len(), 9);
    }

    #[test]
    fn impulse_with_rectangular_window_is_flat() {
        let spec = FrameSpec::new(16, 8000.0).unwrap().with_window(Window::Rectangular);
        let mut x = vec![0.0; 16];
        x[0] = 1.0;
        let sig = MultichannelSignal::new(8000.0, vec![x]).unwrap();
        let s = stft_frame(&sig, &spec, 0).unwrap();
        for y in &s.channels[0] {
            assert_relative_eq!(y.norm(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn bin_centred_sinusoid_concentrates_in_mainlobe() {
        let n = 64;
        let k0 = 10;
        let spec = FrameSpec::new(n, 1000.0).unwrap();
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * PI * k0 as f64 * t as f64 / n as f64).cos())
            .collect();
        let sig = MultichannelSignal::new(1000.0, vec![x.clone()]).unwrap();
        let s = stft_frame(&sig, &spec, 0).unwrap();
        // direct evaluation of the windowed DFT
        let w = Window::SqrtHann.coefficients(n);
        for k in 0..=n / 2 {
            let direct: Complex64 = (0..n)
                .map(|t| Complex64::from_polar(x[t] * w[t], -2.0 * PI * (k * t) as f64 / n as f64))
                .sum();
            assert_relative_eq!(s.channels[0][k].re, direct.re, epsilon = 1e-9);
            assert_relative_eq!(s.channels[0][k].im, direct.im, epsilon = 1e-9);
        }
        let mags: Vec<f64> = s.channels[0].iter().map(|y| y.norm()).collect();
        let peak = mags.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, k0);
        let lobe: f64 = mags[k0 - 1..=k0 + 1].iter().map(|m| m * m).sum();
        let total: f64 = mags.iter().map(|m| m * m).sum();
        assert!(lobe / total > 0.99);
    }

    #[test]
    fn out_of_range_frame() {
        let spec = FrameSpec::new(16, 8000.0).unwrap();
        let sig = MultichannelSignal::new(8000.0, vec![vec![0.0; 20]; 2]).unwrap();
        assert_eq!(spec.frame_count(20), 1);
        assert!(matches!(
            stft_frame(&sig, &spec, 1),
            Err(SrpError::FrameOutOfRange { frame: 1, frames: 1 })
        ));
    }

    #[test]
    fn identical_channels_give_unit_phat() {
        let spec = FrameSpec::new(32, 8000.0).unwrap();
        let x = noise(32, 3);
        let sig = MultichannelSignal::new(8000.0, vec![x.clone(), x]).unwrap();
        let s = stft_frame(&sig, &spec, 0).unwrap();
        let psi = fd_gcc(&s, &two_mics(), Weighting::Phat, default_phat_floor(&s)).unwrap();
        assert_eq!(psi.values().len(), 15);
        for v in psi.values() {
            assert_relative_eq!(v.re, 1.0, epsilon = 1e-12);
            assert!(v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn circular_delay_gives_linear_phase() {
        let n = 64;
        let d = 5usize;
        let spec = FrameSpec::new(n, 8000.0).unwrap().with_window(Window::Rectangular);
        let x = noise(n, 11);
        // pair 0 is (m = 1, m' = 0): channel 0 is channel 1 circularly delayed by d
        let delayed: Vec<f64> = (0..n).map(|t| x[(t + n - d) % n]).collect();
        let sig = MultichannelSignal::new(8000.0, vec![delayed, x]).unwrap();
        let s = stft_frame(&sig, &spec, 0).unwrap();
        let psi = fd_gcc(&s, &two_mics(), Weighting::Phat, 0.0).unwrap();
        let t = spec.sample_period();
        for (idx, v) in psi.pair(0).iter().enumerate() {
            let k = idx as i64 + 1;
            let expected = Complex64::from_polar(1.0, spec.bin_frequency(k) * d as f64 * t);
            assert_relative_eq!(v.re, expected.re, epsilon = 1e-10);
            assert_relative_eq!(v.im, expected.im, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_spectra_with_floor_give_zero_gcc() {
        let s = Spectra {
            channels: vec![vec![Complex64::default(); 9]; 2],
        };
        let psi = fd_gcc(&s, &two_mics(), Weighting::Phat, 1e-12).unwrap();
        assert!(psi.values().iter().all(|v| v.norm() == 0.0));
        // zero floor must not produce NaN either
        let psi = fd_gcc(&s, &two_mics(), Weighting::Phat, 0.0).unwrap();
        assert!(psi.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn mismatched_channels_error() {
        let s = Spectra {
            channels: vec![vec![Complex64::new(1.0, 0.0); 9]],
        };
        assert!(matches!(
            fd_gcc(&s, &two_mics(), Weighting::Phat, 0.0),
            Err(SrpError::Dimension { .. })
        ));
    }

    #[test]
    fn phat_is_idempotent_and_unit_magnitude() {
        let spec = FrameSpec::new(64, 8000.0).unwrap();
        let sig = MultichannelSignal::new(8000.0, vec![noise(64, 1), noise(64, 2)]).unwrap();
        let s = stft_frame(&sig, &spec, 0).unwrap();
        let floor = default_phat_floor(&s);
        let once = fd_gcc(&s, &two_mics(), Weighting::Phat, floor).unwrap();
        let twice = once.phat(floor);
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert!((a - b).norm() < 1e-15);
            assert_relative_eq!(a.norm(), 1.0, epsilon = 1e-12);
        }
        let raw = fd_gcc(&s, &two_mics(), Weighting::Unweighted, floor).unwrap();
        for (a, b) in raw.phat(floor).values().iter().zip(once.values()) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
