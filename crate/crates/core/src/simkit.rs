//! Synthetic scenes: random source placement, fractional-delay rendering
//! with optional shoebox reflections, and per-channel pink noise at a set SNR.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::read_wav;
use crate::error::{Result, SrpError};
use crate::frontend::MultichannelSignal;
use crate::scene::{
    distance, norm, CandidateGrid, GridSpec, MicrophoneArray, Point3, Propagation, DEFAULT_SPEED_OF_SOUND,
};

/// Taps of the windowed-sinc fractional-delay kernel.
pub const KERNEL_TAPS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ArraySpec {
    Explicit {
        positions: Vec<Point3>,
    },
    /// Equispaced in the horizontal plane, first microphone along +x.
    Circular {
        center: Point3,
        radius: f64,
        count: usize,
    },
}

impl ArraySpec {
    pub fn build(&self, speed_of_sound: f64) -> Result<MicrophoneArray> {
        match self {
            ArraySpec::Explicit { positions } => MicrophoneArray::new(positions.clone(), speed_of_sound),
            ArraySpec::Circular { center, radius, count } => {
                MicrophoneArray::circular(*center, *radius, *count, speed_of_sound)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceSignal {
    /// Pink-filtered Gaussian noise, a stand-in for speech.
    #[default]
    Pink,
    White,
    /// First channel of a WAV file at the scene's sample rate, looped as needed.
    File {
        path: PathBuf,
    },
}

fn default_speed_of_sound() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

fn default_absorption() -> [f64; 6] {
    [0.5; 6]
}

fn default_min_range() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Propagation,
    /// Shoebox dimensions in metres; the room spans `[0, room]`.
    pub room: Point3,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
    pub array: ArraySpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub source: SourceSignal,
    /// Image-method order; 0 renders the direct path only.
    #[serde(default)]
    pub reflection_order: usize,
    /// Energy absorption per wall, ordered x=0, x=L, y=0, y=L, z=0, z=L.
    #[serde(default = "default_absorption")]
    pub absorption: [f64; 6],
    /// Omitted means noiseless.
    #[serde(default)]
    pub snr_db: Option<f64>,
    pub placements: usize,
    pub frames: usize,
    /// Draw sources from the candidate grid instead of the continuum.
    #[serde(default)]
    pub on_grid: bool,
    /// Smallest far-field source range from the array centre.
    #[serde(default = "default_min_range")]
    pub min_range: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Placement {
    pub index: usize,
    /// Physical source position.
    pub position: Point3,
    /// Ground truth in grid coordinates: the position (near field) or the
    /// unit direction from the array centre (far field).
    pub truth: Point3,
    pub grid_index: Option<usize>,
}

const MAX_DRAWS: usize = 10_000;
const WALL_MARGIN: f64 = 0.05;

fn inside_room(p: &Point3, room: &Point3) -> bool {
    (0..3).all(|a| p[a] >= 0.0 && p[a] <= room[a])
}

/// Distance from `origin` along unit `dir` to the first wall, less a margin.
fn range_to_wall(origin: &Point3, dir: &Point3, room: &Point3) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..3 {
        if dir[a] > 1e-12 {
            best = best.min((room[a] - WALL_MARGIN - origin[a]) / dir[a]);
        } else if dir[a] < -1e-12 {
            best = best.min((WALL_MARGIN - origin[a]) / dir[a]);
        }
    }
    best
}

fn random_lower_direction(rng: &mut ChaCha8Rng) -> Point3 {
    // uniform on the lower half-sphere: cos(polar) uniform in [-1, 0]
    let z: f64 = -rng.random_range(0.0..=1.0);
    let phi = rng.random_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).max(0.0).sqrt();
    [s * phi.sin(), s * phi.cos(), z]
}

/// Draws `cfg.placements` source positions, deterministic in `cfg.seed`.
pub fn place_sources(cfg: &ScenarioConfig, array: &MicrophoneArray, grid: &CandidateGrid) -> Result<Vec<Placement>> {
    if grid.mode() != cfg.mode {
        return Err(SrpError::Config("grid mode differs from scenario mode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let clear_of_mics = |p: &Point3| array.positions().iter().all(|m| distance(m, p) > 1e-3);
    let mut out = Vec::with_capacity(cfg.placements);
    for index in 0..cfg.placements {
        let mut found = None;
        for _ in 0..MAX_DRAWS {
            let grid_index = cfg.on_grid.then(|| rng.random_range(0..grid.len()));
            let candidate = match cfg.mode {
                Propagation::NearField => {
                    let position = match grid_index {
                        Some(i) => grid.point(i),
                        None => {
                            let (lo, hi) = grid.bounds();
                            let mut p = [0.0; 3];
                            for a in 0..3 {
                                p[a] = if hi[a] > lo[a] {
                                    rng.random_range(lo[a]..=hi[a])
                                } else {
                                    lo[a]
                                };
                            }
                            p
                        }
                    };
                    (inside_room(&position, &cfg.room) && clear_of_mics(&position)).then_some((position, position))
                }
                Propagation::FarField => {
                    let dir = match grid_index {
                        Some(i) => grid.point(i),
                        None => random_lower_direction(&mut rng),
                    };
                    let center = array.centroid();
                    let r_max = range_to_wall(&center, &dir, &cfg.room);
                    if r_max < cfg.min_range {
                        None
                    } else {
                        let r = rng.random_range(cfg.min_range..=r_max);
                        let position = [center[0] + r * dir[0], center[1] + r * dir[1], center[2] + r * dir[2]];
                        clear_of_mics(&position).then_some((position, dir))
                    }
                }
            };
            if let Some((position, truth)) = candidate {
                found = Some(Placement {
                    index,
                    position,
                    truth,
                    grid_index,
                });
                break;
            }
        }
        out.push(found.ok_or_else(|| {
            SrpError::Infeasible(format!(
                "no admissible source position for placement {index} after {MAX_DRAWS} draws"
            ))
        })?);
    }
    Ok(out)
}

/// Image sources up to `order` reflections with their amplitude factors.
/// Wall factors are `sqrt(1 - absorption)`.
pub fn image_sources(source: Point3, room: Point3, order: usize, absorption: [f64; 6]) -> Vec<(Point3, f64)> {
    let beta: Vec<f64> = absorption.iter().map(|a| (1.0 - a).max(0.0).sqrt()).collect();
    let n = order as i64;
    let mut images = Vec::new();
    for u in 0..2i64 {
        for v in 0..2i64 {
            for w in 0..2i64 {
                for l in -n..=n {
                    for m in -n..=n {
                        for q in -n..=n {
                            let parity = [u, v, w];
                            let shift = [l, m, q];
                            let mut pos = [0.0; 3];
                            let mut gain = 1.0;
                            let mut count = 0;
                            for a in 0..3 {
                                pos[a] = (1 - 2 * parity[a]) as f64 * source[a] + 2.0 * shift[a] as f64 * room[a];
                                let near = (shift[a] - parity[a]).unsigned_abs();
                                let far = shift[a].unsigned_abs();
                                gain *= beta[2 * a].powi(near as i32) * beta[2 * a + 1].powi(far as i32);
                                count += near + far;
                            }
                            if count <= order as u64 {
                                images.push((pos, gain));
                            }
                        }
                    }
                }
            }
        }
    }
    // direct path first
    images.sort_by(|a, b| distance(&a.0, &source).total_cmp(&distance(&b.0, &source)));
    images
}

fn blackman(u: f64, half: f64) -> f64 {
    0.42 + 0.5 * (PI * u / half).cos() + 0.08 * (2.0 * PI * u / half).cos()
}

/// Value of `src` at fractional index `x`, by a 64-tap Blackman-windowed sinc.
/// Samples outside `src` count as zero.
pub fn fractional_sample(src: &[f64], x: f64) -> f64 {
    let base = x.floor();
    let frac = x - base;
    let half = (KERNEL_TAPS / 2) as f64;
    let base = base as i64;
    let mut acc = 0.0;
    for t in -(KERNEL_TAPS as i64 / 2 - 1)..=(KERNEL_TAPS as i64 / 2) {
        let idx = base + t;
        if idx < 0 || idx as usize >= src.len() {
            continue;
        }
        let u = frac - t as f64;
        acc += src[idx as usize] * crate::interpolator::sinc(u) * blackman(u, half);
    }
    acc
}

/// Unit-RMS pink noise from Paul Kellet's refined filter.
pub fn pink_noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let white: f64 = rng.sample(StandardNormal);
            b[0] = 0.99886 * b[0] + white * 0.0555179;
            b[1] = 0.99332 * b[1] + white * 0.0750759;
            b[2] = 0.96900 * b[2] + white * 0.1538520;
            b[3] = 0.86650 * b[3] + white * 0.3104856;
            b[4] = 0.55000 * b[4] + white * 0.5329522;
            b[5] = -0.7616 * b[5] - white * 0.0168980;
            let pink = b.iter().sum::<f64>() + white * 0.5362;
            b[6] = white * 0.115926;
            pink
        })
        .collect();
    normalize_rms(&mut out);
    out
}

fn white_noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    normalize_rms(&mut out);
    out
}

fn normalize_rms(x: &mut [f64]) {
    let p = power(x);
    if p > 0.0 {
        let g = 1.0 / p.sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
}

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Clean and noisy renderings of one placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub placement: Placement,
    /// Direct path only.
    pub direct: MultichannelSignal,
    /// Direct path plus reflections.
    pub clean: MultichannelSignal,
    /// `clean` plus noise; equal to `clean` when noiseless.
    pub mix: MultichannelSignal,
}

fn placement_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn source_signal(cfg: &ScenarioConfig, len: usize, sample_rate: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    match &cfg.source {
        SourceSignal::Pink => Ok(pink_noise(len, rng)),
        SourceSignal::White => Ok(white_noise(len, rng)),
        SourceSignal::File { path } => {
            let wav = read_wav(path)?;
            if (wav.sample_rate - sample_rate).abs() > 1e-6 {
                return Err(SrpError::Config(format!(
                    "source file is sampled at {} Hz, scene at {sample_rate} Hz",
                    wav.sample_rate
                )));
            }
            let ch = wav
                .channels
                .into_iter()
                .next()
                .filter(|c| !c.is_empty())
                .ok_or_else(|| SrpError::Config("source file is empty".into()))?;
            Ok(ch.iter().copied().cycle().take(len).collect())
        }
    }
}

/// Renders `samples` samples of one placement at every microphone.
pub fn synthesize(
    cfg: &ScenarioConfig,
    array: &MicrophoneArray,
    placement: &Placement,
    sample_rate: f64,
    samples: usize,
) -> Result<Rendering> {
    let src_pos = placement.position;
    if array.positions().iter().any(|m| distance(m, &src_pos) < 1e-9) {
        return Err(SrpError::InvalidGeometry("source coincides with a microphone".into()));
    }
    let images = image_sources(src_pos, cfg.room, cfg.reflection_order, cfg.absorption);
    let c = array.speed_of_sound();
    let max_delay = images
        .iter()
        .flat_map(|(p, _)| array.positions().iter().map(move |m| distance(m, p)))
        .fold(0.0f64, f64::max)
        / c
        * sample_rate;
    let preroll = max_delay.ceil() as usize + KERNEL_TAPS;
    let mut rng = placement_rng(cfg.seed, placement.index);
    let src = source_signal(cfg, samples + preroll + KERNEL_TAPS, sample_rate, &mut rng)?;

    let render = |mic: &Point3, paths: &[(Point3, f64)]| -> Vec<f64> {
        let taps: Vec<(f64, f64)> = paths
            .iter()
            .map(|(p, g)| {
                let r = distance(mic, p);
                (r / c * sample_rate, g / r)
            })
            .collect();
        (0..samples)
            .map(|n| {
                taps.iter()
                    .map(|&(d, a)| a * fractional_sample(&src, (n + preroll) as f64 - d))
                    .sum()
            })
            .collect()
    };
    let direct: Vec<Vec<f64>> = array.positions().iter().map(|m| render(m, &images[..1])).collect();
    let clean: Vec<Vec<f64>> = if images.len() == 1 {
        direct.clone()
    } else {
        array.positions().iter().map(|m| render(m, &images)).collect()
    };
    let mix = match cfg.snr_db {
        None => clean.clone(),
        Some(snr) if snr.is_infinite() && snr > 0.0 => clean.clone(),
        Some(snr) => clean
            .iter()
            .zip(&direct)
            .map(|(ch, d)| {
                let noise = pink_noise(samples, &mut rng);
                let gain = (power(d) / 10f64.powf(snr / 10.0)).sqrt();
                ch.iter().zip(&noise).map(|(x, v)| x + gain * v).collect()
            })
            .collect(),
    };
    Ok(Rendering {
        placement: *placement,
        direct: MultichannelSignal::new(sample_rate, direct)?,
        clean: MultichannelSignal::new(sample_rate, clean)?,
        mix: MultichannelSignal::new(sample_rate, mix)?,
    })
}

/// Places and renders every source of a scenario, in parallel.
pub fn render_scenario(
    cfg: &ScenarioConfig,
    array: &MicrophoneArray,
    grid: &CandidateGrid,
    sample_rate: f64,
    samples: usize,
) -> Result<Vec<Rendering>> {
    let placements = place_sources(cfg, array, grid)?;
    placements
        .par_iter()
        .map(|p| synthesize(cfg, array, p, sample_rate, samples))
        .collect()
}

/// Unit direction from `from` to `to`.
pub fn direction(from: &Point3, to: &Point3) -> Point3 {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let n = norm(&d);
    [d[0] / n, d[1] / n, d[2] / n]
}
