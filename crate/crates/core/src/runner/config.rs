//! Run configuration, read from TOML with strict key checking.
//!
//! ```toml
//! [scenario]
//! mode = "near-field"
//! room = [4.9, 5.9, 3.5]
//! placements = 10
//! frames = 4
//! seed = 1
//! [scenario.array]
//! kind = "explicit"
//! positions = [[0.45, 0.45, 1.0], [4.45, 0.45, 1.0]]
//! [scenario.grid]
//! kind = "volume"
//! origin = [1.0, 1.2, 1.45]
//! extent = [0.6, 0.6, 0.1]
//! resolution = 0.1
//!
//! [pipeline]
//! sample_rate = 4000.0
//! frame_length = 512
//!
//! [method]
//! kind = "sspi"
//! sparsity = "2JP"
//!
//! [sweep]
//! slri_ranks = [2, 4, "full"]
//! sspi_sparsities = ["JP", "all"]
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SrpError};
use crate::evaluator::Method;
use crate::frontend::{Weighting, Window, DEFAULT_PHAT_FLOOR};
use crate::sampler::{SamplingPath, DEFAULT_AUX_SAMPLES};
use crate::simkit::ScenarioConfig;
use crate::srp_exact::DEFAULT_MATRIX_CAP;

fn default_aux() -> usize {
    DEFAULT_AUX_SAMPLES
}

fn default_floor() -> f64 {
    DEFAULT_PHAT_FLOOR
}

fn default_cap() -> u64 {
    DEFAULT_MATRIX_CAP as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub sample_rate: f64,
    /// `2K`.
    pub frame_length: usize,
    /// Defaults to `K`.
    #[serde(default)]
    pub hop: Option<usize>,
    #[serde(default)]
    pub window: Window,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default = "default_aux")]
    pub n_aux: usize,
    /// PHAT floor relative to the frame energy.
    #[serde(default = "default_floor")]
    pub phat_floor: f64,
    /// Cap on any single dense operator, in bytes.
    #[serde(default = "default_cap")]
    pub max_matrix_bytes: u64,
}

/// A rank or sparsity budget: a plain count, `"full"` / `"all"`, or a
/// multiple of `J P` such as `"0.5JP"` or `"JP"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budget {
    Count(u64),
    Expr(String),
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Count(n) => write!(f, "{n}"),
            Budget::Expr(s) => f.write_str(s),
        }
    }
}

impl Budget {
    /// Resolves against the largest admissible value `max` and the unit `J P`.
    pub fn resolve(&self, max: usize, jp: usize) -> Result<usize> {
        match self {
            Budget::Count(n) => Ok(*n as usize),
            Budget::Expr(s) => {
                let t = s.trim();
                if t.eq_ignore_ascii_case("full") || t.eq_ignore_ascii_case("all") {
                    return Ok(max);
                }
                if let Some(factor) = t.strip_suffix("JP") {
                    let factor = if factor.trim().is_empty() {
                        1.0
                    } else {
                        factor
                            .trim()
                            .parse::<f64>()
                            .map_err(|_| SrpError::Config(format!("cannot parse budget `{s}`")))?
                    };
                    if !(factor >= 0.0 && factor.is_finite()) {
                        return Err(SrpError::Config(format!("negative budget `{s}`")));
                    }
                    return Ok(((factor * jp as f64).round() as usize).min(max));
                }
                t.parse::<usize>()
                    .map_err(|_| SrpError::Config(format!("cannot parse budget `{s}`")))
            }
        }
    }
}

fn default_method() -> Method {
    Method::Si
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    #[serde(default = "default_method")]
    pub kind: Method,
    /// `R_H` (lr) or `R_Lambda` (slri).
    #[serde(default)]
    pub rank: Option<Budget>,
    /// `Q_Lambda` (sspi).
    #[serde(default)]
    pub sparsity: Option<Budget>,
    #[serde(default)]
    pub path: SamplingPath,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            kind: default_method(),
            rank: None,
            sparsity: None,
            path: SamplingPath::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub lr_ranks: Vec<Budget>,
    #[serde(default)]
    pub slri_ranks: Vec<Budget>,
    #[serde(default)]
    pub sspi_sparsities: Vec<Budget>,
    /// Adds one SSPI point per SLRI rank at the same multiplication count.
    #[serde(default)]
    pub match_slri: bool,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub map: Option<PathBuf>,
    #[serde(default)]
    pub metrics: Option<PathBuf>,
    #[serde(default)]
    pub scenes: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub method: MethodConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SrpError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| SrpError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SrpError::Config(e.to_string()))
    }
}
