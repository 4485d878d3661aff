//! Scene setup, operator construction and per-frame map evaluation.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Result, SrpError};
use crate::evaluator::{cost, interp_matrix_error, relative_error_db, CostParams, CostReport, Method};
use crate::frontend::{fd_gcc, FdGcc, FrameSpec, MultichannelSignal, Stft, Weighting};
use crate::interpolator::{
    build_interp_matrix, si_map, slri_map, sspi_map, truncate_sparse, InterpDecomposition, InterpMatrix,
};
use crate::lr_baseline::{lr_map, SrpDecomposition};
use crate::runner::cache::{OperatorCache, StoredOperator, FORMAT_VERSION};
use crate::runner::config::{Budget, RunConfig};
use crate::sampler::{sample_spec, SampleSpec, Sampler, SamplingPath, TdGccSamples};
use crate::scene::{build_grid, enumerate_pairs, tdoa_table, CandidateGrid, MicrophoneArray, PairTable, TdoaTable};
use crate::srp_exact::{build_srp_matrix, srp_map_exact, SrpMap, SrpMatrix};

/// Everything derived from the geometry and pipeline sections.
#[derive(Debug, Clone)]
pub struct Context {
    pub array: MicrophoneArray,
    pub pairs: PairTable,
    pub grid: CandidateGrid,
    pub tdoa: TdoaTable,
    pub frame: FrameSpec,
    pub spec: SampleSpec,
    pub weighting: Weighting,
    pub phat_floor: f64,
    pub cap_bytes: u128,
    pub path: SamplingPath,
}

impl Context {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let sc = &cfg.scenario;
        let array = sc.array.build(sc.speed_of_sound)?;
        let grid = build_grid(&sc.grid, Some(sc.room))?;
        if grid.mode() != sc.mode {
            return Err(SrpError::Config(format!(
                "scenario mode {:?} does not match the grid kind",
                sc.mode
            )));
        }
        let pairs = enumerate_pairs(&array);
        let tdoa = tdoa_table(&array, &pairs, &grid)?;
        let pl = &cfg.pipeline;
        let mut frame = FrameSpec::new(pl.frame_length, pl.sample_rate)?.with_window(pl.window);
        if let Some(hop) = pl.hop {
            frame = frame.with_hop(hop)?;
        }
        let spec = sample_spec(&tdoa, &frame, pl.n_aux)?;
        Ok(Self {
            array,
            pairs,
            grid,
            tdoa,
            frame,
            spec,
            weighting: pl.weighting,
            phat_floor: pl.phat_floor,
            cap_bytes: pl.max_matrix_bytes as u128,
            path: cfg.method.path,
        })
    }

    pub fn candidates(&self) -> usize {
        self.grid.len()
    }

    /// `J P`, the unit of sparsity budgets.
    pub fn jp(&self) -> usize {
        self.grid.len() * self.pairs.len()
    }

    /// `J P N'`, the entry count of `Lambda`.
    pub fn interp_entries(&self) -> usize {
        self.grid.len() * self.spec.total_len()
    }

    /// Samples needed for `frames` frames.
    pub fn samples_for(&self, frames: usize) -> usize {
        frames.saturating_sub(1) * self.frame.hop() + self.frame.frame_length()
    }

    pub fn cost_params(&self) -> CostParams {
        CostParams::new(self.grid.len(), self.pairs.len(), self.frame.half_length())
            .with_samples(self.spec.mean_samples(), self.path)
    }

    pub fn srp_matrix(&self) -> Result<SrpMatrix> {
        build_srp_matrix(&self.tdoa, &self.frame, self.cap_bytes)
    }

    pub fn interp_matrix(&self) -> Result<InterpMatrix> {
        build_interp_matrix(&self.tdoa, &self.spec, &self.frame, self.cap_bytes)
    }

    /// FD GCC of one frame with the configured weighting and relative floor.
    pub fn gcc(&self, stft: &Stft, signal: &MultichannelSignal, frame: usize) -> Result<FdGcc> {
        if signal.channel_count() != self.array.len() {
            return Err(SrpError::Dimension {
                what: "audio channels",
                expected: self.array.len(),
                found: signal.channel_count(),
            });
        }
        let spectra = stft.frame(signal, frame)?;
        let floor = spectra.energy() * self.phat_floor;
        fd_gcc(&spectra, &self.pairs, self.weighting, floor)
    }
}

/// A ready-to-run backend.
#[derive(Debug, Clone)]
pub enum Operator {
    Conv(SrpMatrix),
    Stored(StoredOperator),
}

impl Operator {
    pub fn method(&self) -> Method {
        match self {
            Operator::Conv(_) => Method::Conv,
            Operator::Stored(s) => s.method(),
        }
    }

    /// Rank or nonzero count; 0 for conv and SI.
    pub fn budget(&self) -> usize {
        match self {
            Operator::Stored(StoredOperator::Lr(lr)) => lr.rank(),
            Operator::Stored(StoredOperator::Slri(lr)) => lr.rank(),
            Operator::Stored(StoredOperator::Sspi(sp)) => sp.nnz(),
            _ => 0,
        }
    }

    pub fn cost(&self, ctx: &Context) -> CostReport {
        let params = ctx.cost_params();
        let params = match self.method() {
            Method::Lr | Method::Slri => params.with_rank(self.budget()),
            Method::Sspi => params.with_sparsity(self.budget()),
            _ => params,
        };
        cost(self.method(), &params)
    }

    /// Map from the frame's GCC; `xi` must be given for sampled methods.
    pub fn map(&self, psi: &FdGcc, xi: Option<&TdGccSamples>) -> Result<SrpMap> {
        let need_xi = || xi.ok_or_else(|| SrpError::Config("sampled method needs TD-GCC samples".into()));
        match self {
            Operator::Conv(h) => srp_map_exact(h, psi),
            Operator::Stored(StoredOperator::Conv) => Err(SrpError::Config("conventional operator not built".into())),
            Operator::Stored(StoredOperator::Lr(lr)) => lr_map(lr, psi),
            Operator::Stored(StoredOperator::Si(l)) => si_map(l, need_xi()?),
            Operator::Stored(StoredOperator::Slri(l)) => slri_map(l, need_xi()?),
            Operator::Stored(StoredOperator::Sspi(l)) => sspi_map(l, need_xi()?),
        }
    }

    /// `eps_H` in dB. Conventional SRP is exact.
    pub fn matrix_error_db(&self, ctx: &Context) -> Result<f64> {
        let op: &dyn crate::interpolator::InterpolationOperator = match self {
            Operator::Conv(_) | Operator::Stored(StoredOperator::Conv) => return Ok(f64::NEG_INFINITY),
            Operator::Stored(StoredOperator::Lr(lr)) => {
                // |H_ik| = 1, so ||H||_F^2 = J P (K-1)
                let norm = (ctx.jp() * ctx.frame.bins()) as f64;
                return relative_error_db(lr.tail_sq(), norm);
            }
            Operator::Stored(StoredOperator::Si(l)) => l,
            Operator::Stored(StoredOperator::Slri(l)) => l,
            Operator::Stored(StoredOperator::Sspi(l)) => l,
        };
        interp_matrix_error(op, &ctx.spec, &ctx.tdoa, &ctx.frame)
    }

    /// Converts to the cache form; conv drops `H`.
    pub fn to_stored(&self) -> StoredOperator {
        match self {
            Operator::Conv(_) => StoredOperator::Conv,
            Operator::Stored(s) => s.clone(),
        }
    }
}

/// Builds operators for one scene, reusing the expensive decompositions.
pub struct OperatorFactory<'a> {
    ctx: &'a Context,
    h: Option<SrpMatrix>,
    h_svd: Option<SrpDecomposition>,
    lambda: Option<InterpMatrix>,
    lambda_svd: Option<InterpDecomposition>,
}

impl<'a> OperatorFactory<'a> {
    pub fn new(ctx: &'a Context) -> Self {
        Self {
            ctx,
            h: None,
            h_svd: None,
            lambda: None,
            lambda_svd: None,
        }
    }

    fn h(&mut self) -> Result<&SrpMatrix> {
        if self.h.is_none() {
            self.h = Some(self.ctx.srp_matrix()?);
        }
        Ok(self.h.as_ref().unwrap())
    }

    fn lambda(&mut self) -> Result<&InterpMatrix> {
        if self.lambda.is_none() {
            self.lambda = Some(self.ctx.interp_matrix()?);
        }
        Ok(self.lambda.as_ref().unwrap())
    }

    /// Largest admissible budget for `method`.
    pub fn max_budget(&self, method: Method) -> usize {
        let j = self.ctx.candidates();
        match method {
            Method::Lr => j.min(self.ctx.pairs.len() * self.ctx.frame.bins()),
            Method::Slri => j.min(self.ctx.spec.total_len()),
            Method::Sspi => self.ctx.interp_entries(),
            Method::Conv | Method::Si => 0,
        }
    }

    pub fn resolve(&self, method: Method, budget: Option<&Budget>) -> Result<usize> {
        match method {
            Method::Conv | Method::Si => Ok(0),
            _ => budget
                .ok_or_else(|| SrpError::Config(format!("method {method} needs a rank or sparsity")))?
                .resolve(self.max_budget(method), self.ctx.jp()),
        }
    }

    pub fn build(&mut self, method: Method, budget: usize) -> Result<Operator> {
        Ok(match method {
            Method::Conv => Operator::Conv(self.h()?.clone()),
            Method::Si => Operator::Stored(StoredOperator::Si(self.lambda()?.clone())),
            Method::Lr => {
                if self.h_svd.is_none() {
                    let svd = SrpDecomposition::new(self.h()?);
                    self.h_svd = Some(svd);
                }
                Operator::Stored(StoredOperator::Lr(self.h_svd.as_ref().unwrap().truncate(budget)?))
            }
            Method::Slri => {
                if self.lambda_svd.is_none() {
                    let svd = InterpDecomposition::new(self.lambda()?);
                    self.lambda_svd = Some(svd);
                }
                Operator::Stored(StoredOperator::Slri(
                    self.lambda_svd.as_ref().unwrap().truncate(budget)?,
                ))
            }
            Method::Sspi => Operator::Stored(StoredOperator::Sspi(truncate_sparse(self.lambda()?, budget)?)),
        })
    }
}

/// The subset of a configuration that determines an operator.
#[derive(Serialize)]
struct OperatorIdentity<'a> {
    format: u16,
    scenario_mode: crate::scene::Propagation,
    room: [f64; 3],
    speed_of_sound: f64,
    array: &'a crate::simkit::ArraySpec,
    grid: &'a crate::scene::GridSpec,
    sample_rate: f64,
    frame_length: usize,
    n_aux: usize,
    method: Method,
    budget: usize,
}

/// SHA-256 over the operator-defining configuration.
pub fn operator_hash(cfg: &RunConfig, method: Method, budget: usize) -> Result<[u8; 32]> {
    let id = OperatorIdentity {
        format: FORMAT_VERSION,
        scenario_mode: cfg.scenario.mode,
        room: cfg.scenario.room,
        speed_of_sound: cfg.scenario.speed_of_sound,
        array: &cfg.scenario.array,
        grid: &cfg.scenario.grid,
        sample_rate: cfg.pipeline.sample_rate,
        frame_length: cfg.pipeline.frame_length,
        n_aux: cfg.pipeline.n_aux,
        method,
        budget,
    };
    let text = toml::to_string(&id).map_err(|e| SrpError::Config(e.to_string()))?;
    Ok(Sha256::digest(text.as_bytes()).into())
}

/// The budget entry that applies to the configured method.
pub fn configured_budget(cfg: &RunConfig) -> Option<&Budget> {
    match cfg.method.kind {
        Method::Lr | Method::Slri => cfg.method.rank.as_ref(),
        Method::Sspi => cfg.method.sparsity.as_ref(),
        _ => None,
    }
}

/// Restores an operator from a cache after checking it against `cfg`.
pub fn operator_from_cache(ctx: &Context, cfg: &RunConfig, cache: &OperatorCache) -> Result<Operator> {
    let stored = cache.to_operator()?;
    let op = match stored {
        StoredOperator::Conv => Operator::Conv(ctx.srp_matrix()?),
        other => Operator::Stored(other),
    };
    let budget = OperatorFactory::new(ctx).resolve(cfg.method.kind, configured_budget(cfg))?;
    let expected = operator_hash(cfg, cfg.method.kind, budget)?;
    if expected != cache.hash {
        return Err(SrpError::CacheMismatch(
            "the cache was built from a different geometry, pipeline or budget".into(),
        ));
    }
    if cache.method.is_sampled() && cache.sample_counts()? != ctx.spec.counts() {
        return Err(SrpError::CacheMismatch("per-pair sample counts differ".into()));
    }
    let shape_ok = match &op {
        Operator::Conv(_) => true,
        Operator::Stored(StoredOperator::Lr(lr)) => {
            lr.candidates() == ctx.candidates()
                && lr.pairs() == ctx.pairs.len()
                && lr.half_length() == ctx.frame.half_length()
        }
        Operator::Stored(s) => {
            let shape = match s {
                StoredOperator::Si(l) => crate::interpolator::InterpolationOperator::shape(l),
                StoredOperator::Slri(l) => crate::interpolator::InterpolationOperator::shape(l),
                StoredOperator::Sspi(l) => crate::interpolator::InterpolationOperator::shape(l),
                _ => unreachable!(),
            };
            shape == (ctx.candidates(), ctx.spec.total_len())
        }
    };
    if !shape_ok {
        return Err(SrpError::CacheMismatch(
            "operator dimensions differ from the configuration".into(),
        ));
    }
    Ok(op)
}

/// Runs frontend, sampling and an operator over frames of a signal.
pub struct MapEngine<'a> {
    ctx: &'a Context,
    op: &'a Operator,
    stft: Stft,
    sampler: Sampler,
}

impl<'a> MapEngine<'a> {
    pub fn new(ctx: &'a Context, op: &'a Operator) -> Self {
        Self {
            ctx,
            op,
            stft: Stft::new(ctx.frame),
            sampler: Sampler::new(ctx.spec.clone()),
        }
    }

    pub fn frame_count(&self, signal: &MultichannelSignal) -> usize {
        self.ctx.frame.frame_count(signal.len())
    }

    pub fn map_frame(&self, signal: &MultichannelSignal, frame: usize) -> Result<SrpMap> {
        let psi = self.ctx.gcc(&self.stft, signal, frame)?;
        self.map_gcc(&psi)
    }

    pub fn map_gcc(&self, psi: &FdGcc) -> Result<SrpMap> {
        if self.op.method().is_sampled() {
            let xi = self.sampler.sample(psi, self.ctx.path)?;
            self.op.map(psi, Some(&xi))
        } else {
            self.op.map(psi, None)
        }
    }
}
