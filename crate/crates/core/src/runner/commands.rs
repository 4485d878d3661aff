//! The four CLI commands as library calls.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::audio::{read_audio, write_wav};
use crate::error::{Result, SrpError};
use crate::evaluator::{evaluate_location, CostReport};
use crate::frontend::MultichannelSignal;
use crate::runner::cache::OperatorCache;
use crate::runner::config::RunConfig;
use crate::runner::pipeline::{
    configured_budget, operator_from_cache, operator_hash, Context, MapEngine, Operator, OperatorFactory,
};
use crate::runner::sweep::{run_sweep, save_sweep_csv, SweepRow};
use crate::scene::Point3;
use crate::simkit::{place_sources, render_scenario, synthesize, Placement};

/// Builds the operator selected in the `[method]` section.
pub fn build_operator(ctx: &Context, cfg: &RunConfig) -> Result<Operator> {
    let mut factory = OperatorFactory::new(ctx);
    let budget = factory.resolve(cfg.method.kind, configured_budget(cfg))?;
    factory.build(cfg.method.kind, budget)
}

#[derive(Debug, Clone, Serialize)]
pub struct PrecomputeReport {
    pub cost: CostReport,
    pub budget: usize,
    pub eps_h_db: f64,
    pub bytes: usize,
}

/// Builds the selected operator and writes it to `out`.
pub fn precompute(cfg: &RunConfig, out: &Path) -> Result<PrecomputeReport> {
    let ctx = Context::new(cfg)?;
    let op = build_operator(&ctx, cfg)?;
    let hash = operator_hash(cfg, op.method(), op.budget())?;
    let cache = OperatorCache::from_operator(&op.to_stored(), ctx.spec.counts(), hash);
    let bytes = cache.encode();
    fs::write(out, &bytes)?;
    Ok(PrecomputeReport {
        cost: op.cost(&ctx),
        budget: op.budget(),
        eps_h_db: op.matrix_error_db(&ctx)?,
        bytes: bytes.len(),
    })
}

/// Where the map command gets its audio.
#[derive(Debug, Clone)]
pub enum MapInput {
    /// A WAV or raw little-endian f32 file, with optional truth.
    File { path: PathBuf, truth: Option<Point3> },
    /// The first placement of the configured scenario.
    Simulated,
    Signal {
        signal: MultichannelSignal,
        truth: Option<Point3>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameSummary {
    pub frame: usize,
    pub index: usize,
    pub estimate: Point3,
    /// Metres near field, degrees far field.
    pub error: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Computes one map per frame. Writes `out` (one row per frame and candidate)
/// and a `<stem>_summary.csv` sibling.
pub fn map(cfg: &RunConfig, input: MapInput, cache: Option<&Path>, out: &Path) -> Result<Vec<FrameSummary>> {
    let ctx = Context::new(cfg)?;
    let op = match cache {
        Some(path) => {
            let cache = OperatorCache::load(path)?;
            if cache.method != cfg.method.kind {
                return Err(SrpError::CacheMismatch(format!(
                    "cache holds {} but the configuration selects {}",
                    cache.method, cfg.method.kind
                )));
            }
            operator_from_cache(&ctx, cfg, &cache)?
        }
        None => build_operator(&ctx, cfg)?,
    };
    let (signal, truth) = match input {
        MapInput::File { path, truth } => (read_audio(&path, ctx.array.len(), ctx.frame.sample_rate())?, truth),
        MapInput::Signal { signal, truth } => (signal, truth),
        MapInput::Simulated => {
            let placement = place_sources(&cfg.scenario, &ctx.array, &ctx.grid)?
                .into_iter()
                .next()
                .ok_or_else(|| SrpError::Config("scenario has no placements".into()))?;
            let samples = ctx.samples_for(cfg.scenario.frames);
            let r = synthesize(&cfg.scenario, &ctx.array, &placement, ctx.frame.sample_rate(), samples)?;
            (r.mix, Some(placement.truth))
        }
    };
    let engine = MapEngine::new(&ctx, &op);
    let frames = engine.frame_count(&signal);
    let maps = (0..frames)
        .map(|f| engine.map_frame(&signal, f))
        .collect::<Result<Vec<_>>>()?;

    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(fs::File::create(out)?));
    w.write_record(["frame", "candidate", "x", "y", "z", "value"])?;
    for (f, m) in maps.iter().enumerate() {
        for (i, v) in m.values().iter().enumerate() {
            let q = ctx.grid.point(i);
            w.write_record([
                f.to_string(),
                i.to_string(),
                q[0].to_string(),
                q[1].to_string(),
                q[2].to_string(),
                format!("{v:e}"),
            ])?;
        }
    }
    w.flush()?;

    let mode = ctx.grid.mode();
    let summaries = maps
        .iter()
        .enumerate()
        .map(|(f, m)| {
            let loc = evaluate_location(m, &ctx.grid, truth)?;
            Ok(FrameSummary {
                frame: f,
                index: loc.index,
                estimate: loc.estimate,
                error: loc.reported_error(mode),
                accuracy: loc.accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(fs::File::create(summary_path(out))?));
    w.write_record(["frame", "i_max", "x", "y", "z", "eps_s", "rho_s"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in &summaries {
        w.write_record([
            s.frame.to_string(),
            s.index.to_string(),
            s.estimate[0].to_string(),
            s.estimate[1].to_string(),
            s.estimate[2].to_string(),
            opt(s.error),
            opt(s.accuracy),
        ])?;
    }
    w.flush()?;
    Ok(summaries)
}

/// `maps.csv` becomes `maps_summary.csv`.
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
    out.with_file_name(format!("{stem}_summary.csv"))
}

/// Runs the configured sweep and writes the metrics CSV.
pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<SweepRow>> {
    let rows = run_sweep(cfg)?;
    save_sweep_csv(&rows, out)?;
    Ok(rows)
}

/// Renders every placement to `scene_<index>.wav` in `dir` and lists them in
/// `placements.csv`.
pub fn simulate(cfg: &RunConfig, dir: &Path) -> Result<Vec<Placement>> {
    let ctx = Context::new(cfg)?;
    fs::create_dir_all(dir)?;
    let samples = ctx.samples_for(cfg.scenario.frames);
    let scenes = render_scenario(&cfg.scenario, &ctx.array, &ctx.grid, ctx.frame.sample_rate(), samples)?;
    let mut index = std::io::BufWriter::new(fs::File::create(dir.join("placements.csv"))?);
    writeln!(index, "index,file,x,y,z,truth_x,truth_y,truth_z,grid_index")?;
    for s in &scenes {
        let p = &s.placement;
        let name = format!("scene_{}.wav", p.index);
        write_wav(dir.join(&name), &s.mix)?;
        writeln!(
            index,
            "{},{},{},{},{},{},{},{},{}",
            p.index,
            name,
            p.position[0],
            p.position[1],
            p.position[2],
            p.truth[0],
            p.truth[1],
            p.truth[2],
            p.grid_index.map(|g| g.to_string()).unwrap_or_default()
        )?;
    }
    index.flush()?;
    Ok(scenes.into_iter().map(|s| s.placement).collect())
}
