//! Error and accuracy against relative complexity over budget sweeps.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Result, SrpError};
use crate::evaluator::{evaluate_location, map_error, Method};
use crate::frontend::{FdGcc, Stft};
use crate::runner::config::RunConfig;
use crate::runner::pipeline::{Context, Operator, OperatorFactory};
use crate::sampler::{Sampler, TdGccSamples};
use crate::scene::Point3;
use crate::simkit::render_scenario;
use crate::srp_exact::{srp_map_exact, SrpMap};

/// One analysed frame: GCC, samples, reference map and truth.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub placement: usize,
    pub frame: usize,
    pub psi: FdGcc,
    pub xi: TdGccSamples,
    pub reference: SrpMap,
    pub truth: Point3,
}

/// Renders every placement and computes per-frame inputs.
pub fn prepare_frames(ctx: &Context, cfg: &RunConfig) -> Result<Vec<FrameData>> {
    let sc = &cfg.scenario;
    let samples = ctx.samples_for(sc.frames);
    let scenes = render_scenario(sc, &ctx.array, &ctx.grid, ctx.frame.sample_rate(), samples)?;
    let h = ctx.srp_matrix()?;
    let stft = Stft::new(ctx.frame);
    let sampler = Sampler::new(ctx.spec.clone());
    let jobs: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|s| (0..sc.frames).map(move |f| (s, f)))
        .collect();
    jobs.par_iter()
        .map(|&(s, f)| {
            let scene = &scenes[s];
            let psi = ctx.gcc(&stft, &scene.mix, f)?;
            let xi = sampler.sample(&psi, ctx.path)?;
            let reference = srp_map_exact(&h, &psi)?;
            Ok(FrameData {
                placement: scene.placement.index,
                frame: f,
                psi,
                xi,
                reference,
                truth: scene.placement.truth,
            })
        })
        .collect()
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    /// Rank or nonzero count; 0 when the method has no budget.
    pub budget: usize,
    /// Set on SSPI rows matched to an SLRI rank.
    pub matched_rank: Option<usize>,
    pub c_rel: f64,
    pub eps_h_db: f64,
    pub eps_z_p10: f64,
    pub eps_z_p50: f64,
    pub eps_z_p90: f64,
    pub mean_rho: f64,
    /// Frames whose argmax equals the reference argmax.
    pub argmax_agreement: f64,
}

/// Linear-interpolated percentile of sorted values. A bracket touching
/// `-inf` takes its lower end.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let (a, b) = (sorted[lo], sorted[hi]);
    if lo == hi || a == f64::NEG_INFINITY {
        return a;
    }
    a + (b - a) * (pos - lo as f64)
}

/// Evaluates one operator over all frames.
pub fn evaluate_operator(ctx: &Context, op: &Operator, frames: &[FrameData]) -> Result<SweepRow> {
    let per_frame: Vec<(Option<f64>, f64, bool)> = frames
        .par_iter()
        .map(|fd| {
            let map = op.map(&fd.psi, Some(&fd.xi))?;
            let eps = match map_error(&map, &fd.reference) {
                Ok(e) => Some(e),
                Err(SrpError::UndefinedReference) => None,
                Err(e) => return Err(e),
            };
            let loc = evaluate_location(&map, &ctx.grid, Some(fd.truth))?;
            let agree = map.argmax() == fd.reference.argmax();
            Ok((eps, loc.accuracy.unwrap_or(0.0), agree))
        })
        .collect::<Result<_>>()?;
    let mut eps: Vec<f64> = per_frame.iter().filter_map(|t| t.0).collect();
    eps.sort_by(f64::total_cmp);
    let n = per_frame.len().max(1) as f64;
    Ok(SweepRow {
        method: op.method(),
        budget: op.budget(),
        matched_rank: None,
        c_rel: op.cost(ctx).relative,
        eps_h_db: op.matrix_error_db(ctx)?,
        eps_z_p10: percentile(&eps, 0.1),
        eps_z_p50: percentile(&eps, 0.5),
        eps_z_p90: percentile(&eps, 0.9),
        mean_rho: per_frame.iter().map(|t| t.1).sum::<f64>() / n,
        argmax_agreement: per_frame.iter().filter(|t| t.2).count() as f64 / n,
    })
}

/// SSPI sparsity with the multiplication count of SLRI at `rank`.
pub fn matched_sparsity(ctx: &Context, rank: usize) -> usize {
    let total = ctx.spec.total_len();
    (ctx.candidates() * rank + rank * total).min(ctx.interp_entries())
}

/// Runs the configured sweep: conv, SI, then every LR, SLRI and SSPI budget.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    with_workers(cfg.sweep.workers, || {
        let ctx = Context::new(cfg)?;
        let frames = prepare_frames(&ctx, cfg)?;
        let mut factory = OperatorFactory::new(&ctx);
        let mut plan: Vec<(Method, usize, Option<usize>)> = vec![(Method::Conv, 0, None), (Method::Si, 0, None)];
        let sw = &cfg.sweep;
        for b in &sw.lr_ranks {
            plan.push((Method::Lr, factory.resolve(Method::Lr, Some(b))?, None));
        }
        let slri: Vec<usize> = sw
            .slri_ranks
            .iter()
            .map(|b| factory.resolve(Method::Slri, Some(b)))
            .collect::<Result<_>>()?;
        plan.extend(slri.iter().map(|&r| (Method::Slri, r, None)));
        for b in &sw.sspi_sparsities {
            plan.push((Method::Sspi, factory.resolve(Method::Sspi, Some(b))?, None));
        }
        if sw.match_slri {
            plan.extend(slri.iter().map(|&r| (Method::Sspi, matched_sparsity(&ctx, r), Some(r))));
        }
        let mut rows = Vec::with_capacity(plan.len());
        for (method, budget, matched) in plan {
            let op = factory.build(method, budget)?;
            let mut row = evaluate_operator(&ctx, &op, &frames)?;
            row.matched_rank = matched;
            rows.push(row);
        }
        Ok(rows)
    })?
}

/// Runs `f` on a pool of `workers` threads; `None` or 0 uses every core.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| SrpError::Config(e.to_string()))?;
    Ok(pool.install(f))
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.6}")
    }
}

pub const SWEEP_HEADER: [&str; 11] = [
    "method",
    "budget",
    "matched_rank",
    "c_rel",
    "eps_h_db",
    "eps_z_p10_db",
    "eps_z_p50_db",
    "eps_z_p90_db",
    "mean_rho",
    "argmax_agreement",
    "label",
];

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        let label = match r.matched_rank {
            Some(rank) => format!("sspi@slri{rank}"),
            None => r.method.to_string(),
        };
        w.write_record([
            r.method.to_string(),
            r.budget.to_string(),
            r.matched_rank.map(|v| v.to_string()).unwrap_or_default(),
            format!("{:.9}", r.c_rel),
            fmt_f64(r.eps_h_db),
            fmt_f64(r.eps_z_p10),
            fmt_f64(r.eps_z_p50),
            fmt_f64(r.eps_z_p90),
            fmt_f64(r.mean_rho),
            fmt_f64(r.argmax_agreement),
            label,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_sweep_csv(rows, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert!((percentile(&v, 0.1) - 1.4).abs() < 1e-12);
        assert!((percentile(&v, 0.9) - 4.6).abs() < 1e-12);
        assert!(percentile(&[], 0.5).is_nan());
    }

    #[test]
    fn percentile_with_exact_matches() {
        let v = [f64::NEG_INFINITY, f64::NEG_INFINITY, -20.0];
        assert_eq!(percentile(&v, 0.5), f64::NEG_INFINITY);
        assert_eq!(percentile(&v, 0.9), f64::NEG_INFINITY);
        assert_eq!(percentile(&v, 1.0), -20.0);
    }
}
