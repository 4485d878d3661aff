use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use srpmap::evaluator::Method;
use srpmap::runner::commands::{self, summary_path, MapInput};
use srpmap::runner::{with_workers, Budget, RunConfig};
use srpmap::sampler::SamplingPath;

#[derive(Parser)]
#[command(
    name = "srpmap",
    version,
    about = "Steered-response-power maps: precompute operators, map audio, sweep budgets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the configured operator and write it to a cache file.
    Precompute(Common),
    /// Compute one map per frame and write it as CSV.
    Map(MapArgs),
    /// Evaluate every budget in the sweep section and write the metrics CSV.
    Sweep(Common),
    /// Render the configured placements to WAV files.
    Simulate(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum PathArg {
    Matrix,
    Ifft,
    Auto,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Operator cache to write (precompute) or read (map).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Output file or directory; defaults to the `[output]` section.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    method: Option<Method>,
    /// Rank for lr/slri: a count, `full` or a multiple such as `0.5JP`.
    #[arg(long)]
    rank: Option<String>,
    /// Nonzero count for sspi: a count, `all` or a multiple such as `2JP`.
    #[arg(long)]
    sparsity: Option<String>,
    #[arg(long, value_enum)]
    path: Option<PathArg>,
}

#[derive(Args)]
struct MapArgs {
    #[command(flatten)]
    common: Common,
    /// WAV or raw little-endian f32 input; the first configured placement
    /// is rendered when omitted.
    #[arg(long)]
    audio: Option<PathBuf>,
    /// Ground truth as `x,y,z` (position near field, direction far field).
    #[arg(long, value_parser = parse_point)]
    truth: Option<[f64; 3]>,
}

fn parse_point(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into()
        .map_err(|_| "expected three comma-separated numbers".to_string())
}

fn budget(s: &str) -> Budget {
    match s.parse::<u64>() {
        Ok(n) => Budget::Count(n),
        Err(_) => Budget::Expr(s.to_string()),
    }
}

fn load(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(seed) = c.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(w) = c.workers {
        cfg.sweep.workers = Some(w);
    }
    if let Some(m) = c.method {
        cfg.method.kind = m;
    }
    if let Some(r) = &c.rank {
        cfg.method.rank = Some(budget(r));
    }
    if let Some(q) = &c.sparsity {
        cfg.method.sparsity = Some(budget(q));
    }
    if let Some(p) = c.path {
        cfg.method.path = match p {
            PathArg::Matrix => SamplingPath::Matrix,
            PathArg::Ifft => SamplingPath::Ifft,
            PathArg::Auto => SamplingPath::Auto,
        };
    }
    Ok(cfg)
}

fn pick(flag: &Option<PathBuf>, section: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match flag.as_ref().or(section.as_ref()) {
        Some(p) => Ok(p.clone()),
        None => bail!("no {what} path: pass --out or set it in [output]"),
    }
}

fn show(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn run_workers<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> srpmap::Result<T> + Send) -> Result<T> {
    Ok(with_workers(cfg.sweep.workers, f)??)
}

fn precompute(c: &Common) -> Result<()> {
    let cfg = load(c)?;
    let out = pick(&c.cache.clone().or(c.out.clone()), &cfg.output.cache, "cache")?;
    let report = run_workers(&cfg, || commands::precompute(&cfg, &out))?;
    println!("method        {}", report.cost.method);
    println!("budget        {}", report.budget);
    if let Some(p) = report.cost.path {
        println!("sampling      {p:?}");
    }
    println!("mults/frame   {:.0}", report.cost.multiplications);
    println!("C_rel         {:.6}", report.cost.relative);
    println!("eps_H (dB)    {:.3}", report.eps_h_db);
    println!("wrote {} ({} bytes)", out.display(), report.bytes);
    Ok(())
}

fn map(a: &MapArgs) -> Result<()> {
    let cfg = load(&a.common)?;
    let out = pick(&a.common.out, &cfg.output.map, "map")?;
    let input = match &a.audio {
        Some(path) => MapInput::File {
            path: path.clone(),
            truth: a.truth,
        },
        None if a.truth.is_some() => bail!("--truth needs --audio; simulated scenes carry their own truth"),
        None => MapInput::Simulated,
    };
    let cache = a.common.cache.as_deref();
    let rows = run_workers(&cfg, || commands::map(&cfg, input, cache, &out))?;
    println!("frame  i_max  estimate                          eps_s     rho_s");
    for r in &rows {
        println!(
            "{:>5}  {:>5}  [{:>8.4}, {:>8.4}, {:>8.4}]  {:>8}  {:>8}",
            r.frame,
            r.index,
            r.estimate[0],
            r.estimate[1],
            r.estimate[2],
            show(r.error),
            show(r.accuracy)
        );
    }
    println!("wrote {} and {}", out.display(), summary_path(&out).display());
    Ok(())
}

fn sweep(c: &Common) -> Result<()> {
    let cfg = load(c)?;
    let out = pick(&c.out, &cfg.output.metrics, "metrics")?;
    let rows = commands::sweep(&cfg, &out)?;
    println!("method  budget      C_rel   eps_H dB  eps_z p50  mean rho");
    for r in &rows {
        println!(
            "{:<6}  {:>6}  {:>9.5}  {:>9.2}  {:>9.2}  {:>8.4}",
            r.method.as_str(),
            r.budget,
            r.c_rel,
            r.eps_h_db,
            r.eps_z_p50,
            r.mean_rho
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn simulate(c: &Common) -> Result<()> {
    let cfg = load(c)?;
    let dir = pick(&c.out, &cfg.output.scenes, "scene directory")?;
    let placements = run_workers(&cfg, || commands::simulate(&cfg, &dir))?;
    println!("rendered {} scenes into {}", placements.len(), dir.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Precompute(c) => precompute(&c),
        Command::Map(a) => map(&a),
        Command::Sweep(c) => sweep(&c),
        Command::Simulate(c) => simulate(&c),
    }
}
