//! Subcommand implementations.

use std::path::PathBuf;
use std::time::Instant;

use clap::ValueEnum;
use dupire_aad_core::bump::DEFAULT_VOL_EPS;
use dupire_aad_core::{bump_all, greeks as run_greeks, price as run_price, Payoff, SimConfig, SmileParams, VolSurface};
use serde_json::{json, Value};

use crate::config::{BackendArg, ConfigFile, PrecisionArg, SurfaceSection, SyntheticSurface};
use crate::csvio;
use crate::output::{canonical, json_bytes, manifest, num, OutputSet, Sink};
use crate::{CliError, Common};

/// Grids above this many nodes need `--force` to validate.
pub const VALIDATE_MAX_NODES: usize = 400;

struct Loaded {
    cfg: ConfigFile,
    sim: SimConfig,
    payoff: Payoff,
    surface: VolSurface,
}

fn load(common: &Common) -> Result<Loaded, CliError> {
    let mut cfg = ConfigFile::load(&common.config)?;
    common.overrides.apply(&mut cfg);
    cfg.resolve_defaults();
    let sim = cfg.sim_config()?;
    let payoff = cfg.payoff()?;
    let surface = cfg.load_surface()?;
    Ok(Loaded {
        cfg,
        sim,
        payoff,
        surface,
    })
}

/// Runs `f` on a pool of `threads` workers, or on rayon's global pool for 0.
fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))?;
    Ok(pool.install(f))
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

pub fn price(common: &Common) -> Result<(), CliError> {
    let l = load(common)?;
    let start = Instant::now();
    let est = with_threads(l.cfg.run.threads, || run_price(&l.sim, &l.surface, &l.payoff))??;
    let wall_ms = elapsed_ms(start);

    let doc = json!({
        "price": num(est.mean),
        "std_error": num(est.std_error),
        "n_paths": est.n_paths,
        "wall_ms": num(wall_ms),
    });
    let sink = Sink::new(common.out.clone());
    let mut out = OutputSet::default();
    out.primary(&sink, json_bytes(&doc));
    out.file(
        sink.sidecar("price", "manifest.json"),
        json_bytes(&manifest(&l.cfg, "price", num(wall_ms), 1)),
    );
    out.commit()
}

pub fn greeks(common: &Common, wide: bool) -> Result<(), CliError> {
    let mut l = load(common)?;
    l.cfg.run.wide |= wide;
    let start = Instant::now();
    let r = with_threads(l.cfg.run.threads, || run_greeks(&l.sim, &l.surface, &l.payoff))??;
    let wall_ms = elapsed_ms(start);

    let grid = if l.cfg.run.wide {
        csvio::write_vega_wide(&l.surface, &r.vega_grid)
    } else {
        csvio::write_vega_long(&l.surface, &r.vega_grid, &r.vega_se_grid)
    };
    let summary = json!({
        "price": num(r.price.mean),
        "std_error": num(r.price.std_error),
        "delta": num(r.delta),
        "delta_se": num(r.delta_se),
        "total_vega": num(r.total_vega()),
        "total_vega_se": num(r.total_vega_se),
        "n_paths": r.price.n_paths,
        "n_nodes": l.surface.n_nodes(),
        "wall_ms": num(wall_ms),
    });
    let sink = Sink::new(common.out.clone());
    let mut out = OutputSet::default();
    out.primary(&sink, grid);
    out.file(sink.sidecar("greeks", "summary.json"), json_bytes(&summary));
    out.file(
        sink.sidecar("greeks", "manifest.json"),
        json_bytes(&manifest(&l.cfg, "greeks", num(wall_ms), 1)),
    );
    out.commit()
}

#[derive(Debug, Clone, Default)]
pub struct ValidateOverrides {
    pub eps: Option<f64>,
    pub tol_rel: Option<f64>,
    pub tol_abs: Option<f64>,
    pub stride: Option<usize>,
    pub force: bool,
}

pub fn validate(common: &Common, ov: &ValidateOverrides) -> Result<(), CliError> {
    let mut l = load(common)?;
    let run = &mut l.cfg.run;
    run.eps = ov.eps.unwrap_or(run.eps);
    run.tol_rel = ov.tol_rel.unwrap_or(run.tol_rel);
    run.tol_abs = ov.tol_abs.unwrap_or(run.tol_abs);
    run.stride = ov.stride.unwrap_or(run.stride);
    run.force |= ov.force;
    let run = l.cfg.run.clone();
    if !(run.tol_rel >= 0.0 && run.tol_abs >= 0.0) {
        return Err(CliError::Usage("tolerances must be non-negative".into()));
    }
    let n_nodes = l.surface.n_nodes();
    if n_nodes > VALIDATE_MAX_NODES && !run.force {
        return Err(CliError::Usage(format!(
            "surface has {n_nodes} nodes; bumping every node costs {} pricings. \
             Pass --force to run anyway (or --stride to sample nodes)",
            2 * n_nodes
        )));
    }

    let start = Instant::now();
    let adj = with_threads(run.threads, || run_greeks(&l.sim, &l.surface, &l.payoff))??;
    let adjoint_ms = elapsed_ms(start);
    let start = Instant::now();
    let bump = with_threads(run.threads, || {
        bump_all(&l.sim, &l.surface, &l.payoff, run.eps, run.stride)
    })??;
    let bump_ms = elapsed_ms(start);

    let mut nodes = Vec::new();
    let (mut max_abs, mut sum_abs, mut max_rel, mut sum_rel, mut n_rel) = (0.0f64, 0.0, 0.0f64, 0.0, 0usize);
    let mut failed = 0usize;
    // worst node by deviation relative to its tolerance
    let mut worst: Option<(usize, usize, f64)> = None;
    for ((i, j), &b) in bump.grid.indexed_iter() {
        if b.is_nan() {
            continue;
        }
        let a = adj.vega_grid[[i, j]];
        let abs_dev = (a - b).abs();
        let rel_dev = abs_dev / b.abs();
        let tol = (run.tol_rel * b.abs()).max(run.tol_abs);
        let pass = abs_dev <= tol;
        failed += usize::from(!pass);
        max_abs = max_abs.max(abs_dev);
        sum_abs += abs_dev;
        if rel_dev.is_finite() {
            max_rel = max_rel.max(rel_dev);
            sum_rel += rel_dev;
            n_rel += 1;
        }
        let ratio = if tol > 0.0 { abs_dev / tol } else { f64::INFINITY };
        if worst.is_none_or(|w| ratio > w.2) {
            worst = Some((i, j, ratio));
        }
        nodes.push(json!({
            "i": i,
            "j": j,
            "spot": num(l.surface.spots()[i]),
            "time": num(l.surface.times()[j]),
            "adjoint": num(a),
            "adjoint_se": num(adj.vega_se_grid[[i, j]]),
            "bump": num(b),
            "bump_se": num(bump.se_grid[[i, j]]),
            "abs_dev": num(abs_dev),
            "rel_dev": num(rel_dev),
            "tolerance": num(tol),
            "pass": pass,
        }));
    }
    let compared = nodes.len();
    let pass = failed == 0;
    let report = json!({
        "pass": pass,
        "n_nodes": n_nodes,
        "n_compared": compared,
        "n_failed": failed,
        "eps": num(run.eps),
        "tol_rel": num(run.tol_rel),
        "tol_abs": num(run.tol_abs),
        "max_abs_dev": num(max_abs),
        "mean_abs_dev": num(sum_abs / compared.max(1) as f64),
        "max_rel_dev": num(max_rel),
        "mean_rel_dev": num(sum_rel / n_rel.max(1) as f64),
        "worst_node": worst.map(|(i, j, r)| json!({"i": i, "j": j, "dev_over_tol": num(r)})),
        "adjoint_wall_ms": num(adjoint_ms),
        "bump_wall_ms": num(bump_ms),
        "bump_simulations": bump.simulations,
        "nodes": nodes,
    });
    let wall = json!({"adjoint": num(adjoint_ms), "bump": num(bump_ms)});
    let sink = Sink::new(common.out.clone());
    let mut out = OutputSet::default();
    out.primary(&sink, json_bytes(&report));
    out.file(
        sink.sidecar("validate", "manifest.json"),
        json_bytes(&manifest(&l.cfg, "validate", canonical(wall), 1 + bump.simulations)),
    );
    out.commit()?;

    if pass {
        eprintln!(
            "validate: {compared} nodes within max({} x |bump|, {}); max abs dev {max_abs:.3e}",
            run.tol_rel, run.tol_abs
        );
        return Ok(());
    }
    let (wi, wj, wr) = worst.expect("a failing node exists");
    let mut msg = format!(
        "validation failed: {failed} of {compared} nodes outside max({} x |bump|, {}); \
         worst node ({wi}, {wj}) at {wr:.2} x tolerance: adjoint {:.6e}, bump {:.6e}",
        run.tol_rel,
        run.tol_abs,
        adj.vega_grid[[wi, wj]],
        bump.grid[[wi, wj]],
    );
    if run.eps > 10.0 * DEFAULT_VOL_EPS {
        msg.push_str(&format!(
            "; eps = {} is large: central-difference truncation error grows as eps^2 \
             and likely dominates (default {DEFAULT_VOL_EPS})",
            run.eps
        ));
    }
    Err(CliError::Tolerance(msg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchOp {
    Price,
    Greeks,
}

impl BenchOp {
    fn name(self) -> &'static str {
        match self {
            BenchOp::Price => "price",
            BenchOp::Greeks => "greeks",
        }
    }
}

fn pick<T: Clone>(given: &[T], all: &[T]) -> Vec<T> {
    if given.is_empty() {
        all.to_vec()
    } else {
        given.to_vec()
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub const BENCH_TIMING_SCOPE: &str =
    "wall time of the full compute call including result materialization; excludes config and file I/O";

pub fn bench(
    common: &Common,
    repeats: Option<usize>,
    ops: &[BenchOp],
    backends: &[BackendArg],
    precisions: &[PrecisionArg],
) -> Result<(), CliError> {
    let mut l = load(common)?;
    if let Some(r) = repeats {
        l.cfg.run.repeats = r;
    }
    let repeats = l.cfg.run.repeats;
    if repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let ops = pick(ops, &[BenchOp::Price, BenchOp::Greeks]);
    let backends = pick(backends, &[BackendArg::Gather, BackendArg::Onehot]);
    let precisions = pick(precisions, &[PrecisionArg::Full, PrecisionArg::Bf16]);

    let work = (l.sim.n_paths * l.sim.n_steps) as f64;
    let mut rows = Vec::new();
    let mut table = Vec::new();
    let mut simulations = 0u64;
    for &op in &ops {
        for &backend in &backends {
            for &precision in &precisions {
                let sim = SimConfig {
                    interp_backend: backend.into(),
                    precision: precision.into(),
                    ..l.sim
                };
                let mut timings = Vec::with_capacity(repeats);
                let mut value = f64::NAN;
                for _ in 0..repeats {
                    let start = Instant::now();
                    value = with_threads(l.cfg.run.threads, || -> Result<f64, CliError> {
                        Ok(match op {
                            BenchOp::Price => run_price(&sim, &l.surface, &l.payoff)?.mean,
                            BenchOp::Greeks => run_greeks(&sim, &l.surface, &l.payoff)?.price.mean,
                        })
                    })??;
                    timings.push(elapsed_ms(start));
                    simulations += 1;
                }
                let mut sorted = timings.clone();
                sorted.sort_by(f64::total_cmp);
                let med = median(&sorted);
                let throughput = work / (med * 1e-3);
                table.push([
                    op.name().to_string(),
                    backend.name().to_string(),
                    precision.name().to_string(),
                    format!("{med:.1}"),
                    format!("{:.1}", sorted[0]),
                    format!("{throughput:.3e}"),
                    format!("{value:.8}"),
                ]);
                rows.push(json!({
                    "op": op.name(),
                    "backend": backend.name(),
                    "precision": precision.name(),
                    "timings_ms": timings.iter().map(|&t| num(t)).collect::<Vec<_>>(),
                    "median_ms": num(med),
                    "min_ms": num(sorted[0]),
                    "paths_steps_per_sec": num(throughput),
                    "price": num(value),
                }));
            }
        }
    }
    let doc = json!({
        "timing_scope": BENCH_TIMING_SCOPE,
        "repeats": repeats,
        "threads": l.cfg.run.threads,
        "n_paths": l.sim.n_paths,
        "n_steps": l.sim.n_steps,
        "n_nodes": l.surface.n_nodes(),
        "rows": rows,
    });
    let sink = Sink::new(common.out.clone());
    let mut out = OutputSet::default();
    out.primary(&sink, json_bytes(&doc));
    let total: f64 = doc["rows"]
        .as_array()
        .into_iter()
        .flatten()
        .flat_map(|r| r["timings_ms"].as_array().into_iter().flatten())
        .filter_map(Value::as_f64)
        .sum();
    out.file(
        sink.sidecar("bench", "manifest.json"),
        json_bytes(&manifest(&l.cfg, "bench", num(total), simulations)),
    );
    out.commit()?;
    let text = render_table(&table);
    match sink {
        Sink::Stdout => eprint!("{text}"),
        Sink::File(_) => print!("{text}"),
    }
    Ok(())
}

fn render_table(rows: &[[String; 7]]) -> String {
    let header = [
        "op",
        "backend",
        "precision",
        "median_ms",
        "min_ms",
        "paths*steps/s",
        "price",
    ];
    let mut widths = header.map(str::len);
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(k, (c, w))| if k < 3 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for r in rows {
        line(r.iter().map(String::as_str).collect());
    }
    out
}

#[derive(Debug, clap::Args)]
pub struct GenSurfaceArgs {
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Spot nodes (I).
    #[arg(long, default_value_t = 30)]
    pub n_spots: usize,
    /// Time nodes (J).
    #[arg(long, default_value_t = 60)]
    pub n_times: usize,
    #[arg(long, default_value_t = 100.0)]
    pub s0: f64,
    #[arg(long, default_value_t = 1.5)]
    pub maturity: f64,
    /// Lowest spot node as a multiple of s0.
    #[arg(long, default_value_t = 0.5)]
    pub lo: f64,
    /// Highest spot node as a multiple of s0.
    #[arg(long, default_value_t = 2.0)]
    pub hi: f64,
    #[arg(long, default_value_t = 0.2)]
    pub base: f64,
    #[arg(long, default_value_t = 0.5)]
    pub skew: f64,
}

pub fn gen_surface(args: &GenSurfaceArgs) -> Result<(), CliError> {
    let p = SmileParams {
        n_spots: args.n_spots,
        n_times: args.n_times,
        s0: args.s0,
        maturity: args.maturity,
        lo: args.lo,
        hi: args.hi,
        base: args.base,
        skew: args.skew,
    };
    let bad = |m: &str| Err(CliError::Usage(m.to_string()));
    if p.n_spots < 2 || p.n_times < 2 {
        return bad("--n-spots and --n-times must be at least 2");
    }
    if !(p.s0 > 0.0 && p.s0.is_finite() && p.maturity > 0.0 && p.maturity.is_finite()) {
        return bad("--s0 and --maturity must be positive");
    }
    if !(p.lo > 0.0 && p.lo < p.hi && p.hi.is_finite()) {
        return bad("need 0 < --lo < --hi");
    }
    if !(p.base.is_finite() && p.skew.is_finite()) {
        return bad("--base and --skew must be finite");
    }
    let start = Instant::now();
    let surface = VolSurface::synthetic(&p).map_err(|e| CliError::Usage(e.to_string()))?;
    let wall_ms = elapsed_ms(start);

    let cfg = ConfigFile {
        surface: SurfaceSection::Synthetic(SyntheticSurface {
            n_spots: p.n_spots,
            n_times: p.n_times,
            s0: Some(p.s0),
            maturity: Some(p.maturity),
            lo: p.lo,
            hi: p.hi,
            base: p.base,
            skew: p.skew,
        }),
        ..ConfigFile::default()
    };
    let sink = Sink::new(args.out.clone());
    let mut out = OutputSet::default();
    out.primary(&sink, csvio::write_surface(&surface));
    out.file(
        sink.sidecar("gen-surface", "manifest.json"),
        json_bytes(&manifest(&cfg, "gen-surface", num(wall_ms), 0)),
    );
    out.commit()
}
