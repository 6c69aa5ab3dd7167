mod config;
mod output;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use datacap::checks::{self, CheckOutcome};
use datacap::{Cap, MarketScenario, Objective};
use serde_json::json;

use config::ScenarioConfig;
use output::{num, Table};

const DEFAULT_SEED: u64 = 20_240_601;

/// Equilibria and optimal tariffs for congestion-prone network markets.
#[derive(Debug, Parser)]
#[command(name = "datacap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Write the CSV here instead of stdout; the JSON summary then goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the randomized checks; overrides `verify.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps and checks.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Revenue,
    Welfare,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the market equilibrium of the configured providers.
    Equilibrium(Common),
    /// Revenue- and welfare-optimal fees at every cap of `sweep.g_grid`.
    SweepCap(Common),
    /// Optimal lump-sum and per-unit fee at one cap.
    OptimizeFees {
        #[command(flatten)]
        common: Common,
        /// A number >= 0 or "unlimited"; defaults to the first provider's cap.
        #[arg(long)]
        cap: Option<String>,
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
    },
    /// Randomized property checks; exits 3 if any hard check fails.
    Verify(Common),
    /// Quadrature metrics against the discrete agent oracle.
    OracleCompare(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Ok,
    NonConvergence,
    PropertyFailure,
}

impl Status {
    fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::NonConvergence => 2,
            Status::PropertyFailure => 3,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::NonConvergence => "non-convergence",
            Status::PropertyFailure => "property-failure",
        }
    }
}

struct Run {
    table: Table,
    summary: serde_json::Value,
    status: Status,
}

struct Ctx {
    cfg: ScenarioConfig,
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (common, name) = match &cli.command {
        Command::Equilibrium(c) => (c, "equilibrium"),
        Command::SweepCap(c) => (c, "sweep-cap"),
        Command::OptimizeFees { common, .. } => (common, "optimize-fees"),
        Command::Verify(c) => (c, "verify"),
        Command::OracleCompare(c) => (c, "oracle-compare"),
    };

    let (ctx, hash) = match load(common) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };

    let run = match &cli.command {
        Command::Equilibrium(_) => equilibrium(&ctx),
        Command::SweepCap(_) => sweep_cap(&ctx),
        Command::OptimizeFees { cap, objective, .. } => match fee_target(&ctx.cfg, cap.as_deref(), *objective) {
            Ok((cap, kind)) => optimize_fees(&ctx, cap, kind),
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(1);
            }
        },
        Command::Verify(_) => verify(&ctx),
        Command::OracleCompare(_) => oracle_compare(&ctx),
    };
    let run = match run {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(Status::NonConvergence.code());
        }
    };

    match finish(&run, name, &hash, ctx.seed, common.out.as_deref()) {
        Ok(()) => ExitCode::from(run.status.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load(common: &Common) -> anyhow::Result<(Ctx, String)> {
    let bytes = std::fs::read(&common.config).with_context(|| format!("reading {}", common.config.display()))?;
    let text = std::str::from_utf8(&bytes).with_context(|| format!("{} is not UTF-8", common.config.display()))?;
    let cfg = ScenarioConfig::parse(text).with_context(|| format!("invalid config {}", common.config.display()))?;
    if let Some(n) = common.jobs {
        anyhow::ensure!(n >= 1, "--jobs must be >= 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let seed = common.seed.or(cfg.verify.seed).unwrap_or(DEFAULT_SEED);
    Ok((Ctx { cfg, seed }, output::config_hash(&bytes)))
}

fn finish(run: &Run, name: &str, hash: &str, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    let csv = run.table.render(hash, seed)?;
    output::emit(&csv, out)?;
    let summary = json!({
        "command": name,
        "version": env!("CARGO_PKG_VERSION"),
        "config": hash,
        "seed": seed,
        "status": run.status.label(),
        "exit_code": run.status.code(),
        "result": run.summary,
    });
    let text = serde_json::to_string_pretty(&summary)?;
    // A closed pipe on the summary stream is not worth failing the run over.
    let _ = if out.is_some() {
        writeln!(std::io::stdout(), "{text}")
    } else {
        writeln!(std::io::stderr(), "{text}")
    };
    Ok(())
}

fn cap_cell(c: Cap) -> String {
    match c {
        Cap::Limited(g) => num(g),
        Cap::Unlimited => "unlimited".into(),
    }
}

fn parse_cap(s: &str) -> anyhow::Result<Cap> {
    if s == "unlimited" {
        return Ok(Cap::Unlimited);
    }
    let g: f64 = s.parse().with_context(|| format!("--cap {s:?} is neither a number nor \"unlimited\""))?;
    anyhow::ensure!(g >= 0.0 && g.is_finite(), "--cap {g} must be a finite number >= 0");
    Ok(Cap::Limited(g))
}

fn fee_target(cfg: &ScenarioConfig, cap: Option<&str>, objective: Option<ObjectiveArg>) -> anyhow::Result<(Cap, Objective)> {
    let cap = match cap {
        Some(s) => parse_cap(s)?,
        None => cfg.optimize.cap.map_or(cfg.providers[0].cap.0, |c| c.0),
    };
    let kind = match objective {
        Some(ObjectiveArg::Revenue) => Objective::Revenue,
        Some(ObjectiveArg::Welfare) => Objective::Welfare,
        None => cfg.optimize.objective.map_or(Objective::Revenue, Objective::from),
    };
    Ok((cap, kind))
}

fn solve(scenario: &MarketScenario, solver: &datacap::SolverConfig) -> datacap::Result<datacap::EquilibriumResult> {
    match scenario.providers() {
        [p] => datacap::solve_monopoly(p, scenario.free_congestion(), &scenario.distribution(), solver),
        _ => datacap::solve_oligopoly(scenario, solver),
    }
}

fn equilibrium(ctx: &Ctx) -> anyhow::Result<Run> {
    let scenario = ctx.cfg.scenario();
    let solver = ctx.cfg.solver();
    let eq = solve(&scenario, &solver)?;
    let m = datacap::market_metrics(&scenario, &eq.q, &solver.quadrature)?;
    let mut table = Table::new(&["id", "q", "d", "revenue", "welfare", "residual", "iterations"]);
    for (i, p) in m.providers.iter().enumerate() {
        table.push(vec![
            i.to_string(),
            num(eq.q[i]),
            num(eq.d[i]),
            num(p.revenue),
            num(p.welfare),
            num(eq.residual),
            eq.iterations.to_string(),
        ]);
    }
    let status = if eq.converged { Status::Ok } else { Status::NonConvergence };
    if !eq.converged {
        eprintln!("warning: equilibrium did not converge (residual {:e} after {} iterations)", eq.residual, eq.iterations);
    }
    Ok(Run {
        table,
        summary: json!({
            "providers": scenario.providers().len(),
            "converged": eq.converged,
            "residual": eq.residual,
            "iterations": eq.iterations,
            "quadrature_error": m.error,
        }),
        status,
    })
}

fn sweep_cap(ctx: &Ctx) -> anyhow::Result<Run> {
    let grid = ctx.cfg.cap_grid();
    let rows = datacap::sweep_cap(&grid, &ctx.cfg.template(), &ctx.cfg.search(), &ctx.cfg.solver());
    let mut table = Table::new(&["g", "f_star", "p_star", "R_star", "S_at_Rstar", "f_circ", "p_circ", "S_circ"]);
    let mut failures = Vec::new();
    let mut warnings = Vec::new();
    for (cap, row) in grid.iter().zip(&rows) {
        match row {
            Ok(r) => {
                table.push(vec![
                    cap_cell(*cap),
                    num(r.revenue_opt.f),
                    num(r.revenue_opt.p),
                    num(r.revenue_opt.objective),
                    num(r.welfare_at_revenue_opt),
                    num(r.welfare_opt.f),
                    num(r.welfare_opt.p),
                    num(r.welfare_opt.objective),
                ]);
                warnings.extend(r.soft_violations(1e-3));
            }
            Err(e) => {
                eprintln!("warning: g={cap}: {e}");
                failures.push(format!("g={cap}: {e}"));
                let mut cells = vec![cap_cell(*cap)];
                cells.extend(std::iter::repeat_n(String::new(), 7));
                table.push(cells);
            }
        }
    }
    for w in &warnings {
        eprintln!("note: {w}");
    }
    Ok(Run {
        table,
        summary: json!({ "rows": grid.len(), "failed_rows": failures, "observations": warnings }),
        status: if failures.is_empty() { Status::Ok } else { Status::NonConvergence },
    })
}

fn optimize_fees(ctx: &Ctx, cap: Cap, kind: Objective) -> anyhow::Result<Run> {
    let opt = datacap::optimize_fees(cap, &ctx.cfg.template(), kind, &ctx.cfg.search(), &ctx.cfg.solver(), &[])?;
    let mut table = Table::new(&["g", "objective", "f", "p", "value", "revenue", "welfare", "q", "evaluations"]);
    table.push(vec![
        cap_cell(cap),
        kind.to_string(),
        num(opt.f),
        num(opt.p),
        num(opt.objective),
        num(opt.revenue),
        num(opt.welfare),
        num(opt.congestion),
        opt.evaluations.to_string(),
    ]);
    let basins: Vec<_> = opt.basins.iter().map(|b| json!({ "f": b.f, "p": b.p, "value": b.objective })).collect();
    Ok(Run {
        table,
        summary: json!({
            "multimodal": opt.multimodal,
            "heuristic": opt.heuristic,
            "refinement_depth": opt.refinement_depth,
            "basins": basins,
        }),
        status: Status::Ok,
    })
}

fn verify(ctx: &Ctx) -> anyhow::Result<Run> {
    let v = &ctx.cfg.verify;
    let solver = ctx.cfg.solver();
    let search = ctx.cfg.search();
    let template = ctx.cfg.template();
    let seed = ctx.seed;
    let count = |c: Option<config::Count>, d: usize| c.map_or(d, |c| c.0);

    let mut outcomes: Vec<CheckOutcome> = vec![
        checks::fixed_point_suite(seed, count(v.fixed_point_cases, 200), &solver)?,
        checks::monotonicity_suite(seed, count(v.monotonicity_pairs, 100), 2e-9, &solver)?,
        checks::normalization_suite(seed, count(v.normalization_cases, 50), 1e-9, &solver)?,
    ];
    let (eq, direct, matched) = checks::equivalence_suite(seed, count(v.equivalence_cases, 100), 1e-12, 1e-8)?;
    outcomes.push(eq);
    outcomes.push(checks::dominance_suite(seed, count(v.dominance_cases, 20), 1e-6, &solver)?);
    let eps = v.probe_size.map_or(0.02, |x| x.0);
    let (opt, power) = checks::constant_price_suite(&template, count(v.probe_bands, 4), eps, 1e-4, &search, &solver)?;
    outcomes.push(opt);
    outcomes.push(power);

    let grid: Vec<Cap> = match &v.bracket_grid {
        Some(g) => g.iter().map(|c| c.0).collect(),
        None => ctx.cfg.cap_grid(),
    };
    for &kind in v.brackets.as_deref().unwrap_or(&[]) {
        let r = checks::bracket_suite(&template, kind.into(), &grid, &search, &solver, 1e-4, 1e-3)?;
        outcomes.push(r.bracket);
        outcomes.push(r.zero_cap_fee);
        outcomes.extend(r.soft);
    }

    let mut table = Table::new(&["check", "severity", "passed", "cases", "worst", "tolerance"]);
    let mut status = Status::Ok;
    for o in &outcomes {
        table.push(vec![
            o.name.to_string(),
            if o.hard { "hard" } else { "soft" }.to_string(),
            o.passed.to_string(),
            o.cases.to_string(),
            num(o.worst),
            num(o.tolerance),
        ]);
        if o.passed {
            continue;
        }
        if o.hard {
            status = Status::PropertyFailure;
            eprintln!("FAIL {}: worst {:e} > {:e}; counterexample: {}", o.name, o.worst, o.tolerance, o.detail);
        } else {
            eprintln!("warning: {}: {}", o.name, o.detail);
        }
    }
    let report: Vec<_> = outcomes
        .iter()
        .map(|o| json!({ "check": o.name, "hard": o.hard, "passed": o.passed, "cases": o.cases, "worst": o.worst }))
        .collect();
    Ok(Run {
        table,
        summary: json!({ "checks": report, "direct_cases": direct, "revenue_matched_cases": matched }),
        status,
    })
}

fn oracle_compare(ctx: &Ctx) -> anyhow::Result<Run> {
    let scenario = ctx.cfg.scenario();
    let solver = ctx.cfg.solver();
    let dist = scenario.distribution();
    let eq = solve(&scenario, &solver)?;
    let m = datacap::market_metrics(&scenario, &eq.q, &solver.quadrature)?;
    let monopoly = scenario.providers().len() == 1;

    let mut table = Table::new(&["n_u", "n_v", "id", "q", "q_oracle", "delta_q", "delta_load", "delta_revenue", "delta_welfare"]);
    let mut worst = Vec::new();
    for (n_u, n_v) in ctx.cfg.oracle_resolutions() {
        let grid = datacap::AgentGrid::new(&dist, n_u, n_v)?;
        let o = datacap::oracle_metrics(&grid, &scenario, &eq.q)?;
        // The discrete equilibrium is only defined for a single provider.
        let q_oracle = if monopoly {
            Some(datacap::oracle_equilibrium(&grid, &scenario.providers()[0], scenario.free_congestion(), &solver)?.q[0])
        } else {
            None
        };
        let mut level: f64 = 0.0;
        for (i, (a, b)) in m.providers.iter().zip(&o).enumerate() {
            let deltas = [(a.load - b.load).abs(), (a.revenue - b.revenue).abs(), (a.welfare - b.welfare).abs()];
            let dq = q_oracle.map(|qo| (qo - eq.q[i]).abs());
            level = deltas.into_iter().chain(dq).fold(level, f64::max);
            table.push(vec![
                n_u.to_string(),
                n_v.to_string(),
                i.to_string(),
                num(eq.q[i]),
                q_oracle.map_or(String::new(), num),
                dq.map_or(String::new(), num),
                num(deltas[0]),
                num(deltas[1]),
                num(deltas[2]),
            ]);
        }
        worst.push(json!({ "n_u": n_u, "n_v": n_v, "max_delta": level }));
    }
    Ok(Run {
        table,
        summary: json!({ "converged": eq.converged, "resolutions": worst }),
        status: if eq.converged { Status::Ok } else { Status::NonConvergence },
    })
}
