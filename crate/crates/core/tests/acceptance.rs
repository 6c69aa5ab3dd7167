//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use datacap::checks::{bracket_suite, constant_price_suite, dominance_suite, equivalence_suite, fixed_point_suite, monotonicity_suite, normalization_suite, CheckOutcome};
use datacap::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_601;

struct Line {
    id: u32,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn line(id: u32, title: &'static str, passed: bool, detail: String) -> Line {
    Line { id, title, passed, detail }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn show(c: &CheckOutcome) -> String {
    format!("[{}: {} cases, worst {:.3e} vs {:.1e}]", c.name, c.cases, c.worst, c.tolerance)
}

fn figure_one() -> ProviderConfig {
    ProviderConfig::new(Tariff::new(Cap::Limited(0.4), 0.1, 0.6).unwrap(), 0.5).unwrap()
}

fn criterion_1() -> Line {
    let start = Instant::now();
    let r = solve_monopoly(&figure_one(), Congestion::Finite(1.5), &UserDistribution::uniform(), &SolverConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let ok = r.converged && (r.q[0] - 0.3387).abs() <= 1e-3 && (r.d[0] - 0.1693).abs() <= 1e-3 && within(elapsed, 5);
    line(1, "figure 1 equilibrium", ok, format!("q={:.6} d={:.6} in {elapsed:.2?}", r.q[0], r.d[0]))
}

fn criterion_2(solver: &SolverConfig) -> Line {
    let start = Instant::now();
    let c = fixed_point_suite(SEED, 200, solver).unwrap();
    let elapsed = start.elapsed();
    line(2, "fixed-point residual", c.passed && c.cases == 200 && within(elapsed, 120), format!("{} in {elapsed:.1?}", show(&c)))
}

fn criterion_3(solver: &SolverConfig) -> Line {
    let start = Instant::now();
    let c = monotonicity_suite(SEED, 100, 2e-9, solver).unwrap();
    let elapsed = start.elapsed();
    line(3, "congestion monotonicity", c.passed && c.cases == 100 && within(elapsed, 300), format!("{} in {elapsed:.1?}", show(&c)))
}

fn sweep_grid() -> Vec<Cap> {
    (0..=10).map(|i| Cap::Limited(i as f64 / 10.0)).chain([Cap::Unlimited]).collect()
}

fn criterion_4(solver: &SolverConfig) -> Line {
    let start = Instant::now();
    let template = MonopolyTemplate::new(1.0, Congestion::Finite(1.0), UserDistribution::uniform()).unwrap();
    let r = bracket_suite(&template, Objective::Revenue, &sweep_grid(), &SearchConfig::default(), solver, 1e-4, 1e-3).unwrap();
    let elapsed = start.elapsed();
    let zero = &r.rows[0].revenue_opt;
    let last = &r.rows.last().unwrap().revenue_opt;
    line(
        4,
        "revenue bracket over caps",
        r.bracket.passed && r.zero_cap_fee.passed && within(elapsed, 1800),
        format!("R*(0)={:.9} f*(0)={:.2e} R*(inf)={:.9} {} in {elapsed:.1?}", zero.objective, zero.f, last.objective, show(&r.bracket)),
    )
}

fn criterion_5(solver: &SolverConfig) -> Line {
    let start = Instant::now();
    let template = MonopolyTemplate::new(0.3, Congestion::Infinite, UserDistribution::uniform()).unwrap();
    let r = bracket_suite(&template, Objective::Welfare, &sweep_grid(), &SearchConfig::default(), solver, 1e-4, 1e-3).unwrap();
    let elapsed = start.elapsed();
    let zero = &r.rows[0].welfare_opt;
    let last = &r.rows.last().unwrap().welfare_opt;
    let soft: Vec<String> = r
        .soft
        .iter()
        .map(|s| format!("{}: {}", s.name, if s.passed { "holds".to_string() } else { format!("warning ({})", s.detail) }))
        .collect();
    line(
        5,
        "welfare bracket over caps",
        r.bracket.passed && r.zero_cap_fee.passed && within(elapsed, 1800),
        format!(
            "S(0)={:.9} f(0)={:.2e} S(inf)={:.9} {} in {elapsed:.1?}; soft: {}",
            zero.objective,
            zero.f,
            last.objective,
            show(&r.bracket),
            soft.join("; ")
        ),
    )
}

fn criterion_6(solver: &SolverConfig) -> Line {
    let c = normalization_suite(SEED, 50, 1e-9, solver).unwrap();
    line(6, "normalization invariance", c.passed && c.cases == 50, show(&c))
}

fn criterion_7(solver: &SolverConfig) -> Line {
    let (eq, direct, matched) = equivalence_suite(SEED, 100, 1e-12, 1e-8).unwrap();
    let dom = dominance_suite(SEED, 20, 1e-6, solver).unwrap();
    line(
        7,
        "pay-as-you-go equivalence and dominance",
        eq.passed && direct > 0 && matched > 0 && dom.passed && dom.cases == 20,
        format!("{direct} case-1 / {matched} case-2, worst scaled {:.3e}; {}", eq.worst, show(&dom)),
    )
}

fn criterion_8(solver: &SolverConfig) -> Line {
    let template = MonopolyTemplate::new(1.0, Congestion::Finite(1.0), UserDistribution::uniform()).unwrap();
    let (opt, power) = constant_price_suite(&template, 4, 0.02, 1e-4, &SearchConfig::default(), solver).unwrap();
    line(
        8,
        "constant-price optimality probe",
        opt.passed && power.passed,
        format!("gain at optimum {:.3e}, gain at half price {:.3e}", opt.worst, -power.worst),
    )
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn criterion_9(solver: &SolverConfig) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut scenarios = vec![(figure_one(), Congestion::Finite(1.5), UserDistribution::uniform())];
    for _ in 0..20 {
        let cap = if rng.random_bool(0.2) { Cap::Unlimited } else { Cap::Limited(rng.random_range(0.05..1.0)) };
        let tariff = Tariff::new(cap, rng.random_range(0.0..0.3), rng.random_range(0.0..1.0)).unwrap();
        let provider = ProviderConfig::new(tariff, rng.random_range(0.2..2.0)).unwrap();
        let q0 = if rng.random_bool(0.3) { Congestion::Infinite } else { Congestion::Finite(rng.random_range(0.5..3.0)) };
        let dist = UserDistribution::new(rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)).unwrap();
        scenarios.push((provider, q0, dist));
    }

    let levels = [500, 1000, 2000];
    let mut totals = [0.0; 3];
    let mut worst_rel: f64 = 0.0;
    let mut worst_dq: f64 = 0.0;
    for (provider, q0, dist) in &scenarios {
        let eq = solve_monopoly(provider, *q0, dist, solver).unwrap();
        let scenario = MarketScenario::monopoly(*provider, *q0, *dist);
        let m = market_metrics(&scenario, &eq.q, &solver.quadrature).unwrap().providers[0];
        for (k, &n) in levels.iter().enumerate() {
            let grid = AgentGrid::new(dist, n, n).unwrap();
            let o = oracle_metrics(&grid, &scenario, &eq.q).unwrap()[0];
            let err = [rel(m.load, o.load), rel(m.revenue, o.revenue), rel(m.welfare, o.welfare)]
                .into_iter()
                .fold(0.0, f64::max);
            totals[k] += err;
            if n == 2000 {
                worst_rel = worst_rel.max(err);
                let oe = oracle_equilibrium(&grid, provider, *q0, solver).unwrap();
                worst_dq = worst_dq.max((oe.q[0] - eq.q[0]).abs());
            }
        }
    }
    let means: Vec<f64> = totals.iter().map(|t| t / scenarios.len() as f64).collect();
    let refining = means[1] < means[0] && means[2] < means[1];
    line(
        9,
        "oracle agreement",
        worst_rel <= 1e-2 && worst_dq <= 2e-3 && refining,
        format!(
            "{} scenarios: worst relative {worst_rel:.2e}, worst |dq| {worst_dq:.2e}, mean error at 500/1000/2000: {:.2e}/{:.2e}/{:.2e}",
            scenarios.len(),
            means[0],
            means[1],
            means[2]
        ),
    )
}

fn main() -> ExitCode {
    // Plain `cargo test` passes harness flags such as `--nocapture`; this
    // target has a single fixed run, so they are ignored except for listing.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let solver = SolverConfig::default();
    let criteria: Vec<Box<dyn Fn() -> Line>> = vec![
        Box::new(criterion_1),
        Box::new(|| criterion_2(&solver)),
        Box::new(|| criterion_3(&solver)),
        Box::new(|| criterion_4(&solver)),
        Box::new(|| criterion_5(&solver)),
        Box::new(|| criterion_6(&solver)),
        Box::new(|| criterion_7(&solver)),
        Box::new(|| criterion_8(&solver)),
        Box::new(|| criterion_9(&solver)),
    ];
    let mut failed = 0;
    for run in criteria {
        let l = run();
        println!("criterion {} {}: {} {}", l.id, if l.passed { "PASS" } else { "FAIL" }, l.title, l.detail);
        if !l.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
