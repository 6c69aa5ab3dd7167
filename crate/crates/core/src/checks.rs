//! Randomized property suites over the solvers. Each suite draws its cases
//! from its own seeded stream, evaluates them in parallel and reports the
//! worst case, so results depend only on the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::appendix::{check_constant_price_optimality, equivalence_report, verify_payg_dominance, DemandBasedTariff, EquivalenceCase};
use crate::equilibrium::{solve_monopoly, solve_schedule, SolverConfig};
use crate::error::Result;
use crate::market::{Population, ProviderConfig};
use crate::model::{congestion, Cap, Congestion, Tariff, UserDistribution};
use crate::optimize::{optimize_per_unit, sweep_cap, CapSweepRow, MonopolyTemplate, Objective, SearchConfig};

/// Result of one property suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// Hard checks decide the verdict; soft ones only warn.
    pub hard: bool,
    pub passed: bool,
    pub cases: usize,
    /// Largest violation measure seen (negative or zero when passing).
    pub worst: f64,
    pub tolerance: f64,
    /// Parameters of the worst case, or notes.
    pub detail: String,
}

impl CheckOutcome {
    fn from_cases(name: &'static str, tolerance: f64, cases: Vec<(f64, String)>) -> Self {
        let n = cases.len();
        let (worst, detail) = cases
            .into_iter()
            .fold((f64::NEG_INFINITY, String::new()), |acc, c| if c.0 > acc.0 { c } else { acc });
        Self {
            name,
            hard: true,
            passed: worst <= tolerance,
            cases: n,
            worst,
            tolerance,
            detail,
        }
    }
}

fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn random_cap(rng: &mut ChaCha8Rng) -> Cap {
    if rng.random_bool(0.15) {
        Cap::Unlimited
    } else {
        Cap::Limited(rng.random_range(0.0..1.0))
    }
}

fn random_q0(rng: &mut ChaCha8Rng) -> Congestion {
    if rng.random_bool(0.25) {
        Congestion::Infinite
    } else {
        Congestion::Finite(rng.random_range(0.2..3.0))
    }
}

fn random_dist(rng: &mut ChaCha8Rng) -> UserDistribution {
    UserDistribution::new(rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)).expect("positive exponents")
}

/// A random monopoly market.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomMonopoly {
    pub tariff: Tariff,
    pub capacity: f64,
    pub free_congestion: Congestion,
    pub distribution: UserDistribution,
}

impl RandomMonopoly {
    pub fn draw(rng: &mut ChaCha8Rng) -> Self {
        let tariff = Tariff::new(random_cap(rng), rng.random_range(0.0..1.2), rng.random_range(0.0..1.0)).expect("valid ranges");
        Self {
            tariff,
            capacity: rng.random_range(0.1..3.0),
            free_congestion: random_q0(rng),
            distribution: random_dist(rng),
        }
    }

    pub fn provider(&self) -> ProviderConfig {
        ProviderConfig::new(self.tariff, self.capacity).expect("positive capacity")
    }
}

/// Every equilibrium converges, reproduces its own congestion through
/// `Q = d / c` and stays below the free option's congestion when loaded.
pub fn fixed_point_suite(seed: u64, cases: usize, solver: &SolverConfig) -> Result<CheckOutcome> {
    let mut rng = stream(seed, 1);
    let draws: Vec<RandomMonopoly> = (0..cases).map(|_| RandomMonopoly::draw(&mut rng)).collect();
    let results = draws
        .par_iter()
        .map(|m| -> Result<(f64, String)> {
            let eq = solve_monopoly(&m.provider(), m.free_congestion, &m.distribution, solver)?;
            let (q, d) = (eq.q[0], eq.d[0]);
            let implied = congestion(d, m.capacity)?.as_f64();
            let mut violation = (q - implied).abs();
            if !eq.converged {
                violation = violation.max(f64::INFINITY);
            }
            if d > 0.0 && q >= m.free_congestion.as_f64() {
                violation = f64::INFINITY;
            }
            Ok((violation, format!("{m:?} q={q} d={d} converged={}", eq.converged)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CheckOutcome::from_cases("fixed-point residual and q < q0", solver.tolerance, results))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Coordinate {
    LumpSum,
    PerUnit,
    Capacity,
    Cap,
    FreeCongestion,
}

/// Congestion falls with fees and capacity and rises with the cap and the
/// free option's congestion.
pub fn monotonicity_suite(seed: u64, pairs: usize, slack: f64, solver: &SolverConfig) -> Result<CheckOutcome> {
    let mut rng = stream(seed, 2);
    let coords = [Coordinate::LumpSum, Coordinate::PerUnit, Coordinate::Capacity, Coordinate::Cap, Coordinate::FreeCongestion];
    let draws: Vec<(RandomMonopoly, RandomMonopoly, Coordinate)> = (0..pairs)
        .map(|k| {
            let coord = coords[k % coords.len()];
            let mut base = RandomMonopoly::draw(&mut rng);
            base.tariff = Tariff::new(
                Cap::Limited(rng.random_range(0.0..0.9)),
                rng.random_range(0.0..0.5),
                rng.random_range(0.0..0.9),
            )
            .expect("valid ranges");
            base.free_congestion = Congestion::Finite(rng.random_range(0.2..2.5));
            let step = rng.random_range(0.01..0.5);
            let t = base.tariff;
            let mut up = base;
            match coord {
                Coordinate::LumpSum => up.tariff = t.with_lump_sum(t.lump_sum() + step).expect("valid"),
                Coordinate::PerUnit => up.tariff = t.with_per_unit(t.per_unit() + step).expect("valid"),
                Coordinate::Capacity => up.capacity += step,
                Coordinate::Cap => up.tariff = t.with_cap(Cap::Limited(t.cap().as_f64() + step)).expect("valid"),
                Coordinate::FreeCongestion => up.free_congestion = Congestion::Finite(base.free_congestion.as_f64() + step),
            }
            (base, up, coord)
        })
        .collect();
    let results = draws
        .par_iter()
        .map(|(lo, hi, coord)| -> Result<(f64, String)> {
            let q_lo = solve_monopoly(&lo.provider(), lo.free_congestion, &lo.distribution, solver)?.q[0];
            let q_hi = solve_monopoly(&hi.provider(), hi.free_congestion, &hi.distribution, solver)?.q[0];
            // Positive means the predicted direction is violated.
            let violation = match coord {
                Coordinate::LumpSum | Coordinate::PerUnit | Coordinate::Capacity => q_hi - q_lo,
                Coordinate::Cap | Coordinate::FreeCongestion => q_lo - q_hi,
            };
            Ok((violation, format!("{coord:?}: {lo:?} -> {hi:?}: q {q_lo} -> {q_hi}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CheckOutcome::from_cases("congestion monotone in fees, capacity, cap, q0", slack, results))
}

/// Solving in original units and in normalized units gives the same
/// congestion, and loads differ by the factor `k / U`.
pub fn normalization_suite(seed: u64, cases: usize, tol: f64, solver: &SolverConfig) -> Result<CheckOutcome> {
    let mut rng = stream(seed, 3);
    let draws: Vec<(RandomMonopoly, f64, f64, f64)> = (0..cases)
        .map(|_| {
            let mut m = RandomMonopoly::draw(&mut rng);
            m.tariff = Tariff::new(random_cap(&mut rng), rng.random_range(0.0..0.6), rng.random_range(0.0..1.0)).expect("valid ranges");
            (m, rng.random_range(0.5..3.0), rng.random_range(0.5..3.0), rng.random_range(0.5..3.0))
        })
        .collect();
    let results = draws
        .par_iter()
        .map(|(m, k, u_max, v_max)| -> Result<(f64, String)> {
            let normalized = solve_monopoly(&m.provider(), m.free_congestion, &m.distribution, solver)?;
            let t = m.tariff;
            let cap = match t.cap() {
                Cap::Limited(g) => Cap::Limited(g * u_max),
                Cap::Unlimited => Cap::Unlimited,
            };
            let original = Tariff::new(cap, t.lump_sum() * u_max * v_max, t.per_unit() * v_max)?;
            let population = Population {
                demand_max: *u_max,
                value_max: *v_max,
                mass: 1.0 / k,
            };
            let capacity = m.capacity * u_max / k;
            let scaled = solve_schedule(&original, capacity, m.free_congestion, &m.distribution, &population, solver)?;
            let dq = (scaled.q[0] - normalized.q[0]).abs();
            let dd = (normalized.d[0] - k / u_max * scaled.d[0]).abs();
            Ok((dq.max(dd), format!("{m:?} k={k} U={u_max} V={v_max}: q {} vs {}, d {} vs {}", normalized.q[0], scaled.q[0], normalized.d[0], scaled.d[0])))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CheckOutcome::from_cases("normalization invariance", tol, results))
}

/// One randomized per-demand equivalence instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceInstance {
    pub demand: f64,
    pub tariff: Tariff,
    pub congestion: f64,
    pub free_congestion: Congestion,
    pub distribution: UserDistribution,
}

impl EquivalenceInstance {
    /// Draws an instance; with `revenue_matched` set, redraws until the
    /// instance needs the revenue-matching construction.
    pub fn draw(rng: &mut ChaCha8Rng, revenue_matched: bool) -> Self {
        loop {
            let inst = Self {
                demand: rng.random_range(0.05..1.0),
                tariff: Tariff::new(random_cap(rng), rng.random_range(0.0..0.5), rng.random_range(0.0..1.0)).expect("valid ranges"),
                congestion: rng.random_range(0.0..2.0),
                free_congestion: random_q0(rng),
                distribution: random_dist(rng),
            };
            if !revenue_matched || inst.is_revenue_matched() {
                return inst;
            }
        }
    }

    fn is_revenue_matched(&self) -> bool {
        let rho_i = self.demand * (-self.congestion).exp();
        let rho_0 = self.demand * (-self.free_congestion.as_f64()).exp();
        let (g, f, p) = (self.tariff.cap().as_f64(), self.tariff.lump_sum(), self.tariff.per_unit());
        rho_i > g && g * p - f > rho_0 * p && self.congestion < self.free_congestion.as_f64()
    }
}

/// Per-demand pay-as-you-go equivalence. Half the instances are drawn
/// freely, half are forced into the revenue-matching case.
pub fn equivalence_suite(seed: u64, cases: usize, direct_tol: f64, matched_tol: f64) -> Result<(CheckOutcome, usize, usize)> {
    let mut rng = stream(seed, 4);
    let draws: Vec<EquivalenceInstance> = (0..cases).map(|k| EquivalenceInstance::draw(&mut rng, k % 2 == 1)).collect();
    let reports = draws
        .par_iter()
        .map(|i| equivalence_report(i.demand, &i.tariff, i.congestion, i.free_congestion, &i.distribution).map(|r| (*i, r)))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = (0, 0);
    let scored = reports
        .iter()
        .map(|(inst, r)| {
            let rev = (r.revenue_payg - r.revenue_original).abs();
            // Scale each violation by its own tolerance so both cases share one verdict.
            let score = match r.case {
                EquivalenceCase::Direct => {
                    counts.0 += 1;
                    rev.max((r.load_payg - r.load_original).abs()) / direct_tol
                }
                EquivalenceCase::RevenueMatched => {
                    counts.1 += 1;
                    let load_excess = if r.load_payg > r.load_original + 1e-12 { f64::INFINITY } else { 0.0 };
                    (rev / matched_tol).max(load_excess)
                }
            };
            (score, format!("{inst:?} -> {r:?}"))
        })
        .collect();
    let mut out = CheckOutcome::from_cases("per-demand pay-as-you-go equivalence", 1.0, scored);
    out.detail = format!("{} case-1, {} case-2; worst: {}", counts.0, counts.1, out.detail);
    Ok((out, counts.0, counts.1))
}

/// Banded tariffs are weakly dominated by their pay-as-you-go equivalents.
pub fn dominance_suite(seed: u64, cases: usize, tol: f64, solver: &SolverConfig) -> Result<CheckOutcome> {
    let mut rng = stream(seed, 5);
    let draws: Vec<(DemandBasedTariff, f64, Congestion, UserDistribution)> = (0..cases)
        .map(|_| {
            let bands = rng.random_range(1..=4);
            let tariffs = (0..bands)
                .map(|_| Tariff::new(random_cap(&mut rng), rng.random_range(0.0..0.4), rng.random_range(0.0..1.0)).expect("valid ranges"))
                .collect();
            let schedule = DemandBasedTariff::equal_bands(tariffs).expect("non-empty bands");
            (schedule, rng.random_range(0.2..2.0), random_q0(&mut rng), random_dist(&mut rng))
        })
        .collect();
    let results = draws
        .par_iter()
        .map(|(t, c, q0, dist)| -> Result<(f64, String)> {
            let r = verify_payg_dominance(t, *c, *q0, dist, solver)?;
            let mut violation = (r.revenue_original - r.revenue_payg).max(r.q_payg - r.q_original);
            if r.construction_failures > 0 || !r.converged {
                violation = f64::INFINITY;
            }
            Ok((violation, format!("{t:?} c={c} q0={q0} {dist:?} -> {r:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CheckOutcome::from_cases("pay-as-you-go dominance", tol, results))
}

/// Rows of a cap sweep plus the bracket verdicts derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct BracketReport {
    pub rows: Vec<CapSweepRow>,
    pub bracket: CheckOutcome,
    pub zero_cap_fee: CheckOutcome,
    pub soft: Vec<CheckOutcome>,
}

/// The optimum at zero cap dominates every cap, which dominates unlimited.
pub fn bracket_suite(
    template: &MonopolyTemplate,
    kind: Objective,
    grid: &[Cap],
    search: &SearchConfig,
    solver: &SolverConfig,
    tol: f64,
    fee_tol: f64,
) -> Result<BracketReport> {
    let rows = sweep_cap(grid, template, search, solver).into_iter().collect::<Result<Vec<_>>>()?;
    let pick = |r: &CapSweepRow| match kind {
        Objective::Revenue => r.revenue_opt.clone(),
        Objective::Welfare => r.welfare_opt.clone(),
    };
    let zero = rows
        .iter()
        .find(|r| r.cap == Cap::Limited(0.0))
        .map(pick)
        .ok_or_else(|| crate::error::Error::Invariant("cap grid lacks g = 0".into()))?;
    let unlimited = rows
        .iter()
        .find(|r| r.cap == Cap::Unlimited)
        .map(pick)
        .ok_or_else(|| crate::error::Error::Invariant("cap grid lacks unlimited".into()))?;
    let cases = rows
        .iter()
        .map(|r| {
            let o = pick(r).objective;
            let v = (o - zero.objective).max(unlimited.objective - o);
            (v, format!("g={} {kind}={o} (zero cap {}, unlimited {})", r.cap, zero.objective, unlimited.objective))
        })
        .collect();
    let name = match kind {
        Objective::Revenue => "revenue bracket R*(0) >= R*(g) >= R*(unlimited)",
        Objective::Welfare => "welfare bracket S(0) >= S(g) >= S(unlimited)",
    };
    let bracket = CheckOutcome::from_cases(name, tol, cases);
    let zero_cap_fee = CheckOutcome::from_cases(
        match kind {
            Objective::Revenue => "zero-cap revenue-optimal lump-sum is zero",
            Objective::Welfare => "zero-cap welfare-optimal lump-sum is zero",
        },
        fee_tol,
        vec![(zero.f, format!("f={} p={}", zero.f, zero.p))],
    );
    let mut soft = Vec::new();
    if kind == Objective::Welfare {
        let notes: Vec<String> = rows.iter().flat_map(|r| r.soft_violations(fee_tol)).collect();
        soft.push(CheckOutcome {
            name: "welfare-optimal fees not above revenue-optimal fees",
            hard: false,
            passed: notes.is_empty(),
            cases: rows.len(),
            worst: notes.len() as f64,
            tolerance: 0.0,
            detail: notes.join("; "),
        });
    }
    let finite: Vec<&CapSweepRow> = rows.iter().filter(|r| !r.cap.is_unlimited()).collect();
    let notes: Vec<String> = finite
        .windows(2)
        .filter(|w| pick(w[1]).f + fee_tol < pick(w[0]).f)
        .map(|w| format!("f at g={} is {} < {} at g={}", w[1].cap, pick(w[1]).f, pick(w[0]).f, w[0].cap))
        .collect();
    soft.push(CheckOutcome {
        name: match kind {
            Objective::Revenue => "revenue-optimal lump-sum grows with the cap",
            Objective::Welfare => "welfare-optimal lump-sum grows with the cap",
        },
        hard: false,
        passed: notes.is_empty(),
        cases: finite.len(),
        worst: notes.len() as f64,
        tolerance: 0.0,
        detail: notes.join("; "),
    });
    Ok(BracketReport {
        rows,
        bracket,
        zero_cap_fee,
        soft,
    })
}

/// Band perturbations around the optimal constant per-unit price gain
/// nothing; around half that price they do.
pub fn constant_price_suite(template: &MonopolyTemplate, bands: usize, eps: f64, gain_tol: f64, search: &SearchConfig, solver: &SolverConfig) -> Result<(CheckOutcome, CheckOutcome)> {
    let fine = SearchConfig {
        step_tol: search.step_tol.min(1e-7),
        ..*search
    };
    let best = optimize_per_unit(template, Objective::Revenue, &fine, solver)?;
    let at_opt = check_constant_price_optimality(best.p, template.capacity, template.free_congestion, &template.distribution, bands, eps, solver)?;
    let at_half = check_constant_price_optimality(best.p / 2.0, template.capacity, template.free_congestion, &template.distribution, bands, eps, solver)?;
    let optimal = CheckOutcome::from_cases(
        "no band perturbation beats the optimal constant price",
        gain_tol,
        vec![(at_opt.max_gain, format!("{at_opt:?}"))],
    );
    let power = CheckOutcome::from_cases(
        "band perturbation improves a suboptimal price",
        0.0,
        vec![(-at_half.max_gain, format!("{at_half:?}"))],
    );
    let power = CheckOutcome {
        passed: at_half.max_gain > 0.0,
        ..power
    };
    Ok((optimal, power))
}
