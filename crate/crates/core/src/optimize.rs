//! Revenue- and welfare-optimal fees at a fixed data cap, and sweeps over caps.
//!
//! The objective is evaluated at the monopoly equilibrium and is not known to
//! be concave, so the search is a coarse grid followed by compass-pattern
//! refinement from the best few cells. Results are "best found".

use std::collections::HashMap;

use rayon::prelude::*;

use crate::equilibrium::{solve_monopoly, SolverConfig};
use crate::error::{Error, Result};
use crate::market::{market_metrics, MarketScenario, ProviderConfig};
use crate::model::{check_capacity, Cap, Congestion, Tariff, UserDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Revenue,
    Welfare,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::Revenue => "revenue",
            Objective::Welfare => "welfare",
        })
    }
}

/// Everything about a monopoly market except the tariff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonopolyTemplate {
    pub capacity: f64,
    pub free_congestion: Congestion,
    pub distribution: UserDistribution,
}

impl MonopolyTemplate {
    pub fn new(capacity: f64, free_congestion: Congestion, distribution: UserDistribution) -> Result<Self> {
        check_capacity(capacity)?;
        Ok(Self {
            capacity,
            free_congestion,
            distribution,
        })
    }

    pub fn provider(&self, tariff: Tariff) -> ProviderConfig {
        ProviderConfig::new(tariff, self.capacity).expect("capacity validated on construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub f_max: f64,
    pub p_max: f64,
    pub grid_f: usize,
    pub grid_p: usize,
    /// Number of best grid cells refined locally.
    pub starts: usize,
    /// Pattern search stops once its step is below this fee distance.
    pub step_tol: f64,
    /// Local optima whose objective is within this of the best count as ties.
    pub basin_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            f_max: 1.0,
            p_max: 1.0,
            grid_f: 21,
            grid_p: 21,
            starts: 5,
            step_tol: 1e-5,
            basin_tol: 1e-9,
        }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        if !(self.f_max >= 0.0 && self.f_max.is_finite()) {
            return Err(crate::error::domain("f_max", self.f_max, "must be finite and >= 0"));
        }
        if !(self.p_max >= 0.0 && self.p_max.is_finite()) {
            return Err(crate::error::domain("p_max", self.p_max, "must be finite and >= 0"));
        }
        if self.grid_f < 2 || self.grid_p < 2 {
            return Err(crate::error::domain("search grid size", self.grid_f.min(self.grid_p) as f64, "must be >= 2"));
        }
        if self.starts == 0 {
            return Err(crate::error::domain("search starts", 0.0, "must be >= 1"));
        }
        if !(self.step_tol > 0.0) {
            return Err(crate::error::domain("step_tol", self.step_tol, "must be > 0"));
        }
        Ok(())
    }
}

/// One evaluated fee pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub f: f64,
    pub p: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeeOptimum {
    pub cap: Cap,
    pub kind: Objective,
    pub f: f64,
    pub p: f64,
    pub objective: f64,
    /// Revenue and welfare at the optimum, whichever was optimized.
    pub revenue: f64,
    pub welfare: f64,
    pub congestion: f64,
    pub evaluations: usize,
    /// Largest number of step halvings any local refinement went through.
    pub refinement_depth: usize,
    /// End points of the local refinements, best first.
    pub basins: Vec<Probe>,
    /// More than one distinct basin reached the best objective.
    pub multimodal: bool,
    /// The search is heuristic; the objective has no known concavity.
    pub heuristic: bool,
    /// Every evaluated point, in evaluation order.
    pub probes: Vec<Probe>,
}

/// Equilibrium revenue and welfare of a tariff in a monopoly market.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub congestion: f64,
    pub load: f64,
    pub revenue: f64,
    pub welfare: f64,
}

impl Outcome {
    pub fn get(&self, kind: Objective) -> f64 {
        match kind {
            Objective::Revenue => self.revenue,
            Objective::Welfare => self.welfare,
        }
    }
}

/// Solves the equilibrium for `tariff` and evaluates revenue and welfare there.
pub fn evaluate(template: &MonopolyTemplate, tariff: Tariff, solver: &SolverConfig) -> Result<Outcome> {
    let provider = template.provider(tariff);
    let eq = solve_monopoly(&provider, template.free_congestion, &template.distribution, solver)?;
    let scenario = MarketScenario::monopoly(provider, template.free_congestion, template.distribution);
    let m = market_metrics(&scenario, &eq.q, &solver.quadrature)?;
    Ok(Outcome {
        congestion: eq.q[0],
        load: eq.d[0],
        revenue: m.providers[0].revenue,
        welfare: m.providers[0].welfare,
    })
}

struct Search<'a> {
    template: &'a MonopolyTemplate,
    solver: &'a SolverConfig,
    cap: Cap,
    kind: Objective,
    cache: HashMap<(u64, u64), Outcome>,
    probes: Vec<Probe>,
}

impl Search<'_> {
    fn eval(&mut self, f: f64, p: f64) -> Result<f64> {
        let key = (f.to_bits(), p.to_bits());
        if let Some(o) = self.cache.get(&key) {
            return Ok(o.get(self.kind));
        }
        let tariff = Tariff::new(self.cap, f, p)?;
        let o = evaluate(self.template, tariff, self.solver)?;
        self.cache.insert(key, o);
        let value = o.get(self.kind);
        self.probes.push(Probe { f, p, objective: value });
        Ok(value)
    }
}

/// Higher objective first, then lexicographically lower fees.
fn rank(a: &Probe, b: &Probe) -> std::cmp::Ordering {
    b.objective
        .total_cmp(&a.objective)
        .then(a.f.total_cmp(&b.f))
        .then(a.p.total_cmp(&b.p))
}

/// Best `(f, p)` at cap `g` for the chosen objective. `extra_starts` are
/// added to the local refinement starts alongside the best grid cells.
pub fn optimize_fees(
    cap: Cap,
    template: &MonopolyTemplate,
    kind: Objective,
    search: &SearchConfig,
    solver: &SolverConfig,
    extra_starts: &[(f64, f64)],
) -> Result<FeeOptimum> {
    search.validate()?;
    Tariff::new(cap, 0.0, 0.0)?;
    let mut s = Search {
        template,
        solver,
        cap,
        kind,
        cache: HashMap::new(),
        probes: Vec::new(),
    };

    let df = search.f_max / (search.grid_f - 1) as f64;
    let dp = search.p_max / (search.grid_p - 1) as f64;
    let mut grid = Vec::with_capacity(search.grid_f * search.grid_p);
    for i in 0..search.grid_f {
        for j in 0..search.grid_p {
            let (f, p) = (i as f64 * df, j as f64 * dp);
            grid.push(Probe { f, p, objective: s.eval(f, p)? });
        }
    }
    grid.sort_by(rank);

    let mut starts: Vec<(f64, f64)> = grid.iter().take(search.starts).map(|c| (c.f, c.p)).collect();
    for &(f, p) in extra_starts {
        starts.push((f.clamp(0.0, search.f_max), p.clamp(0.0, search.p_max)));
    }

    let mut basins = Vec::new();
    let mut depth = 0;
    for (f, p) in starts {
        let (end, d) = pattern_search(&mut s, f, p, df.max(dp) / 2.0, search)?;
        depth = depth.max(d);
        basins.push(end);
    }
    basins.sort_by(rank);
    basins.dedup_by(|a, b| (a.f - b.f).abs() <= 10.0 * search.step_tol && (a.p - b.p).abs() <= 10.0 * search.step_tol);

    let top = basins[0].objective;
    let near: Vec<Probe> = basins
        .iter()
        .copied()
        .filter(|b| b.objective >= top - search.basin_tol)
        .collect();
    // Lexicographic representative; lump-sums closer than the search
    // resolution count as equal so the per-unit fee decides.
    let f_min = near.iter().map(|b| b.f).fold(f64::INFINITY, f64::min);
    let pick = near
        .iter()
        .copied()
        .filter(|b| b.f <= f_min + 10.0 * search.step_tol)
        .min_by(|a, b| a.p.total_cmp(&b.p).then(a.f.total_cmp(&b.f)))
        .expect("at least one basin");
    let outcome = s.cache[&(pick.f.to_bits(), pick.p.to_bits())];

    Ok(FeeOptimum {
        cap,
        kind,
        f: pick.f,
        p: pick.p,
        objective: pick.objective,
        revenue: outcome.revenue,
        welfare: outcome.welfare,
        congestion: outcome.congestion,
        evaluations: s.probes.len(),
        refinement_depth: depth,
        multimodal: near.len() > 1,
        heuristic: true,
        basins,
        probes: s.probes,
    })
}

fn pattern_search(s: &mut Search<'_>, f0: f64, p0: f64, step0: f64, cfg: &SearchConfig) -> Result<(Probe, usize)> {
    let mut cur = Probe {
        f: f0,
        p: p0,
        objective: s.eval(f0, p0)?,
    };
    let mut step = step0;
    let mut depth = 0;
    while step >= cfg.step_tol {
        let mut best = cur;
        for (uf, up) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
            let f = (cur.f + uf * step).clamp(0.0, cfg.f_max);
            let p = (cur.p + up * step).clamp(0.0, cfg.p_max);
            if (f, p) == (cur.f, cur.p) {
                continue;
            }
            let cand = Probe {
                f,
                p,
                objective: s.eval(f, p)?,
            };
            if cand.objective > best.objective {
                best = cand;
            }
        }
        if best.objective > cur.objective {
            cur = best;
        } else {
            step *= 0.5;
            depth += 1;
        }
    }
    Ok((cur, depth))
}

/// One point of a cap sweep: both optima at cap `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapSweepRow {
    pub cap: Cap,
    pub revenue_opt: FeeOptimum,
    /// Welfare at the revenue-optimal fees.
    pub welfare_at_revenue_opt: f64,
    pub welfare_opt: FeeOptimum,
}

impl CapSweepRow {
    /// Observations reported as warnings: welfare-optimal fees not above
    /// revenue-optimal ones.
    pub fn soft_violations(&self, slack: f64) -> Vec<String> {
        let mut out = Vec::new();
        if self.welfare_opt.f > self.revenue_opt.f + slack {
            out.push(format!(
                "g={}: welfare-optimal lump-sum {} exceeds revenue-optimal {}",
                self.cap, self.welfare_opt.f, self.revenue_opt.f
            ));
        }
        if self.welfare_opt.p > self.revenue_opt.p + slack {
            out.push(format!(
                "g={}: welfare-optimal per-unit fee {} exceeds revenue-optimal {}",
                self.cap, self.welfare_opt.p, self.revenue_opt.p
            ));
        }
        out
    }
}

/// The default sweep grid: 21 caps evenly spaced on `[0, 1]`, then unlimited.
pub fn default_cap_grid() -> Vec<Cap> {
    let mut g: Vec<Cap> = (0..=20).map(|i| Cap::Limited(i as f64 / 20.0)).collect();
    g.push(Cap::Unlimited);
    g
}

fn sweep_row(cap: Cap, template: &MonopolyTemplate, search: &SearchConfig, solver: &SolverConfig, seeds: &[(Objective, (f64, f64))]) -> Result<CapSweepRow> {
    let starts = |kind: Objective| -> Vec<(f64, f64)> { seeds.iter().filter(|(k, _)| *k == kind).map(|(_, s)| *s).collect() };
    let revenue_opt = optimize_fees(cap, template, Objective::Revenue, search, solver, &starts(Objective::Revenue))?;
    let welfare_opt = optimize_fees(cap, template, Objective::Welfare, search, solver, &starts(Objective::Welfare))?;
    Ok(CapSweepRow {
        cap,
        welfare_at_revenue_opt: revenue_opt.welfare,
        revenue_opt,
        welfare_opt,
    })
}

/// Optimizes both objectives at every cap. Rows come back in grid order;
/// a failing row does not stop the others.
///
/// With a zero per-unit fee the cap never matters, so the flat-rate optima
/// are added as refinement starts at every finite cap.
pub fn sweep_cap(grid: &[Cap], template: &MonopolyTemplate, search: &SearchConfig, solver: &SolverConfig) -> Vec<Result<CapSweepRow>> {
    let flat = optimize_fees(Cap::Unlimited, template, Objective::Revenue, search, solver, &[]).and_then(|r| {
        let w = optimize_fees(Cap::Unlimited, template, Objective::Welfare, search, solver, &[])?;
        Ok((r, w))
    });
    let seeds: Vec<(Objective, (f64, f64))> = match &flat {
        Ok((r, w)) => vec![(Objective::Revenue, (r.f, 0.0)), (Objective::Welfare, (w.f, 0.0))],
        Err(_) => Vec::new(),
    };
    grid.par_iter()
        .map(|&cap| match (cap, &flat) {
            (Cap::Unlimited, Ok((r, w))) => Ok(CapSweepRow {
                cap,
                welfare_at_revenue_opt: r.welfare,
                revenue_opt: r.clone(),
                welfare_opt: w.clone(),
            }),
            (Cap::Unlimited, Err(e)) => Err(e.clone()),
            _ => sweep_row(cap, template, search, solver, &seeds),
        })
        .collect()
}

/// Best pay-as-you-go price (`g = f = 0`) by a one-dimensional search over `p`.
pub fn optimize_per_unit(template: &MonopolyTemplate, kind: Objective, search: &SearchConfig, solver: &SolverConfig) -> Result<Probe> {
    search.validate()?;
    let mut s = Search {
        template,
        solver,
        cap: Cap::Limited(0.0),
        kind,
        cache: HashMap::new(),
        probes: Vec::new(),
    };
    let n = search.grid_p;
    let dp = search.p_max / (n - 1) as f64;
    let mut best = Probe {
        f: 0.0,
        p: 0.0,
        objective: f64::NEG_INFINITY,
    };
    for j in 0..n {
        let p = j as f64 * dp;
        let v = s.eval(0.0, p)?;
        if v > best.objective {
            best = Probe { f: 0.0, p, objective: v };
        }
    }
    // Golden-section refinement on the bracketing cells.
    let (mut a, mut b) = ((best.p - dp).max(0.0), (best.p + dp).min(search.p_max));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > search.step_tol {
        let x1 = b - ratio * (b - a);
        let x2 = a + ratio * (b - a);
        if s.eval(0.0, x1)? >= s.eval(0.0, x2)? {
            b = x2;
        } else {
            a = x1;
        }
    }
    for probe in &s.probes {
        if probe.objective > best.objective {
            best = *probe;
        }
    }
    if !best.objective.is_finite() {
        return Err(Error::Invariant("per-unit search evaluated nothing".into()));
    }
    Ok(best)
}
