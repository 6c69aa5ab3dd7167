//! Demand-based tariffs and their pay-as-you-go equivalents.
//!
//! A demand-based tariff charges users according to their desirable demand
//! `u`. For every `u` there is a pure per-unit price that collects the same
//! revenue from those users at the same congestion without raising their
//! load; applying it band by band yields a pay-as-you-go schedule that
//! dominates the original.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::equilibrium::{solve_schedule, EquilibriumResult, SolverConfig};
use crate::error::{Error, Result};
use crate::market::{integrate_market, metrics_at_demand, Metrics, MetricSet, Population, PricingSchedule, Seller};
use crate::model::{achievable_raw, check_capacity, Cap, Congestion, Tariff, UserDistribution};
use crate::quadrature::QuadConfig;

/// Piecewise-constant tariff over demand bands `[edges[k], edges[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandBasedTariff {
    edges: Vec<f64>,
    tariffs: Vec<Tariff>,
}

impl DemandBasedTariff {
    pub fn new(edges: Vec<f64>, tariffs: Vec<Tariff>) -> Result<Self> {
        if edges.len() != tariffs.len() + 1 || tariffs.is_empty() {
            return Err(Error::Bands(format!("{} edges for {} tariffs", edges.len(), tariffs.len())));
        }
        if edges[0] != 0.0 || *edges.last().expect("non-empty") != 1.0 {
            return Err(Error::Bands("edges must start at 0 and end at 1".into()));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Bands("edges must be strictly increasing".into()));
        }
        Ok(Self { edges, tariffs })
    }

    /// A fixed tariff as a single band.
    pub fn single(tariff: Tariff) -> Self {
        Self {
            edges: vec![0.0, 1.0],
            tariffs: vec![tariff],
        }
    }

    /// `bands` equal-width bands, all carrying `tariff`.
    pub fn uniform(tariff: Tariff, bands: usize) -> Result<Self> {
        Self::equal_bands(vec![tariff; bands])
    }

    /// Equal-width bands with the given tariffs, lowest demand first.
    pub fn equal_bands(tariffs: Vec<Tariff>) -> Result<Self> {
        let n = tariffs.len();
        if n == 0 {
            return Err(Error::Bands("no bands".into()));
        }
        let mut edges: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        edges[n] = 1.0;
        Self::new(edges, tariffs)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn tariffs(&self) -> &[Tariff] {
        &self.tariffs
    }

    pub fn bands(&self) -> usize {
        self.tariffs.len()
    }

    fn band_of(&self, demand: f64) -> usize {
        let k = self.edges.partition_point(|&e| e <= demand);
        k.saturating_sub(1).min(self.tariffs.len() - 1)
    }
}

impl PricingSchedule for DemandBasedTariff {
    fn tariff_at(&self, demand: f64) -> Tariff {
        self.tariffs[self.band_of(demand)]
    }

    fn kink_demands(&self, q: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self.edges[1..self.edges.len() - 1].to_vec();
        for (k, t) in self.tariffs.iter().enumerate() {
            for u in t.kink_demands(q) {
                if u > self.edges[k] && u < self.edges[k + 1] {
                    out.push(u);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquivalenceCase {
    /// Closed form: every participating user pays the same under both.
    Direct,
    /// Root of the revenue-matching condition.
    RevenueMatched,
}

impl EquivalenceCase {
    pub fn label(self) -> &'static str {
        match self {
            EquivalenceCase::Direct => "case-1",
            EquivalenceCase::RevenueMatched => "case-2",
        }
    }
}

fn classify(rho_i: f64, rho_0: f64, tariff: &Tariff, q_i: f64, q0: Congestion) -> EquivalenceCase {
    let g = tariff.cap().as_f64();
    let (f, p) = (tariff.lump_sum(), tariff.per_unit());
    if rho_i <= g || g * p - f <= rho_0 * p || q_i >= q0.as_f64() {
        EquivalenceCase::Direct
    } else {
        EquivalenceCase::RevenueMatched
    }
}

/// Per-unit price that matches `tariff`'s revenue from users of demand `u`
/// at provider congestion `q_i`.
pub fn payg_equivalent_price(demand: f64, tariff: &Tariff, q_i: f64, q0: Congestion, dist: &UserDistribution) -> Result<(f64, EquivalenceCase)> {
    let rho_i = achievable_raw(demand, Congestion::Finite(q_i));
    if !(rho_i > 0.0) {
        return Err(crate::error::domain("achievable demand", rho_i, "must be > 0"));
    }
    let rho_0 = achievable_raw(demand, q0);
    match classify(rho_i, rho_0, tariff, q_i, q0) {
        EquivalenceCase::Direct => {
            let g = tariff.cap().as_f64();
            let over = (rho_i - g).max(0.0);
            Ok(((tariff.lump_sum() + over * tariff.per_unit()) / rho_i, EquivalenceCase::Direct))
        }
        EquivalenceCase::RevenueMatched => {
            let beta = dist.beta();
            let target = metrics_at_demand(demand, &[(*tariff, q_i)], q0, beta)[0].revenue;
            let m = rho_i / (rho_i - rho_0);
            let x = revenue_matching_root(target / (rho_i - rho_0), beta)?;
            Ok((x / m, EquivalenceCase::RevenueMatched))
        }
    }
}

/// Solves `x (1 - x^beta) = level` on the decreasing branch
/// `[(1/(beta+1))^(1/beta), 1]`.
fn revenue_matching_root(level: f64, beta: f64) -> Result<f64> {
    let y = |x: f64| x * (1.0 - x.powf(beta));
    let mut lo = (1.0 / (beta + 1.0)).powf(1.0 / beta);
    let mut hi = 1.0;
    if level > y(lo) || level < 0.0 {
        return Err(Error::Invariant(format!(
            "revenue-matching level {level} outside [0, {}] for beta {beta}",
            y(lo)
        )));
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        if y(mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if (y(lo) - level).abs() <= (y(hi) - level).abs() { lo } else { hi })
}

/// Comparison of a tariff and its pay-as-you-go equivalent on the users of
/// one demand level, at a fixed congestion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    pub demand: f64,
    pub tariff: Tariff,
    pub price: f64,
    pub case: EquivalenceCase,
    pub revenue_original: f64,
    pub revenue_payg: f64,
    pub load_original: f64,
    pub load_payg: f64,
}

pub fn equivalence_report(demand: f64, tariff: &Tariff, q_i: f64, q0: Congestion, dist: &UserDistribution) -> Result<EquivalenceReport> {
    let (price, case) = payg_equivalent_price(demand, tariff, q_i, q0, dist)?;
    let payg = Tariff::pay_as_you_go(price)?;
    let original = metrics_at_demand(demand, &[(*tariff, q_i)], q0, dist.beta())[0];
    let equivalent = metrics_at_demand(demand, &[(payg, q_i)], q0, dist.beta())[0];
    Ok(EquivalenceReport {
        demand,
        tariff: *tariff,
        price,
        case,
        revenue_original: original.revenue,
        revenue_payg: equivalent.revenue,
        load_original: original.load,
        load_payg: equivalent.load,
    })
}

/// Equilibrium of a demand-based tariff; bands only add breakpoints.
pub fn solve_demand_based_equilibrium(
    tariff: &DemandBasedTariff,
    capacity: f64,
    q0: Congestion,
    dist: &UserDistribution,
    cfg: &SolverConfig,
) -> Result<EquilibriumResult> {
    solve_schedule(tariff, capacity, q0, dist, &Population::unit(), cfg)
}

/// All metrics of a single schedule at congestion `q`.
pub fn schedule_metrics(schedule: &dyn PricingSchedule, q: f64, q0: Congestion, dist: &UserDistribution, quad: &QuadConfig) -> Result<Metrics> {
    let sellers = [Seller {
        pricing: schedule,
        congestion: q,
    }];
    Ok(integrate_market(&sellers, q0, dist, &Population::unit(), MetricSet::All, quad)?.providers[0])
}

/// The per-demand pay-as-you-go prices of `original`, fixed at the
/// congestion `q` the original tariff induces.
pub struct PaygEquivalentSchedule<'a> {
    original: &'a DemandBasedTariff,
    congestion: f64,
    free_congestion: Congestion,
    distribution: UserDistribution,
    failures: AtomicUsize,
}

impl<'a> PaygEquivalentSchedule<'a> {
    pub fn new(original: &'a DemandBasedTariff, congestion: f64, free_congestion: Congestion, distribution: UserDistribution) -> Self {
        Self {
            original,
            congestion,
            free_congestion,
            distribution,
            failures: AtomicUsize::new(0),
        }
    }

    /// Demands at which the price construction failed and fell back to the
    /// revenue-maximizing price.
    pub fn failures(&self) -> usize {
        self.failures.load(Ordering::Relaxed)
    }
}

impl PricingSchedule for PaygEquivalentSchedule<'_> {
    fn tariff_at(&self, demand: f64) -> Tariff {
        let t = self.original.tariff_at(demand);
        if demand <= 0.0 {
            return Tariff::pay_as_you_go(0.0).expect("zero price is valid");
        }
        let price = match payg_equivalent_price(demand, &t, self.congestion, self.free_congestion, &self.distribution) {
            Ok((p, _)) => p,
            Err(_) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                let rho_i = achievable_raw(demand, Congestion::Finite(self.congestion));
                let rho_0 = achievable_raw(demand, self.free_congestion);
                let beta = self.distribution.beta();
                (1.0 / (beta + 1.0)).powf(1.0 / beta) * (rho_i - rho_0) / rho_i
            }
        };
        Tariff::pay_as_you_go(price.max(0.0)).expect("finite non-negative price")
    }

    fn kink_demands(&self, _q: f64) -> Vec<f64> {
        let mut out = self.original.kink_demands(self.congestion);
        let e0 = (-self.free_congestion.as_f64()).exp();
        for (k, t) in self.original.tariffs().iter().enumerate() {
            if let Cap::Limited(g) = t.cap() {
                let p = t.per_unit();
                if p > 0.0 && e0 > 0.0 {
                    // Where the case split flips: g p - f = rho(u, q0) p.
                    let u = (g * p - t.lump_sum()) / (p * e0);
                    if u > self.original.edges()[k] && u < self.original.edges()[k + 1] {
                        out.push(u);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub q_original: f64,
    pub q_payg: f64,
    pub revenue_original: f64,
    pub revenue_payg: f64,
    pub load_original: f64,
    pub load_payg: f64,
    pub converged: bool,
    pub construction_failures: usize,
}

impl DominanceReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.q_payg <= self.q_original + tol && self.revenue_payg >= self.revenue_original - tol
    }
}

/// Builds the pay-as-you-go equivalent at the original equilibrium, solves
/// its own equilibrium and compares revenue and congestion.
pub fn verify_payg_dominance(
    tariff: &DemandBasedTariff,
    capacity: f64,
    q0: Congestion,
    dist: &UserDistribution,
    cfg: &SolverConfig,
) -> Result<DominanceReport> {
    check_capacity(capacity)?;
    let original = solve_demand_based_equilibrium(tariff, capacity, q0, dist, cfg)?;
    let q_original = original.q[0];
    let base = schedule_metrics(tariff, q_original, q0, dist, &cfg.quadrature)?;
    if q_original <= 0.0 || base.share <= 0.0 {
        return Ok(DominanceReport {
            q_original,
            q_payg: q_original,
            revenue_original: base.revenue,
            revenue_payg: base.revenue,
            load_original: base.load,
            load_payg: base.load,
            converged: original.converged,
            construction_failures: 0,
        });
    }
    let payg = PaygEquivalentSchedule::new(tariff, q_original, q0, *dist);
    let new = solve_schedule(&payg, capacity, q0, dist, &Population::unit(), cfg)?;
    let after = schedule_metrics(&payg, new.q[0], q0, dist, &cfg.quadrature)?;
    Ok(DominanceReport {
        q_original,
        q_payg: new.q[0],
        revenue_original: base.revenue,
        revenue_payg: after.revenue,
        load_original: base.load,
        load_payg: after.load,
        converged: original.converged && new.converged,
        construction_failures: payg.failures(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceProbeReport {
    pub price: f64,
    pub base_revenue: f64,
    /// Largest revenue change over all single-band perturbations.
    pub max_gain: f64,
    /// Band and signed perturbation achieving `max_gain`.
    pub best_band: usize,
    pub best_shift: f64,
}

/// Perturbs a constant pay-as-you-go price band by band by `+-eps` and
/// reports the best revenue gain. At the optimal constant price no band
/// perturbation should pay off.
pub fn check_constant_price_optimality(
    price: f64,
    capacity: f64,
    q0: Congestion,
    dist: &UserDistribution,
    bands: usize,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<PriceProbeReport> {
    if !(eps >= 0.0) {
        return Err(crate::error::domain("perturbation size", eps, "must be >= 0"));
    }
    let revenue_of = |prices: Vec<f64>| -> Result<f64> {
        let tariffs = prices.into_iter().map(Tariff::pay_as_you_go).collect::<Result<Vec<_>>>()?;
        let schedule = DemandBasedTariff::equal_bands(tariffs)?;
        let eq = solve_demand_based_equilibrium(&schedule, capacity, q0, dist, cfg)?;
        Ok(schedule_metrics(&schedule, eq.q[0], q0, dist, &cfg.quadrature)?.revenue)
    };
    let base_revenue = revenue_of(vec![price; bands])?;
    let trials: Vec<(usize, f64)> = (0..bands).flat_map(|b| [(b, -eps), (b, eps)]).collect();
    let gains = trials
        .par_iter()
        .map(|&(b, shift)| {
            let mut prices = vec![price; bands];
            prices[b] = (price + shift).max(0.0);
            Ok((revenue_of(prices)? - base_revenue, b, shift))
        })
        .collect::<Result<Vec<_>>>()?;
    let (max_gain, best_band, best_shift) = gains
        .into_iter()
        .fold((f64::NEG_INFINITY, 0, 0.0), |acc, x| if x.0 > acc.0 { x } else { acc });
    Ok(PriceProbeReport {
        price,
        base_revenue,
        max_gain,
        best_band,
        best_shift,
    })
}
