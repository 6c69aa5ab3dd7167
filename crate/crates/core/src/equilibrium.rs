//! Congestion equilibria `q = Q(D(q), c)` with capacity-sharing `Q = d / c`.
//!
//! The monopoly map `q - D(q)/c` is non-decreasing, so bisection finds its
//! unique root. Several providers are handled by damped fixed-point
//! iteration from zero congestion, which selects one equilibrium when more
//! than one exists.

use crate::error::Result;
use crate::market::{integrate_market, MarketScenario, MetricSet, Population, PricingSchedule, ProviderConfig, Seller};
use crate::model::{check_capacity, Congestion, UserDistribution};
use crate::quadrature::QuadConfig;

/// How aggregate load maps to congestion inside the solvers.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CongestionModel {
    #[default]
    CapacitySharing,
    /// Deliberately wrong `Q = d`, used to check that verification notices.
    IgnoresCapacity,
}

impl CongestionModel {
    fn apply(self, load: f64, capacity: f64) -> f64 {
        match self {
            CongestionModel::CapacitySharing => load / capacity,
            CongestionModel::IgnoresCapacity => load,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Target for the fixed-point residual `|q - Q(D(q))|`.
    pub tolerance: f64,
    /// Bisection stops once the bracket is this narrow and the residual is met.
    pub bracket_width: f64,
    /// Iteration cap for the damped oligopoly iteration.
    pub max_iters: usize,
    pub damping: f64,
    /// Oligopoly iterations without a new best residual before giving up.
    pub stall_limit: usize,
    pub quadrature: QuadConfig,
    #[doc(hidden)]
    pub congestion_model: CongestionModel,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            bracket_width: 1e-10,
            max_iters: 10_000,
            damping: 0.5,
            stall_limit: 50,
            quadrature: QuadConfig::default(),
            congestion_model: CongestionModel::CapacitySharing,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(crate::error::domain("solver tolerance", self.tolerance, "must be > 0"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(crate::error::domain("damping", self.damping, "must lie in (0, 1]"));
        }
        if self.max_iters == 0 {
            return Err(crate::error::domain("max_iters", 0.0, "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub q: Vec<f64>,
    pub d: Vec<f64>,
    /// `max_i |q_i - Q(d_i, c_i)|` at the returned point.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl EquilibriumResult {
    pub fn congestion(&self) -> f64 {
        self.q[0]
    }

    pub fn load(&self) -> f64 {
        self.d[0]
    }
}

/// Unique equilibrium of a single provider facing the free option.
pub fn solve_monopoly(provider: &ProviderConfig, q0: Congestion, dist: &UserDistribution, cfg: &SolverConfig) -> Result<EquilibriumResult> {
    let tariff = provider.tariff();
    solve_schedule(&tariff, provider.capacity(), q0, dist, &Population::unit(), cfg)
}

/// Monopoly equilibrium for any (possibly demand-dependent) pricing schedule
/// and population scale.
pub fn solve_schedule(
    schedule: &dyn PricingSchedule,
    capacity: f64,
    q0: Congestion,
    dist: &UserDistribution,
    population: &Population,
    cfg: &SolverConfig,
) -> Result<EquilibriumResult> {
    let load_at = |q: f64| -> Result<f64> {
        let sellers = [Seller {
            pricing: schedule,
            congestion: q,
        }];
        let m = integrate_market(&sellers, q0, dist, population, MetricSet::Load, &cfg.quadrature)?;
        Ok(m.providers[0].load)
    };
    Ok(bisect_monopoly(load_at, capacity, q0, cfg)?.0)
}

/// Bisection on `q - Q(D(q))` over `[0, min(q0, Q(D(0)))]`. Also returns the
/// final bracket width.
pub(crate) fn bisect_monopoly<F>(mut load_at: F, capacity: f64, q0: Congestion, cfg: &SolverConfig) -> Result<(EquilibriumResult, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    check_capacity(capacity)?;
    cfg.validate()?;
    let map = |d: f64| cfg.congestion_model.apply(d, capacity);

    let d0 = load_at(0.0)?;
    let mut evaluations = 1;
    if d0 <= 0.0 {
        let r = EquilibriumResult {
            q: vec![0.0],
            d: vec![0.0],
            residual: 0.0,
            iterations: evaluations,
            converged: true,
        };
        return Ok((r, 0.0));
    }

    let mut best = (0.0, d0, map(d0));
    let consider = |q: f64, d: f64, best: &mut (f64, f64, f64)| {
        let r = (q - map(d)).abs();
        if r < best.2 || (r == best.2 && q < best.0) {
            *best = (q, d, r);
        }
        q - map(d)
    };

    let mut hi = map(d0);
    let mut capped_at_free = false;
    if let Congestion::Finite(q0) = q0 {
        if q0 < hi {
            hi = q0;
            capped_at_free = true;
        }
    }
    if capped_at_free {
        let d_hi = load_at(hi)?;
        evaluations += 1;
        if consider(hi, d_hi, &mut best) < 0.0 {
            // Only possible with a zero lump-sum fee: users tie with the free
            // option at q0, and the load jumps to zero just above it.
            let r = EquilibriumResult {
                q: vec![hi],
                d: vec![d_hi],
                residual: (hi - map(d_hi)).abs(),
                iterations: evaluations,
                converged: false,
            };
            return Ok((r, f64::INFINITY));
        }
    }

    let mut lo = 0.0;
    loop {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        let d = load_at(mid)?;
        evaluations += 1;
        let phi = consider(mid, d, &mut best);
        if phi < 0.0 {
            lo = mid;
        } else if phi > 0.0 {
            hi = mid;
        } else {
            break;
        }
        if hi - lo <= cfg.bracket_width && best.2 <= cfg.tolerance {
            break;
        }
        if evaluations >= cfg.max_iters {
            break;
        }
    }

    let (q, d, residual) = best;
    let r = EquilibriumResult {
        q: vec![q],
        d: vec![d],
        residual,
        iterations: evaluations,
        converged: residual <= cfg.tolerance,
    };
    Ok((r, hi - lo))
}

/// Damped iteration `q <- (1 - lambda) q + lambda Q(D(q))` from `q = 0`.
/// Returns the best iterate; `converged` is false if the residual target
/// was not reached.
pub fn solve_oligopoly(scenario: &MarketScenario, cfg: &SolverConfig) -> Result<EquilibriumResult> {
    cfg.validate()?;
    let providers = scenario.providers();
    let n = providers.len();
    let loads = |q: &[f64]| -> Result<Vec<f64>> {
        let sellers: Vec<Seller<'_>> = providers
            .iter()
            .zip(q)
            .map(|(p, &qi)| Seller {
                pricing: p.tariff_ref(),
                congestion: qi,
            })
            .collect();
        let m = integrate_market(&sellers, scenario.free_congestion(), &scenario.distribution(), &Population::unit(), MetricSet::Load, &cfg.quadrature)?;
        Ok(m.providers.iter().map(|p| p.load).collect())
    };

    let mut q = vec![0.0; n];
    let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    let mut stall = 0;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let d = loads(&q)?;
        iterations += 1;
        let target: Vec<f64> = d
            .iter()
            .zip(providers)
            .map(|(&di, p)| cfg.congestion_model.apply(di, p.capacity()))
            .collect();
        let residual = q
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let improved = best.as_ref().is_none_or(|b| residual < b.2);
        if improved {
            best = Some((q.clone(), d, residual));
            stall = 0;
        } else {
            stall += 1;
        }
        if residual <= cfg.tolerance || stall >= cfg.stall_limit {
            break;
        }
        for (qi, ti) in q.iter_mut().zip(&target) {
            *qi = (1.0 - cfg.damping) * *qi + cfg.damping * ti;
        }
    }
    let (q, d, residual) = best.expect("at least one iteration runs");
    Ok(EquilibriumResult {
        q,
        d,
        residual,
        iterations,
        converged: residual <= cfg.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Cap, Tariff};
    use approx::assert_abs_diff_eq;

    fn fig1_provider() -> ProviderConfig {
        ProviderConfig::new(Tariff::new(Cap::Limited(0.4), 0.1, 0.6).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn figure_one_equilibrium() {
        let r = solve_monopoly(&fig1_provider(), Congestion::Finite(1.5), &UserDistribution::uniform(), &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert_abs_diff_eq!(r.congestion(), 0.3387, epsilon = 1e-3);
        assert_abs_diff_eq!(r.load(), 0.1693, epsilon = 1e-3);
        assert!(r.residual <= 1e-9);
        assert_abs_diff_eq!(r.load() / 0.5, r.congestion(), epsilon = 1e-9);
    }

    #[test]
    fn lump_sum_above_one_gives_empty_market() {
        let p = ProviderConfig::new(Tariff::new(Cap::Limited(0.4), 1.1, 0.6).unwrap(), 0.5).unwrap();
        let r = solve_monopoly(&p, Congestion::Finite(1.5), &UserDistribution::uniform(), &SolverConfig::default()).unwrap();
        assert_eq!((r.congestion(), r.load()), (0.0, 0.0));
        assert!(r.converged);
    }

    #[test]
    fn infinite_free_congestion() {
        let p = ProviderConfig::new(Tariff::flat_rate(0.2).unwrap(), 0.3).unwrap();
        let r = solve_monopoly(&p, Congestion::Infinite, &UserDistribution::uniform(), &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.congestion() > 0.0);
    }

    #[test]
    fn zero_fee_tie_at_free_congestion_is_flagged() {
        // Everyone below the cap ties with the free option at q0; with a
        // large capacity the induced congestion cannot reach q0 from below.
        let p = ProviderConfig::new(Tariff::new(Cap::Limited(1.0), 0.0, 0.0).unwrap(), 0.01).unwrap();
        let r = solve_monopoly(&p, Congestion::Finite(0.05), &UserDistribution::uniform(), &SolverConfig::default()).unwrap();
        assert!(!r.converged);
        assert_eq!(r.congestion(), 0.05);
    }

    #[test]
    fn oligopoly_single_provider_matches_monopoly() {
        let s = MarketScenario::monopoly(fig1_provider(), Congestion::Finite(1.5), UserDistribution::uniform());
        let cfg = SolverConfig::default();
        let a = solve_oligopoly(&s, &cfg).unwrap();
        let b = solve_monopoly(&fig1_provider(), Congestion::Finite(1.5), &UserDistribution::uniform(), &cfg).unwrap();
        assert!(a.converged);
        assert_abs_diff_eq!(a.q[0], b.q[0], epsilon = 2e-9);
    }

    #[test]
    fn symmetric_duopoly_is_symmetric() {
        let p = fig1_provider();
        let s = MarketScenario::new(vec![p, p], Congestion::Finite(1.5), UserDistribution::uniform()).unwrap();
        let r = solve_oligopoly(&s, &SolverConfig::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert_abs_diff_eq!(r.q[0], r.q[1], epsilon = 1e-9);
    }

    #[test]
    fn competitor_lowers_congestion() {
        let other = ProviderConfig::new(Tariff::flat_rate(0.15).unwrap(), 0.4).unwrap();
        let s = MarketScenario::new(vec![fig1_provider(), other], Congestion::Finite(1.5), UserDistribution::uniform()).unwrap();
        let r = solve_oligopoly(&s, &SolverConfig::default()).unwrap();
        assert!(r.converged, "{r:?}");
        let mono = solve_monopoly(&fig1_provider(), Congestion::Finite(1.5), &UserDistribution::uniform(), &SolverConfig::default()).unwrap();
        assert!(r.q[0] <= mono.q[0] + 1e-9);
    }

    #[test]
    fn ignoring_capacity_changes_the_answer() {
        let cfg = SolverConfig {
            congestion_model: CongestionModel::IgnoresCapacity,
            ..SolverConfig::default()
        };
        let r = solve_monopoly(&fig1_provider(), Congestion::Finite(1.5), &UserDistribution::uniform(), &cfg).unwrap();
        assert!((r.congestion() - r.load() / 0.5).abs() > 1e-3);
    }
}
