//! Brute-force reference: a deterministic grid of discrete agents at cell
//! midpoints, weighted by the exact measure of their cell. Every integral
//! becomes a finite sum and every user is routed by [`best_provider`]'s rule.
//!
//! [`best_provider`]: crate::market::best_provider

use rayon::prelude::*;

use crate::equilibrium::{bisect_monopoly, EquilibriumResult, SolverConfig};
use crate::error::{domain, Result};
use crate::market::{best_choice_raw, check_congestion_vector, Choice, MarketScenario, Metrics, Population, ProviderConfig};
use crate::model::{charge_raw, usage_raw, Congestion, Tariff, UserDistribution};

/// Agents on an `n_u x n_v` tensor grid. Weights factor into a demand part
/// and a value part, so only the marginals are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGrid {
    u_nodes: Vec<f64>,
    u_weights: Vec<f64>,
    v_nodes: Vec<f64>,
    v_weights: Vec<f64>,
}

fn marginal(n: usize, scale: f64, cdf: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
    let edge = |i: usize| if i == n { 1.0 } else { i as f64 / n as f64 };
    (0..n)
        .map(|i| {
            let (a, b) = (edge(i), edge(i + 1));
            (scale * 0.5 * (a + b), cdf(b) - cdf(a))
        })
        .unzip()
}

impl AgentGrid {
    pub fn new(dist: &UserDistribution, n_u: usize, n_v: usize) -> Result<Self> {
        Self::scaled(dist, n_u, n_v, &Population::unit())
    }

    /// Grid over `[0, U] x [0, V]` with total weight `mass`.
    pub fn scaled(dist: &UserDistribution, n_u: usize, n_v: usize, population: &Population) -> Result<Self> {
        if n_u == 0 || n_v == 0 {
            return Err(domain("grid resolution", n_u.min(n_v) as f64, "must be >= 1"));
        }
        let (u_nodes, mut u_weights) = marginal(n_u, population.demand_max, |x| dist.cdf_demand(x));
        let (v_nodes, v_weights) = marginal(n_v, population.value_max, |x| dist.cdf_value(x));
        for w in &mut u_weights {
            *w *= population.mass;
        }
        Ok(Self {
            u_nodes,
            u_weights,
            v_nodes,
            v_weights,
        })
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.u_nodes.len(), self.v_nodes.len())
    }

    /// All agents as `(u, v, weight)`, demand-major.
    pub fn agents(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.u_nodes.iter().zip(&self.u_weights).flat_map(move |(&u, &wu)| {
            self.v_nodes
                .iter()
                .zip(&self.v_weights)
                .map(move |(&v, &wv)| (u, v, wu * wv))
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.u_weights.iter().sum::<f64>() * self.v_weights.iter().sum::<f64>()
    }
}

/// Share, load, revenue and welfare of every provider as grid sums.
pub fn oracle_metrics(grid: &AgentGrid, scenario: &MarketScenario, q: &[f64]) -> Result<Vec<Metrics>> {
    check_congestion_vector(q, scenario.providers().len())?;
    let offers: Vec<(Tariff, f64)> = scenario.providers().iter().map(|p| p.tariff()).zip(q.iter().copied()).collect();
    Ok(sum_metrics(grid, &offers, scenario.free_congestion()))
}

fn sum_metrics(grid: &AgentGrid, offers: &[(Tariff, f64)], free: Congestion) -> Vec<Metrics> {
    let n = offers.len();
    let columns: Vec<Vec<Metrics>> = grid
        .u_nodes
        .par_iter()
        .zip(&grid.u_weights)
        .map(|(&u, &wu)| {
            let mut col = vec![Metrics::default(); n];
            let rhos: Vec<f64> = offers.iter().map(|&(_, qi)| u * (-qi).exp()).collect();
            for (&v, &wv) in grid.v_nodes.iter().zip(&grid.v_weights) {
                if let Choice::Provider(i) = best_choice_raw(u, v, offers.iter().copied(), free) {
                    let t = &offers[i].0;
                    let y = usage_raw(rhos[i], v, t);
                    let m = &mut col[i];
                    m.share += wv;
                    m.load += wv * y;
                    m.revenue += wv * charge_raw(y, t);
                    m.welfare += wv * v * y;
                }
            }
            for m in &mut col {
                m.share *= wu;
                m.load *= wu;
                m.revenue *= wu;
                m.welfare *= wu;
            }
            col
        })
        .collect();
    let mut out = vec![Metrics::default(); n];
    for col in columns {
        for (o, c) in out.iter_mut().zip(col) {
            o.share += c.share;
            o.load += c.load;
            o.revenue += c.revenue;
            o.welfare += c.welfare;
        }
    }
    out
}

/// Monopoly equilibrium of the discrete market, by the same bisection as the
/// continuous solver. The grid load is a step function of `q`, so
/// convergence here means the bracket collapsed to the solver's width.
pub fn oracle_equilibrium(grid: &AgentGrid, provider: &ProviderConfig, q0: Congestion, cfg: &SolverConfig) -> Result<EquilibriumResult> {
    let tariff = provider.tariff();
    let load_at = |q: f64| -> Result<f64> { Ok(sum_metrics(grid, &[(tariff, q)], q0)[0].load) };
    let (mut r, bracket) = bisect_monopoly(load_at, provider.capacity(), q0, cfg)?;
    r.converged = r.converged || bracket <= cfg.bracket_width;
    Ok(r)
}
