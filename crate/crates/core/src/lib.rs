//! Two-part tariffs with data caps: user choice, congestion equilibria and
//! revenue- or welfare-optimal fees.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod appendix;
pub mod checks;
pub mod equilibrium;
pub mod error;
pub mod market;
pub mod model;
pub mod optimize;
pub mod oracle;
pub mod quadrature;

pub use appendix::{
    check_constant_price_optimality, equivalence_report, payg_equivalent_price, schedule_metrics, solve_demand_based_equilibrium,
    verify_payg_dominance, DemandBasedTariff, DominanceReport, EquivalenceCase, EquivalenceReport, PaygEquivalentSchedule,
    PriceProbeReport,
};
pub use equilibrium::{solve_monopoly, solve_oligopoly, solve_schedule, EquilibriumResult, SolverConfig};
pub use error::{Error, Result};
pub use market::{
    best_provider, data_load, market_metrics, revenue, share_slice, welfare, Choice, Estimate, MarketMetrics,
    MarketScenario, Metrics, Population, PricingSchedule, ProviderConfig, ShareSlice, VInterval,
};
pub use model::{
    achievable_demand, charge, congestion, inverse_congestion, optimal_usage, optimal_utility, Cap, Congestion, Tariff,
    UserDistribution, UserType,
};
pub use optimize::{
    default_cap_grid, evaluate, optimize_fees, optimize_per_unit, sweep_cap, CapSweepRow, FeeOptimum, MonopolyTemplate, Objective,
    Outcome, Probe, SearchConfig,
};
pub use oracle::{oracle_equilibrium, oracle_metrics, AgentGrid};
pub use quadrature::{integrate, QuadConfig, QuadResult};
