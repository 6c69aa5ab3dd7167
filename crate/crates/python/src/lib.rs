//! Python bindings: tariffs, markets, equilibria, fee optimization and the
//! agent-grid oracle.
//!
//!     import pydatacap as dc
//!     t = dc.Tariff(cap=0.4, lump_sum=0.1, per_unit=0.6)
//!     m = dc.Market([dc.Provider(t, capacity=0.5)], free_congestion=1.5)
//!     m.equilibrium().q   # [0.3387...]

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use datacap::{Cap, Congestion, Objective, SolverConfig};

fn to_py(e: datacap::Error) -> PyErr {
    match e {
        datacap::Error::Domain { .. } | datacap::Error::Bands(_) | datacap::Error::NoProviders | datacap::Error::CongestionArity { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn cap_of(cap: Option<f64>) -> Cap {
    cap.map_or(Cap::Unlimited, Cap::Limited)
}

fn objective_of(name: &str) -> PyResult<Objective> {
    match name {
        "revenue" => Ok(Objective::Revenue),
        "welfare" => Ok(Objective::Welfare),
        _ => Err(PyValueError::new_err(format!("unknown objective {name:?}, expected \"revenue\" or \"welfare\""))),
    }
}

fn solver(tolerance: f64) -> PyResult<SolverConfig> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(PyValueError::new_err(format!("tolerance {tolerance} must be > 0")));
    }
    Ok(SolverConfig {
        tolerance,
        ..SolverConfig::default()
    })
}

/// Two-part tariff with a data cap. `cap=None` means unlimited.
#[pyclass(frozen, from_py_object)]
#[derive(Clone, Copy)]
struct Tariff(datacap::Tariff);

#[pymethods]
impl Tariff {
    #[new]
    #[pyo3(signature = (cap=None, lump_sum=0.0, per_unit=0.0))]
    fn new(cap: Option<f64>, lump_sum: f64, per_unit: f64) -> PyResult<Self> {
        datacap::Tariff::new(cap_of(cap), lump_sum, per_unit).map(Tariff).map_err(to_py)
    }

    #[getter]
    fn cap(&self) -> Option<f64> {
        match self.0.cap() {
            Cap::Limited(g) => Some(g),
            Cap::Unlimited => None,
        }
    }

    #[getter]
    fn lump_sum(&self) -> f64 {
        self.0.lump_sum()
    }

    #[getter]
    fn per_unit(&self) -> f64 {
        self.0.per_unit()
    }

    /// Amount charged for `usage` units of data.
    fn charge(&self, usage: f64) -> PyResult<f64> {
        datacap::charge(usage, &self.0).map_err(to_py)
    }

    /// Usage chosen by a user with demand `u` and value `v` at congestion `q`.
    fn usage(&self, u: f64, v: f64, q: f64) -> PyResult<f64> {
        let user = datacap::UserType::new(u, v).map_err(to_py)?;
        Ok(datacap::optimal_usage(&user, &self.0, Congestion::new(q).map_err(to_py)?))
    }

    fn __repr__(&self) -> String {
        format!("Tariff(cap={}, lump_sum={}, per_unit={})", self.0.cap(), self.0.lump_sum(), self.0.per_unit())
    }
}

#[pyclass(frozen, from_py_object)]
#[derive(Clone, Copy)]
struct Provider(datacap::ProviderConfig);

#[pymethods]
impl Provider {
    #[new]
    fn new(tariff: Tariff, capacity: f64) -> PyResult<Self> {
        datacap::ProviderConfig::new(tariff.0, capacity).map(Provider).map_err(to_py)
    }

    #[getter]
    fn tariff(&self) -> Tariff {
        Tariff(self.0.tariff())
    }

    #[getter]
    fn capacity(&self) -> f64 {
        self.0.capacity()
    }
}

/// Power-law user types: `P(u <= x) = x^alpha`, `P(v <= x) = x^beta`.
#[pyclass(frozen, from_py_object)]
#[derive(Clone, Copy)]
struct Distribution(datacap::UserDistribution);

#[pymethods]
impl Distribution {
    #[new]
    #[pyo3(signature = (alpha=1.0, beta=1.0))]
    fn new(alpha: f64, beta: f64) -> PyResult<Self> {
        datacap::UserDistribution::new(alpha, beta).map(Distribution).map_err(to_py)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta()
    }
}

#[pyclass(frozen, get_all)]
struct Equilibrium {
    q: Vec<f64>,
    d: Vec<f64>,
    residual: f64,
    iterations: usize,
    converged: bool,
}

#[pymethods]
impl Equilibrium {
    fn __repr__(&self) -> String {
        format!("Equilibrium(q={:?}, d={:?}, converged={})", self.q, self.d, self.converged)
    }
}

#[pyclass(frozen, get_all)]
struct Metrics {
    share: f64,
    load: f64,
    revenue: f64,
    welfare: f64,
}

impl From<datacap::Metrics> for Metrics {
    fn from(m: datacap::Metrics) -> Self {
        Self {
            share: m.share,
            load: m.load,
            revenue: m.revenue,
            welfare: m.welfare,
        }
    }
}

#[pymethods]
impl Metrics {
    fn __repr__(&self) -> String {
        format!("Metrics(share={}, load={}, revenue={}, welfare={})", self.share, self.load, self.revenue, self.welfare)
    }
}

/// Providers competing with a free alternative of fixed congestion
/// (`float("inf")` for none).
#[pyclass(frozen)]
struct Market(datacap::MarketScenario);

#[pymethods]
impl Market {
    #[new]
    #[pyo3(signature = (providers, free_congestion, distribution=None))]
    fn new(providers: Vec<Provider>, free_congestion: f64, distribution: Option<Distribution>) -> PyResult<Self> {
        let q0 = Congestion::new(free_congestion).map_err(to_py)?;
        let dist = distribution.map_or(datacap::UserDistribution::uniform(), |d| d.0);
        datacap::MarketScenario::new(providers.into_iter().map(|p| p.0).collect(), q0, dist)
            .map(Market)
            .map_err(to_py)
    }

    /// Congestion and load of every provider at equilibrium.
    #[pyo3(signature = (tolerance=1e-9))]
    fn equilibrium(&self, py: Python<'_>, tolerance: f64) -> PyResult<Equilibrium> {
        let cfg = solver(tolerance)?;
        let s = &self.0;
        let r = py
            .detach(|| match s.providers() {
                [p] => datacap::solve_monopoly(p, s.free_congestion(), &s.distribution(), &cfg),
                _ => datacap::solve_oligopoly(s, &cfg),
            })
            .map_err(to_py)?;
        Ok(Equilibrium {
            q: r.q,
            d: r.d,
            residual: r.residual,
            iterations: r.iterations,
            converged: r.converged,
        })
    }

    /// Per-provider share, load, revenue and welfare at congestion `q`.
    fn metrics(&self, py: Python<'_>, q: Vec<f64>) -> PyResult<Vec<Metrics>> {
        let cfg = SolverConfig::default().quadrature;
        let m = py.detach(|| datacap::market_metrics(&self.0, &q, &cfg)).map_err(to_py)?;
        Ok(m.providers.into_iter().map(Metrics::from).collect())
    }

    /// The same metrics summed over an `n_u x n_v` grid of discrete agents.
    #[pyo3(signature = (q, n_u=500, n_v=500))]
    fn oracle_metrics(&self, py: Python<'_>, q: Vec<f64>, n_u: usize, n_v: usize) -> PyResult<Vec<Metrics>> {
        let grid = datacap::AgentGrid::new(&self.0.distribution(), n_u, n_v).map_err(to_py)?;
        let m = py.detach(|| datacap::oracle_metrics(&grid, &self.0, &q)).map_err(to_py)?;
        Ok(m.into_iter().map(Metrics::from).collect())
    }
}

#[pyclass(frozen, get_all)]
struct FeeOptimum {
    cap: Option<f64>,
    objective: String,
    f: f64,
    p: f64,
    value: f64,
    revenue: f64,
    welfare: f64,
    congestion: f64,
    evaluations: usize,
    multimodal: bool,
}

impl From<datacap::FeeOptimum> for FeeOptimum {
    fn from(o: datacap::FeeOptimum) -> Self {
        Self {
            cap: match o.cap {
                Cap::Limited(g) => Some(g),
                Cap::Unlimited => None,
            },
            objective: o.kind.to_string(),
            f: o.f,
            p: o.p,
            value: o.objective,
            revenue: o.revenue,
            welfare: o.welfare,
            congestion: o.congestion,
            evaluations: o.evaluations,
            multimodal: o.multimodal,
        }
    }
}

#[pymethods]
impl FeeOptimum {
    fn __repr__(&self) -> String {
        format!("FeeOptimum(objective={}, f={}, p={}, value={})", self.objective, self.f, self.p, self.value)
    }
}

fn template(capacity: f64, free_congestion: f64, distribution: Option<Distribution>) -> PyResult<datacap::MonopolyTemplate> {
    let q0 = Congestion::new(free_congestion).map_err(to_py)?;
    let dist = distribution.map_or(datacap::UserDistribution::uniform(), |d| d.0);
    datacap::MonopolyTemplate::new(capacity, q0, dist).map_err(to_py)
}

/// Best lump-sum and per-unit fee of a monopoly at a fixed cap.
#[pyfunction]
#[pyo3(signature = (capacity, free_congestion, cap=None, objective="revenue", distribution=None, grid=21))]
fn optimize_fees(
    py: Python<'_>,
    capacity: f64,
    free_congestion: f64,
    cap: Option<f64>,
    objective: &str,
    distribution: Option<Distribution>,
    grid: usize,
) -> PyResult<FeeOptimum> {
    let t = template(capacity, free_congestion, distribution)?;
    let kind = objective_of(objective)?;
    let search = datacap::SearchConfig {
        grid_f: grid,
        grid_p: grid,
        ..Default::default()
    };
    let cfg = SolverConfig::default();
    py.detach(|| datacap::optimize_fees(cap_of(cap), &t, kind, &search, &cfg, &[]))
        .map(FeeOptimum::from)
        .map_err(to_py)
}

/// Revenue- and welfare-optimal fees at every cap, as
/// `(revenue_optimum, welfare_optimum)` pairs.
#[pyfunction]
#[pyo3(signature = (capacity, free_congestion, caps, distribution=None))]
fn sweep_cap(
    py: Python<'_>,
    capacity: f64,
    free_congestion: f64,
    caps: Vec<Option<f64>>,
    distribution: Option<Distribution>,
) -> PyResult<Vec<(FeeOptimum, FeeOptimum)>> {
    let t = template(capacity, free_congestion, distribution)?;
    let grid: Vec<Cap> = caps.into_iter().map(cap_of).collect();
    let cfg = SolverConfig::default();
    let rows = py.detach(|| datacap::sweep_cap(&grid, &t, &Default::default(), &cfg));
    rows.into_iter()
        .map(|r| r.map(|r| (r.revenue_opt.into(), r.welfare_opt.into())).map_err(to_py))
        .collect()
}

/// Per-unit price that makes a pay-as-you-go plan equivalent to `tariff`
/// for users of demand `u`, plus which construction applied.
#[pyfunction]
#[pyo3(signature = (u, tariff, congestion, free_congestion, distribution=None))]
fn payg_equivalent_price(u: f64, tariff: Tariff, congestion: f64, free_congestion: f64, distribution: Option<Distribution>) -> PyResult<(f64, String)> {
    let q0 = Congestion::new(free_congestion).map_err(to_py)?;
    let dist = distribution.map_or(datacap::UserDistribution::uniform(), |d| d.0);
    let (p, case) = datacap::payg_equivalent_price(u, &tariff.0, congestion, q0, &dist).map_err(to_py)?;
    Ok((p, case.label().to_string()))
}

#[pymodule]
fn pydatacap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tariff>()?;
    m.add_class::<Provider>()?;
    m.add_class::<Distribution>()?;
    m.add_class::<Market>()?;
    m.add_class::<Equilibrium>()?;
    m.add_class::<Metrics>()?;
    m.add_class::<FeeOptimum>()?;
    m.add_function(wrap_pyfunction!(optimize_fees, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_cap, m)?)?;
    m.add_function(wrap_pyfunction!(payg_equivalent_price, m)?)?;
    Ok(())
}
