//! Market shares, loads, revenue and welfare at fixed congestion levels.
//!
//! For a fixed demand `u` every provider's optimal utility is the upper
//! envelope of at most two lines in `v`, so the share boundaries along `v`
//! are exact line crossings and the inner `v`-integrals have closed forms
//! against `dF_v = beta v^(beta-1) dv`. Only the outer integral over `u` is
//! numerical; it runs in the variable `w = F_u(u)` so the demand density
//! never appears as a singular weight.

use crate::error::{Error, Result};
use crate::model::{achievable_raw, charge_raw, check_capacity, usage_raw, utility_raw, Congestion, Tariff, UserDistribution, UserType};
use crate::quadrature::{integrate, QuadConfig};

/// A normal provider: its tariff and capacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProviderConfig {
    tariff: Tariff,
    capacity: f64,
}

impl ProviderConfig {
    pub fn new(tariff: Tariff, capacity: f64) -> Result<Self> {
        check_capacity(capacity)?;
        Ok(Self { tariff, capacity })
    }

    pub fn tariff(&self) -> Tariff {
        self.tariff
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub(crate) fn tariff_ref(&self) -> &Tariff {
        &self.tariff
    }

    pub fn with_tariff(self, tariff: Tariff) -> Self {
        Self { tariff, ..self }
    }

    pub fn with_capacity(self, capacity: f64) -> Result<Self> {
        Self::new(self.tariff, capacity)
    }
}

/// Providers, the free outside option's congestion and the user distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketScenario {
    providers: Vec<ProviderConfig>,
    free_congestion: Congestion,
    distribution: UserDistribution,
}

impl MarketScenario {
    pub fn new(providers: Vec<ProviderConfig>, free_congestion: Congestion, distribution: UserDistribution) -> Result<Self> {
        if providers.is_empty() {
            return Err(Error::NoProviders);
        }
        Ok(Self {
            providers,
            free_congestion,
            distribution,
        })
    }

    pub fn monopoly(provider: ProviderConfig, free_congestion: Congestion, distribution: UserDistribution) -> Self {
        Self {
            providers: vec![provider],
            free_congestion,
            distribution,
        }
    }

    pub fn providers(&self) -> &[ProviderConfig] {
        &self.providers
    }

    pub fn free_congestion(&self) -> Congestion {
        self.free_congestion
    }

    pub fn distribution(&self) -> UserDistribution {
        self.distribution
    }

    pub fn with_provider(mut self, provider: ProviderConfig) -> Self {
        self.providers.push(provider);
        self
    }

    pub fn with_free_congestion(self, free_congestion: Congestion) -> Self {
        Self {
            free_congestion,
            ..self
        }
    }

    pub(crate) fn check_congestion(&self, q: &[f64]) -> Result<()> {
        check_congestion_vector(q, self.providers.len())
    }
}

pub(crate) fn check_congestion_vector(q: &[f64], expected: usize) -> Result<()> {
    if q.len() != expected {
        return Err(Error::CongestionArity {
            expected,
            got: q.len(),
        });
    }
    for &qi in q {
        if !(qi >= 0.0) || !qi.is_finite() {
            return Err(crate::error::domain("provider congestion", qi, "must be finite and >= 0"));
        }
    }
    Ok(())
}

/// Scale of the user population: demand range `[0, demand_max]`, value range
/// `[0, value_max]` and total mass. The normalized market is `unit()`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Population {
    pub demand_max: f64,
    pub value_max: f64,
    pub mass: f64,
}

impl Population {
    pub fn unit() -> Self {
        Self {
            demand_max: 1.0,
            value_max: 1.0,
            mass: 1.0,
        }
    }
}

impl Default for Population {
    fn default() -> Self {
        Self::unit()
    }
}

/// A tariff that may depend on the user's desirable demand.
pub trait PricingSchedule: Sync {
    fn tariff_at(&self, demand: f64) -> Tariff;

    /// Demands at which the integrand over `u` is known to be non-smooth
    /// when the provider runs at congestion `q`.
    fn kink_demands(&self, q: f64) -> Vec<f64>;
}

impl PricingSchedule for Tariff {
    fn tariff_at(&self, _demand: f64) -> Tariff {
        *self
    }

    fn kink_demands(&self, q: f64) -> Vec<f64> {
        match self.cap() {
            crate::model::Cap::Limited(g) if g > 0.0 => vec![g * q.exp()],
            _ => Vec::new(),
        }
    }
}

/// Who serves a user type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Choice {
    Free,
    Provider(usize),
}

/// The provider a user picks at congestion `q`. Ties go to a normal provider
/// over the free one, then to the lowest index.
pub fn best_provider(user: &UserType, scenario: &MarketScenario, q: &[f64]) -> Result<Choice> {
    scenario.check_congestion(q)?;
    Ok(best_choice_raw(
        user.demand(),
        user.value(),
        scenario.providers.iter().map(|p| p.tariff).zip(q.iter().copied()),
        scenario.free_congestion,
    ))
}

pub(crate) fn best_choice_raw<I>(demand: f64, value: f64, offers: I, free: Congestion) -> Choice
where
    I: IntoIterator<Item = (Tariff, f64)>,
{
    let mut best = f64::NEG_INFINITY;
    let mut best_id = None;
    for (i, (tariff, q)) in offers.into_iter().enumerate() {
        let rho = achievable_raw(demand, Congestion::Finite(q));
        let util = utility_raw(rho, value, &tariff);
        if util > best {
            best = util;
            best_id = Some(i);
        }
    }
    let free_util = value * achievable_raw(demand, free);
    match best_id {
        Some(i) if best >= free_util => Choice::Provider(i),
        _ => Choice::Free,
    }
}

/// A piece of the value axis at fixed demand and who owns it. An empty owner
/// list is the free provider; several owners share the piece equally, which
/// only happens when their utilities coincide on the whole piece.
#[derive(Debug, Clone, PartialEq)]
pub struct VInterval {
    pub lo: f64,
    pub hi: f64,
    pub owners: Vec<usize>,
}

impl VInterval {
    pub fn is_free(&self) -> bool {
        self.owners.is_empty()
    }
}

/// Market shares along the value axis at one demand level.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareSlice {
    pub demand: f64,
    pub intervals: Vec<VInterval>,
}

impl ShareSlice {
    /// Total `v`-length owned (possibly jointly) by provider `id`.
    pub fn length_of(&self, id: usize) -> f64 {
        self.intervals
            .iter()
            .filter(|iv| iv.owners.contains(&id))
            .map(|iv| iv.hi - iv.lo)
            .sum()
    }

    /// Owner list of the interval containing `v`.
    pub fn owners_at(&self, v: f64) -> Option<&[usize]> {
        self.intervals
            .iter()
            .find(|iv| iv.lo <= v && v <= iv.hi)
            .map(|iv| iv.owners.as_slice())
    }
}

/// The value-axis partition at demand `u`.
pub fn share_slice(demand: f64, scenario: &MarketScenario, q: &[f64]) -> Result<ShareSlice> {
    scenario.check_congestion(q)?;
    if !(0.0..=1.0).contains(&demand) {
        return Err(crate::error::domain("demand", demand, "must lie in [0, 1]"));
    }
    let offers: Vec<Offer> = scenario
        .providers
        .iter()
        .zip(q)
        .map(|(p, &qi)| Offer::new(p.tariff, demand, qi))
        .collect();
    let rho_free = achievable_raw(demand, scenario.free_congestion);
    let mut work = SliceWork::default();
    work.segment(&offers, rho_free, 1.0);

    let mut intervals: Vec<VInterval> = Vec::new();
    for seg in &work.segments {
        let owners = seg.owners.to_vec();
        match intervals.last_mut() {
            Some(last) if last.owners == owners => last.hi = seg.hi,
            _ => intervals.push(VInterval {
                lo: seg.lo,
                hi: seg.hi,
                owners,
            }),
        }
    }
    Ok(ShareSlice { demand, intervals })
}

/// Share measure, data load, revenue and gross welfare of one provider.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub share: f64,
    pub load: f64,
    pub revenue: f64,
    pub welfare: f64,
}

impl Metrics {
    fn add_scaled(&mut self, other: &Metrics, scale: f64) {
        self.share += scale * other.share;
        self.load += scale * other.load;
        self.revenue += scale * other.revenue;
        self.welfare += scale * other.welfare;
    }
}

/// Integrated metrics for every provider, with the quadrature's error bound.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketMetrics {
    pub providers: Vec<Metrics>,
    pub error: f64,
    pub intervals: usize,
}

/// A quantity with its quadrature error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum MetricSet {
    Load,
    All,
}

/// All four metrics for every provider at congestion `q`.
pub fn market_metrics(scenario: &MarketScenario, q: &[f64], cfg: &QuadConfig) -> Result<MarketMetrics> {
    scenario.check_congestion(q)?;
    let sellers: Vec<Seller<'_>> = scenario
        .providers
        .iter()
        .zip(q)
        .map(|(p, &qi)| Seller {
            pricing: &p.tariff,
            congestion: qi,
        })
        .collect();
    integrate_market(&sellers, scenario.free_congestion, &scenario.distribution, &Population::unit(), MetricSet::All, cfg)
}

fn single(scenario: &MarketScenario, id: usize, q: &[f64], cfg: &QuadConfig, pick: fn(&Metrics) -> f64) -> Result<Estimate> {
    if id >= scenario.providers.len() {
        return Err(Error::Invariant(format!("no provider with index {id}")));
    }
    let m = market_metrics(scenario, q, cfg)?;
    Ok(Estimate {
        value: pick(&m.providers[id]),
        error: m.error,
    })
}

/// Aggregate data demand of provider `id`'s users.
pub fn data_load(scenario: &MarketScenario, id: usize, q: &[f64], cfg: &QuadConfig) -> Result<Estimate> {
    single(scenario, id, q, cfg, |m| m.load)
}

/// Charges collected by provider `id`.
pub fn revenue(scenario: &MarketScenario, id: usize, q: &[f64], cfg: &QuadConfig) -> Result<Estimate> {
    single(scenario, id, q, cfg, |m| m.revenue)
}

/// Gross value `v * y*` generated by provider `id`'s users.
pub fn welfare(scenario: &MarketScenario, id: usize, q: &[f64], cfg: &QuadConfig) -> Result<Estimate> {
    single(scenario, id, q, cfg, |m| m.welfare)
}

pub(crate) struct Seller<'a> {
    pub pricing: &'a dyn PricingSchedule,
    pub congestion: f64,
}

/// Integrates the per-demand metrics over the population.
pub(crate) fn integrate_market(
    sellers: &[Seller<'_>],
    free: Congestion,
    dist: &UserDistribution,
    pop: &Population,
    set: MetricSet,
    cfg: &QuadConfig,
) -> Result<MarketMetrics> {
    let n = sellers.len();
    let width = match set {
        MetricSet::Load => 1,
        MetricSet::All => 4,
    };
    let alpha = dist.alpha();
    let inv_alpha = 1.0 / alpha;
    let to_w = |u: f64| (u / pop.demand_max).powf(alpha);

    let mut kinks = Vec::new();
    for s in sellers {
        for u in s.pricing.kink_demands(s.congestion) {
            if u > 0.0 && u < pop.demand_max {
                kinks.push(u);
            }
        }
    }
    kinks.push(0.0);
    kinks.push(pop.demand_max);
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();
    let mut breaks: Vec<f64> = kinks.iter().map(|&u| to_w(u)).collect();
    for w in kinks.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        for u in structural_demands(sellers, mid, free, pop.value_max) {
            if u > w[0] && u < w[1] {
                breaks.push(to_w(u));
            }
        }
    }

    let mut work = SliceWork::default();
    let mut offers: Vec<Offer> = Vec::with_capacity(n);
    let mut at_u = vec![Metrics::default(); n];
    let integrand = |w: f64, out: &mut [f64]| {
        let u = pop.demand_max * w.powf(inv_alpha);
        offers.clear();
        offers.extend(
            sellers
                .iter()
                .map(|s| Offer::new(s.pricing.tariff_at(u), u, s.congestion)),
        );
        let rho_free = achievable_raw(u, free);
        work.metrics(&offers, rho_free, dist.beta(), pop.value_max, &mut at_u);
        for (i, m) in at_u.iter().enumerate() {
            match set {
                MetricSet::Load => out[i] = m.load,
                MetricSet::All => {
                    out[4 * i] = m.share;
                    out[4 * i + 1] = m.load;
                    out[4 * i + 2] = m.revenue;
                    out[4 * i + 3] = m.welfare;
                }
            }
        }
    };
    let res = integrate(integrand, width * n, 0.0, 1.0, &breaks, cfg)?;
    let providers = (0..n)
        .map(|i| match set {
            MetricSet::Load => Metrics {
                load: pop.mass * res.values[i],
                ..Metrics::default()
            },
            MetricSet::All => Metrics {
                share: pop.mass * res.values[4 * i],
                load: pop.mass * res.values[4 * i + 1],
                revenue: pop.mass * res.values[4 * i + 2],
                welfare: pop.mass * res.values[4 * i + 3],
            },
        })
        .collect();
    Ok(MarketMetrics {
        providers,
        error: pop.mass * res.error,
        intervals: res.intervals,
    })
}

/// A utility line in `v` whose slope and intercept are affine in `u`:
/// `(s0 + s1 u) v + (i0 + i1 u)`.
#[derive(Debug, Clone, Copy)]
struct AffineLine {
    s0: f64,
    s1: f64,
    i0: f64,
    i1: f64,
}

/// Demands at which the value-axis partition changes shape: a crossing of
/// two utility lines reaches `0`, `v_max` or a per-unit fee, or three lines
/// meet. Tariffs are taken at `probe` and treated as constant in `u`.
fn structural_demands(sellers: &[Seller<'_>], probe: f64, free: Congestion, v_max: f64) -> Vec<f64> {
    let mut lines = Vec::new();
    let mut levels = vec![0.0, v_max];
    for s in sellers {
        let t = s.pricing.tariff_at(probe);
        let a = (-s.congestion).exp();
        let (f, p) = (t.lump_sum(), t.per_unit());
        lines.push(AffineLine { s0: 0.0, s1: a, i0: -f, i1: 0.0 });
        if let crate::model::Cap::Limited(g) = t.cap() {
            lines.push(AffineLine { s0: g, s1: 0.0, i0: -f, i1: 0.0 });
            lines.push(AffineLine { s0: 0.0, s1: a, i0: -f + p * g, i1: -p * a });
            levels.push(p);
        }
    }
    let a0 = match free {
        Congestion::Finite(q0) => (-q0).exp(),
        Congestion::Infinite => 0.0,
    };
    lines.push(AffineLine { s0: 0.0, s1: a0, i0: 0.0, i1: 0.0 });

    let mut out = Vec::new();
    for (x, la) in lines.iter().enumerate() {
        for lb in &lines[x + 1..] {
            // Crossing v(u) = (iB - iA) / (sA - sB) equals a level t.
            for &t in &levels {
                let num = t * (la.s0 - lb.s0) - (lb.i0 - la.i0);
                let den = (lb.i1 - la.i1) - t * (la.s1 - lb.s1);
                if den != 0.0 {
                    out.push(num / den);
                }
            }
        }
    }
    if sellers.len() > 1 {
        for (x, la) in lines.iter().enumerate() {
            for (y, lb) in lines.iter().enumerate().skip(x + 1) {
                for lc in &lines[y + 1..] {
                    triple_meets(la, lb, lc, &mut out);
                }
            }
        }
    }
    out.retain(|u| u.is_finite() && *u > 0.0);
    out
}

/// Roots of `(iB - iA)(sA - sC) = (iC - iA)(sA - sB)`, a quadratic in `u`.
fn triple_meets(a: &AffineLine, b: &AffineLine, c: &AffineLine, out: &mut Vec<f64>) {
    // Each factor is `k0 + k1 u`; expand the products.
    let prod = |x0: f64, x1: f64, y0: f64, y1: f64| [x0 * y0, x0 * y1 + x1 * y0, x1 * y1];
    let l = prod(b.i0 - a.i0, b.i1 - a.i1, a.s0 - c.s0, a.s1 - c.s1);
    let r = prod(c.i0 - a.i0, c.i1 - a.i1, a.s0 - b.s0, a.s1 - b.s1);
    let (k0, k1, k2) = (l[0] - r[0], l[1] - r[1], l[2] - r[2]);
    let scale = k0.abs().max(k1.abs()).max(k2.abs());
    if scale == 0.0 {
        return;
    }
    if k2.abs() <= 1e-14 * scale {
        if k1 != 0.0 {
            out.push(-k0 / k1);
        }
        return;
    }
    let disc = k1 * k1 - 4.0 * k2 * k0;
    if disc < 0.0 {
        return;
    }
    let root = disc.sqrt();
    let qq = -0.5 * (k1 + k1.signum() * root);
    if qq != 0.0 {
        out.push(qq / k2);
        out.push(k0 / qq);
    } else {
        out.push(0.0);
    }
}

/// Metrics of each seller restricted to users of demand `u`, integrated over
/// `v` only (per unit of demand-probability).
pub(crate) fn metrics_at_demand(demand: f64, sellers: &[(Tariff, f64)], free: Congestion, beta: f64) -> Vec<Metrics> {
    let offers: Vec<Offer> = sellers
        .iter()
        .map(|&(t, q)| Offer::new(t, demand, q))
        .collect();
    let mut out = vec![Metrics::default(); offers.len()];
    SliceWork::default().metrics(&offers, achievable_raw(demand, free), beta, 1.0, &mut out);
    out
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Offer {
    tariff: Tariff,
    rho: f64,
}

impl Offer {
    fn new(tariff: Tariff, demand: f64, q: f64) -> Self {
        Self {
            tariff,
            rho: achievable_raw(demand, Congestion::Finite(q)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Owners {
    Free,
    One(usize),
    Tied(Vec<usize>),
}

impl Owners {
    fn to_vec(&self) -> Vec<usize> {
        match self {
            Owners::Free => Vec::new(),
            Owners::One(i) => vec![*i],
            Owners::Tied(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Segment {
    lo: f64,
    hi: f64,
    owners: Owners,
}

#[derive(Debug, Clone, Copy)]
struct Line {
    owner: usize,
    slope: f64,
    intercept: f64,
}

/// Reusable buffers for value-axis segmentation.
#[derive(Debug, Default)]
struct SliceWork {
    lines: Vec<Line>,
    breaks: Vec<f64>,
    segments: Vec<Segment>,
    ties: Vec<usize>,
}

impl SliceWork {
    /// Splits `[0, v_max]` into pieces on which every utility is linear and
    /// the owner set is constant.
    fn segment(&mut self, offers: &[Offer], rho_free: f64, v_max: f64) {
        let free_owner = offers.len();
        self.lines.clear();
        self.breaks.clear();
        self.segments.clear();
        self.breaks.push(0.0);
        self.breaks.push(v_max);
        for (i, o) in offers.iter().enumerate() {
            let t = &o.tariff;
            let g = t.cap().as_f64();
            if o.rho <= g {
                self.lines.push(Line {
                    owner: i,
                    slope: o.rho,
                    intercept: -t.lump_sum(),
                });
            } else {
                self.lines.push(Line {
                    owner: i,
                    slope: g,
                    intercept: -t.lump_sum(),
                });
                self.lines.push(Line {
                    owner: i,
                    slope: o.rho,
                    intercept: -t.lump_sum() - t.per_unit() * (o.rho - g),
                });
                let p = t.per_unit();
                if p > 0.0 && p < v_max {
                    self.breaks.push(p);
                }
            }
        }
        self.lines.push(Line {
            owner: free_owner,
            slope: rho_free,
            intercept: 0.0,
        });
        for (a, la) in self.lines.iter().enumerate() {
            for lb in &self.lines[a + 1..] {
                if la.owner == lb.owner || la.slope == lb.slope {
                    continue;
                }
                let v = (lb.intercept - la.intercept) / (la.slope - lb.slope);
                if v > 0.0 && v < v_max {
                    self.breaks.push(v);
                }
            }
        }
        self.breaks.sort_by(f64::total_cmp);
        self.breaks.dedup();

        for k in 0..self.breaks.len() - 1 {
            let (lo, hi) = (self.breaks[k], self.breaks[k + 1]);
            let mid = 0.5 * (lo + hi);
            self.ties.clear();
            let mut best = f64::NEG_INFINITY;
            for (i, o) in offers.iter().enumerate() {
                let util = utility_raw(o.rho, mid, &o.tariff);
                if util > best {
                    best = util;
                    self.ties.clear();
                    self.ties.push(i);
                } else if util == best {
                    self.ties.push(i);
                }
            }
            let owners = if self.ties.is_empty() || best < mid * rho_free {
                Owners::Free
            } else if self.ties.len() == 1 {
                Owners::One(self.ties[0])
            } else {
                Owners::Tied(self.ties.clone())
            };
            self.segments.push(Segment { lo, hi, owners });
        }
    }

    /// Per-provider `v`-integrals at one demand level.
    fn metrics(&mut self, offers: &[Offer], rho_free: f64, beta: f64, v_max: f64, out: &mut [Metrics]) {
        for m in out.iter_mut() {
            *m = Metrics::default();
        }
        self.segment(offers, rho_free, v_max);
        let moment = beta / (beta + 1.0) * v_max;
        for seg in &self.segments {
            let (a, b) = (seg.lo / v_max, seg.hi / v_max);
            let mass = b.powf(beta) - a.powf(beta);
            let first = moment * (b.powf(beta + 1.0) - a.powf(beta + 1.0));
            let mid = 0.5 * (seg.lo + seg.hi);
            let mut credit = |i: usize, share: f64| {
                let o = &offers[i];
                let y = usage_raw(o.rho, mid, &o.tariff);
                let per_user = Metrics {
                    share: mass,
                    load: y * mass,
                    revenue: charge_raw(y, &o.tariff) * mass,
                    welfare: y * first,
                };
                out[i].add_scaled(&per_user, share);
            };
            match &seg.owners {
                Owners::Free => {}
                Owners::One(i) => credit(*i, 1.0),
                Owners::Tied(ids) => {
                    let share = 1.0 / ids.len() as f64;
                    for &i in ids {
                        credit(i, share);
                    }
                }
            }
        }
    }
}
