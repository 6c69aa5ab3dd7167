//! Pointwise user model: what a single user type pays, consumes and gains
//! under a tariff at a given congestion level.
//!
//! Quantities are normalized so that desirable demand and per-unit value both
//! live in `[0, 1]`. Achievable demand decays exponentially with congestion
//! and congestion is load over capacity.

use std::fmt;

use crate::error::{domain, Error, Result};

/// A user type: desirable data demand `u` and per-unit data value `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserType {
    demand: f64,
    value: f64,
}

impl UserType {
    pub fn new(demand: f64, value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&demand) {
            return Err(domain("user demand", demand, "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(domain("user value", value, "must lie in [0, 1]"));
        }
        Ok(Self { demand, value })
    }

    pub fn demand(&self) -> f64 {
        self.demand
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Data cap of a tariff. `Unlimited` is the flat-rate sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cap {
    Limited(f64),
    Unlimited,
}

impl Cap {
    /// The cap as a number; `Unlimited` maps to `+inf`, which compares and
    /// subtracts exactly in every place it is used.
    pub fn as_f64(self) -> f64 {
        match self {
            Cap::Limited(g) => g,
            Cap::Unlimited => f64::INFINITY,
        }
    }

    pub fn is_unlimited(self) -> bool {
        matches!(self, Cap::Unlimited)
    }
}

impl fmt::Display for Cap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cap::Limited(g) => write!(f, "{g}"),
            Cap::Unlimited => f.write_str("unlimited"),
        }
    }
}

/// Two-part tariff: data cap, lump-sum fee and per-unit fee on usage above
/// the cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tariff {
    cap: Cap,
    lump_sum: f64,
    per_unit: f64,
}

impl Tariff {
    pub fn new(cap: Cap, lump_sum: f64, per_unit: f64) -> Result<Self> {
        if let Cap::Limited(g) = cap {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(domain("data cap", g, "must be finite and >= 0"));
            }
        }
        if !(lump_sum >= 0.0) || !lump_sum.is_finite() {
            return Err(domain("lump-sum fee", lump_sum, "must be finite and >= 0"));
        }
        if !(per_unit >= 0.0) || !per_unit.is_finite() {
            return Err(domain("per-unit fee", per_unit, "must be finite and >= 0"));
        }
        Ok(Self {
            cap,
            lump_sum,
            per_unit,
        })
    }

    /// Unlimited usage for a fixed fee.
    pub fn flat_rate(lump_sum: f64) -> Result<Self> {
        Self::new(Cap::Unlimited, lump_sum, 0.0)
    }

    /// Pure usage-based charging: zero cap, zero lump-sum.
    pub fn pay_as_you_go(per_unit: f64) -> Result<Self> {
        Self::new(Cap::Limited(0.0), 0.0, per_unit)
    }

    /// The zero-fee, unlimited tariff of the free outside option.
    pub fn free() -> Self {
        Self {
            cap: Cap::Unlimited,
            lump_sum: 0.0,
            per_unit: 0.0,
        }
    }

    pub fn cap(&self) -> Cap {
        self.cap
    }

    pub fn lump_sum(&self) -> f64 {
        self.lump_sum
    }

    pub fn per_unit(&self) -> f64 {
        self.per_unit
    }

    pub fn with_cap(self, cap: Cap) -> Result<Self> {
        Self::new(cap, self.lump_sum, self.per_unit)
    }

    pub fn with_lump_sum(self, lump_sum: f64) -> Result<Self> {
        Self::new(self.cap, lump_sum, self.per_unit)
    }

    pub fn with_per_unit(self, per_unit: f64) -> Result<Self> {
        Self::new(self.cap, self.lump_sum, per_unit)
    }

    /// Flat-rate form. Under normalized demand any cap `>= 1` never binds, so
    /// such caps count as flat-rate too.
    pub fn is_flat_rate(&self) -> bool {
        self.cap.as_f64() >= 1.0
    }

    pub fn is_pay_as_you_go(&self) -> bool {
        self.cap == Cap::Limited(0.0) && self.lump_sum == 0.0
    }
}

/// Congestion level; `Infinite` makes every achievable demand zero and is
/// used for the dummy free provider of a pure monopoly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Congestion {
    Finite(f64),
    Infinite,
}

impl Congestion {
    pub fn new(q: f64) -> Result<Self> {
        if q == f64::INFINITY {
            return Ok(Congestion::Infinite);
        }
        if !(q >= 0.0) {
            return Err(domain("congestion", q, "must be >= 0"));
        }
        Ok(Congestion::Finite(q))
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Congestion::Finite(q) => q,
            Congestion::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Congestion::Infinite)
    }
}

impl fmt::Display for Congestion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Congestion::Finite(q) => write!(f, "{q}"),
            Congestion::Infinite => f.write_str("inf"),
        }
    }
}

/// Power-law user distribution, `F_u(x) = x^alpha`, `F_v(x) = x^beta` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserDistribution {
    alpha: f64,
    beta: f64,
}

impl UserDistribution {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(domain("alpha", alpha, "must be finite and > 0"));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(domain("beta", beta, "must be finite and > 0"));
        }
        Ok(Self { alpha, beta })
    }

    pub fn uniform() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn cdf_demand(&self, x: f64) -> f64 {
        x.clamp(0.0, 1.0).powf(self.alpha)
    }

    pub fn cdf_value(&self, x: f64) -> f64 {
        x.clamp(0.0, 1.0).powf(self.beta)
    }

    /// Density of the demand marginal, `alpha * u^(alpha - 1)`.
    pub fn density_demand(&self, u: f64) -> f64 {
        self.alpha * u.powf(self.alpha - 1.0)
    }
}

/// Amount charged for consuming `usage` under `tariff`: `f + p * (y - g)^+`.
pub fn charge(usage: f64, tariff: &Tariff) -> Result<f64> {
    if !(usage >= 0.0) {
        return Err(domain("usage", usage, "must be >= 0"));
    }
    Ok(charge_raw(usage, tariff))
}

#[inline]
pub(crate) fn charge_raw(usage: f64, tariff: &Tariff) -> f64 {
    let over = usage - tariff.cap.as_f64();
    if over > 0.0 {
        tariff.lump_sum + tariff.per_unit * over
    } else {
        tariff.lump_sum
    }
}

/// Achievable demand `u * exp(-q)`.
pub fn achievable_demand(demand: f64, q: Congestion) -> Result<f64> {
    if !(demand >= 0.0) {
        return Err(domain("demand", demand, "must be >= 0"));
    }
    Ok(achievable_raw(demand, q))
}

#[inline]
pub(crate) fn achievable_raw(demand: f64, q: Congestion) -> f64 {
    match q {
        Congestion::Finite(q) => demand * (-q).exp(),
        Congestion::Infinite => 0.0,
    }
}

/// Utility-maximizing usage. Users stop at the cap only when the cap binds
/// and their value is strictly below the per-unit fee.
pub fn optimal_usage(user: &UserType, tariff: &Tariff, q: Congestion) -> f64 {
    let rho = achievable_raw(user.demand, q);
    usage_raw(rho, user.value, tariff)
}

#[inline]
pub(crate) fn usage_raw(rho: f64, value: f64, tariff: &Tariff) -> f64 {
    let g = tariff.cap.as_f64();
    if rho > g && value < tariff.per_unit {
        g
    } else {
        rho
    }
}

/// Utility at the optimal usage, `v * y* - t(y*)`.
pub fn optimal_utility(user: &UserType, tariff: &Tariff, q: Congestion) -> f64 {
    let rho = achievable_raw(user.demand, q);
    utility_raw(rho, user.value, tariff)
}

#[inline]
pub(crate) fn utility_raw(rho: f64, value: f64, tariff: &Tariff) -> f64 {
    let g = tariff.cap.as_f64();
    if rho <= g {
        value * rho - tariff.lump_sum
    } else if value < tariff.per_unit {
        value * g - tariff.lump_sum
    } else {
        value * rho - tariff.lump_sum - tariff.per_unit * (rho - g)
    }
}

/// Capacity-sharing congestion `d / c`.
pub fn congestion(load: f64, capacity: f64) -> Result<Congestion> {
    check_capacity(capacity)?;
    if !(load >= 0.0) {
        return Err(domain("data load", load, "must be >= 0"));
    }
    Ok(Congestion::Finite(load / capacity))
}

/// Load implied by an observed congestion level, `q * c`.
pub fn inverse_congestion(q: Congestion, capacity: f64) -> Result<f64> {
    check_capacity(capacity)?;
    match q {
        Congestion::Finite(q) => Ok(q * capacity),
        Congestion::Infinite => Err(Error::InfiniteCongestion),
    }
}

pub(crate) fn check_capacity(capacity: f64) -> Result<()> {
    if !(capacity > 0.0) || !capacity.is_finite() {
        return Err(domain("capacity", capacity, "must be finite and > 0"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn fig1_tariff() -> Tariff {
        Tariff::new(Cap::Limited(0.4), 0.1, 0.6).unwrap()
    }

    const Q_FIG1: Congestion = Congestion::Finite(0.3387);

    #[test]
    fn charge_examples() {
        let t = fig1_tariff();
        assert_eq!(charge(0.3, &t).unwrap(), 0.1);
        assert_abs_diff_eq!(charge(0.5, &t).unwrap(), 0.16, epsilon = 1e-15);
        assert_eq!(charge(0.4, &t).unwrap(), 0.1);
        assert!(charge(-0.1, &t).is_err());
    }

    #[test]
    fn achievable_examples() {
        assert_eq!(achievable_demand(1.0, Congestion::Finite(0.0)).unwrap(), 1.0);
        assert_eq!(achievable_demand(0.7, Congestion::Infinite).unwrap(), 0.0);
        assert_abs_diff_eq!(
            achievable_demand(0.9, Q_FIG1).unwrap(),
            0.641_42,
            epsilon = 1e-5
        );
    }

    #[test]
    fn usage_examples() {
        let t = fig1_tariff();
        let hi = UserType::new(0.9, 0.8).unwrap();
        let lo = UserType::new(0.9, 0.5).unwrap();
        let small = UserType::new(0.2, 0.1).unwrap();
        assert_abs_diff_eq!(optimal_usage(&hi, &t, Q_FIG1), 0.641_42, epsilon = 1e-5);
        assert_eq!(optimal_usage(&lo, &t, Q_FIG1), 0.4);
        assert_abs_diff_eq!(optimal_usage(&small, &t, Q_FIG1), 0.142_54, epsilon = 1e-5);
    }

    #[test]
    fn usage_at_value_equal_fee_is_full_demand() {
        let t = fig1_tariff();
        let user = UserType::new(0.9, 0.6).unwrap();
        let rho = achievable_raw(0.9, Q_FIG1);
        assert_eq!(optimal_usage(&user, &t, Q_FIG1), rho);
    }

    #[test]
    fn utility_examples() {
        let t = fig1_tariff();
        let zero_value = UserType::new(0.5, 0.0).unwrap();
        assert_eq!(optimal_utility(&zero_value, &t, Q_FIG1), -0.1);

        let hi = UserType::new(0.9, 0.8).unwrap();
        let rho = 0.9 * (-0.3387f64).exp();
        let expected = 0.8 * rho - 0.1 - 0.6 * (rho - 0.4);
        assert_abs_diff_eq!(optimal_utility(&hi, &t, Q_FIG1), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(optimal_utility(&hi, &t, Q_FIG1), 0.268_28, epsilon = 1e-5);

        let user = UserType::new(0.6, 0.3).unwrap();
        let q0 = Congestion::Finite(1.5);
        assert_abs_diff_eq!(
            optimal_utility(&user, &Tariff::free(), q0),
            0.3 * 0.6 * (-1.5f64).exp(),
            epsilon = 1e-16
        );
    }

    #[test]
    fn congestion_examples() {
        // Reported load 0.1693 is rounded; the reported congestion is 0.3387.
        let q = congestion(0.1693, 0.5).unwrap().as_f64();
        assert_abs_diff_eq!(q, 0.3386, epsilon = 1e-12);
        assert_abs_diff_eq!(q, 0.3387, epsilon = 2e-4);
        assert_eq!(congestion(0.0, 0.8).unwrap(), Congestion::Finite(0.0));
        assert_eq!(congestion(1.0, 1.0).unwrap(), Congestion::Finite(1.0));
        assert!(congestion(0.1, 0.0).is_err());
        assert!(congestion(0.1, -1.0).is_err());
    }

    #[test]
    fn inverse_congestion_examples() {
        assert_abs_diff_eq!(
            inverse_congestion(Congestion::Finite(0.3387), 0.5).unwrap(),
            0.169_35,
            epsilon = 1e-15
        );
        assert_eq!(inverse_congestion(Congestion::Finite(0.0), 0.4).unwrap(), 0.0);
        let q = congestion(0.7, 0.3).unwrap();
        assert_abs_diff_eq!(inverse_congestion(q, 0.3).unwrap(), 0.7, epsilon = 1e-15);
        assert_eq!(
            inverse_congestion(Congestion::Infinite, 0.3),
            Err(Error::InfiniteCongestion)
        );
    }

    #[test]
    fn tariff_forms() {
        assert!(Tariff::flat_rate(0.3).unwrap().is_flat_rate());
        assert!(Tariff::new(Cap::Limited(1.0), 0.3, 0.2).unwrap().is_flat_rate());
        assert!(Tariff::pay_as_you_go(0.4).unwrap().is_pay_as_you_go());
        assert!(!fig1_tariff().is_pay_as_you_go());
        assert!(Tariff::new(Cap::Limited(-0.1), 0.0, 0.0).is_err());
        assert!(Tariff::new(Cap::Limited(0.1), -1.0, 0.0).is_err());
        assert!(Tariff::new(Cap::Limited(0.1), 0.0, f64::NAN).is_err());
    }

    #[test]
    fn distribution_cdfs() {
        let d = UserDistribution::new(2.0, 0.5).unwrap();
        assert_eq!(d.cdf_demand(0.0), 0.0);
        assert_eq!(d.cdf_demand(1.0), 1.0);
        assert_eq!(d.cdf_value(1.0), 1.0);
        assert_abs_diff_eq!(d.cdf_demand(0.5), 0.25);
        assert!(UserDistribution::new(0.0, 1.0).is_err());
    }

    fn tariff_strategy() -> impl Strategy<Value = Tariff> {
        (prop_oneof![(0.0..1.2f64).prop_map(Cap::Limited), Just(Cap::Unlimited)], 0.0..1.0f64, 0.0..1.0f64)
            .prop_map(|(g, f, p)| Tariff::new(g, f, p).unwrap())
    }

    proptest! {
        #[test]
        fn usage_bounded_by_achievable(u in 0.0..=1.0f64, v in 0.0..=1.0f64, t in tariff_strategy(), q in 0.0..5.0f64) {
            let user = UserType::new(u, v).unwrap();
            let q = Congestion::Finite(q);
            let rho = achievable_raw(u, q);
            let y = optimal_usage(&user, &t, q);
            prop_assert!(0.0 <= y && y <= rho && rho <= u);
        }

        #[test]
        fn usage_monotone(u in 0.0..=1.0f64, v in 0.0..=1.0f64, t in tariff_strategy(), q in 0.0..5.0f64,
                          du in 0.0..0.5f64, dv in 0.0..0.5f64, dg in 0.0..0.5f64, dp in 0.0..0.5f64, dq in 0.0..1.0f64) {
            let base = optimal_usage(&UserType::new(u, v).unwrap(), &t, Congestion::Finite(q));
            let u2 = (u + du).min(1.0);
            let v2 = (v + dv).min(1.0);
            prop_assert!(optimal_usage(&UserType::new(u2, v).unwrap(), &t, Congestion::Finite(q)) >= base);
            prop_assert!(optimal_usage(&UserType::new(u, v2).unwrap(), &t, Congestion::Finite(q)) >= base);
            let user = UserType::new(u, v).unwrap();
            if let Cap::Limited(g) = t.cap() {
                let t2 = t.with_cap(Cap::Limited(g + dg)).unwrap();
                prop_assert!(optimal_usage(&user, &t2, Congestion::Finite(q)) >= base);
            }
            let t3 = t.with_per_unit(t.per_unit() + dp).unwrap();
            prop_assert!(optimal_usage(&user, &t3, Congestion::Finite(q)) <= base);
            prop_assert!(optimal_usage(&user, &t, Congestion::Finite(q + dq)) <= base);
        }

        #[test]
        fn charge_is_convex_piecewise_linear(t in tariff_strategy(), a in 0.0..2.0f64, b in 0.0..2.0f64, lam in 0.0..=1.0f64) {
            let (ta, tb) = (charge_raw(a, &t), charge_raw(b, &t));
            let mid = lam * a + (1.0 - lam) * b;
            prop_assert!(charge_raw(mid, &t) <= lam * ta + (1.0 - lam) * tb + 1e-12);
            if a <= b {
                prop_assert!(ta <= tb);
            }
        }

        #[test]
        fn utility_dominates_every_feasible_usage(u in 0.0..=1.0f64, v in 0.0..=1.0f64, t in tariff_strategy(), q in 0.0..5.0f64) {
            let user = UserType::new(u, v).unwrap();
            let q = Congestion::Finite(q);
            let best = optimal_utility(&user, &t, q);
            let rho = achievable_raw(u, q);
            let y_star = optimal_usage(&user, &t, q);
            prop_assert!((best - (v * y_star - charge_raw(y_star, &t))).abs() < 1e-12);
            for k in 0..=200 {
                let y = rho * k as f64 / 200.0;
                prop_assert!(best >= v * y - charge_raw(y, &t) - 1e-12);
            }
        }

        #[test]
        fn utility_monotone_in_parameters(u in 0.0..=1.0f64, v in 0.0..=1.0f64, t in tariff_strategy(), q in 0.0..5.0f64, d in 0.0..0.5f64) {
            let user = UserType::new(u, v).unwrap();
            let base = optimal_utility(&user, &t, Congestion::Finite(q));
            prop_assert!(optimal_utility(&user, &t, Congestion::Finite(q + d)) <= base + 1e-15);
            prop_assert!(optimal_utility(&user, &t.with_lump_sum(t.lump_sum() + d).unwrap(), Congestion::Finite(q)) <= base);
            prop_assert!(optimal_utility(&user, &t.with_per_unit(t.per_unit() + d).unwrap(), Congestion::Finite(q)) <= base + 1e-15);
            if let Cap::Limited(g) = t.cap() {
                prop_assert!(optimal_utility(&user, &t.with_cap(Cap::Limited(g + d)).unwrap(), Congestion::Finite(q)) >= base - 1e-15);
            }
            let v2 = (v + d).min(1.0);
            prop_assert!(optimal_utility(&UserType::new(u, v2).unwrap(), &t, Congestion::Finite(q)) >= base);
        }

        #[test]
        fn congestion_round_trip(d in 0.0..10.0f64, c in 0.01..10.0f64) {
            let q = congestion(d, c).unwrap();
            let back = inverse_congestion(q, c).unwrap();
            prop_assert!((back - d).abs() <= 4.0 * f64::EPSILON * d.max(1.0));
        }
    }
}
