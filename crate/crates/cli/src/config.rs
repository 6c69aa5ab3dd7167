//! Scenario files. Every numeric field is checked while deserializing, so a
//! bad value is reported with its line and column.

use std::fmt;

use datacap::{Cap, Congestion, MarketScenario, MonopolyTemplate, Objective, ProviderConfig, SearchConfig, SolverConfig, Tariff, UserDistribution};
use serde::de::{self, Deserializer, Visitor};
use serde::Deserialize;

macro_rules! bounded {
    ($name:ident, $check:expr, $msg:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $name(pub f64);

        impl TryFrom<f64> for $name {
            type Error = String;

            fn try_from(x: f64) -> Result<Self, String> {
                let ok: fn(f64) -> bool = $check;
                if ok(x) {
                    Ok($name(x))
                } else {
                    Err(format!("{x} {}", $msg))
                }
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let x = f64::deserialize(d)?;
                $name::try_from(x).map_err(de::Error::custom)
            }
        }
    };
}

bounded!(Positive, |x| x > 0.0 && x.is_finite(), "must be a finite number > 0");
bounded!(NonNegative, |x| x >= 0.0 && x.is_finite(), "must be a finite number >= 0");
bounded!(Damping, |x| x > 0.0 && x <= 1.0, "must lie in (0, 1]");

/// An integer count of at least `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Count(pub usize);

impl<'de> Deserialize<'de> for Count {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let n = i64::deserialize(d)?;
        if n >= 1 {
            Ok(Count(n as usize))
        } else {
            Err(de::Error::custom(format!("{n} must be an integer >= 1")))
        }
    }
}

/// A data cap: a number `>= 0` or `"unlimited"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapSpec(pub Cap);

impl<'de> Deserialize<'de> for CapSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = CapSpec;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number >= 0 or \"unlimited\"")
            }

            fn visit_f64<E: de::Error>(self, g: f64) -> Result<CapSpec, E> {
                if g >= 0.0 && g.is_finite() {
                    Ok(CapSpec(Cap::Limited(g)))
                } else {
                    Err(E::custom(format!("data cap {g} must be a finite number >= 0")))
                }
            }

            fn visit_i64<E: de::Error>(self, g: i64) -> Result<CapSpec, E> {
                self.visit_f64(g as f64)
            }

            fn visit_str<E: de::Error>(self, s: &str) -> Result<CapSpec, E> {
                match s {
                    "unlimited" => Ok(CapSpec(Cap::Unlimited)),
                    _ => Err(E::custom(format!("unknown data cap {s:?}, expected a number or \"unlimited\""))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// A congestion level: a number `>= 0` or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CongestionSpec(pub Congestion);

impl<'de> Deserialize<'de> for CongestionSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = CongestionSpec;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number >= 0 or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, q: f64) -> Result<CongestionSpec, E> {
                if q >= 0.0 && q.is_finite() {
                    Ok(CongestionSpec(Congestion::Finite(q)))
                } else if q == f64::INFINITY {
                    Ok(CongestionSpec(Congestion::Infinite))
                } else {
                    Err(E::custom(format!("congestion {q} must be >= 0")))
                }
            }

            fn visit_i64<E: de::Error>(self, q: i64) -> Result<CongestionSpec, E> {
                self.visit_f64(q as f64)
            }

            fn visit_str<E: de::Error>(self, s: &str) -> Result<CongestionSpec, E> {
                match s {
                    "inf" => Ok(CongestionSpec(Congestion::Infinite)),
                    _ => Err(E::custom(format!("unknown congestion {s:?}, expected a number or \"inf\""))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    pub cap: CapSpec,
    pub lump_sum: NonNegative,
    pub per_unit: NonNegative,
    pub capacity: Positive,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub alpha: Positive,
    pub beta: Positive,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub tolerance: Option<Positive>,
    pub max_iters: Option<Count>,
    pub damping: Option<Damping>,
    pub quadrature_tolerance: Option<Positive>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub g_grid: Option<Vec<CapSpec>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    pub grid_f: Option<Count>,
    pub grid_p: Option<Count>,
    pub f_max: Option<NonNegative>,
    pub p_max: Option<NonNegative>,
    pub starts: Option<Count>,
    pub refinement_tolerance: Option<Positive>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSpec {
    pub cap: Option<CapSpec>,
    pub objective: Option<ObjectiveSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveSpec {
    Revenue,
    Welfare,
}

impl From<ObjectiveSpec> for Objective {
    fn from(o: ObjectiveSpec) -> Self {
        match o {
            ObjectiveSpec::Revenue => Objective::Revenue,
            ObjectiveSpec::Welfare => Objective::Welfare,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub n_u: Option<Count>,
    pub n_v: Option<Count>,
    /// Extra resolutions `[n_u, n_v]` compared in one run.
    pub resolutions: Option<Vec<[Count; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    CongestionIgnoresCapacity,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub seed: Option<u64>,
    pub fixed_point_cases: Option<Count>,
    pub monotonicity_pairs: Option<Count>,
    pub normalization_cases: Option<Count>,
    pub equivalence_cases: Option<Count>,
    pub dominance_cases: Option<Count>,
    /// Objectives whose cap-sweep bracket is checked. Each runs a full sweep.
    pub brackets: Option<Vec<ObjectiveSpec>>,
    pub bracket_grid: Option<Vec<CapSpec>>,
    pub probe_bands: Option<Count>,
    pub probe_size: Option<NonNegative>,
    #[doc(hidden)]
    pub inject_fault: Option<Fault>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub free_congestion: CongestionSpec,
    pub providers: Vec<ProviderSpec>,
    pub distribution: DistributionSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub search: SearchSpec,
    #[serde(default)]
    pub optimize: OptimizeSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub verify: VerifySpec,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        if cfg.providers.is_empty() {
            anyhow::bail!("`providers` must list at least one provider");
        }
        let s = &cfg.search;
        if s.grid_f.is_some_and(|c| c.0 < 2) || s.grid_p.is_some_and(|c| c.0 < 2) {
            anyhow::bail!("search grid sizes must be >= 2");
        }
        for (i, p) in cfg.providers.iter().enumerate() {
            let t = Tariff::new(p.cap.0, p.lump_sum.0, p.per_unit.0).map_err(|e| anyhow::anyhow!("provider {i}: {e}"))?;
            ProviderConfig::new(t, p.capacity.0).map_err(|e| anyhow::anyhow!("provider {i}: {e}"))?;
        }
        UserDistribution::new(cfg.distribution.alpha.0, cfg.distribution.beta.0)?;
        Ok(cfg)
    }

    pub fn distribution(&self) -> UserDistribution {
        UserDistribution::new(self.distribution.alpha.0, self.distribution.beta.0).expect("validated on parse")
    }

    pub fn providers(&self) -> Vec<ProviderConfig> {
        self.providers
            .iter()
            .map(|p| {
                let t = Tariff::new(p.cap.0, p.lump_sum.0, p.per_unit.0).expect("validated on parse");
                ProviderConfig::new(t, p.capacity.0).expect("validated on parse")
            })
            .collect()
    }

    pub fn scenario(&self) -> MarketScenario {
        MarketScenario::new(self.providers(), self.free_congestion.0, self.distribution()).expect("at least one provider")
    }

    /// The first provider's market without its tariff.
    pub fn template(&self) -> MonopolyTemplate {
        MonopolyTemplate::new(self.providers[0].capacity.0, self.free_congestion.0, self.distribution()).expect("validated on parse")
    }

    pub fn solver(&self) -> SolverConfig {
        let d = SolverConfig::default();
        let s = &self.solver;
        let mut cfg = SolverConfig {
            tolerance: s.tolerance.map_or(d.tolerance, |x| x.0),
            max_iters: s.max_iters.map_or(d.max_iters, |x| x.0),
            damping: s.damping.map_or(d.damping, |x| x.0),
            ..d
        };
        if let Some(t) = s.quadrature_tolerance {
            cfg.quadrature.abs_tol = t.0;
        }
        if self.verify.inject_fault == Some(Fault::CongestionIgnoresCapacity) {
            cfg.congestion_model = datacap::equilibrium::CongestionModel::IgnoresCapacity;
        }
        cfg
    }

    pub fn search(&self) -> SearchConfig {
        let d = SearchConfig::default();
        let s = &self.search;
        SearchConfig {
            grid_f: s.grid_f.map_or(d.grid_f, |x| x.0),
            grid_p: s.grid_p.map_or(d.grid_p, |x| x.0),
            f_max: s.f_max.map_or(d.f_max, |x| x.0),
            p_max: s.p_max.map_or(d.p_max, |x| x.0),
            starts: s.starts.map_or(d.starts, |x| x.0),
            step_tol: s.refinement_tolerance.map_or(d.step_tol, |x| x.0),
            ..d
        }
    }

    pub fn cap_grid(&self) -> Vec<Cap> {
        match &self.sweep.g_grid {
            Some(g) => g.iter().map(|c| c.0).collect(),
            None => datacap::default_cap_grid(),
        }
    }

    pub fn oracle_resolutions(&self) -> Vec<(usize, usize)> {
        let base = (self.oracle.n_u.map_or(2000, |c| c.0), self.oracle.n_v.map_or(2000, |c| c.0));
        match &self.oracle.resolutions {
            Some(list) => list.iter().map(|[a, b]| (a.0, b.0)).collect(),
            None => vec![base],
        }
    }
}
