use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Site-heterogeneity regimes of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Homogeneous,
    CovariateShift,
    OutcomeShift,
    CensoringShift,
    AllShift,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Homogeneous,
        Scenario::CovariateShift,
        Scenario::OutcomeShift,
        Scenario::CensoringShift,
        Scenario::AllShift,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Homogeneous => "homogeneous",
            Scenario::CovariateShift => "covariate_shift",
            Scenario::OutcomeShift => "outcome_shift",
            Scenario::CensoringShift => "censoring_shift",
            Scenario::AllShift => "all_shift",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Scenario::ALL
            .into_iter()
            .find(|c| c.name() == key || c.name().replace('_', "") == key)
            .ok_or_else(|| Error::invalid(format!("unknown scenario '{s}'")))
    }
}

/// Per-site shift parameters: covariate shift `gamma`, event/censoring
/// trend shifts `d_t`, `d_c`, and treatment-interaction shifts `delta_t`,
/// `delta_c`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Knobs {
    pub gamma: f64,
    pub d_t: f64,
    pub d_c: f64,
    pub delta_t: f64,
    pub delta_c: f64,
}

impl Knobs {
    pub fn for_site(scenario: Scenario, k: usize) -> Knobs {
        let k = k as f64;
        match scenario {
            Scenario::Homogeneous => Knobs::default(),
            Scenario::CovariateShift => Knobs {
                gamma: k,
                ..Knobs::default()
            },
            Scenario::OutcomeShift => Knobs {
                d_t: k,
                delta_t: k,
                ..Knobs::default()
            },
            Scenario::CensoringShift => Knobs {
                d_c: k,
                delta_c: k,
                ..Knobs::default()
            },
            Scenario::AllShift => Knobs {
                gamma: k,
                d_t: k,
                d_c: k,
                delta_t: k,
                delta_c: k,
            },
        }
    }
}

/// A simulation design: scenario, number of sites and per-site sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub sites: usize,
    pub n0: usize,
    pub n_source: usize,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, n0: usize, n_source: usize) -> Self {
        ScenarioSpec {
            scenario,
            sites: 5,
            n0,
            n_source,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites == 0 {
            return Err(Error::invalid("sites must be at least 1"));
        }
        if self.n0 == 0 || (self.sites > 1 && self.n_source == 0) {
            return Err(Error::invalid("site sizes must be positive"));
        }
        Ok(())
    }

    pub fn knobs(&self, k: usize) -> Knobs {
        Knobs::for_site(self.scenario, k)
    }

    pub fn site_size(&self, k: usize) -> usize {
        if k == 0 {
            self.n0
        } else {
            self.n_source
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knob_table() {
        for k in 0..5 {
            let f = k as f64;
            assert_eq!(Knobs::for_site(Scenario::Homogeneous, k), Knobs::default());
            let c = Knobs::for_site(Scenario::CovariateShift, k);
            assert_eq!((c.gamma, c.d_t, c.d_c, c.delta_t, c.delta_c), (f, 0.0, 0.0, 0.0, 0.0));
            let o = Knobs::for_site(Scenario::OutcomeShift, k);
            assert_eq!((o.gamma, o.d_t, o.d_c, o.delta_t, o.delta_c), (0.0, f, 0.0, f, 0.0));
            let s = Knobs::for_site(Scenario::CensoringShift, k);
            assert_eq!((s.gamma, s.d_t, s.d_c, s.delta_t, s.delta_c), (0.0, 0.0, f, 0.0, f));
            let a = Knobs::for_site(Scenario::AllShift, k);
            assert_eq!((a.gamma, a.d_t, a.d_c, a.delta_t, a.delta_c), (f, f, f, f, f));
        }
    }

    #[test]
    fn names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(Scenario::parse(s.name()).unwrap(), s);
        }
        assert_eq!(Scenario::parse("Covariate-Shift").unwrap(), Scenario::CovariateShift);
        assert!(Scenario::parse("nope").is_err());
    }
}
