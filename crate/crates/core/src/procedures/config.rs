use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::oracles::{NoiseModel, ResponseFn};

/// Estimation procedures. The `P*` variants estimate every nuisance from
/// stage-one data; the others are handed the true values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Procedure {
    Osp,
    Tsp,
    Btsp,
    Posp,
    Ptsp,
    Pbtsp,
}

impl Procedure {
    pub const ALL: [Procedure; 6] = [
        Procedure::Osp,
        Procedure::Tsp,
        Procedure::Btsp,
        Procedure::Posp,
        Procedure::Ptsp,
        Procedure::Pbtsp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Procedure::Osp => "OSP",
            Procedure::Tsp => "TSP",
            Procedure::Btsp => "BTSP",
            Procedure::Posp => "POSP",
            Procedure::Ptsp => "PTSP",
            Procedure::Pbtsp => "PBTSP",
        }
    }

    pub fn is_practical(self) -> bool {
        matches!(self, Procedure::Posp | Procedure::Ptsp | Procedure::Pbtsp)
    }

    pub fn is_two_stage(self) -> bool {
        !matches!(self, Procedure::Osp | Procedure::Posp)
    }

    pub fn is_bootstrap(self) -> bool {
        matches!(self, Procedure::Btsp | Procedure::Pbtsp)
    }

    /// The counterpart that is handed the true nuisances.
    pub fn ideal(self) -> Procedure {
        match self {
            Procedure::Posp => Procedure::Osp,
            Procedure::Ptsp => Procedure::Tsp,
            Procedure::Pbtsp => Procedure::Btsp,
            p => p,
        }
    }

    pub fn practical(self) -> Procedure {
        match self {
            Procedure::Osp => Procedure::Posp,
            Procedure::Tsp => Procedure::Ptsp,
            Procedure::Btsp => Procedure::Pbtsp,
            p => p,
        }
    }
}

impl std::fmt::Display for Procedure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Procedure::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::param("procedure", format!("unknown procedure `{s}`")))
    }
}

/// How the second-stage half-width `K n1^(-gamma)` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Tuning {
    /// `gamma = 1/3`, `K = C q_beta`: the interval is a Wald-type interval
    /// around the stage-one estimate at level `beta`.
    Rule,
    Fixed {
        gamma: f64,
        k: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    /// Total sampling budget.
    pub n: usize,
    /// Stage-one fraction.
    pub p: f64,
    pub theta0: f64,
    pub tuning: Tuning,
    /// Each tail of the confidence interval.
    pub alpha: f64,
    /// Each tail of the stage-one interval used to place `L` and `U`.
    pub beta: f64,
    pub bootstrap: usize,
    pub seed: u64,
    pub heteroskedastic: bool,
    /// Used when every data-driven derivative estimate fails.
    pub fprime_default: f64,
    pub execution: Execution,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            n: 100,
            p: 0.5,
            theta0: 0.35,
            tuning: Tuning::Rule,
            alpha: 0.025,
            beta: 0.025,
            bootstrap: 1000,
            seed: 0,
            heteroskedastic: false,
            fprime_default: 1.0,
            execution: Execution::default(),
        }
    }
}

/// Budget split `n = n1 + 2 n2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub n: usize,
    pub n1: usize,
    pub n2: usize,
}

/// `n1` is `floor(n p)`, bumped by one when that leaves an odd remainder.
pub fn stage_plan(n: usize, p: f64) -> Result<StagePlan> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidDesign(format!("p must lie in (0, 1), got {p}")));
    }
    let base = (n as f64 * p + 1e-9).floor() as usize;
    let n1 = if (n - base.min(n)) % 2 == 1 { base + 1 } else { base };
    if n1 == 0 || n1 >= n {
        return Err(Error::InvalidDesign(format!(
            "budget n = {n} with p = {p} leaves no room for both stages"
        )));
    }
    Ok(StagePlan {
        n,
        n1,
        n2: (n - n1) / 2,
    })
}

/// Equally spaced design `x_i = i / (m + 1)`, `i = 1..=m`.
pub fn uniform_design(m: usize) -> Vec<f64> {
    (1..=m).map(|i| i as f64 / (m + 1) as f64).collect()
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |name: &'static str, v: f64, hi: f64| {
            if v > 0.0 && v < hi {
                Ok(())
            } else {
                Err(Error::param(name, format!("must lie in (0, {hi}), got {v}")))
            }
        };
        open("p", self.p, 1.0)?;
        open("alpha", self.alpha, 0.5)?;
        open("beta", self.beta, 0.5)?;
        if !self.theta0.is_finite() {
            return Err(Error::param("theta0", "must be finite"));
        }
        if let Tuning::Fixed { gamma, k } = self.tuning {
            open("gamma", gamma, 0.5)?;
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::param("K", format!("must be positive, got {k}")));
            }
        }
        if !(self.fprime_default.is_finite() && self.fprime_default > 0.0) {
            return Err(Error::param("fprime_default", "must be positive"));
        }
        if self.n < 2 {
            return Err(Error::InvalidDesign("budget n must be at least 2".into()));
        }
        Ok(())
    }

    pub fn plan(&self) -> Result<StagePlan> {
        stage_plan(self.n, self.p)
    }
}

/// True nuisance values handed to the ideal procedures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueNuisance {
    pub fprime: f64,
    pub fsecond: f64,
    pub sigma: f64,
    /// Design density at the crossing point.
    pub g: f64,
}

impl TrueNuisance {
    pub fn for_function(f: &ResponseFn, noise: &NoiseModel, theta0: f64) -> Result<Self> {
        let d0 = f.inverse(theta0)?;
        Ok(TrueNuisance {
            fprime: f.derivative(d0),
            fsecond: f.second_derivative(d0),
            sigma: noise.sigma_at(d0),
            g: 1.0,
        })
    }
}
