use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::Procedure;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// `[center - lower, center + upper]` intersected with `[0, 1]`.
    pub fn around(center: f64, lower: f64, upper: f64) -> Self {
        Interval {
            lo: (center - lower).clamp(0.0, 1.0),
            hi: (center + upper).clamp(0.0, 1.0),
        }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Result of one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub procedure: Procedure,
    pub theta0: f64,
    pub d_hat: f64,
    pub ci: Interval,
    pub n: usize,
    pub n1: usize,
    pub n2: usize,
    /// Stage-one estimate (two-stage procedures).
    pub d_stage1: Option<f64>,
    pub sigma_hat: Option<f64>,
    pub fprime_hat: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
    #[serde(rename = "U")]
    pub u: Option<f64>,
    /// Some value was clamped into `[0, 1]`: the sampling interval, the line
    /// inversion, or the confidence interval.
    pub clamped: bool,
    /// A fallback branch replaced a failed estimate.
    pub fallback_used: bool,
    pub diagnostics: BTreeMap<String, Value>,
}

pub const CSV_HEADER: &str =
    "procedure,theta0,d_hat,ci_lo,ci_hi,n,n1,n2,d_stage1,sigma_hat,fprime_hat,L,U,clamped,fallback_used";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EstimateReport {
    pub(crate) fn new(procedure: Procedure, theta0: f64, n: usize) -> Self {
        EstimateReport {
            procedure,
            theta0,
            d_hat: f64::NAN,
            ci: Interval { lo: 0.0, hi: 1.0 },
            n,
            n1: n,
            n2: 0,
            d_stage1: None,
            sigma_hat: None,
            fprime_hat: None,
            l: None,
            u: None,
            clamped: false,
            fallback_used: false,
            diagnostics: BTreeMap::new(),
        }
    }

    pub(crate) fn note(&mut self, key: &str, value: impl Into<Value>) {
        self.diagnostics.insert(key.to_string(), value.into());
    }

    pub(crate) fn flag(&mut self, key: &str) {
        self.note(key, true);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One CSV line matching [`CSV_HEADER`].
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.procedure,
            self.theta0,
            self.d_hat,
            self.ci.lo,
            self.ci.hi,
            self.n,
            self.n1,
            self.n2,
            opt(self.d_stage1),
            opt(self.sigma_hat),
            opt(self.fprime_hat),
            opt(self.l),
            opt(self.u),
            self.clamped,
            self.fallback_used
        )
    }
}
