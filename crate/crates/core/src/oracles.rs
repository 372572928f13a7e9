//! Sources of responses at chosen design points: the two analytic test
//! functions with Gaussian or heteroskedastic noise, a replay oracle over
//! recorded data, and a discrete-time queue simulator.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::isotonic::DataSet;
use crate::rng::{self, StreamRng};

/// Anything that can be asked for `m` responses at covariate `x`.
pub trait ResponseOracle {
    fn sample(&mut self, x: f64, m: usize) -> Result<Vec<f64>>;

    /// The noiseless response curve, when known.
    fn true_f(&self, _x: f64) -> Option<f64> {
        None
    }

    /// The exact crossing point for `theta0`, when known.
    fn true_d0(&self, _theta0: f64) -> Option<Result<f64>> {
        None
    }

    fn metadata(&self) -> Value {
        Value::Null
    }
}

fn check_domain(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::OutOfDomain(x))
    }
}

/// Nondecreasing response curve on `[0, 1]`.
#[derive(Clone)]
pub enum ResponseFn {
    /// `x^2 + x/5`
    F1,
    /// `logistic(4 (x - 0.5))`
    F2,
    /// A caller-supplied nondecreasing function.
    Custom {
        name: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for ResponseFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl ResponseFn {
    pub fn custom(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ResponseFn::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ResponseFn::F1 => "f1",
            ResponseFn::F2 => "f2",
            ResponseFn::Custom { name, .. } => name,
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "f1" => Ok(ResponseFn::F1),
            "f2" => Ok(ResponseFn::F2),
            other => Err(Error::param(
                "f",
                format!("unknown function `{other}`, expected f1 or f2"),
            )),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ResponseFn::F1 => x * x + x / 5.0,
            ResponseFn::F2 => 1.0 / (1.0 + (-4.0 * (x - 0.5)).exp()),
            ResponseFn::Custom { f, .. } => f(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            ResponseFn::F1 => 2.0 * x + 0.2,
            ResponseFn::F2 => {
                let s = self.eval(x);
                4.0 * s * (1.0 - s)
            }
            ResponseFn::Custom { .. } => {
                let h = 1e-5;
                let (a, b) = ((x - h).max(0.0), (x + h).min(1.0));
                (self.eval(b) - self.eval(a)) / (b - a)
            }
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match self {
            ResponseFn::F1 => 2.0,
            ResponseFn::F2 => {
                let s = self.eval(x);
                16.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            ResponseFn::Custom { .. } => {
                let h = 1e-4;
                let x = x.clamp(h, 1.0 - h);
                (self.eval(x + h) - 2.0 * self.eval(x) + self.eval(x - h)) / (h * h)
            }
        }
    }

    /// Default target level, chosen so that the crossing point is 0.5.
    pub fn default_theta0(&self) -> f64 {
        self.eval(0.5)
    }

    /// Solves `f(d0) = theta0`; `theta0` must lie strictly inside the range
    /// of `f` over `[0, 1]`.
    pub fn inverse(&self, theta0: f64) -> Result<f64> {
        let (lo, hi) = (self.eval(0.0), self.eval(1.0));
        if !(theta0 > lo && theta0 < hi) {
            return Err(Error::TargetOutOfRange { theta0 });
        }
        match self {
            ResponseFn::F1 => Ok((-0.2 + (0.04 + 4.0 * theta0).sqrt()) / 2.0),
            ResponseFn::F2 => Ok(0.5 + (theta0 / (1.0 - theta0)).ln() / 4.0),
            ResponseFn::Custom { .. } => {
                let (mut a, mut b) = (0.0f64, 1.0f64);
                while b - a > 1e-13 {
                    let mid = 0.5 * (a + b);
                    if self.eval(mid) < theta0 {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                Ok(0.5 * (a + b))
            }
        }
    }
}

/// Additive noise `sigma(x) * N(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseModel {
    Gaussian {
        sigma: f64,
    },
    /// `sigma(x)` given on an ascending grid, linearly interpolated and held
    /// constant beyond the ends.
    Scaled {
        grid: Vec<f64>,
        sigmas: Vec<f64>,
    },
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::param("sigma", format!("must be nonnegative, got {sigma}")));
        }
        Ok(NoiseModel::Gaussian { sigma })
    }

    pub fn scaled(grid: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        if grid.is_empty() || grid.len() != sigmas.len() {
            return Err(Error::param("sigma grid", "needs matching nonempty x and sigma lists"));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("sigma grid", "x values must strictly increase"));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::param("sigma grid", "sigma values must be positive"));
        }
        Ok(NoiseModel::Scaled { grid, sigmas })
    }

    pub fn sigma_at(&self, x: f64) -> f64 {
        match self {
            NoiseModel::Gaussian { sigma } => *sigma,
            NoiseModel::Scaled { grid, sigmas } => {
                let k = grid.partition_point(|&g| g <= x);
                if k == 0 {
                    sigmas[0]
                } else if k == grid.len() {
                    sigmas[k - 1]
                } else {
                    let t = (x - grid[k - 1]) / (grid[k] - grid[k - 1]);
                    sigmas[k - 1] + t * (sigmas[k] - sigmas[k - 1])
                }
            }
        }
    }
}

/// Known curve plus noise, drawing from its own seeded stream.
pub struct AnalyticOracle {
    f: ResponseFn,
    noise: NoiseModel,
    seed: u64,
    rng: StreamRng,
}

pub fn analytic_oracle(f: ResponseFn, noise: NoiseModel, seed: u64) -> AnalyticOracle {
    AnalyticOracle {
        f,
        noise,
        seed,
        rng: rng::stream(seed, &[rng::tags::ORACLE]),
    }
}

/// Crossing point of a test function.
pub fn true_d0(f: &ResponseFn, theta0: f64) -> Result<f64> {
    f.inverse(theta0)
}

impl AnalyticOracle {
    pub fn function(&self) -> &ResponseFn {
        &self.f
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }
}

impl ResponseOracle for AnalyticOracle {
    fn sample(&mut self, x: f64, m: usize) -> Result<Vec<f64>> {
        check_domain(x)?;
        let (fx, s) = (self.f.eval(x), self.noise.sigma_at(x));
        Ok((0..m)
            .map(|_| fx + s * self.rng.sample::<f64, _>(StandardNormal))
            .collect())
    }

    fn true_f(&self, x: f64) -> Option<f64> {
        Some(self.f.eval(x))
    }

    fn true_d0(&self, theta0: f64) -> Option<Result<f64>> {
        Some(self.f.inverse(theta0))
    }

    fn metadata(&self) -> Value {
        json!({ "kind": "analytic", "f": self.f.name(), "noise": self.noise, "seed": self.seed })
    }
}

/// Discrete-time single-server FIFO queue. Loading `x` gives Bernoulli
/// arrivals with rate `x * service_rate`, so `x` is the utilization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueueConfig {
    /// Per-slot completion probability of the job in service.
    pub service_rate: f64,
    pub horizon: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            service_rate: 0.35,
            horizon: 4000,
            warmup: 500,
            seed: 0,
        }
    }
}

/// Loadings at or above this utilization are flagged as unstable.
pub const UNSTABLE_LOADING: f64 = 0.98;

impl QueueConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.service_rate > 0.0 && self.service_rate <= 1.0) {
            return Err(Error::param("service_rate", "must lie in (0, 1]"));
        }
        if self.horizon <= self.warmup {
            return Err(Error::param("horizon", "must exceed warmup"));
        }
        Ok(())
    }

    /// Parses `key=value` pairs separated by commas, e.g.
    /// `service_rate=0.3,horizon=5000`.
    pub fn parse_overrides(&self, spec: &str) -> Result<Self> {
        let mut cfg = *self;
        for pair in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got `{pair}`")))?;
            let bad = |e: &dyn fmt::Display| Error::Parse(format!("{key}: {e}"));
            match key.trim() {
                "service_rate" => cfg.service_rate = value.parse().map_err(|e| bad(&e))?,
                "horizon" => cfg.horizon = value.parse().map_err(|e| bad(&e))?,
                "warmup" => cfg.warmup = value.parse().map_err(|e| bad(&e))?,
                "seed" => cfg.seed = value.parse().map_err(|e| bad(&e))?,
                other => return Err(Error::Parse(format!("unknown queue option `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub struct QueueOracle {
    cfg: QueueConfig,
    rng: StreamRng,
    unstable: Vec<f64>,
}

pub fn queue_oracle(cfg: QueueConfig) -> Result<QueueOracle> {
    cfg.validate()?;
    Ok(QueueOracle {
        cfg,
        rng: rng::stream(cfg.seed, &[rng::tags::ORACLE]),
        unstable: Vec::new(),
    })
}

impl QueueOracle {
    pub fn config(&self) -> &QueueConfig {
        &self.cfg
    }

    /// Loadings sampled so far that were at or above the stability limit.
    pub fn unstable_loadings(&self) -> &[f64] {
        &self.unstable
    }

    /// One simulation run: mean sojourn time (slots) of jobs that arrive
    /// after warmup and finish within the horizon.
    fn run_once(&mut self, x: f64) -> f64 {
        let mu = self.cfg.service_rate;
        let lambda = x * mu;
        let mut queue: VecDeque<usize> = VecDeque::new();
        let (mut total, mut done) = (0.0f64, 0usize);
        for t in 0..self.cfg.horizon {
            if lambda > 0.0 && self.rng.random::<f64>() < lambda {
                queue.push_back(t);
            }
            if let Some(&arrival) = queue.front() {
                if self.rng.random::<f64>() < mu {
                    queue.pop_front();
                    if arrival >= self.cfg.warmup {
                        total += (t - arrival + 1) as f64;
                        done += 1;
                    }
                }
            }
        }
        if done == 0 {
            1.0 / mu
        } else {
            total / done as f64
        }
    }
}

impl ResponseOracle for QueueOracle {
    fn sample(&mut self, x: f64, m: usize) -> Result<Vec<f64>> {
        check_domain(x)?;
        if x >= UNSTABLE_LOADING && !self.unstable.contains(&x) {
            log::warn!("loading {x} is at or above the stability limit {UNSTABLE_LOADING}");
            self.unstable.push(x);
        }
        Ok((0..m).map(|_| self.run_once(x)).collect())
    }

    fn metadata(&self) -> Value {
        json!({
            "kind": "queue",
            "model": "discrete-time single-server FIFO, Bernoulli arrivals, geometric service",
            "config": self.cfg,
            "unstable_loadings": self.unstable,
        })
    }
}

/// Equally spaced loadings from `start` to `stop` inclusive, rounded to 10
/// decimals so that e.g. `0.14 + 3 * 0.01` is written as `0.17`.
pub fn loading_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) {
        return Err(Error::param("grid", "need step > 0 and stop >= start"));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e10).round() / 1e10)
        .collect())
}

/// Simulates `runs` responses at each loading, one `(x, y)` row per run.
pub fn queue_dataset(loadings: &[f64], runs: usize, cfg: QueueConfig) -> Result<(Vec<(f64, f64)>, Value)> {
    if let Some(&x) = loadings.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
        return Err(Error::param("grid", format!("loading {x} outside (0, 1)")));
    }
    let mut oracle = queue_oracle(cfg)?;
    let mut rows = Vec::with_capacity(loadings.len() * runs);
    for &x in loadings {
        for y in oracle.sample(x, runs)? {
            rows.push((x, y));
        }
    }
    let mut meta = oracle.metadata();
    meta["loadings"] = json!(loadings.len());
    meta["runs_per_loading"] = json!(runs);
    Ok((rows, meta))
}

/// Replays recorded responses; sampling at an unrecorded point fails.
#[derive(Debug, Clone)]
pub struct ReplayOracle {
    points: Vec<(f64, VecDeque<f64>)>,
}

/// Tolerance when matching a requested design point to a recorded one.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

pub fn replay_oracle(data: &DataSet, stage2: Option<&DataSet>) -> Result<ReplayOracle> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut oracle = ReplayOracle { points: Vec::new() };
    for d in std::iter::once(data).chain(stage2) {
        for (&x, &y) in d.xs().iter().zip(d.ys()) {
            oracle.push(x, y);
        }
    }
    Ok(oracle)
}

impl ReplayOracle {
    fn push(&mut self, x: f64, y: f64) {
        match self
            .points
            .iter_mut()
            .find(|(px, _)| (px - x).abs() <= REPLAY_TOLERANCE)
        {
            Some((_, ys)) => ys.push_back(y),
            None => self.points.push((x, VecDeque::from([y]))),
        }
    }

    pub fn remaining(&self, x: f64) -> usize {
        self.points
            .iter()
            .find(|(px, _)| (px - x).abs() <= REPLAY_TOLERANCE)
            .map_or(0, |(_, ys)| ys.len())
    }
}

impl ResponseOracle for ReplayOracle {
    fn sample(&mut self, x: f64, m: usize) -> Result<Vec<f64>> {
        let (_, ys) = self
            .points
            .iter_mut()
            .find(|(px, _)| (*px - x).abs() <= REPLAY_TOLERANCE)
            .ok_or(Error::UnrecordedPoint(x))?;
        if ys.len() < m {
            return Err(Error::ReplayExhausted(x));
        }
        Ok(ys.drain(..m).collect())
    }

    fn metadata(&self) -> Value {
        json!({ "kind": "replay", "points": self.points.len() })
    }
}

/// Reads an `x,y` CSV file. Errors carry the offending line number.
pub fn read_xy_csv(path: &Path) -> Result<DataSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xy_csv(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_xy_csv(text: &str) -> Result<DataSet> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
        return Err(Error::Parse("line 1: expected header `x,y`".into()));
    }
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<f64> {
            let raw = &record[i];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse(format!("line {line}: `{raw}` is not a finite number")))
        };
        let (x, y) = (field(0)?, field(1)?);
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Parse(format!("line {line}: x = {x} outside [0, 1]")));
        }
        points.push((x, y));
    }
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    DataSet::from_pairs(&points)
}

pub fn write_xy_csv(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from("x,y\n");
    for (x, y) in points {
        out.push_str(&format!("{x},{y}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
