//! Monte Carlo engines for the two limit laws used by the confidence
//! intervals: Chernoff's distribution (the argmax of two-sided Brownian
//! motion minus a parabola) and the scale mixture `c2 Z1 + c3 Z Z2`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{self, tags};
use crate::stats;

/// Grid and replication settings for simulating Chernoff's distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChernoffParams {
    /// The Brownian path is simulated on `[-half_width, half_width]`.
    pub half_width: f64,
    pub step: f64,
    pub replications: usize,
    pub seed: u64,
}

impl Default for ChernoffParams {
    fn default() -> Self {
        ChernoffParams {
            half_width: 3.0,
            step: 0.002,
            replications: 1_000_000,
            seed: 0x5EED_C4E2,
        }
    }
}

impl ChernoffParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_width.is_finite() && self.step.is_finite()) {
            return Err(Error::InvalidMonteCarlo("non-finite grid".into()));
        }
        if self.half_width <= 2.0 {
            return Err(Error::GridTooNarrow(self.half_width));
        }
        if self.step <= 0.0 || self.step >= self.half_width {
            return Err(Error::InvalidMonteCarlo(format!("step {} out of range", self.step)));
        }
        Ok(())
    }

    fn steps_per_side(&self) -> usize {
        (self.half_width / self.step).round() as usize
    }
}

/// One draw: argmax over the grid of a two-sided random walk (scaled by
/// `sqrt(step)`, started at 0) minus `t^2`.
fn chernoff_draw<R: Rng>(rng: &mut R, steps: usize, dt: f64) -> f64 {
    let sd = dt.sqrt();
    let mut best_val = 0.0;
    let mut best_t = 0.0;
    for sign in [1.0, -1.0] {
        let mut walk = 0.0;
        for k in 1..=steps {
            let z: f64 = rng.sample(StandardNormal);
            walk += sd * z;
            let t = k as f64 * dt;
            let v = walk - t * t;
            if v > best_val {
                best_val = v;
                best_t = sign * t;
            }
        }
    }
    best_t
}

/// Draws `count` variates from the discretized Chernoff distribution.
///
/// Draw `i` uses its own stream derived from `params.seed` and `i`, so the
/// output is identical for any execution strategy or chunking.
pub fn sample_chernoff(params: &ChernoffParams, count: usize, exec: Execution) -> Result<Vec<f64>> {
    sample_chernoff_offset(params, 0, count, exec)
}

/// Draws indices `offset..offset + count` of the stream defined by `params`.
pub fn sample_chernoff_offset(
    params: &ChernoffParams,
    offset: usize,
    count: usize,
    exec: Execution,
) -> Result<Vec<f64>> {
    sample_chernoff_chunked(params, offset, count, 4096, exec)
}

/// Chunked form of [`sample_chernoff`]; results do not depend on `chunk`.
pub fn sample_chernoff_chunked(
    params: &ChernoffParams,
    offset: usize,
    count: usize,
    chunk: usize,
    exec: Execution,
) -> Result<Vec<f64>> {
    params.validate()?;
    if count == 0 {
        return Err(Error::InvalidMonteCarlo("count must be at least 1".into()));
    }
    let steps = params.steps_per_side();
    let dt = params.half_width / steps as f64;
    let chunks = exec.map_chunks(count, chunk, |range| {
        range
            .map(|i| {
                let mut r = rng::stream(params.seed, &[tags::CHERNOFF, (offset + i) as u64]);
                chernoff_draw(&mut r, steps, dt)
            })
            .collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// Tail probabilities tabulated by default (upper quantiles).
pub const DEFAULT_TABLE_PROBS: [f64; 27] = [
    0.001, 0.0025, 0.005, 0.01, 0.02, 0.025, 0.03, 0.04, 0.05, 0.075, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5,
    0.6, 0.7, 0.8, 0.9, 0.95, 0.975, 0.99, 0.999,
];

const TABLE_VERSION: u32 = 1;

/// Tabulated upper quantiles of Chernoff's distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChernoffTable {
    pub probs: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub mc_params: ChernoffParams,
}

#[derive(Debug, Serialize, Deserialize)]
struct TableSidecar {
    version: u32,
    convention: String,
    #[serde(flatten)]
    mc_params: ChernoffParams,
}

static DEFAULT_TABLE: OnceLock<ChernoffTable> = OnceLock::new();

impl ChernoffTable {
    /// Simulates `params.replications` draws and tabulates `probs`.
    pub fn generate(params: &ChernoffParams, probs: &[f64], exec: Execution) -> Result<Self> {
        let mut draws = sample_chernoff(params, params.replications, exec)?;
        stats::sort_ascending(&mut draws);
        Self::from_sorted_draws(&draws, probs, *params)
    }

    pub fn from_sorted_draws(draws: &[f64], probs: &[f64], params: ChernoffParams) -> Result<Self> {
        let quantiles = probs.iter().map(|&p| stats::upper_quantile_sorted(draws, p)).collect();
        Self::new(probs.to_vec(), quantiles, params)
    }

    pub fn new(probs: Vec<f64>, quantiles: Vec<f64>, mc_params: ChernoffParams) -> Result<Self> {
        if probs.len() < 2 || probs.len() != quantiles.len() {
            return Err(Error::Parse("table needs at least two (prob, quantile) rows".into()));
        }
        if probs.windows(2).any(|w| w[0] >= w[1]) || probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::Parse("table probabilities must increase within (0, 1)".into()));
        }
        if quantiles.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Parse("table quantiles must strictly decrease".into()));
        }
        Ok(ChernoffTable {
            probs,
            quantiles,
            mc_params,
        })
    }

    /// The table shipped with the crate (`data/chernoff_table.*`).
    pub fn builtin() -> &'static ChernoffTable {
        DEFAULT_TABLE.get_or_init(|| {
            Self::parse(
                include_str!("../data/chernoff_table.csv"),
                include_str!("../data/chernoff_table.json"),
            )
            .expect("bundled Chernoff table is valid")
        })
    }

    pub fn parse(csv_text: &str, sidecar_json: &str) -> Result<Self> {
        let sidecar: TableSidecar = serde_json::from_str(sidecar_json).map_err(|e| Error::Parse(e.to_string()))?;
        if sidecar.version != TABLE_VERSION {
            return Err(Error::Parse(format!("unsupported table version {}", sidecar.version)));
        }
        let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
        let (mut probs, mut quantiles) = (Vec::new(), Vec::new());
        for row in reader.deserialize::<(f64, f64)>() {
            let (p, q) = row.map_err(|e| Error::Parse(e.to_string()))?;
            probs.push(p);
            quantiles.push(q);
        }
        Self::new(probs, quantiles, sidecar.mc_params)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("prob,quantile\n");
        for (p, q) in self.probs.iter().zip(&self.quantiles) {
            out.push_str(&format!("{p},{q}\n"));
        }
        out
    }

    pub fn sidecar_json(&self) -> String {
        let sidecar = TableSidecar {
            version: TABLE_VERSION,
            convention: "upper quantile: order statistic ceil((1 - prob) * replications)".into(),
            mc_params: self.mc_params,
        };
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n"
    }

    /// Writes `<stem>.csv` and `<stem>.json` next to each other.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        let json_path = csv_path.with_extension("json");
        std::fs::write(&json_path, self.sidecar_json()).map_err(|e| Error::io(&json_path, e))
    }

    pub fn read(csv_path: &Path) -> Result<Self> {
        let csv_text = std::fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let json_path = csv_path.with_extension("json");
        let json = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        Self::parse(&csv_text, &json)
    }

    pub fn upper_quantile(&self, alpha: f64) -> Result<f64> {
        chernoff_upper_quantile(alpha, self)
    }
}

/// Upper `alpha` quantile by linear interpolation in the table.
pub fn chernoff_upper_quantile(alpha: f64, table: &ChernoffTable) -> Result<f64> {
    let (min, max) = (table.probs[0], *table.probs.last().unwrap());
    if !(min..=max).contains(&alpha) {
        return Err(Error::QuantileOutOfRange { alpha, min, max });
    }
    let k = table.probs.partition_point(|&p| p < alpha);
    if table.probs[k] == alpha {
        return Ok(table.quantiles[k]);
    }
    let (p0, p1) = (table.probs[k - 1], table.probs[k]);
    let (q0, q1) = (table.quantiles[k - 1], table.quantiles[k]);
    Ok(q0 + (q1 - q0) * (alpha - p0) / (p1 - p0))
}

/// Specification of one mixture quantile computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureQuantileSpec {
    pub c2: f64,
    pub c3: f64,
    pub alpha: f64,
    pub replications: usize,
    pub seed: u64,
    /// Grid used for the Chernoff draws.
    pub grid: ChernoffParams,
}

impl MixtureQuantileSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.c2.is_finite() && self.c2 >= 0.0) {
            return Err(Error::param("c2", "must be finite and nonnegative"));
        }
        if !(self.c3.is_finite() && self.c3 >= 0.0) {
            return Err(Error::param("c3", "must be finite and nonnegative"));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) && self.alpha != 0.5 {
            return Err(Error::param("alpha", "must lie in (0, 0.5]"));
        }
        if self.replications == 0 {
            return Err(Error::param("replications", "must be positive"));
        }
        self.grid.validate()
    }
}

fn mixture_quantile_from_pool(c2: f64, c3: f64, alpha: f64, chernoff: &[f64], seed: u64) -> f64 {
    let mut r = rng::stream(seed, &[tags::MIXTURE]);
    let mut draws: Vec<f64> = chernoff
        .iter()
        .map(|&z| {
            let z1: f64 = r.sample(StandardNormal);
            let z2: f64 = r.sample(StandardNormal);
            c2 * z1 + c3 * z * z2
        })
        .collect();
    stats::sort_ascending(&mut draws);
    stats::upper_quantile_sorted(&draws, alpha)
}

/// Empirical upper `alpha` quantile of `c2 Z1 + c3 Z Z2` from
/// `spec.replications` independent draws, with fresh Chernoff draws.
pub fn mixture_upper_quantile(spec: &MixtureQuantileSpec, exec: Execution) -> Result<f64> {
    spec.validate()?;
    if spec.c3 == 0.0 {
        return Ok(spec.c2 * stats::normal_upper_quantile(spec.alpha));
    }
    let grid = ChernoffParams {
        seed: rng::derive_seed(spec.seed, &[tags::CHERNOFF]),
        ..spec.grid
    };
    let chernoff = sample_chernoff(&grid, spec.replications, exec)?;
    Ok(mixture_quantile_from_pool(
        spec.c2, spec.c3, spec.alpha, &chernoff, spec.seed,
    ))
}

fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

/// Mixture quantiles for repeated use inside a study.
///
/// Chernoff draws are simulated once into a pool; each quantile request
/// pairs the pool with fresh normals. Results are cached by `(c2, c3,
/// alpha)` rounded to four significant digits, and the value for a key does
/// not depend on request order.
pub struct MixtureEngine {
    pool: Arc<Vec<f64>>,
    seed: u64,
    cache: Mutex<HashMap<(u64, u64, u64), f64>>,
}

static SHARED_ENGINE: OnceLock<MixtureEngine> = OnceLock::new();

/// Pool size used by [`MixtureEngine::shared`].
pub const DEFAULT_MIXTURE_REPLICATIONS: usize = 200_000;

impl MixtureEngine {
    pub fn new(grid: &ChernoffParams, replications: usize, exec: Execution) -> Result<Self> {
        let pool = sample_chernoff(grid, replications, exec)?;
        Ok(MixtureEngine {
            pool: Arc::new(pool),
            seed: grid.seed,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Process-wide engine built lazily with the default grid.
    pub fn shared() -> &'static MixtureEngine {
        SHARED_ENGINE.get_or_init(|| {
            let grid = ChernoffParams {
                seed: 0x00C0_FFEE,
                ..ChernoffParams::default()
            };
            MixtureEngine::new(&grid, DEFAULT_MIXTURE_REPLICATIONS, Execution::Parallel).expect("default grid is valid")
        })
    }

    pub fn replications(&self) -> usize {
        self.pool.len()
    }

    pub fn upper_quantile(&self, c2: f64, c3: f64, alpha: f64) -> f64 {
        let (c2, c3, alpha) = (round_sig(c2, 4), round_sig(c3, 4), alpha);
        if c3 == 0.0 {
            return c2 * stats::normal_upper_quantile(alpha);
        }
        let key = (c2.to_bits(), c3.to_bits(), alpha.to_bits());
        if let Some(q) = self.cache.lock().unwrap().get(&key) {
            return *q;
        }
        let q = mixture_quantile_from_pool(c2, c3, alpha, &self.pool, self.seed);
        self.cache.lock().unwrap().insert(key, q);
        q
    }
}

/// Constants of the one- and two-stage limit distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitConstants {
    /// Asymptotic bias constant.
    pub c1: f64,
    /// Scale of the normal term.
    pub c2: f64,
    /// Scale of the Chernoff-times-normal term.
    pub c3: f64,
    /// One-stage scale `[4 sigma^2 / (f'(d0)^2 g(d0))]^(1/3)`.
    pub c: f64,
}

/// One-stage scale constant; zero when `sigma` is zero.
pub fn one_stage_scale(fprime: f64, sigma: f64, g_at_d0: f64) -> f64 {
    (4.0 * sigma * sigma / (fprime * fprime * g_at_d0)).cbrt()
}

pub fn two_stage_constants(
    fprime: f64,
    sigma: f64,
    p: f64,
    k: f64,
    g_at_d0: f64,
    fsecond: f64,
    gamma: f64,
) -> Result<LimitConstants> {
    let positive = |name: &'static str, v: f64| {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::param(name, format!("must be positive, got {v}")))
        }
    };
    positive("fprime", fprime)?;
    positive("sigma", sigma)?;
    positive("K", k)?;
    positive("g_at_d0", g_at_d0)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param("p", format!("must lie in (0, 1), got {p}")));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::param("gamma", format!("must be positive, got {gamma}")));
    }
    if !fsecond.is_finite() {
        return Err(Error::param("fsecond", "must be finite"));
    }
    let c = one_stage_scale(fprime, sigma, g_at_d0);
    let c2 = sigma / (fprime * (1.0 - p).sqrt());
    Ok(LimitConstants {
        c1: -k * k * p.powf(-2.0 * gamma) * fsecond / (2.0 * fprime),
        c2,
        c3: c * c2 / k,
        c,
    })
}
