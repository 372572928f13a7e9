use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::Tuning;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{self, tags};

/// Second-stage sampling points and the tuning that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingInterval {
    pub l: f64,
    pub u: f64,
    pub halfwidth: f64,
    pub gamma: f64,
    pub k: f64,
    /// `d1 -/+ halfwidth` left `[0, 1]` and the interval was moved inward.
    pub clamped: bool,
    /// The half-width was raised to the configured minimum.
    pub floored: bool,
}

/// Places `L` and `U` around the stage-one estimate `d1`.
///
/// Under [`Tuning::Rule`] the half-width is `C q_beta n1^(-1/3)`; a fixed
/// tuning uses `K n1^(-gamma)`. Half-widths below `min_halfwidth` are raised
/// to it. An interval reaching past either end of `[0, 1]` is shifted inward
/// to keep its width (capped at the unit interval).
pub fn choose_second_stage_interval(
    d1: f64,
    n1: usize,
    tuning: &Tuning,
    c_hat: f64,
    q_beta: f64,
    min_halfwidth: f64,
) -> Result<SamplingInterval> {
    let n1f = n1 as f64;
    let (gamma, mut k) = match *tuning {
        Tuning::Rule => (1.0 / 3.0, c_hat * q_beta),
        Tuning::Fixed { gamma, k } => (gamma, k),
    };
    let mut halfwidth = k * n1f.powf(-gamma);
    let floored = !(halfwidth >= min_halfwidth);
    if floored {
        halfwidth = min_halfwidth;
        k = halfwidth * n1f.powf(gamma);
    }
    if !(halfwidth > 0.0 && halfwidth.is_finite()) {
        return Err(Error::DegenerateSamplingInterval);
    }
    let width = (2.0 * halfwidth).min(1.0);
    let (mut l, mut u) = (d1 - halfwidth, d1 + halfwidth);
    let clamped = l < 0.0 || u > 1.0;
    if l < 0.0 {
        l = 0.0;
        u = width;
    } else if u > 1.0 {
        u = 1.0;
        l = 1.0 - width;
    }
    Ok(SamplingInterval {
        l,
        u,
        halfwidth,
        gamma,
        k,
        clamped,
        floored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondStageData {
    pub l: f64,
    pub u: f64,
    pub y_at_l: Vec<f64>,
    pub y_at_u: Vec<f64>,
    /// Per-observation weights at `L` and `U` for weighted least squares.
    pub weights: Option<(f64, f64)>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Least-squares line through the two clusters of responses. Slope is the
/// difference of cluster means over `U - L`; the intercept puts the line
/// through the (weighted) centre of the data.
pub fn fit_stage_two(data: &SecondStageData) -> Result<(f64, f64)> {
    fit_clusters(data.l, data.u, &data.y_at_l, &data.y_at_u, data.weights)
}

fn fit_clusters(l: f64, u: f64, yl: &[f64], yu: &[f64], weights: Option<(f64, f64)>) -> Result<(f64, f64)> {
    if yl.is_empty() || yu.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(u > l) {
        return Err(Error::DegenerateSamplingInterval);
    }
    let (ml, mu) = (mean(yl), mean(yu));
    let beta1 = (mu - ml) / (u - l);
    let (wl, wu) = weights.unwrap_or((1.0, 1.0));
    let (wl, wu) = (wl * yl.len() as f64, wu * yu.len() as f64);
    let center = (wl * l + wu * u) / (wl + wu);
    let ybar = (wl * ml + wu * mu) / (wl + wu);
    Ok((ybar - center * beta1, beta1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineInversion {
    pub d: f64,
    pub clamped: bool,
    pub fallback: bool,
}

/// `(theta0 - beta0) / beta1` clamped to `[0, 1]`, or `d1_fallback` when the
/// fitted slope is not positive.
pub fn invert_line(beta0: f64, beta1: f64, theta0: f64, d1_fallback: f64) -> LineInversion {
    if !(beta1 > 0.0) {
        return LineInversion {
            d: d1_fallback,
            clamped: false,
            fallback: true,
        };
    }
    let raw = (theta0 - beta0) / beta1;
    let d = raw.clamp(0.0, 1.0);
    LineInversion {
        d,
        clamped: d != raw,
        fallback: false,
    }
}

/// Bootstrap roots `sqrt(n) (d* - d_tilde)` with the count of replicates
/// that hit the non-positive-slope fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapRoots {
    pub roots: Vec<f64>,
    pub fallbacks: usize,
}

/// Resamples responses at `L` and at `U` independently with replacement.
/// Replicate `b` draws from its own stream derived from `(seed, b)`.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_roots(
    data: &SecondStageData,
    theta0: f64,
    d1: f64,
    d_tilde: f64,
    n: usize,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<BootstrapRoots> {
    if data.y_at_l.is_empty() || data.y_at_u.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sqrt_n = (n as f64).sqrt();
    let draws = exec.map_indexed(replicates, |b| {
        let mut r = rng::stream(seed, &[tags::BOOTSTRAP, b as u64]);
        let mut resample =
            |src: &[f64]| -> Vec<f64> { (0..src.len()).map(|_| src[r.random_range(0..src.len())]).collect() };
        let yl = resample(&data.y_at_l);
        let yu = resample(&data.y_at_u);
        let (b0, b1) = fit_clusters(data.l, data.u, &yl, &yu, data.weights).expect("validated above");
        let inv = invert_line(b0, b1, theta0, d1);
        (sqrt_n * (inv.d - d_tilde), inv.fallback)
    });
    Ok(BootstrapRoots {
        fallbacks: draws.iter().filter(|d| d.1).count(),
        roots: draws.into_iter().map(|d| d.0).collect(),
    })
}
