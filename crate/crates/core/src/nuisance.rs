//! Plug-in estimates of the nuisance quantities behind the practical
//! confidence intervals: error variance, the derivative at the estimated
//! root with its plug-in bandwidth, and a smoothed local variance function
//! for heteroskedastic responses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isotonic::DataSet;

/// Bandwidth constant of the local quadratic derivative estimator with the
/// Epanechnikov kernel.
pub const BANDWIDTH_CONSTANT: f64 = 2.275;

/// Floor applied to `|f'''|` in the plug-in bandwidth.
pub const THIRD_DERIVATIVE_FLOOR: f64 = 1e-3;

/// Default Nadaraya-Watson bandwidth for variance smoothing, as a fraction of
/// the design range.
pub const VARIANCE_BANDWIDTH_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub s2: f64,
    pub n_used: usize,
}

/// Interpolation coefficients `(a_i, b_i, c_i^2)` for each interior point.
pub fn pseudo_residual_coefficients(xs: &[f64]) -> Vec<(f64, f64, f64)> {
    xs.windows(3)
        .map(|w| {
            let span = w[2] - w[0];
            let a = (w[2] - w[1]) / span;
            let b = (w[1] - w[0]) / span;
            (a, b, 1.0 / (a * a + b * b + 1.0))
        })
        .collect()
}

/// Difference-based estimate of the error variance from the residuals of
/// interpolating each interior point linearly from its two neighbours.
pub fn estimate_sigma2(data: &DataSet) -> Result<VarianceEstimate> {
    let n = data.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    if data.has_ties() {
        return Err(Error::InvalidData("variance estimate needs distinct x".into()));
    }
    let ys = data.ys();
    let sum: f64 = pseudo_residual_coefficients(data.xs())
        .iter()
        .enumerate()
        .map(|(k, &(a, b, c2))| {
            let i = k + 1;
            let e = a * ys[i - 1] + b * ys[i + 1] - ys[i];
            c2 * e * e
        })
        .sum();
    Ok(VarianceEstimate {
        s2: sum / (n - 2) as f64,
        n_used: n - 2,
    })
}

pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Coefficients `alpha_0..alpha_5` of a quintic polynomial in `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Poly5(pub [f64; 6]);

impl Poly5 {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Weighted least squares via Householder QR. Returns `None` when the
/// design is numerically rank deficient.
fn weighted_lstsq(design: DMatrix<f64>, y: DVector<f64>, w: Option<&[f64]>) -> Option<DVector<f64>> {
    let (mut design, mut y) = (design, y);
    if let Some(w) = w {
        for (i, wi) in w.iter().enumerate() {
            let s = wi.sqrt();
            design.row_mut(i).scale_mut(s);
            y[i] *= s;
        }
    }
    let qr = design.qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..r.ncols()).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 || diag.iter().any(|d| *d <= 1e-12 * max) {
        return None;
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty)
}

/// Ordinary least-squares quintic fit.
pub fn fit_poly5(data: &DataSet) -> Result<Poly5> {
    let data = data.canonicalize();
    let n = data.len();
    if n < 6 {
        return Err(Error::DegeneratePolynomialDesign);
    }
    let design = DMatrix::from_fn(n, 6, |i, j| data.xs()[i].powi(j as i32));
    let y = DVector::from_column_slice(data.ys());
    let weights = data.weights().map(|w| w.to_vec());
    let coef = weighted_lstsq(design, y, weights.as_deref()).ok_or(Error::DegeneratePolynomialDesign)?;
    let mut out = [0.0; 6];
    out.copy_from_slice(coef.as_slice());
    Ok(Poly5(out))
}

pub fn third_derivative_at(poly: &Poly5, d: f64) -> f64 {
    let a = &poly.0;
    6.0 * a[3] + 24.0 * a[4] * d + 60.0 * a[5] * d * d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PluginBandwidth {
    pub h: f64,
    /// True when `|f'''|` fell below [`THIRD_DERIVATIVE_FLOOR`].
    pub f3_floored: bool,
}

/// `2.275 [s2 / f3^2]^(1/7) n^(-1/7)`.
pub fn plugin_bandwidth(s2: f64, f3: f64, n: usize) -> Result<PluginBandwidth> {
    if !(s2 > 0.0) {
        return Err(Error::NonpositiveVariance);
    }
    let f3_floored = !(f3.abs() >= THIRD_DERIVATIVE_FLOOR);
    let f3 = if f3_floored { THIRD_DERIVATIVE_FLOOR } else { f3 };
    let h = BANDWIDTH_CONSTANT * (s2 / (f3 * f3)).powf(1.0 / 7.0) * (n as f64).powf(-1.0 / 7.0);
    Ok(PluginBandwidth { h, f3_floored })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    pub fprime: f64,
    pub bandwidth: f64,
    /// Local intercept, slope and quadratic coefficient.
    pub eta: [f64; 3],
    /// The pilot quintic, when the bandwidth came from the plug-in rule.
    pub poly5: Option<Poly5>,
    #[serde(default)]
    pub f3_floored: bool,
    #[serde(default)]
    pub bandwidth_capped: bool,
}

/// Local quadratic regression at `d` with Epanechnikov weights
/// `K((x - d) / h) / h`; the slope coefficient estimates `f'(d)`.
pub fn local_quadratic_fprime(data: &DataSet, d: f64, h: f64) -> Result<DerivativeEstimate> {
    if !(h > 0.0) {
        return Err(Error::BandwidthTooSmall(0));
    }
    let data = data.canonicalize();
    let local: Vec<(f64, f64, f64)> = (0..data.len())
        .filter_map(|i| {
            let u = (data.xs()[i] - d) / h;
            let k = epanechnikov(u) / h * data.weight(i);
            (k > 0.0).then_some((data.xs()[i] - d, data.ys()[i], k))
        })
        .collect();
    if local.len() < 3 {
        return Err(Error::BandwidthTooSmall(local.len()));
    }
    let m = local.len();
    let design = DMatrix::from_fn(m, 3, |i, j| local[i].0.powi(j as i32));
    let y = DVector::from_iterator(m, local.iter().map(|p| p.1));
    let w: Vec<f64> = local.iter().map(|p| p.2).collect();
    let eta = weighted_lstsq(design, y, Some(&w)).ok_or(Error::DegenerateLocalDesign)?;
    Ok(DerivativeEstimate {
        fprime: eta[1],
        bandwidth: h,
        eta: [eta[0], eta[1], eta[2]],
        poly5: None,
        f3_floored: false,
        bandwidth_capped: false,
    })
}

/// Full plug-in derivative estimate at `d`: pilot quintic, third
/// derivative, plug-in bandwidth (capped at the design range), then the
/// local quadratic fit.
pub fn estimate_fprime(data: &DataSet, d: f64, s2: f64) -> Result<DerivativeEstimate> {
    let poly = fit_poly5(data)?;
    let f3 = third_derivative_at(&poly, d);
    let bw = plugin_bandwidth(s2, f3, data.len())?;
    let xs = data.xs();
    let range = xs[xs.len() - 1] - xs[0];
    let capped = bw.h > range;
    let h = if capped { range } else { bw.h };
    let mut est = local_quadratic_fprime(data, d, h)?;
    est.poly5 = Some(poly);
    est.f3_floored = bw.f3_floored;
    est.bandwidth_capped = capped;
    Ok(est)
}

/// Local density of the design points around `d`, from the span of the
/// nearest points on either side.
pub fn design_density(xs: &[f64], d: f64) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 1.0;
    }
    let half = (n / 20).max(2);
    let j = xs.partition_point(|&x| x < d);
    let lo = j.saturating_sub(half);
    let hi = (j + half).min(n) - 1;
    let (lo, hi) = if hi <= lo { (0, n - 1) } else { (lo, hi) };
    let span = xs[hi] - xs[lo];
    if span <= 0.0 {
        return 1.0;
    }
    (hi - lo) as f64 / (n as f64 * span)
}

/// Smoothed local variance function on the design grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceFunction {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
    pub floor: f64,
}

impl VarianceFunction {
    /// Linear interpolation on the grid, constant beyond its ends.
    pub fn at(&self, x: f64) -> f64 {
        let g = &self.grid;
        let k = g.partition_point(|&v| v <= x);
        if k == 0 {
            return self.values[0];
        }
        if k == g.len() {
            return self.values[g.len() - 1];
        }
        let t = (x - g[k - 1]) / (g[k] - g[k - 1]);
        self.values[k - 1] + t * (self.values[k] - self.values[k - 1])
    }
}

/// Local variance estimates `(Y_{i+1} - Y_i)^2 / 2` at midpoints, smoothed
/// by Epanechnikov Nadaraya-Watson with the default bandwidth.
pub fn estimate_variance_function(data: &DataSet) -> Result<VarianceFunction> {
    estimate_variance_function_with(data, VARIANCE_BANDWIDTH_FRACTION)
}

pub fn estimate_variance_function_with(data: &DataSet, bandwidth_fraction: f64) -> Result<VarianceFunction> {
    let n = data.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    if !(bandwidth_fraction > 0.0) {
        return Err(Error::param("bandwidth_fraction", "must be positive"));
    }
    let (xs, ys) = (data.xs(), data.ys());
    let range = xs[n - 1] - xs[0];
    if range <= 0.0 {
        return Err(Error::InvalidData("variance function needs spread in x".into()));
    }
    let h = bandwidth_fraction * range;
    let raw: Vec<(f64, f64)> = (0..n - 1)
        .map(|i| {
            let diff = (ys[i + 1] - ys[i]) / std::f64::consts::SQRT_2;
            (0.5 * (xs[i] + xs[i + 1]), diff * diff)
        })
        .collect();
    let (ymin, ymax) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    let floor = (1e-8 * (ymax - ymin).powi(2)).max(1e-12);
    let values = xs
        .iter()
        .map(|&x| {
            let (num, den) = raw.iter().fold((0.0, 0.0), |(num, den), &(m, v)| {
                let k = epanechnikov((m - x) / h);
                (num + k * v, den + k)
            });
            let smoothed = if den > 0.0 {
                num / den
            } else {
                raw.iter()
                    .min_by(|a, b| (a.0 - x).abs().total_cmp(&(b.0 - x).abs()))
                    .map(|p| p.1)
                    .unwrap()
            };
            smoothed.max(floor)
        })
        .collect();
    Ok(VarianceFunction {
        grid: xs.to_vec(),
        values,
        bandwidth: h,
        floor,
    })
}
