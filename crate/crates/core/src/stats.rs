//! Small statistical helpers shared by the engines and the harness.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Order-statistic index `ceil(p * len) - 1`, clamped into range. The tiny
/// offset absorbs products like `0.025 * 1000 = 25.000000000000004`.
fn order_index(p: f64, len: usize) -> usize {
    let k = (p * len as f64 - 1e-9).ceil() as isize - 1;
    k.clamp(0, len as isize - 1) as usize
}

/// Lower `p` quantile of an ascending sample (inverse empirical CDF).
pub fn lower_quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    sorted[order_index(p, sorted.len())]
}

/// Upper `alpha` quantile of an ascending sample, i.e. the lower
/// `1 - alpha` quantile.
pub fn upper_quantile_sorted(sorted: &[f64], alpha: f64) -> f64 {
    lower_quantile_sorted(sorted, 1.0 - alpha)
}

pub fn sort_ascending(v: &mut [f64]) {
    v.sort_by(f64::total_cmp);
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with `n - 1` denominator.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

pub fn std_dev(v: &[f64]) -> f64 {
    variance(v).sqrt()
}

/// Upper `alpha` quantile of the standard normal.
pub fn normal_upper_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha)
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    sort_ascending(&mut a);
    sort_ascending(&mut b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Slope and its standard error from an ordinary least-squares line fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub std_error: f64,
}

pub fn ols_line(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(Error::InvalidData("line fit needs at least 3 paired points".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidData("line fit needs distinct x".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Ok(SlopeFit {
        slope,
        intercept,
        std_error: (rss / (n as f64 - 2.0) / sxx).sqrt(),
    })
}
