//! Isotonic (monotone nondecreasing) least-squares regression by
//! pool-adjacent-violators, and the generalized inverse of the fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered observations `(x, y)` with optional positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    xs: Vec<f64>,
    ys: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl DataSet {
    /// Builds a dataset from parallel coordinate vectors. Points are sorted
    /// by `x` (stable), but ties are kept; see [`DataSet::canonicalize`].
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        Self::build(xs, ys, None)
    }

    pub fn with_weights(xs: Vec<f64>, ys: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::build(xs, ys, Some(weights))
    }

    pub fn from_pairs(points: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            points.iter().map(|p| p.0).collect(),
            points.iter().map(|p| p.1).collect(),
        )
    }

    fn build(xs: Vec<f64>, ys: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::InvalidData(format!(
                "{} x values but {} responses",
                xs.len(),
                ys.len()
            )));
        }
        if let Some(x) = xs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::OutOfDomain(*x));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFiniteResponse);
        }
        if let Some(w) = &weights {
            if w.len() != xs.len() {
                return Err(Error::InvalidData("weights length mismatch".into()));
            }
            if w.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                return Err(Error::InvalidData("weights must be positive".into()));
            }
        }
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Ok(DataSet {
            xs: pick(&xs),
            ys: pick(&ys),
            weights: weights.as_deref().map(pick),
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn has_ties(&self) -> bool {
        self.xs.windows(2).any(|w| w[0] == w[1])
    }

    /// Merges points sharing an `x` into one point carrying the summed
    /// weight and the weighted mean response.
    pub fn canonicalize(&self) -> DataSet {
        if !self.has_ties() {
            return self.clone();
        }
        let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..self.len() {
            let (x, y, w) = (self.xs[i], self.ys[i], self.weight(i));
            match xs.last() {
                Some(&last) if last == x => {
                    let k = ys.len() - 1;
                    let total: f64 = ws[k] + w;
                    ys[k] += (y - ys[k]) * w / total;
                    ws[k] = total;
                }
                _ => {
                    xs.push(x);
                    ys.push(y);
                    ws.push(w);
                }
            }
        }
        DataSet {
            xs,
            ys,
            weights: Some(ws),
        }
    }

    /// Keeps every `stride`-th point starting from the first.
    pub fn every_nth(&self, stride: usize) -> DataSet {
        let stride = stride.max(1);
        let keep = |v: &[f64]| v.iter().step_by(stride).copied().collect::<Vec<_>>();
        DataSet {
            xs: keep(&self.xs),
            ys: keep(&self.ys),
            weights: self.weights.as_deref().map(keep),
        }
    }

    /// Returns a copy with every response shifted by `c`.
    pub fn shifted(&self, c: f64) -> DataSet {
        DataSet {
            ys: self.ys.iter().map(|y| y + c).collect(),
            ..self.clone()
        }
    }
}

/// Right-continuous nondecreasing step function: `levels[k]` holds on
/// `[breakpoints[k], breakpoints[k + 1])`, and the first level extends to
/// the left of the first breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::EmptyInput);
        }
        if breakpoints.len() != levels.len() {
            return Err(Error::InvalidData("one level per breakpoint required".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidData("breakpoints must strictly increase".into()));
        }
        if levels.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidData("levels must be nondecreasing".into()));
        }
        Ok(StepFunction { breakpoints, levels })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn num_blocks(&self) -> usize {
        self.levels.len()
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&b| b <= x);
        self.levels[k.saturating_sub(1)]
    }

    /// `inf { x in [0, 1] : f(x) >= theta0 }`, with 1 when no level
    /// reaches `theta0`.
    pub fn inverse_at(&self, theta0: f64) -> f64 {
        match self.levels.iter().position(|&l| l >= theta0) {
            None => 1.0,
            Some(0) => 0.0,
            Some(k) => self.breakpoints[k],
        }
    }

    /// Weighted residual sum of squares of the fit against `data`.
    pub fn sse(&self, data: &DataSet) -> f64 {
        (0..data.len())
            .map(|i| {
                let r = data.ys()[i] - self.evaluate(data.xs()[i]);
                data.weight(i) * r * r
            })
            .sum()
    }
}

#[derive(Clone, Copy)]
struct Block {
    start: usize,
    weight: f64,
    mean: f64,
}

/// Fits the isotonic regression of `data` by pool-adjacent-violators.
///
/// Tied `x` values are merged first (weight sum, weighted mean response).
pub fn fit_isotonic(data: &DataSet) -> Result<StepFunction> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let data = data.canonicalize();
    let mut stack: Vec<Block> = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let mut cur = Block {
            start: i,
            weight: data.weight(i),
            mean: data.ys()[i],
        };
        while let Some(prev) = stack.last() {
            if prev.mean <= cur.mean {
                break;
            }
            let total = prev.weight + cur.weight;
            cur = Block {
                start: prev.start,
                weight: total,
                mean: prev.mean + (cur.mean - prev.mean) * (cur.weight / total),
            };
            stack.pop();
        }
        stack.push(cur);
    }
    Ok(StepFunction {
        breakpoints: stack.iter().map(|b| data.xs()[b.start]).collect(),
        levels: stack.iter().map(|b| b.mean).collect(),
    })
}

/// Free-function form of [`StepFunction::inverse_at`].
pub fn inverse_at(fit: &StepFunction, theta0: f64) -> f64 {
    fit.inverse_at(theta0)
}

/// Free-function form of [`StepFunction::evaluate`].
pub fn evaluate(fit: &StepFunction, x: f64) -> f64 {
    fit.evaluate(x)
}
