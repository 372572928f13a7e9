//! One-stage, two-stage and bootstrapped two-stage estimators of the
//! crossing point `d0 = f^{-1}(theta0)`, in ideal (true nuisances) and
//! practical (plug-in) forms.

pub mod config;
pub mod report;
pub mod stage_two;

pub use config::{stage_plan, uniform_design, DesignConfig, Procedure, StagePlan, TrueNuisance, Tuning};
pub use report::{EstimateReport, Interval, CSV_HEADER};
pub use stage_two::{
    bootstrap_roots, choose_second_stage_interval, fit_stage_two, invert_line, BootstrapRoots, LineInversion,
    SamplingInterval, SecondStageData,
};

use crate::error::{Error, Result};
use crate::isotonic::{fit_isotonic, DataSet, StepFunction};
use crate::limitdist::{one_stage_scale, two_stage_constants, ChernoffTable, MixtureEngine};
use crate::nuisance::{self, VarianceFunction};
use crate::oracles::ResponseOracle;
use crate::stats;

/// Smallest bootstrap size accepted by the bootstrap procedures.
pub const MIN_BOOTSTRAP: usize = 100;

/// Half-width of the window used by the isotonic secant fallback for `f'`.
const SECANT_HALF_WINDOW: f64 = 0.1;

#[derive(Debug, Clone)]
struct Nuisances {
    sigma: f64,
    fprime: f64,
    fsecond: f64,
    g: f64,
    var_fn: Option<VarianceFunction>,
}

impl Nuisances {
    fn from_truth(t: &TrueNuisance) -> Self {
        Nuisances {
            sigma: t.sigma,
            fprime: t.fprime,
            fsecond: t.fsecond,
            g: t.g,
            var_fn: None,
        }
    }
}

fn residual_variance(data: &DataSet, fit: &StepFunction) -> f64 {
    if data.len() < 2 {
        return 0.0;
    }
    fit.sse(data) / (data.len() - 1) as f64
}

/// Plug-in nuisances on stage-one data. Never fails: each failed estimate
/// is replaced by a simpler one and the substitution is recorded.
fn plugin_nuisances(
    data: &DataSet,
    fit: &StepFunction,
    d: f64,
    cfg: &DesignConfig,
    report: &mut EstimateReport,
) -> Nuisances {
    let s2 = match nuisance::estimate_sigma2(data) {
        Ok(v) => v.s2,
        Err(e) => {
            report.note("sigma2_error", e.to_string());
            report.fallback_used = true;
            residual_variance(data, fit)
        }
    };
    let mut sigma2_at_d = s2;
    let mut var_fn = None;
    if cfg.heteroskedastic {
        match nuisance::estimate_variance_function(data) {
            Ok(vf) => {
                sigma2_at_d = vf.at(d);
                report.note("variance_bandwidth", vf.bandwidth);
                var_fn = Some(vf);
            }
            Err(e) => {
                report.note("variance_function_error", e.to_string());
                report.fallback_used = true;
            }
        }
    }

    let mut fsecond = 0.0;
    let fprime = match nuisance::estimate_fprime(data, d, s2) {
        Ok(est) if est.fprime.is_finite() && est.fprime > 0.0 => {
            report.note("fprime_source", "local_quadratic");
            report.note("fprime_bandwidth", est.bandwidth);
            if est.f3_floored {
                report.flag("f3_floored");
            }
            if est.bandwidth_capped {
                report.flag("bandwidth_capped");
            }
            fsecond = 2.0 * est.eta[2];
            est.fprime
        }
        other => {
            match other {
                Ok(est) => report.note("fprime_local_quadratic", est.fprime),
                Err(e) => report.note("fprime_error", e.to_string()),
            }
            report.fallback_used = true;
            secant_fprime(data, fit, d, cfg, report)
        }
    };

    Nuisances {
        sigma: sigma2_at_d.max(0.0).sqrt(),
        fprime,
        fsecond,
        g: nuisance::design_density(data.xs(), d),
        var_fn,
    }
}

fn secant_fprime(data: &DataSet, fit: &StepFunction, d: f64, cfg: &DesignConfig, report: &mut EstimateReport) -> f64 {
    let xs = data.xs();
    let (xmin, xmax) = (xs[0], xs[xs.len() - 1]);
    let (a, b) = ((d - SECANT_HALF_WINDOW).max(xmin), (d + SECANT_HALF_WINDOW).min(xmax));
    if b > a {
        let local = (fit.evaluate(b) - fit.evaluate(a)) / (b - a);
        if local > 0.0 && local.is_finite() {
            report.note("fprime_source", "isotonic_secant");
            return local;
        }
    }
    if xmax > xmin {
        let levels = fit.levels();
        let global = (levels[levels.len() - 1] - levels[0]) / (xmax - xmin);
        if global > 0.0 && global.is_finite() {
            report.note("fprime_source", "global_secant");
            return global;
        }
    }
    report.note("fprime_source", "default");
    cfg.fprime_default
}

fn nuisances_for(
    data: &DataSet,
    fit: &StepFunction,
    d: f64,
    cfg: &DesignConfig,
    truth: Option<&TrueNuisance>,
    report: &mut EstimateReport,
) -> Nuisances {
    let nuis = match truth {
        Some(t) => Nuisances::from_truth(t),
        None => plugin_nuisances(data, fit, d, cfg, report),
    };
    report.sigma_hat = Some(nuis.sigma);
    report.fprime_hat = Some(nuis.fprime);
    report.note("design_density", nuis.g);
    nuis
}

fn sample_design(oracle: &mut dyn ResponseOracle, design: &[f64]) -> Result<DataSet> {
    let mut ys = Vec::with_capacity(design.len());
    for &x in design {
        ys.extend(oracle.sample(x, 1)?);
    }
    DataSet::new(design.to_vec(), ys)
}

fn check_truth(procedure: Procedure, truth: Option<&TrueNuisance>) -> Result<()> {
    if !procedure.is_practical() && truth.is_none() {
        return Err(Error::param(
            "truth",
            format!("{procedure} needs the true nuisance values"),
        ));
    }
    Ok(())
}

fn fit_and_invert(data: &DataSet, theta0: f64, report: &mut EstimateReport) -> Result<(StepFunction, f64)> {
    let fit = fit_isotonic(data)?;
    if fit.num_blocks() == 1 {
        report.flag("single_block");
    }
    let d = fit.inverse_at(theta0);
    Ok((fit, d))
}

/// One-stage estimate and confidence interval on already collected data.
pub fn osp_from_data(
    procedure: Procedure,
    data: &DataSet,
    cfg: &DesignConfig,
    truth: Option<&TrueNuisance>,
) -> Result<EstimateReport> {
    if procedure.is_two_stage() {
        return Err(Error::param(
            "procedure",
            format!("{procedure} is a two-stage procedure"),
        ));
    }
    check_truth(procedure, truth)?;
    cfg.validate()?;
    let n = data.len();
    let mut report = EstimateReport::new(procedure, cfg.theta0, n);
    let (fit, d) = fit_and_invert(data, cfg.theta0, &mut report)?;
    let nuis = nuisances_for(data, &fit, d, cfg, truth, &mut report);
    let c = one_stage_scale(nuis.fprime, nuis.sigma, nuis.g);
    let q = ChernoffTable::builtin().upper_quantile(cfg.alpha)?;
    let half = (n as f64).powf(-1.0 / 3.0) * c * q;
    report.note("C", c);
    report.note("q_alpha", q);
    report.d_hat = d;
    report.ci = Interval::around(d, half, half);
    if report.ci.lo > d - half || report.ci.hi < d + half {
        report.clamped = true;
        report.flag("ci_clamped");
    }
    Ok(report)
}

/// Outcome of a two-stage run, with bootstrap roots when they were drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageOutcome {
    pub report: EstimateReport,
    pub roots: Option<Vec<f64>>,
}

/// Two-stage estimation given stage-one data; stage-two responses come from
/// `oracle` at the chosen `L` and `U`, `n2` at each.
pub fn two_stage_from_data(
    procedure: Procedure,
    stage_one: &DataSet,
    n2: usize,
    oracle: &mut dyn ResponseOracle,
    cfg: &DesignConfig,
    truth: Option<&TrueNuisance>,
) -> Result<TwoStageOutcome> {
    if !procedure.is_two_stage() {
        return Err(Error::param(
            "procedure",
            format!("{procedure} is a one-stage procedure"),
        ));
    }
    check_truth(procedure, truth)?;
    cfg.validate()?;
    if n2 == 0 {
        return Err(Error::InvalidDesign(
            "need at least one second-stage point at each end".into(),
        ));
    }
    if procedure.is_bootstrap() && cfg.bootstrap < MIN_BOOTSTRAP {
        return Err(Error::param(
            "bootstrap",
            format!("need at least {MIN_BOOTSTRAP} replicates"),
        ));
    }
    let n1 = stage_one.len();
    let n = n1 + 2 * n2;
    let mut report = EstimateReport::new(procedure, cfg.theta0, n);
    report.n1 = n1;
    report.n2 = n2;

    let (fit, d1) = fit_and_invert(stage_one, cfg.theta0, &mut report)?;
    report.d_stage1 = Some(d1);
    let nuis = nuisances_for(stage_one, &fit, d1, cfg, truth, &mut report);
    let c_hat = one_stage_scale(nuis.fprime, nuis.sigma, nuis.g);
    let table = ChernoffTable::builtin();
    let q_beta = table.upper_quantile(cfg.beta)?;
    let interval = choose_second_stage_interval(d1, n1, &cfg.tuning, c_hat, q_beta, 0.5 / n as f64)?;
    report.l = Some(interval.l);
    report.u = Some(interval.u);
    report.note("halfwidth", interval.halfwidth);
    report.note("gamma", interval.gamma);
    report.note("K", interval.k);
    if interval.floored {
        report.flag("halfwidth_floored");
    }
    if interval.clamped {
        report.clamped = true;
        report.flag("interval_clamped");
    }

    let weights = match (&nuis.var_fn, procedure.is_practical() && cfg.heteroskedastic) {
        (Some(vf), true) => Some((1.0 / vf.at(interval.l), 1.0 / vf.at(interval.u))),
        _ => None,
    };
    let data = SecondStageData {
        l: interval.l,
        u: interval.u,
        y_at_l: oracle.sample(interval.l, n2)?,
        y_at_u: oracle.sample(interval.u, n2)?,
        weights,
    };
    let (b0, b1) = fit_stage_two(&data)?;
    report.note("beta0", b0);
    report.note("beta1", b1);
    let inv = invert_line(b0, b1, cfg.theta0, d1);
    if inv.clamped {
        report.clamped = true;
        report.flag("line_clamped");
    }
    if inv.fallback {
        report.fallback_used = true;
        report.flag("line_fallback");
    }
    let d = inv.d;
    report.d_hat = d;
    let sqrt_n = (n as f64).sqrt();

    let roots = if procedure.is_bootstrap() {
        let mut br = bootstrap_roots(&data, cfg.theta0, d1, d, n, cfg.bootstrap, cfg.seed, cfg.execution)?;
        let frac = br.fallbacks as f64 / cfg.bootstrap as f64;
        report.note("bootstrap_fallback_fraction", frac);
        if br.fallbacks == cfg.bootstrap {
            report.fallback_used = true;
            report.flag("bootstrap_all_fallback");
        }
        stats::sort_ascending(&mut br.roots);
        let q_lo = stats::lower_quantile_sorted(&br.roots, cfg.alpha);
        let q_hi = stats::upper_quantile_sorted(&br.roots, cfg.alpha);
        report.note("root_q_lo", q_lo);
        report.note("root_q_hi", q_hi);
        let (lo, hi) = (d - q_hi / sqrt_n, d - q_lo / sqrt_n);
        report.ci = Interval::around(d, d - lo, hi - d);
        if report.ci.lo > lo || report.ci.hi < hi {
            report.clamped = true;
            report.flag("ci_clamped");
        }
        if !report.ci.contains(d) {
            report.flag("ci_excludes_estimate");
        }
        Some(br.roots)
    } else {
        let q = if nuis.sigma > 0.0 {
            let p_eff = n1 as f64 / n as f64;
            let consts = two_stage_constants(
                nuis.fprime,
                nuis.sigma,
                p_eff,
                interval.k,
                nuis.g,
                nuis.fsecond,
                interval.gamma,
            )?;
            let c3 = consts.c3 * (n1 as f64).powf(interval.gamma - 1.0 / 3.0);
            report.note("C2", consts.c2);
            report.note("C3", c3);
            MixtureEngine::shared().upper_quantile(consts.c2, c3, cfg.alpha)
        } else {
            0.0
        };
        report.note("q_alpha", q);
        let half = q / sqrt_n;
        report.ci = Interval::around(d, half, half);
        if report.ci.lo > d - half || report.ci.hi < d + half {
            report.clamped = true;
            report.flag("ci_clamped");
        }
        None
    };
    Ok(TwoStageOutcome { report, roots })
}

/// Splits recorded data for a two-stage run. Stage one keeps every
/// `round(1/p)`-th point starting from the first; the remaining budget
/// allows `floor((N - n1) / 2)` new responses at each of `L` and `U`.
pub fn split_recorded(data: &DataSet, p: f64) -> Result<(DataSet, usize)> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param("p", format!("must lie in (0, 1), got {p}")));
    }
    let stride = (1.0 / p).round().max(1.0) as usize;
    let stage_one = data.every_nth(stride);
    let n2 = (data.len() - stage_one.len()) / 2;
    if n2 == 0 {
        return Err(Error::InvalidDesign(format!(
            "{} recorded points leave no budget for a second stage",
            data.len()
        )));
    }
    Ok((stage_one, n2))
}

/// Estimation from recorded data with plug-in nuisances. One-stage
/// procedures use all of `data`; two-stage procedures need `stage_two` to
/// supply fresh responses at the chosen `L` and `U`.
pub fn estimate_recorded(
    procedure: Procedure,
    data: &DataSet,
    stage_two: Option<&mut dyn ResponseOracle>,
    cfg: &DesignConfig,
) -> Result<EstimateReport> {
    if !procedure.is_practical() {
        return Err(Error::param(
            "procedure",
            format!("{procedure} needs true nuisance values; use {}", procedure.practical()),
        ));
    }
    if !procedure.is_two_stage() {
        return osp_from_data(procedure, data, cfg, None);
    }
    let oracle = stage_two.ok_or_else(|| {
        Error::param(
            "stage2",
            "two-stage estimation needs new responses at L and U, so recorded data alone are not enough",
        )
    })?;
    let (stage_one, n2) = split_recorded(data, cfg.p)?;
    let cfg = DesignConfig {
        n: stage_one.len() + 2 * n2,
        ..cfg.clone()
    };
    two_stage_from_data(procedure, &stage_one, n2, oracle, &cfg, None).map(|o| o.report)
}

fn stage_one_design(design: Option<&[f64]>, m: usize) -> Result<Vec<f64>> {
    match design {
        Some(d) if d.len() != m => Err(Error::InvalidDesign(format!(
            "design has {} points, expected {m}",
            d.len()
        ))),
        Some(d) => Ok(d.to_vec()),
        None => Ok(uniform_design(m)),
    }
}

/// Runs any procedure end to end against an oracle. `design` defaults to
/// `x_i = i / (m + 1)` over the stage-one size `m`.
pub fn run_procedure_detailed(
    procedure: Procedure,
    oracle: &mut dyn ResponseOracle,
    cfg: &DesignConfig,
    design: Option<&[f64]>,
    truth: Option<&TrueNuisance>,
) -> Result<TwoStageOutcome> {
    cfg.validate()?;
    if procedure.is_two_stage() {
        let plan = cfg.plan()?;
        let xs = stage_one_design(design, plan.n1)?;
        let data = sample_design(oracle, &xs)?;
        two_stage_from_data(procedure, &data, plan.n2, oracle, cfg, truth)
    } else {
        let xs = stage_one_design(design, cfg.n)?;
        let data = sample_design(oracle, &xs)?;
        Ok(TwoStageOutcome {
            report: osp_from_data(procedure, &data, cfg, truth)?,
            roots: None,
        })
    }
}

pub fn run_procedure(
    procedure: Procedure,
    oracle: &mut dyn ResponseOracle,
    cfg: &DesignConfig,
    design: Option<&[f64]>,
    truth: Option<&TrueNuisance>,
) -> Result<EstimateReport> {
    run_procedure_detailed(procedure, oracle, cfg, design, truth).map(|o| o.report)
}

pub fn run_osp(
    oracle: &mut dyn ResponseOracle,
    cfg: &DesignConfig,
    design: Option<&[f64]>,
    truth: &TrueNuisance,
) -> Result<EstimateReport> {
    run_procedure(Procedure::Osp, oracle, cfg, design, Some(truth))
}

pub fn run_tsp(
    oracle: &mut dyn ResponseOracle,
    cfg: &DesignConfig,
    design: Option<&[f64]>,
    truth: &TrueNuisance,
) -> Result<EstimateReport> {
    run_procedure(Procedure::Tsp, oracle, cfg, design, Some(truth))
}

pub fn run_btsp(
    oracle: &mut dyn ResponseOracle,
    cfg: &DesignConfig,
    design: Option<&[f64]>,
    truth: &TrueNuisance,
) -> Result<EstimateReport> {
    run_procedure(Procedure::Btsp, oracle, cfg, design, Some(truth))
}

/// POSP, PTSP or PBTSP (ideal tags are mapped to their practical forms).
pub fn run_practical(
    variant: Procedure,
    oracle: &mut dyn ResponseOracle,
    cfg: &DesignConfig,
    design: Option<&[f64]>,
) -> Result<EstimateReport> {
    run_procedure(variant.practical(), oracle, cfg, design, None)
}
