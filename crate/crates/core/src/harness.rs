//! Monte Carlo studies over grids of test function, noise level, budget and
//! stage-one fraction, summarised as coverage, average length and mean
//! squared error.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::oracles::{analytic_oracle, NoiseModel, ResponseFn};
use crate::procedures::{
    run_procedure_detailed, DesignConfig, EstimateReport, Procedure, TrueNuisance, Tuning, TwoStageOutcome,
};
use crate::rng::{derive_seed, tags};
use crate::stats::{self, SlopeFit};

/// Cells are marked invalid when more than this fraction of replicates fail.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub functions: Vec<String>,
    pub sigmas: Vec<f64>,
    pub ns: Vec<usize>,
    pub ps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub f: String,
    pub sigma: f64,
    pub n: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    pub reps: usize,
    /// Per-procedure overrides of `reps`.
    pub reps_per_procedure: BTreeMap<Procedure, usize>,
    pub bootstrap: usize,
    pub alpha: f64,
    pub beta: f64,
    pub tuning: Tuning,
    pub procedures: Vec<Procedure>,
    /// `(primary, baseline)` pair used for the table export and ratios.
    pub pair: Option<(Procedure, Procedure)>,
    /// Target level per function tag; defaults give `d0 = 0.5`.
    pub theta0: BTreeMap<String, f64>,
    pub grid: Option<Grid>,
    /// Explicit cells, appended after the grid expansion.
    pub cells: Vec<CellSpec>,
    pub execution: Execution,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            seed: 1,
            reps: 100,
            reps_per_procedure: BTreeMap::new(),
            bootstrap: 1000,
            alpha: 0.025,
            beta: 0.025,
            tuning: Tuning::Rule,
            procedures: vec![Procedure::Pbtsp, Procedure::Posp],
            pair: Some((Procedure::Pbtsp, Procedure::Posp)),
            theta0: BTreeMap::new(),
            grid: None,
            cells: Vec::new(),
            execution: Execution::default(),
        }
    }
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| Error::InvalidStudy(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text).map_err(|e| Error::InvalidStudy(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.toml` or `.json` file, by extension.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text),
            Some("toml") => Self::from_toml(&text),
            _ => Err(Error::InvalidStudy(format!(
                "{}: expected a .toml or .json file",
                path.display()
            ))),
        }
    }

    pub fn theta0_for(&self, f: &ResponseFn) -> f64 {
        self.theta0.get(f.name()).copied().unwrap_or_else(|| f.default_theta0())
    }

    pub fn reps_for(&self, procedure: Procedure) -> usize {
        self.reps_per_procedure.get(&procedure).copied().unwrap_or(self.reps)
    }

    /// Grid cells followed by explicit cells.
    pub fn expand_cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        if let Some(g) = &self.grid {
            for f in &g.functions {
                for &sigma in &g.sigmas {
                    for &n in &g.ns {
                        for &p in &g.ps {
                            out.push(CellSpec {
                                f: f.clone(),
                                sigma,
                                n,
                                p,
                            });
                        }
                    }
                }
            }
        }
        out.extend(self.cells.iter().cloned());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidStudy(m));
        if self.reps == 0 || self.reps_per_procedure.values().any(|&r| r == 0) {
            return bad("reps: must be at least 1".into());
        }
        if self.procedures.is_empty() {
            return bad("procedures: list is empty".into());
        }
        if let Some((a, b)) = self.pair {
            if !self.procedures.contains(&a) || !self.procedures.contains(&b) {
                return bad(format!("pair: {a} and {b} must both appear in procedures"));
            }
        }
        let cells = self.expand_cells();
        if cells.is_empty() {
            return bad("grid/cells: no cells to run".into());
        }
        for (tag, theta0) in &self.theta0 {
            let f = ResponseFn::from_tag(tag).map_err(|e| Error::InvalidStudy(format!("theta0.{tag}: {e}")))?;
            f.inverse(*theta0)
                .map_err(|e| Error::InvalidStudy(format!("theta0.{tag}: {e}")))?;
        }
        for c in &cells {
            let f = ResponseFn::from_tag(&c.f).map_err(|e| Error::InvalidStudy(format!("cell f: {e}")))?;
            if !(c.sigma.is_finite() && c.sigma >= 0.0) {
                return bad(format!("cell sigma: must be nonnegative, got {}", c.sigma));
            }
            let design = self.design_config(&f, c, 0);
            design
                .validate()
                .map_err(|e| Error::InvalidStudy(format!("cell {c:?}: {e}")))?;
            if self.procedures.iter().any(|p| p.is_two_stage()) {
                design
                    .plan()
                    .map_err(|e| Error::InvalidStudy(format!("cell {c:?}: {e}")))?;
            }
        }
        Ok(())
    }

    fn design_config(&self, f: &ResponseFn, cell: &CellSpec, seed: u64) -> DesignConfig {
        DesignConfig {
            n: cell.n,
            p: cell.p,
            theta0: self.theta0_for(f),
            tuning: self.tuning,
            alpha: self.alpha,
            beta: self.beta,
            bootstrap: self.bootstrap,
            seed,
            heteroskedastic: false,
            fprime_default: 1.0,
            // replicates are already spread over workers
            execution: Execution::Sequential,
        }
    }
}

/// Summary of one (cell, procedure) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub f: String,
    pub sigma: f64,
    pub n: usize,
    pub p: f64,
    pub procedure: Procedure,
    pub theta0: f64,
    pub d0: f64,
    pub reps: usize,
    pub failures: usize,
    pub valid: bool,
    pub cr: f64,
    /// Binomial standard error of `cr`.
    pub cr_se: f64,
    pub al: f64,
    pub mse: f64,
    pub fallback_fraction: f64,
    pub clamp_fraction: f64,
    /// First few replicate errors, for inspection.
    pub errors: Vec<String>,
}

/// A row of the paired-procedure table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub f: String,
    pub p: f64,
    #[serde(rename = "σ")]
    pub sigma: f64,
    pub n: usize,
    #[serde(rename = "CR")]
    pub cr: f64,
    #[serde(rename = "CR1")]
    pub cr1: f64,
    #[serde(rename = "AL")]
    pub al: f64,
    #[serde(rename = "AL1")]
    pub al1: f64,
    #[serde(rename = "ALR")]
    pub alr: f64,
    #[serde(rename = "MSE")]
    pub mse: f64,
    #[serde(rename = "MSE1")]
    pub mse1: f64,
    #[serde(rename = "MSER")]
    pub mser: f64,
}

pub const TABLE_HEADER: [&str; 12] = [
    "f", "p", "σ", "n", "CR", "CR1", "AL", "AL1", "ALR", "MSE", "MSE1", "MSER",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub cells: Vec<CellResult>,
}

impl StudyResult {
    pub fn cell(&self, f: &str, sigma: f64, n: usize, p: f64, procedure: Procedure) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.f == f && c.sigma == sigma && c.n == n && c.p == p && c.procedure == procedure)
    }

    /// Rows pairing `primary` with `baseline` on every cell holding both.
    pub fn table(&self, primary: Procedure, baseline: Procedure) -> Vec<TableRow> {
        self.cells
            .iter()
            .filter(|c| c.procedure == primary)
            .filter_map(|a| {
                let b = self.cell(&a.f, a.sigma, a.n, a.p, baseline)?;
                Some(TableRow {
                    f: a.f.clone(),
                    p: a.p,
                    sigma: a.sigma,
                    n: a.n,
                    cr: a.cr,
                    cr1: b.cr,
                    al: a.al,
                    al1: b.al,
                    alr: a.al / b.al,
                    mse: a.mse,
                    mse1: b.mse,
                    mser: a.mse / b.mse,
                })
            })
            .collect()
    }

    fn pair_table(&self) -> Vec<TableRow> {
        match self.config.pair {
            Some((a, b)) => self.table(a, b),
            None => Vec::new(),
        }
    }
}

fn cell_key(cell: &CellSpec) -> u64 {
    let name = cell
        .f
        .bytes()
        .fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    derive_seed(name, &[cell.sigma.to_bits(), cell.n as u64, cell.p.to_bits()])
}

/// Per-replicate seeds `(oracle, procedure)`. The key omits the procedure
/// so that all procedures in a cell see the same oracle streams.
pub fn replicate_seeds(master: u64, cell: &CellSpec, rep: usize) -> (u64, u64) {
    let key = cell_key(cell);
    (
        derive_seed(master, &[key, rep as u64, tags::ORACLE]),
        derive_seed(master, &[key, rep as u64, tags::PROCEDURE]),
    )
}

/// Runs `reps` independent replicates of `procedure` on an analytic oracle.
/// Each replicate depends only on `(seed, cell, replicate index)`.
pub fn run_replicates(
    procedure: Procedure,
    cell: &CellSpec,
    design: &DesignConfig,
    reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Result<TwoStageOutcome>>> {
    let f = ResponseFn::from_tag(&cell.f)?;
    let noise = NoiseModel::gaussian(cell.sigma)?;
    let truth = TrueNuisance::for_function(&f, &noise, design.theta0)?;
    Ok(exec.map_indexed(reps, |rep| {
        let (oracle_seed, proc_seed) = replicate_seeds(seed, cell, rep);
        let mut oracle = analytic_oracle(f.clone(), noise.clone(), oracle_seed);
        let cfg = DesignConfig {
            seed: proc_seed,
            ..design.clone()
        };
        let truth = (!procedure.is_practical()).then_some(&truth);
        run_procedure_detailed(procedure, &mut oracle, &cfg, None, truth)
    }))
}

/// Coverage, length and error summaries over replicate reports.
pub fn summarize(reports: &[Result<EstimateReport>], d0: f64) -> (usize, f64, f64, f64, f64, f64) {
    let ok: Vec<&EstimateReport> = reports.iter().filter_map(|r| r.as_ref().ok()).collect();
    let m = ok.len().max(1) as f64;
    let frac = |pred: &dyn Fn(&EstimateReport) -> bool| ok.iter().filter(|r| pred(r)).count() as f64 / m;
    let cr = frac(&|r| r.ci.contains(d0));
    let al = ok.iter().map(|r| r.ci.length()).sum::<f64>() / m;
    let mse = ok.iter().map(|r| (r.d_hat - d0).powi(2)).sum::<f64>() / m;
    (
        reports.len() - ok.len(),
        cr,
        al,
        mse,
        frac(&|r| r.fallback_used),
        frac(&|r| r.clamped),
    )
}

pub fn run_cell(cfg: &StudyConfig, cell: &CellSpec, procedure: Procedure) -> Result<CellResult> {
    let f = ResponseFn::from_tag(&cell.f)?;
    let design = cfg.design_config(&f, cell, 0);
    let d0 = f.inverse(design.theta0)?;
    let reps = cfg.reps_for(procedure);
    let outcomes = run_replicates(procedure, cell, &design, reps, cfg.seed, cfg.execution)?;
    let reports: Vec<Result<EstimateReport>> = outcomes.into_iter().map(|o| o.map(|o| o.report)).collect();
    let (failures, cr, al, mse, fallback_fraction, clamp_fraction) = summarize(&reports, d0);
    let ok = (reps - failures) as f64;
    Ok(CellResult {
        f: cell.f.clone(),
        sigma: cell.sigma,
        n: cell.n,
        p: cell.p,
        procedure,
        theta0: design.theta0,
        d0,
        reps,
        failures,
        valid: failures as f64 <= MAX_FAILURE_FRACTION * reps as f64,
        cr,
        cr_se: if ok > 0.0 {
            (cr * (1.0 - cr) / ok).sqrt()
        } else {
            f64::NAN
        },
        al,
        mse,
        fallback_fraction,
        clamp_fraction,
        errors: reports
            .iter()
            .filter_map(|r| r.as_ref().err().map(|e| e.to_string()))
            .take(5)
            .collect(),
    })
}

pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    run_study_with(cfg, |_| Ok(()))
}

/// Runs every cell in order, calling `on_cell` with the partial result after
/// each one so callers can persist progress.
pub fn run_study_with(cfg: &StudyConfig, mut on_cell: impl FnMut(&StudyResult) -> Result<()>) -> Result<StudyResult> {
    cfg.validate()?;
    let mut result = StudyResult {
        config: cfg.clone(),
        cells: Vec::new(),
    };
    for cell in cfg.expand_cells() {
        for &procedure in &cfg.procedures {
            let start = Instant::now();
            let r = run_cell(cfg, &cell, procedure)?;
            log::info!(
                "{} f={} sigma={} n={} p={}: CR={:.3} (se {:.3}) AL={:.4} MSE={:.3e} failures={} [{:.1?}]",
                procedure,
                cell.f,
                cell.sigma,
                cell.n,
                cell.p,
                r.cr,
                r.cr_se,
                r.al,
                r.mse,
                r.failures,
                start.elapsed()
            );
            if !r.valid {
                log::warn!("cell marked invalid: {} of {} replicates failed", r.failures, r.reps);
            }
            result.cells.push(r);
            on_cell(&result)?;
        }
    }
    Ok(result)
}

/// OLS slope of `log RMSE` on `log n`.
pub fn rate_regression_points(points: &[(usize, f64)]) -> Result<SlopeFit> {
    let mut ns: Vec<usize> = points.iter().map(|p| p.0).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 4 {
        return Err(Error::InvalidStudy(format!(
            "rate regression needs at least 4 distinct n, got {}",
            ns.len()
        )));
    }
    let x: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    stats::ols_line(&x, &y)
}

/// Rate regression for one procedure. Cells must differ only in `n`.
pub fn rate_regression(results: &StudyResult, procedure: Procedure) -> Result<SlopeFit> {
    let cells: Vec<&CellResult> = results.cells.iter().filter(|c| c.procedure == procedure).collect();
    if let Some(first) = cells.first() {
        if cells
            .iter()
            .any(|c| c.f != first.f || c.sigma != first.sigma || c.p != first.p)
        {
            return Err(Error::InvalidStudy(
                "rate regression cells must share f, sigma and p".into(),
            ));
        }
    }
    let points: Vec<(usize, f64)> = cells.iter().map(|c| (c.n, c.mse.sqrt())).collect();
    rate_regression_points(&points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

pub fn export(results: &StudyResult, path: &Path, format: ExportFormat) -> Result<()> {
    let text = match format {
        ExportFormat::Json => serde_json::to_string_pretty(results).map_err(|e| Error::Parse(e.to_string()))? + "\n",
        ExportFormat::Csv => table_csv(&results.pair_table())?,
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn table_csv(rows: &[TableRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(TABLE_HEADER).map_err(|e| Error::Parse(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn import_json(path: &Path) -> Result<StudyResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn import_table_csv(path: &Path) -> Result<Vec<TableRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<TableRow>, _>>()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let pts: Vec<(usize, f64)> = [100, 200, 400, 800, 1600]
            .iter()
            .map(|&n| (n, (n as f64).powf(-1.0 / 3.0)))
            .collect();
        let fit = rate_regression_points(&pts).unwrap();
        assert!((fit.slope + 1.0 / 3.0).abs() < 1e-12);
        assert!(rate_regression_points(&pts[..3]).is_err());
    }

    #[test]
    fn grid_expansion_and_validation() {
        let cfg = StudyConfig {
            grid: Some(Grid {
                functions: vec!["f1".into(), "f2".into()],
                sigmas: vec![0.1, 0.3],
                ns: vec![100],
                ps: vec![0.5],
            }),
            ..StudyConfig::default()
        };
        assert_eq!(cfg.expand_cells().len(), 4);
        assert!(cfg.validate().is_ok());
        let bad = StudyConfig { reps: 0, ..cfg.clone() };
        assert!(matches!(bad.validate(), Err(Error::InvalidStudy(m)) if m.starts_with("reps")));
        let mut bad = cfg.clone();
        bad.theta0.insert("f2".into(), 0.95);
        assert!(bad.validate().is_err());
        assert!(StudyConfig::default().validate().is_err());
    }

    #[test]
    fn seeds_depend_on_cell_not_procedure() {
        let c = CellSpec {
            f: "f1".into(),
            sigma: 0.1,
            n: 100,
            p: 0.5,
        };
        let d = CellSpec { n: 200, ..c.clone() };
        assert_eq!(replicate_seeds(1, &c, 3), replicate_seeds(1, &c, 3));
        assert_ne!(replicate_seeds(1, &c, 3), replicate_seeds(1, &c, 4));
        assert_ne!(replicate_seeds(1, &c, 3).0, replicate_seeds(1, &d, 3).0);
        let (o, p) = replicate_seeds(1, &c, 3);
        assert_ne!(o, p);
    }

    #[test]
    fn noiseless_cell() {
        // with n = 99 the root 0.5 is a design point, so the degenerate
        // interval still covers it
        let cfg = StudyConfig {
            reps: 5,
            bootstrap: 100,
            cells: vec![CellSpec {
                f: "f1".into(),
                sigma: 0.0,
                n: 99,
                p: 0.5,
            }],
            procedures: vec![Procedure::Osp],
            pair: None,
            ..StudyConfig::default()
        };
        let r = run_study(&cfg).unwrap();
        let c = &r.cells[0];
        assert_eq!(c.cr, 1.0);
        assert!(c.mse < (1.0f64 / 101.0).powi(2));
    }

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(table_csv(&[]).unwrap(), "f,p,σ,n,CR,CR1,AL,AL1,ALR,MSE,MSE1,MSER\n");
    }
}
