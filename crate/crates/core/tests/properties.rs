use isoinv::harness::{self, ExportFormat, StudyConfig, TABLE_HEADER};
use isoinv::oracles::{analytic_oracle, NoiseModel, ResponseFn};
use isoinv::procedures::{osp_from_data, run_practical, DesignConfig, Procedure, Tuning};
use isoinv::{fit_isotonic, DataSet, Execution};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn noisy_data(seed: u64, n: usize, sigma: f64) -> DataSet {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let xs: Vec<f64> = (1..=n).map(|i| i as f64 / (n + 1) as f64).collect();
    let ys = xs
        .iter()
        .map(|x| x * x + sigma * (rng.random::<f64>() - 0.5) * 3.4)
        .collect();
    DataSet::new(xs, ys).unwrap()
}

fn cfg(n: usize, theta0: f64) -> DesignConfig {
    DesignConfig {
        n,
        theta0,
        ..DesignConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn osp_is_location_equivariant(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let data = noisy_data(seed, 60, 0.1);
        let a = osp_from_data(Procedure::Posp, &data, &cfg(60, 0.3), None).unwrap();
        let b = osp_from_data(Procedure::Posp, &data.shifted(shift), &cfg(60, 0.3 + shift), None).unwrap();
        prop_assert_eq!(a.d_hat, b.d_hat);
        prop_assert!((a.ci.lo - b.ci.lo).abs() < 1e-6);
        prop_assert!((a.ci.hi - b.ci.hi).abs() < 1e-6);
    }

    #[test]
    fn osp_estimate_is_monotone_in_target(seed in any::<u64>(), t1 in 0.05f64..0.9, dt in 0.0f64..0.3) {
        let data = noisy_data(seed, 40, 0.2);
        let lo = osp_from_data(Procedure::Posp, &data, &cfg(40, t1), None).unwrap();
        let hi = osp_from_data(Procedure::Posp, &data, &cfg(40, t1 + dt), None).unwrap();
        prop_assert!(lo.d_hat <= hi.d_hat);
    }

    #[test]
    fn intervals_stay_in_unit_range_and_cover_estimate(seed in any::<u64>(), theta in 0.0f64..1.0) {
        let data = noisy_data(seed, 30, 0.3);
        let r = osp_from_data(Procedure::Posp, &data, &cfg(30, theta), None).unwrap();
        prop_assert!(0.0 <= r.ci.lo && r.ci.lo <= r.d_hat && r.d_hat <= r.ci.hi && r.ci.hi <= 1.0);
    }

    #[test]
    fn fitted_inverse_matches_estimate(seed in any::<u64>(), theta in 0.1f64..0.9) {
        let data = noisy_data(seed, 50, 0.1);
        let fit = fit_isotonic(&data).unwrap();
        let r = osp_from_data(Procedure::Posp, &data, &cfg(50, theta), None).unwrap();
        prop_assert_eq!(fit.inverse_at(theta), r.d_hat);
    }
}

#[test]
fn two_stage_estimate_follows_shifted_response() {
    let f = ResponseFn::F2;
    let g = ResponseFn::custom("f2_plus_3", |x| ResponseFn::F2.eval(x) + 3.0);
    let noise = NoiseModel::gaussian(0.1).unwrap();
    let theta = f.default_theta0();
    for seed in 0..5 {
        let mut a = analytic_oracle(f.clone(), noise.clone(), seed);
        let mut b = analytic_oracle(g.clone(), noise.clone(), seed);
        let base = DesignConfig {
            n: 100,
            p: 0.5,
            theta0: theta,
            bootstrap: 200,
            seed,
            ..DesignConfig::default()
        };
        let ra = run_practical(Procedure::Pbtsp, &mut a, &base, None).unwrap();
        let shifted = DesignConfig {
            theta0: theta + 3.0,
            ..base.clone()
        };
        let rb = run_practical(Procedure::Pbtsp, &mut b, &shifted, None).unwrap();
        assert!((ra.d_hat - rb.d_hat).abs() < 1e-9, "seed {seed}");
        assert!((ra.ci.length() - rb.ci.length()).abs() < 1e-6, "seed {seed}");
    }
}

#[test]
fn practical_estimates_improve_with_budget() {
    let f = ResponseFn::F1;
    let noise = NoiseModel::gaussian(0.1).unwrap();
    let d0 = 0.5;
    let mse = |procedure: Procedure, n: usize| {
        let reps = 200;
        let total: f64 = (0..reps)
            .map(|s| {
                let mut o = analytic_oracle(f.clone(), noise.clone(), 1000 + s);
                let c = DesignConfig {
                    n,
                    theta0: f.default_theta0(),
                    bootstrap: 100,
                    seed: s,
                    execution: Execution::Sequential,
                    ..DesignConfig::default()
                };
                (run_practical(procedure, &mut o, &c, None).unwrap().d_hat - d0).powi(2)
            })
            .sum();
        total / reps as f64
    };
    for procedure in [Procedure::Posp, Procedure::Ptsp] {
        let small = mse(procedure, 100);
        let large = mse(procedure, 800);
        assert!(large < 0.5 * small, "{procedure}: {small} -> {large}");
    }
}

fn smoke_config() -> StudyConfig {
    StudyConfig::from_toml(
        r#"
        seed = 3
        reps = 20
        bootstrap = 100
        procedures = ["PBTSP", "POSP", "PTSP"]
        pair = ["PBTSP", "POSP"]

        [reps_per_procedure]
        POSP = 30

        [theta0]
        f1 = 0.25

        [grid]
        functions = ["f1", "f2"]
        sigmas = [0.1]
        ns = [100]
        ps = [0.5]

        [[cells]]
        f = "f2"
        p = 0.4
        sigma = 0.3
        n = 60
        "#,
    )
    .unwrap()
}

#[test]
fn toml_config_fields_are_honoured() {
    let cfg = smoke_config();
    assert_eq!(cfg.reps_for(Procedure::Posp), 30);
    assert_eq!(cfg.reps_for(Procedure::Pbtsp), 20);
    assert_eq!(cfg.theta0_for(&ResponseFn::F1), 0.25);
    assert_eq!(cfg.theta0_for(&ResponseFn::F2), ResponseFn::F2.default_theta0());
    assert_eq!(cfg.tuning, Tuning::Rule);
    let cells = cfg.expand_cells();
    assert_eq!(cells.len(), 3);
    assert_eq!((cells[2].f.as_str(), cells[2].p, cells[2].n), ("f2", 0.4, 60));

    let bad_key = "reps_per_procedure = { QSP = 3 }\n[grid]\nfunctions=[\"f1\"]\nsigmas=[0.1]\nns=[50]\nps=[0.5]\n";
    let err = StudyConfig::from_toml(bad_key).unwrap_err().to_string();
    assert!(err.contains("QSP"), "{err}");
    assert!(StudyConfig::from_toml(&bad_key.replace("QSP", "pbtsp")).is_err());
    let upper = bad_key.replace("QSP", "PBTSP");
    assert_eq!(StudyConfig::from_toml(&upper).unwrap().reps_for(Procedure::Pbtsp), 3);

    let json = serde_json::to_string(&cfg).unwrap();
    assert_eq!(StudyConfig::from_json(&json).unwrap(), cfg);
}

#[test]
fn study_exports_round_trip() {
    let cfg = smoke_config();
    let result = harness::run_study(&cfg).unwrap();
    assert_eq!(result.cells.len(), 9);
    assert!(result.cells.iter().all(|c| c.valid));
    let posp = result.cell("f1", 0.1, 100, 0.5, Procedure::Posp).unwrap();
    assert_eq!((posp.reps, posp.theta0), (30, 0.25));

    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let csv = dir.path().join("r.csv");
    harness::export(&result, &json, ExportFormat::Json).unwrap();
    harness::export(&result, &csv, ExportFormat::Csv).unwrap();
    assert_eq!(harness::import_json(&json).unwrap(), result);

    let rows = harness::import_table_csv(&csv).unwrap();
    assert_eq!(rows, result.table(Procedure::Pbtsp, Procedure::Posp));
    assert_eq!(rows.len(), 3);
    let text = std::fs::read_to_string(&csv).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header, TABLE_HEADER);
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').count(), 12);
    }
    for row in &rows {
        assert!((row.alr - row.al / row.al1).abs() < 1e-12);
        assert!((row.mser - row.mse / row.mse1).abs() < 1e-12);
    }
}

#[test]
fn study_results_do_not_depend_on_execution_mode() {
    let mut cfg = smoke_config();
    cfg.execution = Execution::Sequential;
    let seq = harness::run_study(&cfg).unwrap();
    cfg.execution = Execution::Parallel;
    let par = harness::run_study(&cfg).unwrap();
    assert_eq!(seq.cells, par.cells);
}

#[test]
fn common_oracle_streams_across_procedures() {
    let cfg = smoke_config();
    let cell = &cfg.expand_cells()[0];
    let (o1, p1) = harness::replicate_seeds(cfg.seed, cell, 4);
    let (o2, _) = harness::replicate_seeds(cfg.seed, cell, 4);
    let (o3, _) = harness::replicate_seeds(cfg.seed, cell, 5);
    assert_eq!(o1, o2);
    assert_ne!(o1, o3);
    assert_ne!(o1, p1);
}

#[test]
fn rate_fit_recovers_synthetic_slopes() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
    for slope in [-0.5, -1.0 / 3.0] {
        let pts: Vec<(usize, f64)> = [100, 200, 400, 800, 1600]
            .iter()
            .map(|&n| {
                (
                    n,
                    0.7 * (n as f64).powf(slope) * (1.0 + 0.01 * (rng.random::<f64>() - 0.5)),
                )
            })
            .collect();
        let fit = harness::rate_regression_points(&pts).unwrap();
        assert!((fit.slope - slope).abs() < 0.01, "{slope} vs {}", fit.slope);
    }
}
