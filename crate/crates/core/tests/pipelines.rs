//! Behaviour of the test procedures, bootstrap and harness on simulated data.

use approx::assert_relative_eq;

use qpr_core::bootstrap::{bootstrap_pvalue, BootstrapConfig, NullSpec, WeightFamily};
use qpr_core::data::{parse_dataset_from_reader, run_empirical, ColumnMap, EmpiricalOptions, YearMonth};
use qpr_core::dgp::{simulate_system, DgpConfig, InnovationSpec, PersistenceSpec};
use qpr_core::el::{el_test, ElTestConfig};
use qpr_core::inference::{Calibration, Hypothesis, Method};
use qpr_core::ivx::{build_instrument, ivx_qr_test, IvxConfig, IvxTestConfig};
use qpr_core::mc::{results_to_csv, run_cell, run_grid, seed_collisions, McGrid};
use qpr_core::parallel::Execution;
use qpr_core::sample::TimeSeriesSample;
use qpr_core::stats::{ar1_ols, QuantileLevel};
use qpr_core::QprError;

fn near_unit_root_sample(seed: u64) -> TimeSeriesSample {
    let mut cfg = DgpConfig::new(
        400,
        PersistenceSpec::local_to_unity(-2.0).with_mu(0.3),
        InnovationSpec::gaussian(1.0, 1.0, -0.8),
    );
    cfg.alpha = 0.1;
    simulate_system(&cfg, seed).unwrap()
}

#[test]
fn instrument_is_less_persistent_than_a_unit_root_regressor() {
    let cfg = DgpConfig::new(1000, PersistenceSpec::local_to_unity(0.0), InnovationSpec::gaussian(1.0, 1.0, 0.0));
    let ivx = IvxConfig { c_z: 5.0, delta: 0.9 };
    let (mut rho_x, mut rho_z) = (0.0, 0.0);
    for seed in 0..50 {
        let s = simulate_system(&cfg, seed).unwrap();
        let z = build_instrument(s.x(), &ivx).unwrap();
        rho_x += ar1_ols(s.x()).unwrap().0 / 50.0;
        rho_z += ar1_ols(&z).unwrap().0 / 50.0;
    }
    let n = 1000.0;
    assert!(n * (1.0 - rho_z) > 2.0 * n * (1.0 - rho_x), "rho_x {rho_x}, rho_z {rho_z}");
}

#[test]
fn tests_are_invariant_to_rescaling_returns() {
    let tau = QuantileLevel::new(0.5).unwrap();
    for seed in [3, 4, 5] {
        let s = near_unit_root_sample(seed);
        let scaled = s.scale_y(0.01);
        for hyp in [Hypothesis::BetaOnly, Hypothesis::Joint] {
            let cfg = ElTestConfig::default();
            let a = el_test(&s, tau, hyp, &cfg).unwrap();
            let b = el_test(&scaled, tau, hyp, &cfg).unwrap();
            assert_relative_eq!(a.statistic, b.statistic, epsilon = 1e-6, max_relative = 1e-6);
            let cfg = IvxTestConfig::default();
            let a = ivx_qr_test(&s, tau, hyp, &cfg).unwrap();
            let b = ivx_qr_test(&scaled, tau, hyp, &cfg).unwrap();
            assert_relative_eq!(a.statistic, b.statistic, epsilon = 1e-6, max_relative = 1e-6);
        }
    }
}

#[test]
fn bootstrap_is_reproducible_and_independent_of_execution() {
    let s = near_unit_root_sample(11);
    let tau = QuantileLevel::new(0.5).unwrap();
    let null = NullSpec::new(Hypothesis::Joint, true);
    for method in [Method::El, Method::Ivx] {
        let seq = BootstrapConfig {
            execution: Execution::Sequential,
            ..BootstrapConfig::new(199, 21)
        };
        let par = BootstrapConfig {
            execution: Execution::Parallel,
            ..seq
        };
        let a = bootstrap_pvalue(&s, tau, method, &null, &seq).unwrap();
        let b = bootstrap_pvalue(&s, tau, method, &null, &par).unwrap();
        assert_eq!(a, b);
        assert!(a.p_value > 0.0 && a.p_value <= 1.0);
        assert!(a.critical_values.windows(2).all(|w| w[0].1 <= w[1].1));
    }
}

#[test]
fn identity_weights_collapse_the_bootstrap_distribution() {
    // With every weight equal to one the perturbed scores vanish, so each
    // replicated statistic is zero and only the observed value counts.
    let s = near_unit_root_sample(12);
    let tau = QuantileLevel::new(0.5).unwrap();
    let cfg = BootstrapConfig {
        weight_family: WeightFamily::Identity,
        ..BootstrapConfig::new(99, 1)
    };
    let out = bootstrap_pvalue(&s, tau, Method::Ivx, &NullSpec::new(Hypothesis::Joint, true), &cfg).unwrap();
    assert!(out.statistic > 0.0);
    assert_eq!(out.p_value, 1.0 / 100.0);
}

fn small_grid() -> McGrid {
    McGrid::from_json(
        r#"{
            "n": [150], "c": [0.0, -10.0], "rho_uv": [-0.9], "alpha": [0.0], "mu": [0.0],
            "beta": [0.0, 0.3], "gamma_lag": [0.0], "innovations": [{"family": "gaussian"}],
            "tau": [0.5], "methods": ["el", "ivx"], "calibration": ["asymptotic"],
            "hypothesis": "joint", "replications": 200, "master_seed": 77,
            "levels": [0.05, 0.1]
        }"#,
    )
    .unwrap()
}

#[test]
fn grid_output_does_not_depend_on_thread_count() {
    let grid = small_grid();
    let one = results_to_csv(&run_grid(&grid, 1).unwrap()).unwrap();
    let four = results_to_csv(&run_grid(&grid, 4).unwrap()).unwrap();
    assert_eq!(one, four);
    let (streams, collisions) = seed_collisions(&grid);
    assert_eq!(collisions, 0);
    assert!(streams > 0);
}

#[test]
fn cell_rates_are_consistent() {
    let grid = small_grid();
    for cell in grid.cells() {
        let seq = run_cell(&cell, Execution::Sequential).unwrap();
        let par = run_cell(&cell, Execution::Parallel).unwrap();
        assert_eq!(seq.rates, par.rates);
        assert_eq!(seq.valid + seq.convergence_failures, seq.replications);
        let r05 = seq.rate_at(0.05).unwrap();
        let r10 = seq.rate_at(0.1).unwrap();
        assert!(r05 <= r10);
    }
}

#[test]
fn grid_validation_names_the_empty_axis() {
    let err = McGrid::from_json(
        r#"{
            "n": [150], "c": [], "rho_uv": [0.0], "alpha": [0.0], "mu": [0.0],
            "beta": [0.0], "gamma_lag": [0.0], "innovations": [{"family": "gaussian"}],
            "tau": [0.5], "methods": ["el"], "calibration": ["asymptotic"],
            "hypothesis": "joint", "replications": 200, "master_seed": 1
        }"#,
    )
    .unwrap_err();
    assert!(matches!(err, QprError::InvalidInput(_)));
    assert!(err.to_string().contains("`c`"));
}

fn monthly_csv(rows: usize) -> String {
    let cfg = DgpConfig::new(rows, PersistenceSpec::local_to_unity(-5.0), InnovationSpec::gaussian(1.0, 1.0, -0.7));
    let s = simulate_system(&cfg, 5).unwrap();
    let mut out = String::from("yyyymm,ret,dp,tbl\n");
    let (mut year, mut month) = (1990, 1);
    for t in 0..rows {
        let ret = if t == 0 { 0.0 } else { s.y()[t - 1] / 100.0 };
        let tbl = if t == 30 { "NA".to_string() } else { format!("{}", (t as f64 * 0.37).sin()) };
        out += &format!("{year}{month:02},{ret},{},{tbl}\n", s.x()[t]);
        month += 1;
        if month > 12 {
            month = 1;
            year += 1;
        }
    }
    out
}

#[test]
fn empirical_report_covers_every_combination() {
    let text = monthly_csv(240);
    let map = ColumnMap {
        date: "yyyymm".into(),
        response: "ret".into(),
        predictors: vec!["dp".into(), "tbl".into()],
    };
    let ds = parse_dataset_from_reader(text.as_bytes(), &map).unwrap();
    assert_eq!(ds.dropped.len(), 1);
    let ds = ds
        .subset(Some(YearMonth::parse("1991-01").unwrap()), Some(YearMonth::parse("200912").unwrap()))
        .unwrap();
    let predictors = vec!["dp".to_string(), "tbl".to_string()];
    let taus = [0.1, 0.5, 0.9];
    let report = run_empirical(
        &ds,
        &predictors,
        &taus,
        &[Method::El, Method::Ivx],
        &[Calibration::Asymptotic],
        &EmpiricalOptions::default(),
    )
    .unwrap();
    assert_eq!(report.rows.len(), 2 * 3 * 2);
    assert!(report.rows.iter().all(|r| r.test.is_some() || r.error.is_some()));
    let csv = report.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 1 + report.rows.len());
    assert_eq!(report.first_date, YearMonth::parse("199101").unwrap());
}

#[test]
fn empirical_statistics_do_not_depend_on_return_units() {
    let text = monthly_csv(200);
    let percent = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            if i == 0 {
                return line.to_string();
            }
            let mut f: Vec<String> = line.split(',').map(String::from).collect();
            f[1] = format!("{}", f[1].parse::<f64>().unwrap() * 100.0);
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n");
    let map = ColumnMap {
        date: "yyyymm".into(),
        response: "ret".into(),
        predictors: vec!["dp".into()],
    };
    let run = |text: &str| {
        let ds = parse_dataset_from_reader(text.as_bytes(), &map).unwrap();
        run_empirical(
            &ds,
            &["dp".to_string()],
            &[0.25, 0.75],
            &[Method::El, Method::Ivx],
            &[Calibration::Asymptotic],
            &EmpiricalOptions::default(),
        )
        .unwrap()
    };
    let (a, b) = (run(&text), run(&percent));
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        let (ta, tb) = (ra.test.as_ref().unwrap(), rb.test.as_ref().unwrap());
        assert_relative_eq!(ta.statistic, tb.statistic, epsilon = 1e-6, max_relative = 1e-6);
    }
}
