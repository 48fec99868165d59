use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use qpr_core::bootstrap::{bootstrap_pvalue, BootstrapConfig, NullSpec};
use qpr_core::dgp::{simulate_system, DgpConfig, InnovationSpec, PersistenceSpec};
use qpr_core::inference::{Hypothesis, Method};
use qpr_core::mc::{run_cell, McGrid};
use qpr_core::parallel::Execution;
use qpr_core::stats::QuantileLevel;

const MODES: [(&str, Execution); 2] = [
    ("parallel", Execution::Parallel),
    ("sequential", Execution::Sequential),
];

fn mc_cell(c: &mut Criterion) {
    let grid: McGrid = serde_json::from_str(
        r#"{
            "n": [300], "c": [-5.0], "rho_uv": [-0.9], "alpha": [0.0], "mu": [0.0],
            "beta": [0.0], "gamma_lag": [0.0], "innovations": [{"family": "gaussian"}],
            "tau": [0.5], "methods": ["el"], "calibration": ["asymptotic"],
            "hypothesis": "joint", "replications": 200, "master_seed": 3
        }"#,
    )
    .unwrap();
    let cell = &grid.cells()[0];
    let mut group = c.benchmark_group("mc_cell_el_200_reps");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_cell(black_box(cell), exec).unwrap())
        });
    }
    group.finish();
}

fn bootstrap(c: &mut Criterion) {
    let cfg = DgpConfig::new(
        500,
        PersistenceSpec::local_to_unity(-5.0),
        InnovationSpec::gaussian(1.0, 1.0, -0.5),
    );
    let sample = simulate_system(&cfg, 11).unwrap();
    let tau = QuantileLevel::new(0.5).unwrap();
    let null = NullSpec::new(Hypothesis::Joint, true);
    let mut group = c.benchmark_group("bootstrap_399");
    group.sample_size(10);
    for method in [Method::El, Method::Ivx] {
        for (name, exec) in MODES {
            let config = BootstrapConfig {
                execution: exec,
                ..BootstrapConfig::new(399, 5)
            };
            group.bench_function(BenchmarkId::new(method.as_str(), name), |b| {
                b.iter(|| bootstrap_pvalue(black_box(&sample), tau, method, &null, &config).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, mc_cell, bootstrap);
criterion_main!(benches);
