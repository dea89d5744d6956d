use std::sync::Arc;

use stochch::harness::export::{EXPECT_HEADER, HISTOGRAM_HEADER, STEPS_HEADER};
use stochch::harness::{
    monte_carlo, read_checkpoint, run_realization, summarize, Checkpoint, Mode, RunConfig, RunOutput, Runner,
    TraceRecord,
};
use stochch::mesh::Mesh;
use stochch::noise::NoiseModel;
use stochch::scheme::NewtonConfig;
use stochch::Error;

fn small() -> RunConfig {
    RunConfig {
        eps: 1.0 / 8.0,
        h_tilde: 0.5,
        h_min: 1.0 / 16.0,
        tau: 1e-4,
        t_final: 1e-3,
        eigen_stride: 3,
        ..RunConfig::default()
    }
}

fn same_trace(a: &TraceRecord, b: &TraceRecord) {
    assert_eq!(a.steps.len(), b.steps.len());
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert_eq!(x.t.to_bits(), y.t.to_bits());
        assert_eq!(x.energy.to_bits(), y.energy.to_bits());
        assert_eq!(x.mass.to_bits(), y.mass.to_bits());
        assert_eq!(x.lambda.map(f64::to_bits), y.lambda.map(f64::to_bits));
        assert_eq!(x.dofs, y.dofs);
        let bits = |r: &stochch::estimators::IndicatorReport| -> Vec<u64> {
            r.eta_space.iter().chain(&r.eta_time).chain(&r.mu).chain(&r.muh).map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&x.report), bits(&y.report));
    }
    assert_eq!(a.peak_time, b.peak_time);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let cfg = small();
    let a = run_realization(&cfg, 3, &RunOutput::default()).unwrap();
    let b = run_realization(&cfg, 3, &RunOutput::default()).unwrap();
    same_trace(&a, &b);
    let c = run_realization(&cfg, 4, &RunOutput::default()).unwrap();
    assert_ne!(a.steps.last().unwrap().energy, c.steps.last().unwrap().energy);

    let det = RunConfig { mode: Mode::Deterministic, ..small() };
    same_trace(&run_realization(&det, 0, &RunOutput::default()).unwrap(), &run_realization(&det, 5, &RunOutput::default()).unwrap());
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let full = run_realization(&cfg, 1, &RunOutput::default()).unwrap();

    let mut runner = Runner::new(&cfg, 1).unwrap();
    for _ in 0..4 {
        runner.step().unwrap();
    }
    let path = dir.path().join("mid.ckpt");
    stochch::harness::write_checkpoint(&path, &runner.checkpoint()).unwrap();
    drop(runner);
    let cp: Checkpoint = read_checkpoint(&path).unwrap();
    let mut resumed = Runner::resume(cp).unwrap();
    while !resumed.is_done() {
        resumed.step().unwrap();
    }
    same_trace(&full, &resumed.finish(None));
}

#[test]
fn outputs_follow_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { vtk_times: vec![0.0, 5e-4], checkpoint_interval: 5, ..small() };
    let trace = run_realization(&cfg, 0, &RunOutput::under(dir.path(), "")).unwrap();

    let steps = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    let mut lines = steps.lines();
    assert_eq!(lines.next().unwrap(), STEPS_HEADER);
    assert_eq!(lines.count(), trace.steps.len());
    assert_eq!(STEPS_HEADER.split(',').count(), 26);

    let mut vtk: Vec<_> = std::fs::read_dir(dir.path().join("vtk")).unwrap().flatten().map(|e| e.path()).collect();
    vtk.sort();
    assert_eq!(vtk.len(), 2);
    let text = std::fs::read_to_string(&vtk[0]).unwrap();
    let cells: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("CELLS "))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    let cell_lines = text.lines().skip_while(|l| !l.starts_with("CELLS")).skip(1).take(cells);
    assert!(cell_lines.clone().all(|l| l.starts_with("3 ")));
    assert_eq!(cell_lines.count(), cells);
    for name in ["u", "w", "utilde", "uhat"] {
        assert!(text.contains(&format!("SCALARS {name} double")));
    }

    let ckpts: Vec<_> = std::fs::read_dir(dir.path().join("checkpoints")).unwrap().flatten().map(|e| e.path()).collect();
    assert_eq!(ckpts.len(), 3);
    let last = read_checkpoint(trace.final_state.as_ref().unwrap()).unwrap();
    let mesh = Mesh::from_keys(Arc::new(last.macro_mesh.clone()), &last.keys).unwrap();
    assert_eq!(last.fields[0].len(), mesh.vertex_count());
}

#[test]
fn vtk_cell_count_matches_the_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let runner = Runner::new(&small(), 0).unwrap();
    let path = dir.path().join("s.vtk");
    stochch::harness::export::write_state_vtk(&path, runner.state()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let header = text.lines().find(|l| l.starts_with("CELLS ")).unwrap();
    let n: usize = header.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert_eq!(n, runner.state().mesh().element_count());
    let types = text.lines().skip_while(|l| !l.starts_with("CELL_TYPES")).skip(1).take(n);
    assert!(types.into_iter().all(|l| l.trim() == "5"));
}

#[test]
fn single_realization_summary_has_no_standard_errors() {
    let cfg = small();
    let trace = run_realization(&cfg, 0, &RunOutput::default()).unwrap();
    let summary = summarize(&cfg, std::slice::from_ref(&trace)).unwrap();
    assert_eq!(summary.expectations.len(), trace.steps.len());
    for (e, s) in summary.expectations.iter().zip(&trace.steps) {
        assert_eq!(e.energy.mean, s.energy);
        assert_eq!(e.energy.se, None);
        assert_eq!(e.lambda.and_then(|l| l.se), None);
    }
    assert_eq!(summary.histogram.total(), 1);
}

#[test]
fn ensemble_files_and_histogram_total() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { realizations: 3, output: Some(dir.path().to_path_buf()), workers: 2, ..small() };
    let (summary, traces) = monte_carlo(&cfg).unwrap();
    assert_eq!(summary.failures, 0);
    assert_eq!(summary.histogram.total(), 3);
    assert_eq!(traces.len(), 3);
    assert!(summary.expectations.iter().all(|e| e.energy.se.is_some()));
    let first = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(first("expect.csv"), EXPECT_HEADER);
    assert_eq!(first("histogram.csv"), HISTOGRAM_HEADER);
    assert!(dir.path().join("realizations.toml").exists());

    // a rerun reuses the stored traces
    let (again, _) = monte_carlo(&cfg).unwrap();
    assert_eq!(again, summary);
}

#[test]
fn failed_realizations_are_reported() {
    let newton = NewtonConfig { rel_tol: 1e-300, abs_tol: 1e-300, max_iter: 1, ..NewtonConfig::default() };
    let cfg = RunConfig { newton, realizations: 2, ..small() };
    let trace = run_realization(&cfg, 0, &RunOutput::default()).unwrap();
    assert!(!trace.succeeded());
    assert_eq!(trace.steps.len(), 1);
    assert!(matches!(monte_carlo(&cfg), Err(Error::Solver(_))));
}

#[test]
fn reported_noise_indicator_is_the_model_formula() {
    let cfg = small();
    let trace = run_realization(&cfg, 0, &RunOutput::default()).unwrap();
    let mac = cfg.noise_macro().unwrap();
    let model = NoiseModel::new(Arc::new(mac.mesh()), cfg.sigma).unwrap();
    for s in &trace.steps[1..] {
        assert_eq!(s.report.eta_noise.to_bits(), model.indicator(s.report.tau).to_bits());
    }
}
