//! Acceptance suite. Every criterion prints one line
//!
//! ```text
//! criterion N PASS|FAIL <measurements> [seconds]
//! ```
//!
//! and its verdict is checked against [`KNOWN_FAILING`]. The run fails if a
//! criterion changes outcome or panics. Criterion 9 is extended and runs only
//! with `--ignored` or `--include-ignored`; other arguments select criteria by
//! a substring of their names.
//!
//! ```text
//! cargo test --release --test acceptance
//! cargo test --release --test acceptance -- --ignored
//! ```

use std::any::Any;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use stochch::eigen::{instability_peak_time, principal_eigenvalue, EigenConfig, EigenMethod};
use stochch::fem::assembly::{integrate, load_vector, nonlinear_load};
use stochch::fem::transfer::mixed_mass_action;
use stochch::fem::{FeFunction, FeSpace};
use stochch::harness::{
    convergence_study, min_within, monte_carlo, read_checkpoint, run_realization, write_checkpoint, InitialCondition,
    Ladder, Mode, RunConfig, RunOutput, Runner, TraceRecord,
};
use stochch::mesh::{MacroMesh, Mesh, Rect};
use stochch::noise::{NoiseModel, NoiseStream};
use stochch::scheme::{f, potential, StepState};

/// Criteria whose measured outcome is a failure; see the README.
const KNOWN_FAILING: &[usize] = &[3, 8];

struct Verdict {
    pass: bool,
    detail: String,
}

struct Criterion {
    n: usize,
    name: &'static str,
    extended: bool,
    run: fn() -> Verdict,
}

const CRITERIA: &[Criterion] = &[
    Criterion { n: 1, name: "criterion_01_mass_conservation", extended: false, run: criterion_01_mass_conservation },
    Criterion { n: 2, name: "criterion_02_splitting_and_transformation", extended: false, run: criterion_02_splitting_and_transformation },
    Criterion { n: 3, name: "criterion_03_linear_convergence", extended: false, run: criterion_03_linear_convergence },
    Criterion { n: 4, name: "criterion_04_noise_statistics", extended: false, run: criterion_04_noise_statistics },
    Criterion { n: 5, name: "criterion_05_noise_indicator", extended: false, run: criterion_05_noise_indicator },
    Criterion { n: 6, name: "criterion_06_principal_eigenvalue", extended: false, run: criterion_06_principal_eigenvalue },
    Criterion { n: 7, name: "criterion_07_inequalities", extended: false, run: criterion_07_inequalities },
    Criterion { n: 8, name: "criterion_08_deterministic_scenario", extended: false, run: criterion_08_deterministic_scenario },
    Criterion { n: 9, name: "criterion_09_stochastic_peak_times", extended: true, run: criterion_09_stochastic_peak_times },
    Criterion { n: 10, name: "criterion_10_determinism_and_persistence", extended: false, run: criterion_10_determinism_and_persistence },
];

fn panic_message(payload: &(dyn Any + Send)) -> String {
    match (payload.downcast_ref::<&str>(), payload.downcast_ref::<String>()) {
        (Some(s), _) => s.to_string(),
        (_, Some(s)) => s.clone(),
        _ => "unknown panic".into(),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let has = |flag: &str| args.iter().any(|a| a == flag);
    if has("--list") {
        for c in CRITERIA {
            println!("{}: test", c.name);
        }
        return ExitCode::SUCCESS;
    }
    let only_extended = has("--ignored");
    let with_extended = only_extended || has("--include-ignored");
    let filters: Vec<&str> = args.iter().filter(|a| !a.starts_with('-')).map(String::as_str).collect();

    let mut broken = Vec::new();
    for c in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f)) {
            continue;
        }
        if only_extended && !c.extended {
            continue;
        }
        if c.extended && !with_extended {
            println!("criterion {} SKIP extended, run with --ignored", c.n);
            continue;
        }
        let start = Instant::now();
        let (v, panicked) = match std::panic::catch_unwind(c.run) {
            Ok(v) => (v, false),
            Err(e) => (Verdict { pass: false, detail: format!("panicked: {}", panic_message(e.as_ref())) }, true),
        };
        let word = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {} {word} {} [{:.1} s]", c.n, v.detail, start.elapsed().as_secs_f64());
        if panicked || v.pass == KNOWN_FAILING.contains(&c.n) {
            broken.push(c.n);
        }
    }
    if broken.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("criteria with an unexpected outcome: {broken:?}");
        ExitCode::FAILURE
    }
}

fn uniform_unit(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn quick(cfg: RunConfig) -> RunConfig {
    RunConfig { indicators: false, eigen_stride: usize::MAX, ..cfg }
}

fn criterion_01_mass_conservation() -> Verdict {
    let cfg = quick(RunConfig {
        eps: 1.0 / 8.0,
        h_tilde: 1.0 / 8.0,
        h_min: 1.0 / 32.0,
        tau: 1e-4,
        t_final: 200.0 * 1e-4,
        ..RunConfig::default()
    });
    let trace = run_realization(&cfg, 0, &RunOutput::default()).unwrap();
    let area = cfg.rect().unwrap().area();
    let m0 = trace.steps[0].mass;
    let drift = trace.steps.iter().map(|s| (s.mass - m0).abs()).fold(0.0, f64::max);
    let steps = trace.steps.len() - 1;
    Verdict {
        pass: trace.succeeded() && steps >= 200 && drift <= 1e-10 * area,
        detail: format!("{steps} steps, max |(u^n,1) - (u^0,1)| = {drift:.2e} (bound {:.1e})", 1e-10 * area),
    }
}

/// `max |M^{-1} r|` of the hat subproblem residual at `cur` given `prev`.
fn hat_residual(prev: &StepState, cur: &StepState, eps: f64) -> f64 {
    let space = &cur.space;
    let b_prev = mixed_mass_action(&prev.uh, prev.mesh(), cur.mesh()).unwrap();
    let mu = space.mass().apply(cur.uh.values());
    let kw = space.stiffness().apply(cur.wh.values());
    let r1: Vec<f64> = (0..space.dim()).map(|i| (mu[i] - b_prev[i]) / cur.tau + kw[i]).collect();
    let ku = space.stiffness().apply(cur.uh.values());
    let fu = nonlinear_load(cur.mesh(), cur.u.values(), f);
    let mw = space.mass().apply(cur.wh.values());
    let r2: Vec<f64> = (0..space.dim()).map(|i| eps * ku[i] + fu[i] / eps - mw[i]).collect();
    let a = space.solve_mass(&r1).unwrap();
    let b = space.solve_mass(&r2).unwrap();
    a.iter().chain(&b).fold(0.0, |m, v| m.max(v.abs()))
}

fn criterion_02_splitting_and_transformation() -> Verdict {
    let cfg = quick(RunConfig {
        eps: 1.0 / 8.0,
        h_tilde: 1.0 / 8.0,
        h_min: 1.0 / 32.0,
        tau: 1e-4,
        t_final: 100.0 * 1e-4,
        ..RunConfig::default()
    });
    let mut runner = Runner::new(&cfg, 0).unwrap();
    let (mut split, mut transform, mut hat_excess) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    let mut steps = 0;
    while !runner.is_done() {
        let prev = runner.state().clone();
        let before = runner.records().len();
        runner.step().unwrap();
        let s = runner.state();
        for ((u, ut), uh) in s.u.values().iter().zip(s.ut.values()).zip(s.uh.values()) {
            split = split.max((u - ut - uh).abs());
        }
        for ((y, ut), sg) in s.y.values().iter().zip(s.ut.values()).zip(s.sigma.values()) {
            transform = transform.max((y - (ut - sg)).abs());
        }
        if runner.records().len() == before + 1 {
            hat_excess = hat_excess.max(hat_residual(&prev, s, cfg.eps) - s.newton.residual);
        }
        steps += 1;
    }
    Verdict {
        pass: steps == 100 && split <= 1e-8 && transform <= 1e-12 && hat_excess <= 1e-9,
        detail: format!(
            "{steps} steps, max|u - ut - uh| = {split:.2e}, max|y - (ut - Sigma)| = {transform:.2e}, \
             hat residual exceeds the Newton residual by at most {hat_excess:.2e}"
        ),
    }
}

fn criterion_03_linear_convergence() -> Verdict {
    let base = RunConfig { eps: 0.25, h_tilde: 0.25, realizations: 32, ..RunConfig::default() };
    let time_cfg = RunConfig { t_final: 16.0, ..base.clone() };
    let time = convergence_study(&time_cfg, &Ladder::time(1.0 / 16.0, &[64, 128, 256, 512], 8192)).unwrap();
    let space_cfg = RunConfig { t_final: 0.01, ..base };
    let space = convergence_study(&space_cfg, &Ladder::space(&[1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0], 1.0 / 128.0, 64))
        .unwrap();
    println!("{time}\n{space}");
    let time_ok = (0.75..=1.25).contains(&time.order);
    let space_ok = (1.6..=2.4).contains(&space.order);
    Verdict {
        pass: time_ok && space_ok,
        detail: format!(
            "order in tau {:.3} (want [0.75, 1.25], {}), order in h {:.3} (want [1.6, 2.4], {})",
            time.order,
            if time_ok { "ok" } else { "out" },
            space.order,
            if space_ok { "ok" } else { "out" }
        ),
    }
}

fn criterion_04_noise_statistics() -> Verdict {
    let (sigma, tau, draws) = (0.4, 1e-3, 20_000u64);
    let mac = MacroMesh::square(Rect::symmetric_square(), 16).unwrap();
    let model = NoiseModel::new(Arc::new(mac.mesh()), sigma).unwrap();
    let mesh = model.mesh().clone();
    let tests: [fn([f64; 2]) -> f64; 5] = [
        |p| (1.0 - p[0] * p[0]) * (1.0 - p[1] * p[1]),
        |p| p[0],
        |p| p[0] * p[1] + 0.5 * p[1] * p[1],
        |p| (PI * p[0]).cos() * (0.5 * PI * p[1]).sin(),
        |p| (-4.0 * (p[0] - 0.3).powi(2) - 9.0 * (p[1] + 0.2).powi(2)).exp(),
    ];
    let loads: Vec<Vec<f64>> = tests.iter().map(|g| load_vector(&mesh, g)).collect();
    let stream = NoiseStream::new(17);

    let mut samples = vec![Vec::with_capacity(draws as usize); tests.len()];
    for n in 0..draws {
        let dw = model.field(&stream.increments(0, n, tau, model.len()).unwrap());
        for (s, b) in samples.iter_mut().zip(&loads) {
            s.push(dw.iter().zip(b).map(|(x, y)| x * y).sum::<f64>());
        }
    }

    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for (k, (s, b)) in samples.iter().zip(&loads).enumerate() {
        let integral: f64 = b.iter().sum();
        let variance: f64 = model
            .scales()
            .iter()
            .zip(model.means())
            .zip(b)
            .map(|((sl, m), bl)| (sl * (bl - m * integral)).powi(2))
            .sum::<f64>()
            * sigma
            * sigma
            * tau;
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let m2 = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = s.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let sample_var = m2 * n / (n - 1.0);
        let mean_z = mean / (m2 / n).sqrt();
        let var_z = (sample_var - variance) / ((m4 - m2 * m2) / n).sqrt();
        worst = worst.max(mean_z.abs()).max(var_z.abs());
        lines.push(format!("phi{k}: mean z {mean_z:+.2}, var z {var_z:+.2}"));
    }
    Verdict { pass: worst <= 4.0, detail: format!("{draws} draws, worst |z| {worst:.2} ({})", lines.join("; ")) }
}

/// `sum_l ||grad phi_l||^2 / ((phi_l, 1) / 3)` from vertex coordinates.
fn brute_force_noise_sum(mesh: &Mesh) -> f64 {
    let v = mesh.vertices();
    let mut grad = vec![0.0; v.len()];
    let mut integral = vec![0.0; v.len()];
    for tri in mesh.elements() {
        let [a, b, c] = tri.map(|i| v[i]);
        let area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs();
        for k in 0..3 {
            let (p, q) = (v[tri[(k + 1) % 3]], v[tri[(k + 2) % 3]]);
            let len2 = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            grad[tri[k]] += len2 / (4.0 * area);
            integral[tri[k]] += area / 3.0;
        }
    }
    grad.iter().zip(&integral).map(|(g, c)| g / (c / 3.0)).sum()
}

fn criterion_05_noise_indicator() -> Verdict {
    let mut exact_scaling = true;
    let mut worst_rel: f64 = 0.0;
    for n in [4, 8, 16] {
        let mac = MacroMesh::square(Rect::symmetric_square(), n).unwrap();
        let model = NoiseModel::new(Arc::new(mac.mesh()), 0.4).unwrap();
        for tau in [1e-6, 3.7e-5, 1e-3, 0.25] {
            exact_scaling &= model.indicator(2.0 * tau).to_bits() == (4.0 * model.indicator(tau)).to_bits();
        }
        let brute = brute_force_noise_sum(model.mesh());
        worst_rel = worst_rel.max((model.indicator_sum() - brute).abs() / brute);
    }
    Verdict {
        pass: exact_scaling && worst_rel <= 1e-12,
        detail: format!("doubling tau gives exactly 4x: {exact_scaling}, brute-force relative difference {worst_rel:.2e}"),
    }
}

fn criterion_06_principal_eigenvalue() -> Verdict {
    let eps = 1.0 / 8.0;
    let space = FeSpace::new(Arc::new(MacroMesh::square(Rect::symmetric_square(), 6).unwrap().uniform(2)));
    assert!(space.dim() <= 200);
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let random = space.function((0..space.dim()).map(|_| 2.0 * uniform_unit(&mut rng) - 1.0).collect()).unwrap();
    let mut oracle_rel: f64 = 0.0;
    for u in [space.zeros(), random] {
        let dense = EigenConfig { force: Some(EigenMethod::Dense), ..EigenConfig::default() };
        let iterative = EigenConfig { force: Some(EigenMethod::Iterative), ..EigenConfig::default() };
        let a = principal_eigenvalue(&space, &u, eps, &dense, None).unwrap().lambda;
        let b = principal_eigenvalue(&space, &u, eps, &iterative, None).unwrap().lambda;
        oracle_rel = oracle_rel.max((a - b).abs() / a.abs());
    }

    let eps = 1.0 / 32.0;
    let fine = FeSpace::new(Arc::new(MacroMesh::square(Rect::symmetric_square(), 8).unwrap().uniform(8)));
    let one = FeFunction::constant(fine.mesh(), 1.0);
    let lambda = principal_eigenvalue(&fine, &one, eps, &EigenConfig::default(), None).unwrap().lambda;
    let l1 = PI * PI / 4.0;
    let exact = eps * l1 * l1 + 2.0 * l1 / eps;
    let const_rel = (lambda - exact).abs() / exact;
    Verdict {
        pass: oracle_rel <= 1e-8 && const_rel <= 0.02,
        detail: format!(
            "dense vs iterative {oracle_rel:.2e} on {} dofs; constant state {lambda:.4} vs {exact:.4} ({:.3}%) on {} dofs",
            space.dim(),
            100.0 * const_rel,
            fine.dim()
        ),
    }
}

fn criterion_07_inequalities() -> Verdict {
    let mac = MacroMesh::square(Rect::symmetric_square(), 4).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut violations = 0;
    let mut tightest = (f64::INFINITY, f64::INFINITY);
    for k in 0..1000 {
        let mut mesh = mac.uniform(2 + k % 3);
        for _ in 0..(k % 4) {
            let n = mesh.element_count();
            let marked: Vec<usize> = (0..n).filter(|_| uniform_unit(&mut rng) < 0.3).collect();
            mesh = mesh.refine(&marked).unwrap();
        }
        let space = FeSpace::new(Arc::new(mesh));
        let scale = 10f64.powf(4.0 * uniform_unit(&mut rng) - 2.0);
        let raw: Vec<f64> = (0..space.dim()).map(|_| scale * (2.0 * uniform_unit(&mut rng) - 1.0)).collect();
        let m = space.mean(&raw);
        let v = space.function(raw.iter().map(|x| x - m).collect()).unwrap();

        let l2sq = space.l2_norm(v.values()).powi(2);
        let rhs = space.h_minus1_norm(&v).unwrap() * space.grad_norm(v.values());
        let lr = integrate(space.mesh(), v.values(), |x| x.abs().powf(8.0 / 3.0));
        let l4 = integrate(space.mesh(), v.values(), |x| x.powi(4)).powf(1.0 / 3.0);
        let rhs_r = l2sq.powf(2.0 / 3.0) * l4;
        let slack = 1e-10;
        if l2sq > rhs * (1.0 + slack) || lr > rhs_r * (1.0 + slack) {
            violations += 1;
        }
        tightest = (tightest.0.min(rhs / l2sq), tightest.1.min(rhs_r / lr));
    }
    Verdict {
        pass: violations == 0,
        detail: format!(
            "1000 fields, {violations} violations, smallest ratios {:.4} and {:.4}",
            tightest.0, tightest.1
        ),
    }
}

fn lyapunov(state: &StepState, eps: f64) -> f64 {
    0.5 * eps * state.space.grad_norm(state.u.values()).powi(2) + integrate(state.mesh(), state.u.values(), potential) / eps
}

fn criterion_08_deterministic_scenario() -> Verdict {
    let cfg = RunConfig {
        eps: 1.0 / 16.0,
        h_min: 1.0 / 64.0,
        tau: 1e-5,
        t_final: 0.012,
        mode: Mode::Deterministic,
        indicators: false,
        eigen_stride: 10,
        ..RunConfig::default()
    };
    let r1 = match cfg.initial {
        InitialCondition::TwoCircle { r1, .. } => r1,
        _ => unreachable!("default initial condition"),
    };
    let mut runner = Runner::new(&cfg, 0).unwrap();
    let mut vanished = None;
    let mut lyap_rise: f64 = f64::NEG_INFINITY;
    let mut prev = lyapunov(runner.state(), cfg.eps);
    while !runner.is_done() {
        runner.step().unwrap();
        let s = runner.state();
        let l = lyapunov(s, cfg.eps);
        lyap_rise = lyap_rise.max(l - prev);
        prev = l;
        if vanished.is_none() && min_within(s.mesh(), &s.u, r1 + cfg.eps) > 0.0 {
            vanished = Some(s.t);
        }
    }
    let trace: TraceRecord = runner.finish(None);

    let energy_rise = trace.steps.windows(2).map(|w| w[1].energy - w[0].energy).fold(f64::NEG_INFINITY, f64::max);
    let energy_ok = trace.energy_increases == 0;

    let samples = trace.lambda_samples();
    let flipped: Vec<(f64, f64)> = samples.iter().map(|&(t, l)| (t, -l)).collect();
    let peak_t = instability_peak_time(&samples).unwrap();
    let peak = flipped.iter().find(|s| s.0 == peak_t).unwrap().1;
    let mut sorted: Vec<f64> = flipped.iter().map(|s| s.1).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let dominant = peak >= 3.0 * median.abs();
    let vanish_ok = vanished.is_some_and(|t| t < cfg.t_final);
    let coincides = vanished.is_some_and(|t| (t - peak_t).abs() <= 0.1 * cfg.t_final);

    Verdict {
        pass: energy_ok && dominant && vanish_ok && coincides,
        detail: format!(
            "energy rises at {} of {} steps (largest {energy_rise:.2e}; the eps/2 functional's largest change {lyap_rise:.2e}); \
             peak of -Lambda {peak:.1} at t = {peak_t:.5} vs median {median:.2}; inner disk gone at t = {}",
            trace.energy_increases,
            trace.steps.len() - 1,
            vanished.map_or("never".to_string(), |t| format!("{t:.5}"))
        ),
    }
}

fn criterion_09_stochastic_peak_times() -> Verdict {
    let base = RunConfig {
        eps: 1.0 / 16.0,
        h_tilde: 1.0 / 8.0,
        h_min: 1.0 / 32.0,
        tau: 5e-5,
        t_final: 0.012,
        indicators: false,
        eigen_stride: 2,
        ..RunConfig::default()
    };
    let det = RunConfig { mode: Mode::Deterministic, ..base.clone() };
    let det_peak = run_realization(&det, 0, &RunOutput::default()).unwrap().peak_time.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mc = RunConfig { realizations: 50, seed: 2024, output: Some(dir.path().to_path_buf()), ..base };
    let (summary, _) = monte_carlo(&mc).unwrap();
    let mode = summary.histogram.mode().unwrap();
    let rel = (mode - det_peak).abs() / det_peak;
    Verdict {
        pass: rel <= 0.2,
        detail: format!(
            "histogram mode {mode:.5} vs deterministic peak {det_peak:.5} ({:.1}%), {} of 50 failed, counts {:?}",
            100.0 * rel,
            summary.failures,
            summary.histogram.counts
        ),
    }
}

fn criterion_10_determinism_and_persistence() -> Verdict {
    let cfg = RunConfig {
        eps: 1.0 / 8.0,
        h_tilde: 0.5,
        h_min: 1.0 / 16.0,
        tau: 1e-4,
        t_final: 2e-3,
        eigen_stride: 4,
        ..RunConfig::default()
    };
    let full = run_realization(&cfg, 2, &RunOutput::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let mut runner = Runner::new(&cfg, 2).unwrap();
    for _ in 0..7 {
        runner.step().unwrap();
    }
    write_checkpoint(&path, &runner.checkpoint()).unwrap();
    drop(runner);
    let mut resumed = Runner::resume(read_checkpoint(&path).unwrap()).unwrap();
    while !resumed.is_done() {
        resumed.step().unwrap();
    }
    let resumed = resumed.finish(None);
    let resume_ok = bincode::serde::encode_to_vec(&full, bincode::config::standard()).unwrap()
        == bincode::serde::encode_to_vec(&resumed, bincode::config::standard()).unwrap();

    let ensemble = |workers| {
        let cfg = RunConfig { realizations: 4, workers, ..cfg.clone() };
        monte_carlo(&cfg).unwrap().0
    };
    let one = ensemble(1);
    let pools_ok = one == ensemble(2) && one == ensemble(3);
    Verdict {
        pass: resume_ok && pools_ok,
        detail: format!("resumed trace bit-identical: {resume_ok}; summaries equal for 1, 2 and 3 workers: {pools_ok}"),
    }
}
