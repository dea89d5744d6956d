//! One stochastic step from the two-circle state: the split into linear and
//! nonlinear parts and the transformed variable, checked against each other.
//!
//! ```text
//! cargo run --release --example single_step
//! ```

use stochch::harness::{RunConfig, Runner};

fn main() -> stochch::Result<()> {
    let cfg = RunConfig { eps: 1.0 / 8.0, h_tilde: 1.0 / 8.0, h_min: 1.0 / 32.0, tau: 1e-4, t_final: 1e-3, ..RunConfig::default() };
    let mut runner = Runner::new(&cfg, 0)?;
    println!("initial mesh: {} vertices", runner.state().space.dim());
    while !runner.is_done() {
        runner.step()?;
        let s = runner.state();
        let split = s.u.sub(&s.ut)?.sub(&s.uh)?.max_abs();
        let transformed = s.y.sub(&s.ut.sub(&s.sigma)?)?.max_abs();
        let r = runner.records().last().expect("a record per level");
        println!(
            "t = {:.4}  dofs {:5}  newton {}  |u - ut - uh| = {split:.1e}  |y - (ut - Sigma)| = {transformed:.1e}  space {:.3e}  time {:.3e}",
            s.t, r.dofs, r.newton_iters, r.report.eta_space.iter().sum::<f64>(), r.report.eta_time.iter().sum::<f64>()
        );
    }
    Ok(())
}
