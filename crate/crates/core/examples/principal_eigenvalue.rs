//! Principal eigenvalue of the constant state `u = 1` on `(-1, 1)^2` under
//! uniform refinement, against the constant-coefficient value
//! `eps lambda_1^2 + 2 lambda_1 / eps` with `lambda_1 = pi^2 / 4`.
//!
//! ```text
//! cargo run --release --example principal_eigenvalue -- 0.03125
//! ```

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use stochch::eigen::{principal_eigenvalue, EigenConfig};
use stochch::fem::{FeFunction, FeSpace};
use stochch::mesh::{MacroMesh, Rect};

fn main() -> stochch::Result<()> {
    let eps: f64 = std::env::args().nth(1).map(|a| a.parse().expect("eps")).unwrap_or(1.0 / 32.0);
    let lambda1 = PI * PI / 4.0;
    let exact = eps * lambda1 * lambda1 + 2.0 * lambda1 / eps;
    println!("eps = {eps}, constant-coefficient value {exact:.6}");
    println!("{:>8} {:>8} {:>14} {:>10} {:>6} {:>9}", "h", "dofs", "Lambda", "rel.err", "iters", "seconds");

    let mac = MacroMesh::square(Rect::symmetric_square(), 8)?;
    let mut prev: Option<f64> = None;
    for levels in [2, 4, 6, 8] {
        let space = FeSpace::new(Arc::new(mac.uniform(levels)));
        let u = FeFunction::constant(space.mesh(), 1.0);
        let start = Instant::now();
        let r = principal_eigenvalue(&space, &u, eps, &EigenConfig::default(), None)?;
        let h = 0.25 / f64::from(1u32 << (levels / 2));
        println!(
            "{:>8.5} {:>8} {:>14.6} {:>10.2e} {:>6} {:>9.2}",
            h,
            space.dim(),
            r.lambda,
            (r.lambda - exact).abs() / exact,
            r.iterations,
            start.elapsed().as_secs_f64()
        );
        if let Some(p) = prev {
            println!("{:>8} change from previous level {:.3e}", "", (r.lambda - p).abs());
        }
        prev = Some(r.lambda);
    }
    Ok(())
}
