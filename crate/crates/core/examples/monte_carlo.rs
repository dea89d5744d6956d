//! Small ensemble at reduced resolution: expected energy and eigenvalue, and
//! the histogram of eigenvalue peak times.
//!
//! ```text
//! STOCHCH_OUT_DIR=mc_out cargo run --release --example monte_carlo -- 8
//! ```

use stochch::harness::{monte_carlo, RunConfig};

fn main() -> stochch::Result<()> {
    env_logger::init();
    let m: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let cfg = RunConfig {
        eps: 1.0 / 16.0,
        h_tilde: 1.0 / 8.0,
        h_min: 1.0 / 32.0,
        tau: 1e-4,
        t_final: 0.012,
        realizations: m,
        indicators: false,
        histogram_bins: 12,
        ..RunConfig::default()
    };
    let (summary, _) = monte_carlo(&cfg)?;
    println!("{:>8} {:>12} {:>10} {:>10} {:>8}", "t", "E[energy]", "se", "E[lambda]", "se");
    for e in summary.expectations.iter().step_by(10) {
        let (l, lse) = match e.lambda {
            Some(l) => (format!("{:10.2}", l.mean), l.se.map(|s| format!("{s:8.2}")).unwrap_or_default()),
            None => (String::new(), String::new()),
        };
        let se = e.energy.se.map(|s| format!("{s:10.2e}")).unwrap_or_default();
        println!("{:8.4} {:12.6} {se:>10} {l:>10} {lse:>8}", e.t, e.energy.mean);
    }
    println!("peak-time histogram ({} failed):", summary.failures);
    let h = &summary.histogram;
    for (k, c) in h.counts.iter().enumerate() {
        println!("[{:.4}, {:.4}) {}", h.edges[k], h.edges[k + 1], "#".repeat(*c));
    }
    Ok(())
}
