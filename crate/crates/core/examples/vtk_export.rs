//! Writes VTK snapshots and a steps table for a short run.
//!
//! ```text
//! cargo run --release --example vtk_export -- out_dir
//! ```

use std::path::PathBuf;

use stochch::harness::{run_realization, RunConfig, RunOutput};

fn main() -> stochch::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "vtk_out".into()));
    let cfg = RunConfig {
        eps: 1.0 / 16.0,
        h_tilde: 1.0 / 8.0,
        h_min: 1.0 / 32.0,
        tau: 1e-4,
        t_final: 2e-3,
        vtk_times: vec![0.0, 1e-3, 2e-3],
        ..RunConfig::default()
    };
    let trace = run_realization(&cfg, 0, &RunOutput::under(&dir, ""))?;
    println!("{} levels written under {}", trace.steps.len(), dir.display());
    for entry in std::fs::read_dir(dir.join("vtk")).map_err(|e| stochch::Error::io(dir.join("vtk"), e))?.flatten() {
        println!("  {}", entry.path().display());
    }
    Ok(())
}
