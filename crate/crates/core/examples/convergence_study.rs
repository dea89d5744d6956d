//! Coupled-path convergence study of the linear scheme.
//!
//! `cargo run --release --example convergence_study -- [time|space] [paths] [T]`

use stochch::harness::{convergence_study, Ladder, RunConfig};

fn main() -> stochch::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let axis = args.first().map(String::as_str).unwrap_or("time");
    let paths = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let t_final = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let reference = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4096);
    let cfg = RunConfig { eps: 0.25, h_tilde: 0.25, t_final, realizations: paths, ..RunConfig::default() };
    let ladder = match axis {
        "space" => Ladder::space(&[1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0], 1.0 / 128.0, 64),
        _ => Ladder::time(1.0 / 16.0, &[64, 128, 256, 512], reference),
    };
    let start = std::time::Instant::now();
    let table = convergence_study(&cfg, &ladder)?;
    println!("{table}");
    println!("{:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
