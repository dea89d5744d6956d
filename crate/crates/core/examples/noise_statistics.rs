//! Sample moments of the discrete noise tested against smooth functions,
//! compared with the covariance `sigma^2 tau sum_l s_l^2 (phi_l - m(phi_l), g)^2`.
//!
//! ```text
//! cargo run --release --example noise_statistics -- 20000
//! ```

use std::sync::Arc;

use stochch::fem::assembly::load_vector;
use stochch::mesh::{MacroMesh, Point, Rect};
use stochch::noise::{NoiseModel, NoiseStream};

fn main() -> stochch::Result<()> {
    let draws: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20000);
    let (sigma, tau) = (0.4, 1e-3);
    let mac = MacroMesh::square(Rect::symmetric_square(), 8)?;
    let mesh = Arc::new(mac.mesh());
    let model = NoiseModel::new(mesh.clone(), sigma)?;
    let stream = NoiseStream::new(7);

    let tests: [(&str, fn(Point) -> f64); 3] = [
        ("1 + x", |p| 1.0 + p[0]),
        ("x y", |p| p[0] * p[1]),
        ("cos(pi x) cos(pi y / 2)", |p| (std::f64::consts::PI * p[0]).cos() * (std::f64::consts::FRAC_PI_2 * p[1]).cos()),
    ];
    for (name, g) in tests {
        let pg = load_vector(&mesh, g);
        let g_mean = pg.iter().sum::<f64>() / model.domain_area();
        let a: Vec<f64> = pg.iter().zip(model.integrals()).map(|(p, c)| p - c * g_mean).collect();
        let variance: f64 = sigma * sigma * tau * a.iter().zip(model.scales()).map(|(a, s)| (a * s).powi(2)).sum::<f64>();

        let samples: Vec<f64> = (0..draws)
            .map(|r| {
                let db = stream.increments(r, 0, tau, model.len()).expect("positive step");
                model.field(&db).iter().zip(&pg).map(|(w, p)| w * p).sum::<f64>()
            })
            .collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        println!(
            "{name:<26} mean {mean:+.3e} (se {:.2e})  variance {var:.5e} vs {variance:.5e}",
            (var / n).sqrt()
        );
    }
    Ok(())
}
