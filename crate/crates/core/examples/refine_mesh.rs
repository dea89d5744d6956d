//! Newest-vertex bisection around a circle, then coarsening back.
//!
//! ```text
//! cargo run --release --example refine_mesh -- 8
//! ```

use std::f64::consts::PI;

use stochch::mesh::{MacroMesh, Mesh, Rect};
use stochch::mesh::vtk::write_vtk;

fn describe(label: &str, mesh: &Mesh) {
    println!(
        "{label:<12} {:>7} elements {:>7} vertices  min angle {:5.2} deg  max diameter {:.5}",
        mesh.element_count(),
        mesh.vertex_count(),
        mesh.min_angle() * 180.0 / PI,
        mesh.max_diameter()
    );
}

fn main() -> stochch::Result<()> {
    let rounds: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let mac = MacroMesh::square(Rect::symmetric_square(), 4)?;
    let mut mesh = mac.mesh();
    describe("macro", &mesh);

    let near_circle = |m: &Mesh, e: usize| {
        let c = m.centroid(e);
        (c[0].hypot(c[1]) - 0.5).abs() < m.diameter(e)
    };
    for k in 0..rounds {
        let marked: Vec<usize> = (0..mesh.element_count()).filter(|&e| near_circle(&mesh, e)).collect();
        mesh = mesh.refine(&marked)?;
        mesh.audit()?;
        describe(&format!("refine {}", k + 1), &mesh);
    }
    write_vtk(std::path::Path::new("refined.vtk"), &mesh, "refined around |x| = 1/2", &[])?;

    let mut k = 0;
    loop {
        let all: Vec<usize> = (0..mesh.element_count()).collect();
        let coarse = mesh.coarsen(&all, |_| f64::INFINITY)?;
        if coarse.element_count() == mesh.element_count() {
            break;
        }
        mesh = coarse;
        mesh.audit()?;
        k += 1;
        describe(&format!("coarsen {k}"), &mesh);
    }
    println!("back to the macro mesh: {}", mesh.keys() == mac.mesh().keys());
    Ok(())
}
