use super::{FeFunction, FeSpace};
use crate::error::{Error, Result};
use crate::fem::assembly::assemble_mass;
use crate::mesh::Mesh;

/// Exact representation of a coarse field on a refinement of its mesh.
pub fn prolongate(f: &FeFunction, from: &Mesh, to: &Mesh) -> Result<FeFunction> {
    f.check_on(from)?;
    if from.generation() == to.generation() {
        return Ok(f.clone());
    }
    let p = to.prolongation_from(from)?;
    FeFunction::new(to, p.apply(f.values()))
}

/// Dual vector `b_i = (f, phi_i^B)` of a field living on mesh `a`, integrated
/// exactly on the common refinement of `a` and `b`.
pub fn mixed_mass_action(f: &FeFunction, a: &Mesh, b: &Mesh) -> Result<Vec<f64>> {
    f.check_on(a)?;
    if a.generation() == b.generation() {
        return Ok(assemble_mass(a).apply(f.values()));
    }
    if !a.shares_roots_with(b) {
        return Err(Error::Structure("meshes have different macro meshes".into()));
    }
    let c = Mesh::common_refinement(a, b)?;
    let fc = if c.keys() == a.keys() {
        f.values().to_vec()
    } else {
        c.prolongation_from(a)?.apply(f.values())
    };
    let mfc = assemble_mass(&c).apply(&fc);
    if c.keys() == b.keys() {
        Ok(mfc)
    } else {
        Ok(c.prolongation_from(b)?.apply_transpose(&mfc))
    }
}

/// L2 projection onto the P1 space of `target`.
pub fn l2_project(f: &FeFunction, from: &Mesh, target: &FeSpace) -> Result<FeFunction> {
    f.check_on(from)?;
    if from.generation() == target.mesh().generation() {
        return Ok(f.clone());
    }
    if from.keys() == target.mesh().keys() {
        return Ok(f.clone().rebind(target.mesh()));
    }
    let b = mixed_mass_action(f, from, target.mesh())?;
    target.function(target.solve_mass(&b)?)
}

/// Transfers `f` to `target`: exact prolongation when `target` refines the
/// source mesh, L2 projection otherwise.
pub fn transfer(f: &FeFunction, from: &Mesh, target: &FeSpace) -> Result<FeFunction> {
    if target.mesh().refines(from) {
        prolongate(f, from, target.mesh())
    } else {
        l2_project(f, from, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{MacroMesh, Rect};
    use nalgebra::{DMatrix, DVector};
    use std::sync::Arc;

    #[test]
    fn projection_onto_same_mesh_is_identity() {
        let m = Arc::new(MacroMesh::square(Rect::unit_square(), 2).unwrap().uniform(1));
        let sp = FeSpace::new(m.clone());
        let f = FeFunction::interpolate(&m, |p| p[0] * p[1]);
        assert_eq!(l2_project(&f, &m, &sp).unwrap(), f);
    }

    #[test]
    fn constants_are_preserved() {
        let mac = MacroMesh::square(Rect::symmetric_square(), 2).unwrap();
        let fine = mac.uniform(3);
        let coarse = Arc::new(mac.uniform(1).refine(&[0, 5]).unwrap());
        let sp = FeSpace::new(coarse);
        let f = FeFunction::constant(&fine, 0.7);
        let g = l2_project(&f, &fine, &sp).unwrap();
        assert!(g.values().iter().all(|v| (v - 0.7).abs() < 1e-13));
    }

    #[test]
    fn fine_hat_onto_two_triangle_square() {
        let mac = MacroMesh::square(Rect::unit_square(), 1).unwrap();
        let coarse = Arc::new(mac.mesh());
        let fine = mac.uniform(2);
        let centre = fine.vertices().iter().position(|p| *p == [0.5, 0.5]).unwrap();
        let mut hv = vec![0.0; fine.vertex_count()];
        hv[centre] = 1.0;
        let hat = FeFunction::new(&fine, hv).unwrap();
        let sp = FeSpace::new(coarse.clone());
        let got = l2_project(&hat, &fine, &sp).unwrap();

        // Hand assembly on the fine mesh (the common refinement): mixed mass
        // entries (phi_i^coarse, hat) from fine element matrices and the
        // coarse nodal values at fine vertices.
        let mut b: DVector<f64> = DVector::zeros(4);
        for (e, tri) in fine.elements().iter().enumerate() {
            let a = fine.area(e);
            for (li, &vi) in tri.iter().enumerate() {
                if vi != centre {
                    continue;
                }
                for (lj, &vj) in tri.iter().enumerate() {
                    let mij = if li == lj { a / 6.0 } else { a / 12.0 };
                    let p = fine.vertices()[vj];
                    for c in 0..4 {
                        let q = coarse.vertices()[c];
                        b[c] += mij * coarse_hat(&coarse, p, q);
                    }
                }
            }
        }
        let mut mc: DMatrix<f64> = DMatrix::zeros(4, 4);
        for (e, tri) in coarse.elements().iter().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    mc[(tri[i], tri[j])] += coarse.area(e) / if i == j { 6.0 } else { 12.0 };
                }
            }
        }
        let x = mc.lu().solve(&b).unwrap();
        for c in 0..4 {
            assert!((x[c] - got.values()[c]).abs() < 1e-14);
        }
    }

    /// Value at `p` of the coarse hat attached to vertex `q`.
    fn coarse_hat(m: &Mesh, p: [f64; 2], q: [f64; 2]) -> f64 {
        for e in 0..m.element_count() {
            let pts = m.points(e);
            let det = (pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1]) - (pts[2][0] - pts[0][0]) * (pts[1][1] - pts[0][1]);
            let l1 = ((p[0] - pts[0][0]) * (pts[2][1] - pts[0][1]) - (pts[2][0] - pts[0][0]) * (p[1] - pts[0][1])) / det;
            let l2 = ((pts[1][0] - pts[0][0]) * (p[1] - pts[0][1]) - (p[0] - pts[0][0]) * (pts[1][1] - pts[0][1])) / det;
            let l = [1.0 - l1 - l2, l1, l2];
            if l.iter().all(|&x| x >= -1e-14) {
                return pts.iter().position(|v| *v == q).map(|i| l[i]).unwrap_or(0.0);
            }
        }
        unreachable!("point outside the square")
    }

    #[test]
    fn projection_is_idempotent_and_prolongation_exact() {
        let mac = MacroMesh::square(Rect::symmetric_square(), 2).unwrap();
        let a = mac.uniform(2).refine(&[1, 2, 3]).unwrap();
        let b = Arc::new(mac.uniform(1).refine(&[6, 7]).unwrap());
        let sp = FeSpace::new(b.clone());
        let f = FeFunction::interpolate(&a, |p| (3.0 * p[0]).sin() + p[1] * p[1]);
        let once = l2_project(&f, &a, &sp).unwrap();
        let twice = l2_project(&once, &b, &sp).unwrap();
        assert_eq!(once, twice);

        let fine = Arc::new(b.refine(&[0, 1, 2]).unwrap());
        let up = transfer(&once, &b, &FeSpace::new(fine.clone())).unwrap();
        let back = l2_project(&up, &fine, &sp).unwrap();
        for (x, y) in back.values().iter().zip(once.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
