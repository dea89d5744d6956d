use super::quadrature::{degree6, Quadrature};
use super::sparse::{OperatorKind, SparseOperator};
use crate::mesh::{Mesh, Point};

pub fn element_mass(area: f64) -> [[f64; 3]; 3] {
    let a = area / 12.0;
    let mut m = [[a; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 2.0 * a;
    }
    m
}

pub fn element_stiffness(area: f64, grads: &[[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
        }
    }
    k
}

fn scatter(mesh: &Mesh, local: impl Fn(usize) -> [[f64; 3]; 3], kind: OperatorKind) -> SparseOperator {
    let mut t = Vec::with_capacity(9 * mesh.element_count());
    for (e, tri) in mesh.elements().iter().enumerate() {
        let m = local(e);
        for i in 0..3 {
            for j in 0..3 {
                t.push((tri[i], tri[j], m[i][j]));
            }
        }
    }
    SparseOperator::from_triplets(mesh.vertex_count(), t, kind, true)
}

/// Consistent P1 mass matrix, `M_ij = (phi_i, phi_j)`.
pub fn assemble_mass(mesh: &Mesh) -> SparseOperator {
    scatter(mesh, |e| element_mass(mesh.area(e)), OperatorKind::Mass)
}

/// P1 stiffness matrix, `K_ij = (grad phi_i, grad phi_j)`.
pub fn assemble_stiffness(mesh: &Mesh) -> SparseOperator {
    scatter(mesh, |e| element_stiffness(mesh.area(e), mesh.grads(e)), OperatorKind::Stiffness)
}

/// `A_ij = (map(weight) phi_i, phi_j)`, integrated with the degree-6 rule.
pub fn assemble_weighted_mass(mesh: &Mesh, weight: &[f64], map: impl Fn(f64) -> f64) -> SparseOperator {
    assert_eq!(weight.len(), mesh.vertex_count());
    let q = degree6();
    let mut t = Vec::with_capacity(9 * mesh.element_count());
    for (e, tri) in mesh.elements().iter().enumerate() {
        let mut local = [[0.0; 3]; 3];
        let wk = [weight[tri[0]], weight[tri[1]], weight[tri[2]]];
        for (l, w) in q.points.iter().zip(&q.weights) {
            let c = w * map(l[0] * wk[0] + l[1] * wk[1] + l[2] * wk[2]);
            for i in 0..3 {
                for j in 0..3 {
                    local[i][j] += c * l[i] * l[j];
                }
            }
        }
        let a = mesh.area(e);
        for i in 0..3 {
            for j in 0..3 {
                t.push((tri[i], tri[j], a * local[i][j]));
            }
        }
    }
    SparseOperator::from_triplets(mesh.vertex_count(), t, OperatorKind::WeightedMass, true)
}

/// Row sums of the consistent mass matrix, `(phi_i, 1)`.
pub fn lumped_mass(mesh: &Mesh) -> Vec<f64> {
    let mut d = vec![0.0; mesh.vertex_count()];
    for (e, tri) in mesh.elements().iter().enumerate() {
        for &v in tri {
            d[v] += mesh.area(e) / 3.0;
        }
    }
    d
}

/// `b_i = (map(u), phi_i)` with the degree-6 rule.
pub fn nonlinear_load(mesh: &Mesh, u: &[f64], map: impl Fn(f64) -> f64) -> Vec<f64> {
    assert_eq!(u.len(), mesh.vertex_count());
    let q = degree6();
    let mut b = vec![0.0; mesh.vertex_count()];
    for (e, tri) in mesh.elements().iter().enumerate() {
        let uk = [u[tri[0]], u[tri[1]], u[tri[2]]];
        let a = mesh.area(e);
        for (l, w) in q.points.iter().zip(&q.weights) {
            let c = a * w * map(l[0] * uk[0] + l[1] * uk[1] + l[2] * uk[2]);
            for i in 0..3 {
                b[tri[i]] += c * l[i];
            }
        }
    }
    b
}

/// `b_i = (g, phi_i)` for a function of position, with the degree-6 rule.
pub fn load_vector(mesh: &Mesh, g: impl Fn(Point) -> f64) -> Vec<f64> {
    let q = degree6();
    let mut b = vec![0.0; mesh.vertex_count()];
    for (e, tri) in mesh.elements().iter().enumerate() {
        let p = mesh.points(e);
        let a = mesh.area(e);
        for (l, w) in q.points.iter().zip(&q.weights) {
            let x = [
                l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
            ];
            let c = a * w * g(x);
            for i in 0..3 {
                b[tri[i]] += c * l[i];
            }
        }
    }
    b
}

/// Per-element integrals `int_K g(u_1, ..., u_m) dx` of nodal fields.
pub fn element_integrals<const M: usize>(
    mesh: &Mesh,
    fields: [&[f64]; M],
    rule: &Quadrature,
    g: impl Fn([f64; M]) -> f64,
) -> Vec<f64> {
    for f in &fields {
        assert_eq!(f.len(), mesh.vertex_count());
    }
    mesh.elements()
        .iter()
        .enumerate()
        .map(|(e, tri)| {
            let s: f64 = rule
                .points
                .iter()
                .zip(&rule.weights)
                .map(|(l, w)| {
                    let vals = fields.map(|f| l[0] * f[tri[0]] + l[1] * f[tri[1]] + l[2] * f[tri[2]]);
                    w * g(vals)
                })
                .sum();
            mesh.area(e) * s
        })
        .collect()
}

/// `int_D g(u) dx` for a nodal field, degree-6 rule.
pub fn integrate(mesh: &Mesh, u: &[f64], g: impl Fn(f64) -> f64) -> f64 {
    element_integrals(mesh, [u], degree6(), |[v]| g(v)).iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{MacroMesh, Rect};

    fn unit_square(n: usize) -> Mesh {
        MacroMesh::square(Rect::unit_square(), n).unwrap().mesh()
    }

    #[test]
    fn unit_right_triangle_matrices() {
        let (area, g) = crate::mesh::p1_geometry(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let m = element_mass(area);
        let k = element_stiffness(area, &g);
        let m_ref = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]];
        let k_ref = [[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[i][j] - m_ref[i][j] / 24.0).abs() < 1e-16);
                assert!((k[i][j] - 0.5 * k_ref[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mass_row_sums_total_area() {
        let m = MacroMesh::square(Rect::symmetric_square(), 3).unwrap().uniform(2);
        let mm = assemble_mass(&m);
        assert!((mm.row_sums().iter().sum::<f64>() - 4.0).abs() < 1e-13);
        assert!(lumped_mass(&m).iter().zip(mm.row_sums()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn stiffness_kernel_is_constants() {
        let m = MacroMesh::square(Rect::symmetric_square(), 3).unwrap().uniform(3);
        let k = assemble_stiffness(&m);
        assert!(k.row_sums().iter().all(|s| s.abs() < 1e-12));
    }

    #[test]
    fn linear_x_has_unit_dirichlet_energy() {
        let m = unit_square(4);
        let x: Vec<f64> = m.vertices().iter().map(|p| p[0]).collect();
        assert!((assemble_stiffness(&m).bilinear(&x, &x) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn weighted_mass_special_cases() {
        let m = unit_square(3);
        let mass = assemble_mass(&m);
        let ones = vec![1.0; m.vertex_count()];
        let zeros = vec![0.0; m.vertex_count()];
        let df = |u: f64| 3.0 * u * u - 1.0;
        let a1 = assemble_weighted_mass(&m, &ones, |_| 1.0);
        let a2 = assemble_weighted_mass(&m, &ones, df);
        let a3 = assemble_weighted_mass(&m, &zeros, df);
        for (i, j, v) in mass.triplets() {
            assert!((a1.get(i, j) - v).abs() < 1e-14);
            assert!((a2.get(i, j) - 2.0 * v).abs() < 1e-14);
            assert!((a3.get(i, j) + v).abs() < 1e-14);
        }
    }

    #[test]
    fn integrate_quartic_of_linear_is_exact() {
        let m = unit_square(2);
        let x: Vec<f64> = m.vertices().iter().map(|p| p[0]).collect();
        // int_0^1 x^4 dx = 1/5
        assert!((integrate(&m, &x, |v| v.powi(4)) - 0.2).abs() < 1e-14);
        let l = load_vector(&m, |p| p[0] * p[0]);
        assert!((l.iter().sum::<f64>() - 1.0 / 3.0).abs() < 1e-14);
    }
}
