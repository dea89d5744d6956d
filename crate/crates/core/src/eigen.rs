//! Discrete principal eigenvalue of the linearized Cahn-Hilliard operator,
//!
//! `Lambda = inf_v (eps ||grad v||^2 + (f'(u) v, v) / eps) / ||grad (-Delta_h)^{-1} v||^2`
//!
//! over zero-mean finite element functions `v`. In matrix form this is the
//! smallest eigenvalue of `A v = Lambda B v` with `A = eps K + W(f'(u)) / eps`
//! and `B = M K^+ M` restricted to `{v : (v, 1) = 0}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble_weighted_mass, FeFunction, FeSpace, LuFactor, SparseOperator};
use crate::scheme::df;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenMethod {
    Dense,
    Iterative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EigenConfig {
    /// Meshes with at most this many vertices use the dense solver.
    pub dense_max: usize,
    /// Relative Ritz residual at which Lanczos stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Forces one solver regardless of size.
    pub force: Option<EigenMethod>,
}

impl Default for EigenConfig {
    fn default() -> Self {
        EigenConfig { dense_max: 400, tol: 1e-10, max_iter: 300, force: None }
    }
}

#[derive(Clone, Debug)]
pub struct EigenResult {
    pub lambda: f64,
    /// Zero-mean minimizer, normalized so that `v^T B v = 1`.
    pub eigenvector: FeFunction,
    /// `||P (A v - Lambda B v)|| / ||A v||`, `P` removing the constant mode.
    pub residual: f64,
    pub iterations: usize,
    pub method: EigenMethod,
}

/// `A = eps K + W(f'(u)) / eps` with the weight integrated by the degree-6 rule.
pub fn pencil_matrix(space: &FeSpace, u: &FeFunction, eps: f64) -> Result<SparseOperator> {
    u.check_on(space.mesh())?;
    let w = assemble_weighted_mass(space.mesh(), u.values(), df);
    space.stiffness().combine(eps, &w, 1.0 / eps)
}

/// `B v = M K^+ M v`
pub fn apply_b(space: &FeSpace, v: &[f64]) -> Result<Vec<f64>> {
    let z = space.solve_neumann(&space.mass().apply(v))?;
    Ok(space.mass().apply(&z))
}

/// The quotient at a single zero-mean field.
pub fn rayleigh_quotient(space: &FeSpace, u: &FeFunction, eps: f64, v: &FeFunction) -> Result<f64> {
    let a = pencil_matrix(space, u, eps)?;
    v.check_on(space.mesh())?;
    let z = space.inv_neumann_laplacian(v)?;
    let den = space.stiffness().bilinear(z.values(), z.values());
    if !(den > 0.0) {
        return Err(Error::Input("Rayleigh quotient of the zero field".into()));
    }
    Ok(a.bilinear(v.values(), v.values()) / den)
}

/// Smallest eigenvalue of the pencil. `warm` seeds the iterative solver and
/// is ignored by the dense one; it must live on the mesh of `space`.
pub fn principal_eigenvalue(
    space: &FeSpace,
    u: &FeFunction,
    eps: f64,
    cfg: &EigenConfig,
    warm: Option<&FeFunction>,
) -> Result<EigenResult> {
    if !(eps > 0.0) {
        return Err(Error::Input(format!("eps must be positive, got {eps}")));
    }
    if space.dim() < 3 {
        return Err(Error::Input("mesh too small for an eigenvalue".into()));
    }
    let a = pencil_matrix(space, u, eps)?;
    let method = cfg.force.unwrap_or(if space.dim() <= cfg.dense_max { EigenMethod::Dense } else { EigenMethod::Iterative });
    match method {
        EigenMethod::Dense => dense(space, &a),
        EigenMethod::Iterative => match lanczos(space, &a, eps, cfg, warm) {
            Ok(r) => Ok(r),
            Err(e) if space.dim() <= cfg.dense_max => {
                log::warn!("iterative eigensolve failed ({e}), using the dense solver");
                dense(space, &a)
            }
            Err(e) => Err(e),
        },
    }
}

/// Orthonormal basis of the complement of `m`, as the trailing columns of the
/// Householder reflector mapping `m` to a multiple of `e_1`.
fn complement_basis(m: &[f64]) -> DMatrix<f64> {
    let n = m.len();
    let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut w = DVector::from_iterator(n, m.iter().map(|x| x / norm));
    w[0] += if w[0] >= 0.0 { 1.0 } else { -1.0 };
    let ww = w.dot(&w);
    let mut z = DMatrix::zeros(n, n - 1);
    for j in 1..n {
        for i in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            z[(i, j - 1)] = delta - 2.0 * w[i] * w[j] / ww;
        }
    }
    z
}

fn finish(space: &FeSpace, a: &SparseOperator, v: Vec<f64>, iterations: usize, method: EigenMethod) -> Result<EigenResult> {
    let mut v = v;
    let mean = space.mean(&v);
    v.iter_mut().for_each(|x| *x -= mean);
    let bv = apply_b(space, &v)?;
    let vbv: f64 = v.iter().zip(&bv).map(|(x, y)| x * y).sum();
    if !(vbv > 0.0) {
        return Err(Error::Solver("eigenvector collapsed to the constant mode".into()));
    }
    let s = vbv.sqrt();
    v.iter_mut().for_each(|x| *x /= s);
    let bv: Vec<f64> = bv.iter().map(|x| x / s).collect();
    let av = a.apply(&v);
    let lambda: f64 = v.iter().zip(&av).map(|(x, y)| x * y).sum();
    let mut r: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x - lambda * y).collect();
    let shift = r.iter().sum::<f64>() / space.area();
    r.iter_mut().zip(space.lumped_mass()).for_each(|(x, m)| *x -= shift * m);
    let norm = |x: &[f64]| x.iter().map(|y| y * y).sum::<f64>().sqrt();
    let residual = norm(&r) / norm(&av).max(f64::MIN_POSITIVE);
    Ok(EigenResult { lambda, eigenvector: space.function(v)?, residual, iterations, method })
}

fn dense(space: &FeSpace, a: &SparseOperator) -> Result<EigenResult> {
    let n = space.dim();
    let z = complement_basis(space.lumped_mass());
    let md = space.mass().to_dense();
    let g = &md * &z;
    let mut x = DMatrix::zeros(n, n - 1);
    for j in 0..n - 1 {
        let col: Vec<f64> = g.column(j).iter().copied().collect();
        x.set_column(j, &DVector::from_vec(space.solve_neumann(&col)?));
    }
    let bz = g.transpose() * x;
    let bz = (&bz + bz.transpose()) * 0.5;
    let az = z.transpose() * a.to_dense() * &z;
    let l = bz.cholesky().ok_or_else(|| Error::Solver("B is not positive definite on the zero-mean space".into()))?;
    let linv = l.l().try_inverse().ok_or_else(|| Error::Solver("singular Cholesky factor".into()))?;
    let c = &linv * az * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty spectrum");
    let y = linv.transpose() * eig.eigenvectors.column(k);
    let v = z * y;
    finish(space, a, v.iter().copied().collect(), 1, EigenMethod::Dense)
}

/// Solver for `A - s B` on the zero-mean space. With `z = K^+ M x` the
/// system reads `[A, -s M; -M, K] (x, z) = (r, 0)` subject to
/// `m^T x = m^T z = 0` with multipliers along `m`. The sparse block is
/// factored once and the two constraints are eliminated through their
/// 2x2 Schur complement.
struct ShiftedSolver {
    lu: LuFactor,
    /// Block solves against the two constraint columns.
    y: [Vec<f64>; 2],
    /// Inverse of the Schur complement `C^T S^{-1} C`.
    g_inv: [[f64; 2]; 2],
    m: Vec<f64>,
}

impl ShiftedSolver {
    fn new(space: &FeSpace, a: &SparseOperator, s: f64) -> Result<Self> {
        let n = space.dim();
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(a.nnz() + 3 * space.mass().nnz());
        t.extend(a.triplets());
        for (i, j, v) in space.mass().triplets() {
            t.push((i, n + j, -s * v));
            t.push((n + i, j, -v));
        }
        t.extend(space.stiffness().triplets().map(|(i, j, v)| (n + i, n + j, v)));
        let lu = LuFactor::from_triplets(2 * n, &t)?;
        let m = space.lumped_mass().to_vec();
        let mut c0 = vec![0.0; 2 * n];
        c0[..n].copy_from_slice(&m);
        let mut c1 = vec![0.0; 2 * n];
        c1[n..].copy_from_slice(&m);
        let y = [lu.solve(&c0)?, lu.solve(&c1)?];
        let ct = |v: &[f64]| [dot(&m, &v[..n]), dot(&m, &v[n..])];
        let (g0, g1) = (ct(&y[0]), ct(&y[1]));
        let det = g0[0] * g1[1] - g1[0] * g0[1];
        if !(det.abs() > 0.0) || !det.is_finite() {
            return Err(Error::Solver("singular constraint complement in the shifted solve".into()));
        }
        let g_inv = [[g1[1] / det, -g1[0] / det], [-g0[1] / det, g0[0] / det]];
        Ok(ShiftedSolver { lu, y, g_inv, m })
    }

    /// `x` in the zero-mean space with `(A - s B) x - r` parallel to `m`.
    fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        let n = self.m.len();
        let mut w = vec![0.0; 2 * n];
        w[..n].copy_from_slice(r);
        self.lu.solve_in_place(&mut w)?;
        let c = [dot(&self.m, &w[..n]), dot(&self.m, &w[n..])];
        let mu = [
            self.g_inv[0][0] * c[0] + self.g_inv[0][1] * c[1],
            self.g_inv[1][0] * c[0] + self.g_inv[1][1] * c[1],
        ];
        Ok((0..n).map(|i| w[i] - mu[0] * self.y[0][i] - mu[1] * self.y[1][i]).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Deterministic zero-mean perturbation so a warm start that is already an
/// eigenvector does not make the Krylov space invariant.
fn perturbation(space: &FeSpace) -> Vec<f64> {
    let mut v: Vec<f64> = space
        .mesh()
        .vertices()
        .iter()
        .map(|p| (3.1 * p[0] + 1.7).sin() * (2.3 * p[1] - 0.4).cos() + 0.5 * (5.0 * p[0] * p[1]).sin())
        .collect();
    let m = space.mean(&v);
    v.iter_mut().for_each(|x| *x -= m);
    v
}

fn lanczos(space: &FeSpace, a: &SparseOperator, eps: f64, cfg: &EigenConfig, warm: Option<&FeFunction>) -> Result<EigenResult> {
    let n = space.dim();
    // below the lower bound -1 / (4 eps^3) of every quotient
    let s = -1.0 / (4.0 * eps.powi(3)) - 1.0;
    let shifted = ShiftedSolver::new(space, a, s)?;
    let op = |bq: &[f64]| shifted.solve(bq);

    let p = perturbation(space);
    let mut q0 = match warm {
        Some(w) => {
            w.check_on(space.mesh())?;
            let mut v = w.values().to_vec();
            let m = space.mean(&v);
            v.iter_mut().for_each(|x| *x -= m);
            let scale = v.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
            let ps = p.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            v.iter().zip(&p).map(|(x, y)| x / scale + 1e-3 * y / ps).collect()
        }
        None => p,
    };
    let mut bq0 = apply_b(space, &q0)?;
    let nrm = dot(&q0, &bq0).sqrt();
    if !(nrm > 0.0) {
        return Err(Error::Solver("degenerate Lanczos start vector".into()));
    }
    q0.iter_mut().for_each(|x| *x /= nrm);
    bq0.iter_mut().for_each(|x| *x /= nrm);

    let mut qs = vec![q0];
    let mut bqs = vec![bq0];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let limit = cfg.max_iter.min(n - 1).max(1);
    let mut last_est = f64::INFINITY;
    for j in 0..limit {
        let mut r = op(&bqs[j])?;
        alpha.push(dot(&bqs[j], &r));
        for _ in 0..2 {
            for (q, bq) in qs.iter().zip(&bqs) {
                let c = dot(bq, &r);
                r.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let br = apply_b(space, &r)?;
        let b = dot(&r, &br).max(0.0).sqrt();

        let k = alpha.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (idx, theta) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("nonempty tridiagonal");
        let y = eig.eigenvectors.column(idx);
        last_est = (b * y[k - 1]).abs() / theta.abs();
        let invariant = b <= 1e-14 * theta.abs();
        if last_est <= cfg.tol || invariant || k + 1 == n {
            let mut v = vec![0.0; n];
            for (q, c) in qs.iter().zip(y.iter()) {
                v.iter_mut().zip(q).for_each(|(x, z)| *x += c * z);
            }
            return finish(space, a, v, k, EigenMethod::Iterative);
        }
        beta.push(b);
        qs.push(r.iter().map(|x| x / b).collect());
        bqs.push(br.iter().map(|x| x / b).collect());
    }
    Err(Error::Solver(format!(
        "Lanczos did not converge in {} iterations (estimate {last_est:.2e})",
        alpha.len()
    )))
}

/// Time of the largest sample, the earliest one on ties.
pub fn peak_time(trace: &[(f64, f64)]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &(t, l) in trace {
        if l.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| l > b) {
            best = Some((t, l));
        }
    }
    best.map(|(t, _)| t).ok_or_else(|| Error::Input("empty eigenvalue trace".into()))
}

/// Time at which the state is least stable: the peak of `-Lambda`, which
/// spikes when an interface component collapses.
pub fn instability_peak_time(trace: &[(f64, f64)]) -> Result<f64> {
    let negated: Vec<(f64, f64)> = trace.iter().map(|&(t, l)| (t, -l)).collect();
    peak_time(&negated)
}
