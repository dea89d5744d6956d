//! P1 finite elements on [`Mesh`]: assembly, projections, the discrete
//! Neumann Laplacian and its inverse, the discrete H^-1 norm and transfer of
//! fields between meshes of the same bisection forest.

pub mod assembly;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod transfer;

use std::sync::{Arc, Mutex, OnceLock};

use faer::sparse::linalg::solvers::SymbolicLu;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};

pub use assembly::{assemble_mass, assemble_stiffness, assemble_weighted_mass, lumped_mass};
pub use quadrature::Quadrature;
pub use solver::LuFactor;
pub use sparse::{OperatorKind, SparseOperator};
pub use transfer::{l2_project, prolongate};

/// Nodal coefficients of a P1 field, bound to one mesh generation.
#[derive(Clone, Debug, PartialEq)]
pub struct FeFunction {
    generation: u64,
    values: Vec<f64>,
}

impl FeFunction {
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.vertex_count() {
            return Err(Error::Structure(format!(
                "{} coefficients for a mesh with {} vertices",
                values.len(),
                mesh.vertex_count()
            )));
        }
        Ok(FeFunction { generation: mesh.generation(), values })
    }

    pub fn zeros(mesh: &Mesh) -> Self {
        FeFunction { generation: mesh.generation(), values: vec![0.0; mesh.vertex_count()] }
    }

    pub fn constant(mesh: &Mesh, c: f64) -> Self {
        FeFunction { generation: mesh.generation(), values: vec![c; mesh.vertex_count()] }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Self {
        FeFunction { generation: mesh.generation(), values: mesh.vertices().iter().map(|&p| f(p)).collect() }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_on(&self, mesh: &Mesh) -> bool {
        self.generation == mesh.generation() && self.values.len() == mesh.vertex_count()
    }

    pub fn check_on(&self, mesh: &Mesh) -> Result<()> {
        if self.is_on(mesh) {
            Ok(())
        } else {
            Err(Error::Structure(format!(
                "function of generation {} used on mesh generation {}",
                self.generation,
                mesh.generation()
            )))
        }
    }

    fn check_same(&self, other: &FeFunction) -> Result<()> {
        if self.generation == other.generation && self.values.len() == other.values.len() {
            Ok(())
        } else {
            Err(Error::Structure(format!(
                "cannot combine functions of generations {} and {} without transfer",
                self.generation, other.generation
            )))
        }
    }

    /// `self + alpha * other`
    pub fn axpy(&self, alpha: f64, other: &FeFunction) -> Result<FeFunction> {
        self.check_same(other)?;
        Ok(FeFunction {
            generation: self.generation,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + alpha * b).collect(),
        })
    }

    pub fn add(&self, other: &FeFunction) -> Result<FeFunction> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &FeFunction) -> Result<FeFunction> {
        self.axpy(-1.0, other)
    }

    pub fn scaled(&self, alpha: f64) -> FeFunction {
        FeFunction { generation: self.generation, values: self.values.iter().map(|v| alpha * v).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Rebinds the coefficients to another mesh with the same vertex set.
    pub(crate) fn rebind(mut self, mesh: &Mesh) -> FeFunction {
        debug_assert_eq!(self.values.len(), mesh.vertex_count());
        self.generation = mesh.generation();
        self
    }
}

/// Operators and factorizations of one mesh, built once and shared.
#[derive(Debug)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    mass: SparseOperator,
    stiffness: SparseOperator,
    lumped: Vec<f64>,
    area: f64,
    mass_lu: OnceLock<LuFactor>,
    neumann_lu: OnceLock<LuFactor>,
    block_symbolic: OnceLock<SymbolicLu<usize>>,
    keyed: Mutex<Option<(u128, Arc<LuFactor>)>>,
}

impl FeSpace {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let mass = assemble_mass(&mesh);
        let stiffness = assemble_stiffness(&mesh);
        let lumped = mass.row_sums();
        let area = lumped.iter().sum();
        FeSpace {
            mesh,
            mass,
            stiffness,
            lumped,
            area,
            mass_lu: OnceLock::new(),
            neumann_lu: OnceLock::new(),
            block_symbolic: OnceLock::new(),
            keyed: Mutex::new(None),
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn mass(&self) -> &SparseOperator {
        &self.mass
    }

    pub fn stiffness(&self) -> &SparseOperator {
        &self.stiffness
    }

    /// Lumped mass diagonal, equal to `M 1`.
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn zeros(&self) -> FeFunction {
        FeFunction::zeros(&self.mesh)
    }

    pub fn function(&self, values: Vec<f64>) -> Result<FeFunction> {
        FeFunction::new(&self.mesh, values)
    }

    /// `(v, 1)`
    pub fn integral(&self, v: &[f64]) -> f64 {
        self.lumped.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// Mean value `m(v) = (v, 1) / |D|`.
    pub fn mean(&self, v: &[f64]) -> f64 {
        self.integral(v) / self.area
    }

    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        self.mass.bilinear(v, v).max(0.0).sqrt()
    }

    pub fn grad_norm(&self, v: &[f64]) -> f64 {
        self.stiffness.bilinear(v, v).max(0.0).sqrt()
    }

    pub fn mass_factor(&self) -> Result<&LuFactor> {
        if let Some(f) = self.mass_lu.get() {
            return Ok(f);
        }
        let f = LuFactor::new(&self.mass)?;
        Ok(self.mass_lu.get_or_init(|| f))
    }

    /// Solves `M x = rhs`.
    pub fn solve_mass(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.mass_factor()?.solve(rhs)
    }

    /// Factorization of `K` with the row and column of vertex 0 replaced by
    /// the identity.
    fn neumann_factor(&self) -> Result<&LuFactor> {
        if let Some(f) = self.neumann_lu.get() {
            return Ok(f);
        }
        let mut t: Vec<(usize, usize, f64)> =
            self.stiffness.triplets().filter(|&(i, j, _)| i != 0 && j != 0).collect();
        t.push((0, 0, 1.0));
        let f = LuFactor::from_triplets(self.dim(), &t)?;
        Ok(self.neumann_lu.get_or_init(|| f))
    }

    /// LU factorization of the 2x2 block matrix `[a11, a12; a21, a22]` whose
    /// blocks all share the sparsity pattern of the mass matrix. The symbolic
    /// analysis is computed once per space.
    pub fn block_factor(&self, block: &BlockOperator<'_>) -> Result<LuFactor> {
        let mat = block.to_faer(self)?;
        let sym = match self.block_symbolic.get() {
            Some(s) => s,
            None => {
                let s = solver::symbolic_lu(&mat)?;
                self.block_symbolic.get_or_init(|| s)
            }
        };
        LuFactor::with_symbolic(sym, &mat)
    }

    /// Returns the factorization cached under `key`, building it on a miss.
    /// Only the most recent key is retained.
    pub fn keyed_factor(&self, key: u128, build: impl FnOnce() -> Result<LuFactor>) -> Result<Arc<LuFactor>> {
        let mut slot = self.keyed.lock().expect("factor cache poisoned");
        if let Some((k, f)) = slot.as_ref() {
            if *k == key {
                return Ok(f.clone());
            }
        }
        let f = Arc::new(build()?);
        *slot = Some((key, f.clone()));
        Ok(f)
    }

    /// Zero-mean solution of `K z = rhs` after projecting `rhs` onto the
    /// range of `K` (removing its component along `M 1`).
    pub fn solve_neumann(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(rhs.len(), self.dim());
        let shift = rhs.iter().sum::<f64>() / self.area;
        let mut x: Vec<f64> = rhs.iter().zip(&self.lumped).map(|(r, m)| r - shift * m).collect();
        // the pinned row is implied by the others once rhs sums to zero
        x[0] = 0.0;
        self.neumann_factor()?.solve_in_place(&mut x)?;
        let mean = self.mean(&x);
        x.iter_mut().for_each(|v| *v -= mean);
        Ok(x)
    }

    fn require_zero_mean(&self, v: &[f64]) -> Result<()> {
        let m = self.mean(v);
        let scale = v.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        if m.abs() > 1e-10 * scale {
            return Err(Error::Precondition(format!("argument has nonzero mean {m:.3e}")));
        }
        Ok(())
    }

    /// `(-Delta_h)^{-1} v`: the zero-mean `z` with `(grad z, grad phi) = (v, phi)`.
    pub fn inv_neumann_laplacian(&self, v: &FeFunction) -> Result<FeFunction> {
        v.check_on(&self.mesh)?;
        self.require_zero_mean(v.values())?;
        let z = self.solve_neumann(&self.mass.apply(v.values()))?;
        FeFunction::new(&self.mesh, z)
    }

    /// Discrete H^-1 norm `||grad (-Delta_h)^{-1} v||` of a zero-mean field.
    pub fn h_minus1_norm(&self, v: &FeFunction) -> Result<f64> {
        let z = self.inv_neumann_laplacian(v)?;
        Ok(self.grad_norm(z.values()))
    }

    /// Squared discrete H^-1 norm of a functional given by its dual vector
    /// `b_i = <g, phi_i>`; `b` must annihilate constants.
    pub fn dual_h_minus1_sq(&self, b: &[f64]) -> Result<f64> {
        let z = self.solve_neumann(b)?;
        Ok(self.stiffness.bilinear(&z, &z).max(0.0))
    }

    /// Nodal discrete Laplacian `-(K v)_i / (M_L)_ii`.
    pub fn discrete_laplacian(&self, v: &FeFunction) -> Result<FeFunction> {
        v.check_on(&self.mesh)?;
        let kv = self.stiffness.apply(v.values());
        FeFunction::new(&self.mesh, kv.iter().zip(&self.lumped).map(|(k, m)| -k / m).collect())
    }

    /// L2 projection of a function of position, integrated with the
    /// degree-6 rule.
    pub fn project_fn(&self, f: impl Fn(Point) -> f64) -> Result<FeFunction> {
        let b = assembly::load_vector(&self.mesh, f);
        FeFunction::new(&self.mesh, self.solve_mass(&b)?)
    }
}

/// Block operator `[a11, a12; a21, a22]` over P1 dofs.
pub struct BlockOperator<'a> {
    pub blocks: [[&'a SparseOperator; 2]; 2],
}

impl<'a> BlockOperator<'a> {
    pub fn new(a11: &'a SparseOperator, a12: &'a SparseOperator, a21: &'a SparseOperator, a22: &'a SparseOperator) -> Self {
        BlockOperator { blocks: [[a11, a12], [a21, a22]] }
    }

    pub fn dim(&self) -> usize {
        2 * self.blocks[0][0].dim()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.blocks[0][0].dim();
        let (x1, x2) = x.split_at(n);
        let mut y = Vec::with_capacity(2 * n);
        for row in &self.blocks {
            let a = row[0].apply(x1);
            let b = row[1].apply(x2);
            y.extend(a.iter().zip(&b).map(|(p, q)| p + q));
        }
        y
    }

    fn to_faer(&self, space: &FeSpace) -> Result<faer::sparse::SparseColMat<usize, f64>> {
        let n = space.dim();
        let pattern = space.mass();
        let mut t = Vec::with_capacity(4 * pattern.nnz());
        for (bi, row) in self.blocks.iter().enumerate() {
            for (bj, blk) in row.iter().enumerate() {
                if blk.dim() != n {
                    return Err(Error::Structure("block size does not match the space".into()));
                }
                if blk.same_pattern(pattern) {
                    for ((i, j, _), v) in pattern.triplets().zip(blk.values()) {
                        t.push((bi * n + i, bj * n + j, *v));
                    }
                } else {
                    for (i, j, _) in pattern.triplets() {
                        t.push((bi * n + i, bj * n + j, blk.get(i, j)));
                    }
                }
            }
        }
        solver::faer_matrix(2 * n, &t)
    }

    /// Solves with `lu` and applies `sweeps` steps of iterative refinement.
    pub fn solve_refined(&self, lu: &LuFactor, rhs: &[f64], sweeps: usize) -> Result<Vec<f64>> {
        let mut x = lu.solve(rhs)?;
        for _ in 0..sweeps {
            let ax = self.apply(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let dx = lu.solve(&r)?;
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
        }
        Ok(x)
    }
}
