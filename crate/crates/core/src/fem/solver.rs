use std::sync::Once;

use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::linalg::solvers::Solve;
use faer::MatMut;

use super::sparse::SparseOperator;
use crate::error::{Error, Result};

static SEQUENTIAL: Once = Once::new();

/// Pins faer to sequential kernels so factorizations are bit-reproducible
/// regardless of the surrounding thread pool.
pub fn init_backend() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

/// Sparse LU factorization of a square matrix.
#[derive(Clone, Debug)]
pub struct LuFactor {
    lu: Lu<usize, f64>,
    n: usize,
}

impl LuFactor {
    pub fn new(a: &SparseOperator) -> Result<Self> {
        Self::from_faer(&a.to_faer())
    }

    pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        Self::from_faer(&faer_matrix(n, entries)?)
    }

    pub fn from_faer(mat: &SparseColMat<usize, f64>) -> Result<Self> {
        init_backend();
        let lu = mat.sp_lu().map_err(|e| Error::Solver(format!("sparse LU failed: {e:?}")))?;
        Ok(LuFactor { lu, n: mat.nrows() })
    }

    /// Numeric factorization reusing a symbolic analysis of the same pattern.
    pub fn with_symbolic(symbolic: &SymbolicLu<usize>, mat: &SparseColMat<usize, f64>) -> Result<Self> {
        init_backend();
        let lu = Lu::try_new_with_symbolic(symbolic.clone(), mat.as_ref())
            .map_err(|e| Error::Solver(format!("sparse LU failed: {e:?}")))?;
        Ok(LuFactor { lu, n: mat.nrows() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) -> Result<()> {
        assert_eq!(rhs.len(), self.n);
        self.lu.solve_in_place(MatMut::from_column_major_slice_mut(rhs, self.n, 1));
        if rhs.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Solver("factorization is numerically singular".into()))
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

/// Assembles a faer matrix, summing duplicate entries.
pub fn faer_matrix(n: usize, entries: &[(usize, usize, f64)]) -> Result<SparseColMat<usize, f64>> {
    let t: Vec<Triplet<usize, usize, f64>> = entries.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
    SparseColMat::try_new_from_triplets(n, n, &t).map_err(|e| Error::Solver(format!("matrix assembly failed: {e:?}")))
}

pub fn symbolic_lu(mat: &SparseColMat<usize, f64>) -> Result<SymbolicLu<usize>> {
    SymbolicLu::try_new(mat.symbolic()).map_err(|e| Error::Solver(format!("symbolic LU failed: {e:?}")))
}
