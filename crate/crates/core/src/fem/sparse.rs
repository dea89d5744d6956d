use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

/// What a [`SparseOperator`] discretizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    Mass,
    Stiffness,
    WeightedMass,
    LumpedMass,
    General,
}

/// Square sparse matrix in compressed row storage with sorted, unique
/// column indices.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    symmetric: bool,
    kind: OperatorKind,
}

impl SparseOperator {
    /// Sums duplicate entries.
    pub fn from_triplets(n: usize, mut entries: Vec<(usize, usize, f64)>, kind: OperatorKind, symmetric: bool) -> Self {
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            assert!(i < n && j < n, "entry ({i},{j}) outside {n}x{n}");
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseOperator { n, row_ptr, cols, vals, symmetric, kind }
    }

    pub fn diagonal_matrix(diag: &[f64], kind: OperatorKind) -> Self {
        let n = diag.len();
        SparseOperator {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: diag.to_vec(),
            symmetric: true,
            kind,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn same_pattern(&self, other: &SparseOperator) -> bool {
        self.row_ptr == other.row_ptr && self.cols == other.cols
    }

    /// Stored values in row-major order of the pattern.
    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n).map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>()).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// `alpha * self + beta * other`
    pub fn combine(&self, alpha: f64, other: &SparseOperator, beta: f64) -> Result<SparseOperator> {
        if self.n != other.n {
            return Err(Error::Structure(format!("operator sizes {} and {} differ", self.n, other.n)));
        }
        if self.same_pattern(other) {
            let mut out = self.clone();
            for (v, w) in out.vals.iter_mut().zip(&other.vals) {
                *v = alpha * *v + beta * w;
            }
            out.kind = OperatorKind::General;
            out.symmetric = self.symmetric && other.symmetric;
            return Ok(out);
        }
        let entries = self
            .triplets()
            .map(|(i, j, v)| (i, j, alpha * v))
            .chain(other.triplets().map(|(i, j, v)| (i, j, beta * v)))
            .collect();
        Ok(SparseOperator::from_triplets(
            self.n,
            entries,
            OperatorKind::General,
            self.symmetric && other.symmetric,
        ))
    }

    pub fn scaled(&self, alpha: f64) -> SparseOperator {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= alpha);
        out.kind = OperatorKind::General;
        out
    }

    pub fn to_faer(&self) -> SparseColMat<usize, f64> {
        let t: Vec<Triplet<usize, usize, f64>> = self.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        SparseColMat::try_new_from_triplets(self.n, self.n, &t).expect("entries are unique and in range")
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }
}
