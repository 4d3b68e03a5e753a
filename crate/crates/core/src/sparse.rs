//! Compressed sparse rows and a direct factorisation backed by faer.

use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{Mat, MatMut, Par, Side};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicates in the order they were pushed, so equal input yields
    /// bitwise-equal output.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len() / 4);
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len() / 4);
        let mut last = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let mut col = vec![0.0; self.n];
        for (&j, &v) in self.col_idx.iter().zip(&self.values) {
            col[j] += v.abs();
        }
        col.into_iter().fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// The same arrays read as compressed columns, i.e. the transpose.
    fn transpose_as_csc(&self) -> SparseColMat<usize, f64> {
        let symbolic =
            SymbolicSparseColMat::new_checked(self.n, self.n, self.row_ptr.clone(), None, self.col_idx.clone());
        SparseColMat::new(symbolic, self.values.clone())
    }
}

enum Factor {
    Cholesky(Llt<usize, f64>),
    Lu(Box<Lu<usize, f64>>),
}

/// Direct factorisation of a symmetric matrix: Cholesky, falling back to LU.
pub struct Factorization {
    n: usize,
    factor: Factor,
}

static SEQUENTIAL: Once = Once::new();

impl Factorization {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        // Parallelism comes from running cases concurrently; a sequential
        // kernel keeps results bitwise reproducible.
        SEQUENTIAL.call_once(|| faer::set_global_parallelism(Par::Seq));
        if a.n == 0 {
            return Err(Error::SolverFailure("empty system".into()));
        }
        let csc = a.transpose_as_csc();
        let factor = match csc.sp_cholesky(Side::Lower) {
            Ok(llt) => Factor::Cholesky(llt),
            Err(chol_err) => match csc.sp_lu() {
                Ok(lu) => Factor::Lu(Box::new(lu)),
                Err(lu_err) => {
                    return Err(Error::SolverFailure(format!(
                        "Cholesky failed ({chol_err:?}) and LU failed ({lu_err:?})"
                    )))
                }
            },
        };
        Ok(Factorization { n: a.n, factor })
    }

    pub fn is_cholesky(&self) -> bool {
        matches!(self.factor, Factor::Cholesky(_))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A X = B` for the columns of `rhs`.
    pub fn solve_mat(&self, rhs: MatMut<'_, f64>) {
        match &self.factor {
            Factor::Cholesky(f) => f.solve_in_place(rhs),
            Factor::Lu(f) => f.solve_in_place(rhs),
        }
    }

    /// Solves `A^T X = B`; the matrix was factored as read by columns.
    pub fn solve_transpose_mat(&self, rhs: MatMut<'_, f64>) {
        match &self.factor {
            Factor::Cholesky(f) => f.solve_in_place(rhs),
            Factor::Lu(f) => f.solve_transpose_in_place(rhs),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_transpose_mat(MatMut::from_column_major_slice_mut(&mut x, self.n, 1));
        x
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_mat(MatMut::from_column_major_slice_mut(&mut x, self.n, 1));
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_are_summed() {
        let a = CsrMatrix::from_triplets(3, vec![(0, 0, 1.0), (2, 1, 2.0), (0, 0, 3.0), (1, 1, 5.0), (1, 2, 2.0)]);
        assert_eq!(a.nnz(), 4);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(2, 0), 0.0);
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]), vec![4.0, 7.0, 2.0]);
        assert_eq!(a.norm1(), 7.0);
        assert_eq!(a.asymmetry(), 0.0);
    }

    #[test]
    fn identity_solve() {
        let f = Factorization::new(&CsrMatrix::identity(4)).unwrap();
        assert!(f.is_cholesky());
        assert_eq!(f.solve(&[1.0, 0.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn indefinite_falls_back_to_lu() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let f = Factorization::new(&a).unwrap();
        assert!(!f.is_cholesky());
        let x = f.solve(&[1.0, 2.0]);
        let r = a.matvec(&x);
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn nonsymmetric_lu_uses_the_right_orientation() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 2.0), (0, 1, 1.0), (1, 1, -3.0)]);
        let f = Factorization::new(&a).unwrap();
        let x = f.solve(&[3.0, -3.0]);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        let y = f.solve_transpose(&[2.0, -2.0]);
        // A^T y = (2 y0, y0 - 3 y1).
        assert!((2.0 * y[0] - 2.0).abs() < 1e-14 && (y[0] - 3.0 * y[1] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_fails() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(
            Factorization::new(&a).is_err() || {
                let x = Factorization::new(&a).unwrap().solve(&[1.0, 0.0]);
                !x.iter().all(|v| v.is_finite())
            }
        );
    }
}
