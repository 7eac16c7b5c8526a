//! Sparse matrices, direct solves (backed by faer) and Jacobi-preconditioned CG.

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

/// Square CSR matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Duplicate entries are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; n + 1];
        for &(i, j, _) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!("entry ({i}, {j}) outside {n}x{n}")));
            }
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            cols[fill[i]] = j;
            vals[fill[i]] = v;
            fill[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            row.sort_unstable_by_key(|e| e.0);
            for &(j, v) in &row {
                if col_idx.len() > row_ptr[i] && *col_idx.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                y[j] += v * x[i];
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let trips: Vec<_> = (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (j, i, v)))
            .collect();
        Self::from_triplets(self.n, &trips).expect("transpose of a valid matrix")
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    /// `max |A_ij − A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }

    /// `y = a·self + b·other`.
    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out
    }

    pub fn add_scaled(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::InvalidArgument("matrix dimensions differ".into()));
        }
        let mut trips: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (i, j, a * v)).collect();
        trips.extend(other.triplets().into_iter().map(|(i, j, v)| (i, j, b * v)));
        Self::from_triplets(self.n, &trips)
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let trips: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        SparseColMat::try_new_from_triplets(self.n, self.n, &trips)
            .map_err(|e| Error::Internal(format!("sparse conversion: {e:?}")))
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative residual above which a direct solve is reported as singular.
const DIRECT_RESIDUAL_TOL: f64 = 1e-6;
const REFINEMENT_STEPS: usize = 3;

/// Sparse LU factorization, reusable for several right-hand sides and for
/// transposed solves.
pub struct Factorization {
    matrix: CsrMatrix,
    lu: Lu<usize, f64>,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization").field("n", &self.matrix.n).finish()
    }
}

impl Factorization {
    pub fn new(matrix: &CsrMatrix) -> Result<Self> {
        if let Some((i, _)) = (0..matrix.n).map(|i| (i, matrix.row(i).count())).find(|r| r.1 == 0) {
            return Err(Error::SingularSystem(format!("row {i} is empty")));
        }
        let lu = matrix
            .to_faer()?
            .sp_lu()
            .map_err(|e| Error::SingularSystem(format!("LU factorization failed: {e:?}")))?;
        Ok(Self {
            matrix: matrix.clone(),
            lu,
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    fn apply(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        if transpose {
            self.matrix.matvec_transpose(x)
        } else {
            self.matrix.matvec(x)
        }
    }

    fn raw_solve(&self, b: &[f64], transpose: bool) -> Vec<f64> {
        let rhs = Col::<f64>::from_fn(b.len(), |i| b[i]);
        let x = if transpose {
            self.lu.solve_transpose(&rhs)
        } else {
            self.lu.solve(&rhs)
        };
        (0..self.matrix.n).map(|i| x[i]).collect()
    }

    /// LU solve followed by a few steps of iterative refinement, which
    /// recovers accuracy lost to small cut cells.
    fn solve_refined(&self, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
        let mut x = self.raw_solve(b, transpose);
        let bn = norm(b);
        let residual = |x: &[f64]| -> Vec<f64> { b.iter().zip(self.apply(x, transpose)).map(|(b, a)| b - a).collect() };
        let mut r = residual(&x);
        let mut rel = norm(&r) / bn.max(f64::MIN_POSITIVE);
        for _ in 0..REFINEMENT_STEPS {
            if !rel.is_finite() || rel <= 1e-14 {
                break;
            }
            let dx = self.raw_solve(&r, transpose);
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
            let rt = residual(&trial);
            let relt = norm(&rt) / bn.max(f64::MIN_POSITIVE);
            if !(relt < rel) {
                break;
            }
            (x, r, rel) = (trial, rt, relt);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("non-finite entries in the solution".into()));
        }
        if bn > 0.0 && rel > DIRECT_RESIDUAL_TOL {
            return Err(Error::SingularSystem(format!(
                "direct solve residual {rel:.3e} exceeds {DIRECT_RESIDUAL_TOL:e}"
            )));
        }
        Ok(x)
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b)?;
        self.solve_refined(b, false)
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b)?;
        self.solve_refined(b, true)
    }

    fn check_len(&self, b: &[f64]) -> Result<()> {
        if b.len() != self.matrix.n {
            return Err(Error::InvalidArgument(format!(
                "right-hand side has length {}, matrix is {}x{}",
                b.len(),
                self.matrix.n,
                self.matrix.n
            )));
        }
        Ok(())
    }
}

pub fn solve_direct(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    Factorization::new(a)?.solve(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual after each iteration.
    pub history: Vec<f64>,
}

/// Conjugate gradients with a Jacobi preconditioner, for symmetric positive
/// definite matrices.
pub fn cg_jacobi(a: &CsrMatrix, b: &[f64], opts: CgOptions) -> Result<CgSolution> {
    let n = a.n;
    if b.len() != n {
        return Err(Error::InvalidArgument("right-hand side length mismatch".into()));
    }
    let diag = a.diagonal();
    if let Some(i) = diag.iter().position(|&d| d <= 0.0) {
        return Err(Error::SingularSystem(format!("non-positive diagonal at row {i}")));
    }
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            history: vec![],
        });
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut history = Vec::new();
    for it in 1..=opts.max_iter {
        let ap = a.matvec(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::SingularSystem(format!(
                "matrix is not positive definite (pᵀAp = {pap:e} at iteration {it})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = norm(&r) / bnorm;
        history.push(rel);
        if rel <= opts.rel_tol {
            return Ok(CgSolution {
                x,
                iterations: it,
                history,
            });
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual: *history.last().unwrap_or(&1.0),
        history,
    })
}
