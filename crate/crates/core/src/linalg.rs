//! Linear algebra used by the solvers: a tridiagonal sweep for 1D implicit
//! steps, a CSR matrix with BiCGSTAB for the disk, and small dense helpers.

use nalgebra::{DMatrix, DVector};

/// Solves `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]` in place
/// (Thomas algorithm). `lower[0]` and `upper[n-1]` are ignored.
///
/// Returns `None` when a pivot vanishes.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut Vec<f64>) -> Option<()> {
    let n = rhs.len();
    if n == 0 {
        return Some(());
    }
    scratch.clear();
    scratch.resize(n, 0.0);
    let mut pivot = diag[0];
    if pivot.abs() < 1e-300 {
        return None;
    }
    scratch[0] = upper[0] / pivot;
    rhs[0] /= pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * scratch[i - 1];
        if pivot.abs() < 1e-300 || !pivot.is_finite() {
            return None;
        }
        scratch[i] = if i + 1 < n { upper[i] / pivot } else { 0.0 };
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
    Some(())
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, Default)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                match cols.last() {
                    Some(&last) if cols.len() > *row_ptr.last().unwrap() && last == c => {
                        *vals.last_mut().unwrap() += v;
                    }
                    _ => {
                        cols.push(c);
                        vals.push(v);
                    }
                }
            }
            row_ptr.push(cols.len());
        }
        Csr { n, row_ptr, cols, vals }
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[p] * x[self.cols[p]];
            }
            y[i] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&p| self.cols[p] == i)
                    .map(|p| self.vals[p])
                    .unwrap_or(0.0)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned BiCGSTAB. `x` holds the initial guess on entry.
/// Returns the number of iterations, or `None` on breakdown/non-convergence.
pub fn bicgstab(a: &Csr, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Option<usize> {
    let n = a.n;
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = vec![0.0; n];
    a.mul(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bnorm = dot(b, b).sqrt().max(1e-300);
    if dot(&r, &r).sqrt() <= tol * bnorm {
        return Some(0);
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 {
            return None;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * inv_diag[i];
        }
        a.mul(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if dot(&s, &s).sqrt() <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Some(it);
        }
        for i in 0..n {
            z[i] = s[i] * inv_diag[i];
        }
        a.mul(&z, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return None;
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return Some(it);
        }
        if omega == 0.0 || !omega.is_finite() {
            return None;
        }
    }
    None
}

/// Row-major `d x d` slice into a nalgebra matrix.
pub fn to_matrix(d: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, cols, data)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    let scale = m.amax().max(1.0);
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Symmetric positive semidefinite square root via eigendecomposition.
/// Negative eigenvalues (rounding) are clamped to zero.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 1 {
        return DMatrix::from_element(1, 1, m[(0, 0)].max(0.0).sqrt());
    }
    let eig = m.clone().symmetric_eigen();
    let sq = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&sq) * eig.eigenvectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense_solve() {
        let n = 7;
        let lower: Vec<f64> = (0..n).map(|i| -1.0 - 0.1 * i as f64).collect();
        let upper: Vec<f64> = (0..n).map(|i| -0.5 + 0.05 * i as f64).collect();
        let diag: Vec<f64> = (0..n).map(|i| 4.0 + i as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = diag[i];
            if i > 0 {
                dense[(i, i - 1)] = lower[i];
            }
            if i + 1 < n {
                dense[(i, i + 1)] = upper[i];
            }
        }
        let expect = dense.lu().solve(&DVector::from_vec(b.clone())).unwrap();
        let mut x = b;
        solve_tridiagonal(&lower, &diag, &upper, &mut x, &mut Vec::new()).unwrap();
        for i in 0..n {
            assert!((x[i] - expect[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn thomas_reports_singular_pivot() {
        let mut x = vec![1.0, 1.0];
        assert!(solve_tridiagonal(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0], &mut x, &mut Vec::new()).is_none());
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let n = 20;
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let mut r = vec![(i, 3.0)];
                if i > 0 {
                    r.push((i - 1, -1.2));
                }
                if i + 1 < n {
                    r.push((i + 1, -0.7));
                }
                r
            })
            .collect();
        let a = Csr::from_rows(rows);
        let truth: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut b = vec![0.0; n];
        a.mul(&truth, &mut b);
        let mut x = vec![0.0; n];
        bicgstab(&a, &b, &mut x, 1e-13, 200).unwrap();
        for i in 0..n {
            assert!((x[i] - truth[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn sym_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = sym_sqrt(&m);
        assert!((&r * &r - &m).amax() < 1e-12);
        assert!(is_symmetric(&r, 1e-12));
    }
}
