//! Sparse linear solves for the cell-coupled diffusion systems.

use crate::error::SolverError;

/// Row-compressed matrix with the diagonal stored separately.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsrMatrix {
    pub diag: Vec<f64>,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn with_rows(n: usize) -> Self {
        Self { diag: vec![0.0; n], row_ptr: vec![0], cols: Vec::new(), vals: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Appends an off-diagonal entry to the row currently being built.
    pub fn push(&mut self, col: usize, val: f64) {
        self.cols.push(col);
        self.vals.push(val);
    }

    pub fn finish_row(&mut self) {
        self.row_ptr.push(self.cols.len());
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n() {
            let mut s = self.diag[i] * x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        (self.row_ptr[i]..self.row_ptr[i + 1]).filter(|&k| self.cols[k] == j).map(|k| self.vals[k]).sum()
    }

    /// True if the matrix only couples i to i±1.
    pub fn is_tridiagonal(&self) -> bool {
        (0..self.n()).all(|i| {
            self.cols[self.row_ptr[i]..self.row_ptr[i + 1]].iter().all(|&j| j + 1 == i || j == i + 1)
        })
    }

    /// Strict row diagonal dominance with nonpositive off-diagonals.
    pub fn is_m_matrix_like(&self) -> bool {
        (0..self.n()).all(|i| {
            let off = &self.vals[self.row_ptr[i]..self.row_ptr[i + 1]];
            off.iter().all(|&v| v <= 0.0) && self.diag[i] > off.iter().map(|v| v.abs()).sum::<f64>()
        })
    }
}

/// Direct solve of a tridiagonal system stored in CSR form.
pub fn solve_tridiagonal(m: &CsrMatrix, rhs: &[f64]) -> Vec<f64> {
    let n = m.n();
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 0..n {
        for k in m.row_ptr[i]..m.row_ptr[i + 1] {
            if m.cols[k] + 1 == i {
                lower[i] += m.vals[k];
            } else {
                upper[i] += m.vals[k];
            }
        }
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let denom = m.diag[i] - if i > 0 { lower[i] * c[i - 1] } else { 0.0 };
        c[i] = upper[i] / denom;
        d[i] = (rhs[i] - if i > 0 { lower[i] * d[i - 1] } else { 0.0 }) / denom;
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = d[i] - if i + 1 < n { c[i] * x[i + 1] } else { 0.0 };
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned BiCGSTAB. Serial, so the result is deterministic.
pub fn bicgstab(
    m: &CsrMatrix,
    rhs: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, SolverError> {
    let n = m.n();
    let inv: Vec<f64> = m.diag.iter().map(|d| 1.0 / d).collect();
    let b_norm = norm(rhs);
    let mut x = x0.to_vec();
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut r = vec![0.0; n];
    m.mul(&x, &mut r);
    r.iter_mut().zip(rhs).for_each(|(ri, bi)| *ri = bi - *ri);
    if norm(&r) <= tol * b_norm {
        return Ok(x);
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            return Err(SolverError::Linear { iterations: it, residual });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = inv[i] * p[i];
        }
        m.mul(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= tol * b_norm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(x);
        }
        for i in 0..n {
            z[i] = inv[i] * s[i];
        }
        m.mul(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        residual = norm(&r) / b_norm;
        if residual <= tol {
            return Ok(x);
        }
        if omega == 0.0 {
            break;
        }
    }
    Err(SolverError::Linear { iterations: max_iter, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_like(n: usize) -> CsrMatrix {
        let mut m = CsrMatrix::with_rows(n);
        for i in 0..n {
            m.diag[i] = 3.0 + i as f64 * 0.01;
            if i > 0 {
                m.push(i - 1, -1.0);
            }
            if i + 1 < n {
                m.push(i + 1, -1.2);
            }
            m.finish_row();
        }
        m
    }

    #[test]
    fn tridiagonal_and_bicgstab_agree() {
        let m = laplacian_like(40);
        assert!(m.is_tridiagonal() && m.is_m_matrix_like());
        let rhs: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let a = solve_tridiagonal(&m, &rhs);
        let b = bicgstab(&m, &rhs, &vec![0.0; 40], 1e-13, 400).unwrap();
        let mut y = vec![0.0; 40];
        m.mul(&a, &mut y);
        for i in 0..40 {
            assert!((y[i] - rhs[i]).abs() < 1e-13);
            assert!((a[i] - b[i]).abs() < 1e-11);
        }
    }
}
