//! Sparse matrices and Krylov solvers for the grid operators.
//!
//! Pure-Neumann and periodic problems have the constants as their nullspace.
//! For those the solvers are run with `project_mean`, which removes the mean
//! from the right-hand side, the residual and the iterate so the iteration
//! stays in the zero-mean subspace.

use crate::error::SolverError;

/// Compressed sparse row matrix.
#[derive(Clone, Debug, Default)]
pub struct SparseMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix row by row; `fill(row, push)` adds `(col, value)`
    /// entries, duplicates are summed.
    pub fn from_rows<F>(n: usize, mut fill: F) -> Self
    where
        F: FnMut(usize, &mut dyn FnMut(usize, f64)),
    {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        row_ptr.push(0);
        for row in 0..n {
            scratch.clear();
            fill(row, &mut |c, v| scratch.push((c, v)));
            scratch.sort_by_key(|e| e.0);
            let mut last = usize::MAX;
            for &(c, v) in &scratch {
                if c == last {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = c;
                }
            }
            row_ptr.push(cols.len());
        }
        SparseMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for (row, out) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *out = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|row| {
                (self.row_ptr[row]..self.row_ptr[row + 1])
                    .find(|&k| self.cols[k] == row)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        (self.row_ptr[row]..self.row_ptr[row + 1])
            .find(|&k| self.cols[k] == col)
            .map_or(0.0, |k| self.vals[k])
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for row in 0..self.n {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                let col = self.cols[k];
                worst = worst.max((self.vals[k] - self.get(col, row)).abs());
            }
        }
        worst
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.vals {
            *v *= factor;
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Relative residual target `|b - Ax| / |b|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Work in the zero-mean subspace (constant nullspace).
    pub project_mean: bool,
}

impl SolverOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        SolverOptions {
            tol,
            max_iter,
            project_mean: false,
        }
    }

    pub fn singular(mut self) -> Self {
        self.project_mean = true;
        self
    }

    /// Default cap on iterations, `50 * sqrt(n)` (at least 100).
    pub fn default_max_iter(n: usize) -> usize {
        ((50.0 * (n as f64).sqrt()).ceil() as usize).max(100)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn remove_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}

fn true_residual(a: &SparseMatrix, b: &[f64], x: &[f64], project: bool) -> Vec<f64> {
    let mut r = a.mul(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    if project {
        remove_mean(&mut r);
    }
    r
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive
/// (semi)definite `a`. `x` holds the initial guess and receives the iterate,
/// also when the solve fails.
pub fn conjugate_gradient(
    a: &SparseMatrix,
    b: &[f64],
    x: &mut [f64],
    opts: &SolverOptions,
) -> Result<SolveStats, SolverError> {
    const METHOD: &str = "conjugate gradient";
    let n = a.n;
    let mut rhs = b.to_vec();
    if opts.project_mean {
        remove_mean(&mut rhs);
        remove_mean(x);
    }
    let bnorm = norm(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats::default());
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut r = true_residual(a, &rhs, x, opts.project_mean);
    let mut rel = norm(&r) / bnorm;
    if rel <= opts.tol {
        return Ok(SolveStats {
            iterations: 0,
            residual: rel,
        });
    }
    let precondition = |r: &[f64], z: &mut [f64]| {
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        if opts.project_mean {
            remove_mean(z);
        }
    };
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for it in 1..=opts.max_iter {
        a.mul_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(SolverError::Breakdown {
                method: METHOD,
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if opts.project_mean {
            remove_mean(x);
            remove_mean(&mut r);
        }
        rel = norm(&r) / bnorm;
        if rel <= opts.tol {
            // confirm against the true residual to guard against drift
            let tr = true_residual(a, &rhs, x, opts.project_mean);
            let trel = norm(&tr) / bnorm;
            if trel <= opts.tol {
                return Ok(SolveStats {
                    iterations: it,
                    residual: trel,
                });
            }
            r = tr;
            rel = trel;
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolverError::NotConverged {
        method: METHOD,
        iterations: opts.max_iter,
        residual: rel,
    })
}

/// Jacobi-preconditioned BiCGSTAB for nonsymmetric `a`.
pub fn bicgstab(
    a: &SparseMatrix,
    b: &[f64],
    x: &mut [f64],
    opts: &SolverOptions,
) -> Result<SolveStats, SolverError> {
    const METHOD: &str = "BiCGSTAB";
    let n = a.n;
    let mut rhs = b.to_vec();
    if opts.project_mean {
        remove_mean(&mut rhs);
        remove_mean(x);
    }
    let bnorm = norm(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats::default());
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let precondition = |v: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = v[i] * inv_diag[i];
        }
        if opts.project_mean {
            remove_mean(out);
        }
    };

    let mut r = true_residual(a, &rhs, x, opts.project_mean);
    let mut rel = norm(&r) / bnorm;
    if rel <= opts.tol {
        return Ok(SolveStats {
            iterations: 0,
            residual: rel,
        });
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zs = vec![0.0; n];
    let mut t = vec![0.0; n];

    for it in 1..=opts.max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(SolverError::Breakdown {
                method: METHOD,
                iterations: it,
                residual: rel,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precondition(&p, &mut y);
        a.mul_into(&y, &mut v);
        if opts.project_mean {
            remove_mean(&mut v);
        }
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            return Err(SolverError::Breakdown {
                method: METHOD,
                iterations: it,
                residual: rel,
            });
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bnorm <= opts.tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            if opts.project_mean {
                remove_mean(x);
            }
            let tr = true_residual(a, &rhs, x, opts.project_mean);
            let trel = norm(&tr) / bnorm;
            if trel <= opts.tol {
                return Ok(SolveStats {
                    iterations: it,
                    residual: trel,
                });
            }
            r = tr;
            rel = trel;
            continue;
        }
        precondition(&s, &mut zs);
        a.mul_into(&zs, &mut t);
        if opts.project_mean {
            remove_mean(&mut t);
        }
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zs[i];
            r[i] = s[i] - omega * t[i];
        }
        if opts.project_mean {
            remove_mean(x);
            remove_mean(&mut r);
        }
        rel = norm(&r) / bnorm;
        if rel <= opts.tol {
            let tr = true_residual(a, &rhs, x, opts.project_mean);
            let trel = norm(&tr) / bnorm;
            if trel <= opts.tol {
                return Ok(SolveStats {
                    iterations: it,
                    residual: trel,
                });
            }
            r = tr;
            rel = trel;
        }
    }
    Err(SolverError::NotConverged {
        method: METHOD,
        iterations: opts.max_iter,
        residual: rel,
    })
}

/// Dispatches to CG for symmetric matrices and BiCGSTAB otherwise.
pub fn solve(
    a: &SparseMatrix,
    b: &[f64],
    x: &mut [f64],
    opts: &SolverOptions,
    symmetric: bool,
) -> Result<SolveStats, SolverError> {
    if symmetric {
        conjugate_gradient(a, b, x, opts)
    } else {
        bicgstab(a, b, x, opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // 1D Neumann Laplacian, singular with constant nullspace
    fn neumann_1d(n: usize) -> SparseMatrix {
        SparseMatrix::from_rows(n, |i, push| {
            if i > 0 {
                push(i, 1.0);
                push(i - 1, -1.0);
            }
            if i + 1 < n {
                push(i, 1.0);
                push(i + 1, -1.0);
            }
        })
    }

    #[test]
    fn duplicates_are_summed() {
        let a = neumann_1d(4);
        assert_eq!(a.get(1, 1), 2.0);
        assert_eq!(a.get(0, 0), 1.0);
        assert_eq!(a.asymmetry(), 0.0);
    }

    #[test]
    fn cg_solves_shifted_system() {
        let n = 50;
        let mut a = neumann_1d(n);
        for row in 0..n {
            for k in a.row_ptr[row]..a.row_ptr[row + 1] {
                if a.cols[k] == row {
                    a.vals[k] += 0.1;
                }
            }
        }
        let exact: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul(&exact);
        let mut x = vec![0.0; n];
        let stats = conjugate_gradient(&a, &b, &mut x, &SolverOptions::new(1e-12, 500)).unwrap();
        assert!(stats.residual <= 1e-12);
        for (u, v) in x.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn projected_cg_returns_zero_mean_solution() {
        let n = 40;
        let a = neumann_1d(n);
        let mut exact: Vec<f64> = (0..n).map(|i| (i as f64 * 0.2).cos()).collect();
        remove_mean(&mut exact);
        let b = a.mul(&exact);
        let mut x = vec![1.0; n];
        let opts = SolverOptions::new(1e-12, 1000).singular();
        conjugate_gradient(&a, &b, &mut x, &opts).unwrap();
        let mean: f64 = x.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-13);
        for (u, v) in x.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = neumann_1d(5);
        let mut x = vec![3.0; 5];
        let s = conjugate_gradient(
            &a,
            &[0.0; 5],
            &mut x,
            &SolverOptions::new(1e-10, 10).singular(),
        )
        .unwrap();
        assert_eq!(s.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_convergence_reports_residual() {
        let a = neumann_1d(200);
        let mut b = vec![0.0; 200];
        b[0] = 1.0;
        b[199] = -1.0;
        let mut x = vec![0.0; 200];
        let err = conjugate_gradient(&a, &b, &mut x, &SolverOptions::new(1e-12, 2).singular())
            .unwrap_err();
        assert!(err.residual() > 1e-12);
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let n = 60;
        // convection-diffusion with an upwind term
        let a = SparseMatrix::from_rows(n, |i, push| {
            push(i, 2.5);
            if i > 0 {
                push(i - 1, -1.4);
            }
            if i + 1 < n {
                push(i + 1, -0.6);
            }
        });
        assert!(a.asymmetry() > 0.0);
        let exact: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64).sqrt()).collect();
        let b = a.mul(&exact);
        let mut x = vec![0.0; n];
        bicgstab(&a, &b, &mut x, &SolverOptions::new(1e-12, 500)).unwrap();
        for (u, v) in x.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}
