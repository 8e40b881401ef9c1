//! Symmetric sparse matrices and the two solvers behind the pressure solve:
//! an envelope Cholesky factorization under reverse Cuthill-McKee ordering and
//! a Jacobi-preconditioned conjugate gradient.

use std::collections::VecDeque;

use crate::error::{MembraneError, Result};
use crate::exec;

/// Compressed sparse row matrix with sorted column indices.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl CsrMatrix {
    /// Build from per-row `(column, value)` lists; columns must be sorted and unique.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut col = Vec::with_capacity(nnz);
        let mut val = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in rows {
            for (j, v) in row {
                col.push(j);
                val.push(v);
            }
            row_ptr.push(col.len());
        }
        CsrMatrix { n, row_ptr, col, val }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col[r.clone()].iter().copied().zip(self.val[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col[r.clone()].binary_search(&j) {
            Ok(k) => self.val[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        exec::map_indexed(self.n, |i| self.row(i).fold(0.0, |acc, (j, v)| acc + v * x[j]))
    }

    /// True if `A[i][j]` and `A[j][i]` are bit-identical for every stored entry.
    pub fn is_bit_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i).to_bits() == v.to_bits()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    exec::sum_indexed(a.len(), |i| a[i] * b[i])
}

/// Reverse Cuthill-McKee ordering of the adjacency graph of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).filter(|&(j, _)| j != i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs = |start: usize, visited: &mut Vec<bool>, order: &mut Vec<usize>| -> usize {
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> =
                a.row(v).map(|(j, _)| j).filter(|&j| j != v && !visited[j]).collect();
            nbrs.sort_by_key(|&j| (degree[j], j));
            for j in nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
        order[order.len() - 1]
    };
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // Pseudo-peripheral start: the last vertex reached from the seed.
        let mut scratch = visited.clone();
        let mut tmp = Vec::new();
        let far = bfs(seed, &mut scratch, &mut tmp);
        bfs(far, &mut visited, &mut order);
    }
    order.reverse();
    order
}

/// Envelope (skyline) Cholesky factor `P A P^T = L L^T`.
///
/// Rows listed in `pinned` are replaced by identity rows and columns, which
/// fixes those unknowns to zero; this is how known null modes are gauged out.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
    pinned: Vec<bool>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix, pinned: &[usize]) -> Result<Self> {
        let n = a.n();
        let mut is_pinned = vec![false; n];
        for &p in pinned {
            is_pinned[p] = true;
        }
        let perm = reverse_cuthill_mckee(a);
        let mut inv_perm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }

        let first: Vec<usize> = (0..n)
            .map(|i| {
                let old = perm[i];
                if is_pinned[old] {
                    return i;
                }
                a.row(old)
                    .filter(|&(j, _)| !is_pinned[j])
                    .map(|(j, _)| inv_perm[j])
                    .min()
                    .unwrap_or(i)
                    .min(i)
            })
            .collect();
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + (i - first[i] + 1));
        }
        let mut values = vec![0.0; offset[n]];
        for i in 0..n {
            let old = perm[i];
            if is_pinned[old] {
                values[offset[i + 1] - 1] = 1.0;
                continue;
            }
            for (j, v) in a.row(old) {
                let jn = inv_perm[j];
                if jn <= i && !is_pinned[j] {
                    values[offset[i] + jn - first[i]] = v;
                }
            }
        }

        let scale = a.diagonal().iter().fold(0.0_f64, |m, d| m.max(d.abs())).max(f64::MIN_POSITIVE);
        for i in 0..n {
            let (fi, oi) = (first[i], offset[i]);
            for j in fi..i {
                let (fj, oj) = (first[j], offset[j]);
                let k0 = fi.max(fj);
                let mut s = values[oi + j - fi];
                for k in k0..j {
                    s -= values[oi + k - fi] * values[oj + k - fj];
                }
                values[oi + j - fi] = s / values[oj + j - fj];
            }
            let mut d = values[oi + i - fi];
            for k in fi..i {
                d -= values[oi + k - fi] * values[oi + k - fi];
            }
            if !(d > 1e-14 * scale) {
                return Err(MembraneError::SolverBreakdown(format!(
                    "matrix is not positive definite (pivot {d:e} at row {})",
                    perm[i]
                )));
            }
            values[oi + i - fi] = d.sqrt();
        }
        Ok(EnvelopeCholesky { perm, inv_perm, first, offset, values, pinned: is_pinned })
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    /// Stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y: Vec<f64> = (0..n)
            .map(|i| {
                let old = self.perm[i];
                if self.pinned[old] {
                    0.0
                } else {
                    b[old]
                }
            })
            .collect();
        for i in 0..n {
            let (fi, oi) = (self.first[i], self.offset[i]);
            let mut s = y[i];
            for k in fi..i {
                s -= self.values[oi + k - fi] * y[k];
            }
            y[i] = s / self.values[oi + i - fi];
        }
        for i in (0..n).rev() {
            let (fi, oi) = (self.first[i], self.offset[i]);
            y[i] /= self.values[oi + i - fi];
            let xi = y[i];
            for k in fi..i {
                y[k] -= self.values[oi + k - fi] * xi;
            }
        }
        (0..n).map(|old| y[self.inv_perm[old]]).collect()
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradient for symmetric positive
/// (semi)definite systems with a consistent right-hand side.
/// Jacobi-preconditioned conjugate gradient. Stops once
/// `|r| <= max(rel_tol |b|, abs_tol)`.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    max_iter: usize,
) -> Result<CgSolution> {
    let n = a.n();
    let bnorm = dot(b, b).sqrt();
    let target = (rel_tol * bnorm).max(abs_tol);
    if bnorm <= abs_tol {
        return Ok(CgSolution { x: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<f64> =
        a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = (0..n).map(|i| r[i] * inv_diag[i]).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = a.mul_vec(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(MembraneError::SolverBreakdown(format!(
                "conjugate gradient lost positivity at iteration {it} (p^T A p = {pap:e})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = dot(&r, &r).sqrt();
        if rnorm <= target {
            return Ok(CgSolution { x, iterations: it, relative_residual: rnorm / bnorm });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = dot(&r, &r).sqrt() / bnorm;
    Err(MembraneError::SolverBreakdown(format!(
        "conjugate gradient stagnated after {max_iter} iterations (relative residual {rel:e})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1D periodic Laplacian plus a shift.
    fn ring(n: usize, shift: f64) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![((i + n - 1) % n, -1.0), (i, 2.0 + shift), ((i + 1) % n, -1.0)];
                r.sort_by_key(|e| e.0);
                r
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn cholesky_solves_periodic_system() {
        let a = ring(50, 0.1);
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul_vec(&x_true);
        let f = EnvelopeCholesky::factor(&a, &[]).unwrap();
        let x = f.solve(&b);
        let err = x.iter().zip(&x_true).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "err {err}");
        // RCM keeps the envelope of a ring narrow.
        assert!(f.envelope_size() < 50 * 6);
    }

    #[test]
    fn pinning_gauges_out_the_null_mode() {
        let a = ring(20, 0.0);
        let x_true: Vec<f64> = (0..20).map(|i| (i as f64).cos()).collect();
        let b = a.mul_vec(&x_true);
        assert!(EnvelopeCholesky::factor(&a, &[]).is_err());
        let f = EnvelopeCholesky::factor(&a, &[7]).unwrap();
        let x = f.solve(&b);
        assert_eq!(x[7], 0.0);
        let shift = x_true[7];
        let err = x.iter().zip(&x_true).map(|(a, b)| (a - (b - shift)).abs()).fold(0.0, f64::max);
        assert!(err < 1e-11, "err {err}");
    }

    #[test]
    fn cg_matches_direct() {
        let a = ring(64, 0.05);
        let b: Vec<f64> = (0..64).map(|i| 1.0 + (i % 5) as f64).collect();
        let direct = EnvelopeCholesky::factor(&a, &[]).unwrap().solve(&b);
        let cg = conjugate_gradient(&a, &b, 1e-13, 0.0, 640).unwrap();
        let err = direct.iter().zip(&cg.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "err {err}");
        assert!(cg.iterations > 0);
    }

    #[test]
    fn cg_reports_stagnation() {
        let a = ring(64, 1e-6);
        let b: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        assert!(matches!(conjugate_gradient(&a, &b, 1e-14, 0.0, 3), Err(MembraneError::SolverBreakdown(_))));
    }

    #[test]
    fn symmetric_matrix_detected() {
        assert!(ring(10, 0.0).is_bit_symmetric());
        let m = CsrMatrix::from_rows(vec![vec![(0, 1.0), (1, 2.0)], vec![(0, 2.0 + 1e-15), (1, 1.0)]]);
        assert!(!m.is_bit_symmetric());
    }
}
