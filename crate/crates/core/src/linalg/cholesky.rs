//! Up-looking sparse Cholesky factorization `P A P' = L L'`.
//!
//! The symbolic analysis (ordering, elimination tree, column counts) depends
//! only on the sparsity pattern, so it is computed once and shared by every
//! numeric factorization of matrices with that pattern.

use std::collections::VecDeque;
use std::sync::Arc;

use super::CscMatrix;
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Fill-reducing ordering applied before factorization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Ordering {
    Natural,
    ReverseCuthillMcKee,
    #[default]
    ApproximateMinimumDegree,
}

#[derive(Debug)]
pub struct SymbolicCholesky {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    parent: Vec<usize>,
    /// Upper triangle of the permuted matrix.
    up_colptr: Vec<usize>,
    up_rowidx: Vec<usize>,
    /// Position of each permuted-upper entry in the source value array.
    up_src: Vec<usize>,
    source_nnz: usize,
    l_colptr: Vec<usize>,
}

/// Numeric factor; immutable once built, so solves may run concurrently.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    l_rowidx: Vec<usize>,
    l_values: Vec<f64>,
}

impl SymbolicCholesky {
    /// Analyzes the pattern of a symmetric matrix (both triangles stored).
    pub fn analyze(a: &CscMatrix, ordering: Ordering) -> Result<Arc<Self>> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim(format!("cholesky of non-square {}x{} matrix", n, a.ncols())));
        }
        let perm = match ordering {
            Ordering::Natural => (0..n).collect(),
            Ordering::ReverseCuthillMcKee => reverse_cuthill_mckee(a),
            Ordering::ApproximateMinimumDegree => approximate_minimum_degree(a)?,
        };
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // Permuted upper triangle, remembering where each value comes from.
        let mut cols: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for j_old in 0..n {
            let j_new = iperm[j_old];
            for p in a.colptr()[j_old]..a.colptr()[j_old + 1] {
                let i_new = iperm[a.rowidx()[p]];
                if i_new <= j_new {
                    cols[j_new].push((i_new, p));
                }
            }
        }
        let mut up_colptr = vec![0; n + 1];
        let mut up_rowidx = Vec::new();
        let mut up_src = Vec::new();
        for (j, col) in cols.iter_mut().enumerate() {
            col.sort_unstable();
            for &(i, p) in col.iter() {
                up_rowidx.push(i);
                up_src.push(p);
            }
            up_colptr[j + 1] = up_rowidx.len();
        }

        let parent = etree(n, &up_colptr, &up_rowidx);

        let mut counts = vec![1usize; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            let top = ereach(k, &up_colptr, &up_rowidx, &parent, &mut stack, &mut mark);
            for &i in &stack[top..n] {
                counts[i] += 1;
            }
        }
        let mut l_colptr = vec![0; n + 1];
        for k in 0..n {
            l_colptr[k + 1] = l_colptr[k] + counts[k];
        }

        Ok(Arc::new(Self {
            n,
            perm,
            parent,
            up_colptr,
            up_rowidx,
            up_src,
            source_nnz: a.nnz(),
            l_colptr,
        }))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of nonzeros in the factor `L`.
    pub fn factor_nnz(&self) -> usize {
        self.l_colptr[self.n]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Numeric factorization of a matrix whose values are laid out on the
    /// analyzed pattern.
    pub fn factor(self: &Arc<Self>, values: &[f64]) -> Result<CholeskyFactor> {
        let mut f = CholeskyFactor {
            symbolic: Arc::clone(self),
            l_rowidx: vec![0; self.factor_nnz()],
            l_values: vec![0.0; self.factor_nnz()],
        };
        f.refactor(values)?;
        Ok(f)
    }
}

impl CholeskyFactor {
    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    /// Recomputes the factor in place for new values on the same pattern.
    pub fn refactor(&mut self, values: &[f64]) -> Result<()> {
        let s = &*self.symbolic;
        if values.len() != s.source_nnz {
            return Err(Error::dim(format!(
                "refactor expects {} values, got {}",
                s.source_nnz,
                values.len()
            )));
        }
        let n = s.n;
        let lp = &s.l_colptr;
        let li = &mut self.l_rowidx;
        let lx = &mut self.l_values;
        let mut next: Vec<usize> = lp[..n].to_vec();
        let mut x = vec![0.0; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![NONE; n];

        for k in 0..n {
            let top = ereach(k, &s.up_colptr, &s.up_rowidx, &s.parent, &mut stack, &mut mark);
            for p in s.up_colptr[k]..s.up_colptr[k + 1] {
                x[s.up_rowidx[p]] = values[s.up_src[p]];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..n] {
                let lki = x[i] / lx[lp[i]];
                x[i] = 0.0;
                for p in lp[i] + 1..next[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                li[p] = k;
                lx[p] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::cond(format!(
                    "sparse Cholesky: non-positive pivot {d:e} at permuted column {k}"
                )));
            }
            let p = next[k];
            next[k] += 1;
            li[p] = k;
            lx[p] = d.sqrt();
        }
        Ok(())
    }

    /// `log det A`
    pub fn logdet(&self) -> f64 {
        let lp = &self.symbolic.l_colptr;
        2.0 * (0..self.dim()).map(|k| self.l_values[lp[k]].ln()).sum::<f64>()
    }

    fn lsolve(&self, x: &mut [f64]) {
        let lp = &self.symbolic.l_colptr;
        for j in 0..self.dim() {
            x[j] /= self.l_values[lp[j]];
            let xj = x[j];
            for p in lp[j] + 1..lp[j + 1] {
                x[self.l_rowidx[p]] -= self.l_values[p] * xj;
            }
        }
    }

    fn ltsolve(&self, x: &mut [f64]) {
        let lp = &self.symbolic.l_colptr;
        for j in (0..self.dim()).rev() {
            let mut acc = x[j];
            for p in lp[j] + 1..lp[j + 1] {
                acc -= self.l_values[p] * x[self.l_rowidx[p]];
            }
            x[j] = acc / self.l_values[lp[j]];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let perm = &self.symbolic.perm;
        let mut y: Vec<f64> = perm.iter().map(|&old| b[old]).collect();
        self.lsolve(&mut y);
        self.ltsolve(&mut y);
        let mut out = vec![0.0; b.len()];
        for (new, &old) in perm.iter().enumerate() {
            out[old] = y[new];
        }
        out
    }

    /// Draw from `N(A^{-1} b, A^{-1})` given standard normals `z`:
    /// `L^{-T} (L^{-1} b + z)` in the permuted ordering.
    pub fn sample_with(&self, b: &[f64], z: &[f64]) -> Vec<f64> {
        let perm = &self.symbolic.perm;
        let mut y: Vec<f64> = perm.iter().map(|&old| b[old]).collect();
        self.lsolve(&mut y);
        for (v, e) in y.iter_mut().zip(z) {
            *v += e;
        }
        self.ltsolve(&mut y);
        let mut out = vec![0.0; b.len()];
        for (new, &old) in perm.iter().enumerate() {
            out[old] = y[new];
        }
        out
    }

    /// Inverse of [`whiten_inverse`](Self::whiten_inverse): `L' P x`.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let lp = &self.symbolic.l_colptr;
        let y: Vec<f64> = self.symbolic.perm.iter().map(|&old| x[old]).collect();
        (0..self.dim())
            .map(|j| (lp[j]..lp[j + 1]).map(|p| self.l_values[p] * y[self.l_rowidx[p]]).sum())
            .collect()
    }

    /// Maps standard normals `z` to a draw from `N(0, A^{-1})`.
    pub fn whiten_inverse(&self, z: &[f64]) -> Vec<f64> {
        let mut y = z.to_vec();
        self.ltsolve(&mut y);
        let mut out = vec![0.0; z.len()];
        for (new, &old) in self.symbolic.perm.iter().enumerate() {
            out[old] = y[new];
        }
        out
    }
}

/// Elimination tree of a matrix given by its upper triangle.
fn etree(n: usize, colptr: &[usize], rowidx: &[usize]) -> Vec<usize> {
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for &r in &rowidx[colptr[k]..colptr[k + 1]] {
            let mut i = r;
            while i != NONE && i < k {
                let inext = ancestor[i];
                ancestor[i] = k;
                if inext == NONE {
                    parent[i] = k;
                }
                i = inext;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L`, written topologically into `stack[top..n]`.
fn ereach(
    k: usize,
    colptr: &[usize],
    rowidx: &[usize],
    parent: &[usize],
    stack: &mut [usize],
    mark: &mut [usize],
) -> usize {
    let n = stack.len();
    let mut top = n;
    mark[k] = k;
    for &r in &rowidx[colptr[k]..colptr[k + 1]] {
        if r > k {
            continue;
        }
        let mut i = r;
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            i = parent[i];
            if i == NONE {
                break;
            }
        }
        while len > 0 {
            top -= 1;
            len -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

fn approximate_minimum_degree(a: &CscMatrix) -> Result<Vec<usize>> {
    let (perm, _, _) = amd::order(a.nrows(), a.colptr(), a.rowidx(), &amd::Control::default())
        .map_err(|status| Error::cond(format!("minimum-degree ordering failed: {status:?}")))?;
    Ok(perm)
}

fn reverse_cuthill_mckee(a: &CscMatrix) -> Vec<usize> {
    let n = a.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|j| a.column(j).map(|(i, _)| i).filter(|&i| i != j).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn grid_laplacian(k: usize, shift: f64) -> CscMatrix {
        let n = k * k;
        let mut trips = Vec::new();
        for r in 0..k {
            for c in 0..k {
                let v = r * k + c;
                trips.push((v, v, 4.0 + shift));
                if c + 1 < k {
                    trips.push((v, v + 1, -1.0));
                    trips.push((v + 1, v, -1.0));
                }
                if r + 1 < k {
                    trips.push((v, v + k, -1.0));
                    trips.push((v + k, v, -1.0));
                }
            }
        }
        CscMatrix::from_triplets(n, n, &trips)
    }

    #[test]
    fn solve_and_logdet_match_dense() {
        let a = grid_laplacian(5, 0.3);
        let dense = a.to_dense();
        let sym = SymbolicCholesky::analyze(&a, Ordering::ReverseCuthillMcKee).unwrap();
        let f = sym.factor(a.values()).unwrap();
        let b: Vec<f64> = (0..25).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = f.solve(&b);
        let xd = dense.clone().cholesky().unwrap().solve(&DVector::from_vec(b.clone()));
        for i in 0..25 {
            assert!((x[i] - xd[i]).abs() < 1e-12);
        }
        let ld = dense.cholesky().unwrap().l().diagonal().map(|v| v.ln()).sum() * 2.0;
        assert!((f.logdet() - ld).abs() < 1e-10);
    }

    #[test]
    fn ordering_does_not_change_results() {
        let a = grid_laplacian(6, 0.1);
        let b: Vec<f64> = (0..36).map(|i| i as f64 - 10.0).collect();
        let nat = SymbolicCholesky::analyze(&a, Ordering::Natural).unwrap().factor(a.values()).unwrap();
        let (x0, ld0) = (nat.solve(&b), nat.logdet());
        for ordering in [Ordering::ReverseCuthillMcKee, Ordering::ApproximateMinimumDegree] {
            let f = SymbolicCholesky::analyze(&a, ordering).unwrap().factor(a.values()).unwrap();
            let x = f.solve(&b);
            for i in 0..36 {
                assert!((x0[i] - x[i]).abs() < 1e-10);
            }
            assert!((ld0 - f.logdet()).abs() < 1e-10);
        }
    }

    #[test]
    fn minimum_degree_reduces_fill_on_a_grid() {
        let a = grid_laplacian(20, 0.1);
        let rcm = SymbolicCholesky::analyze(&a, Ordering::ReverseCuthillMcKee).unwrap();
        let amd = SymbolicCholesky::analyze(&a, Ordering::ApproximateMinimumDegree).unwrap();
        assert!(amd.factor_nnz() < rcm.factor_nnz());
        let mut seen = amd.permutation().to_vec();
        seen.sort_unstable();
        assert_eq!(seen, (0..400).collect::<Vec<_>>());
    }

    #[test]
    fn whitening_has_inverse_covariance() {
        // Columns of the whitening map W satisfy W W' = A^{-1}.
        let a = grid_laplacian(3, 1.0);
        let f = SymbolicCholesky::analyze(&a, Ordering::ReverseCuthillMcKee)
            .unwrap()
            .factor(a.values())
            .unwrap();
        let n = 9;
        let mut w = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            w.set_column(j, &DVector::from_vec(f.whiten_inverse(&e)));
        }
        let inv = a.to_dense().try_inverse().unwrap();
        assert!((&w * w.transpose() - inv).abs().max() < 1e-12);
    }

    #[test]
    fn refactor_reuses_pattern_and_rejects_indefinite() {
        let a = grid_laplacian(4, 0.5);
        let sym = SymbolicCholesky::analyze(&a, Ordering::default()).unwrap();
        let mut f = sym.factor(a.values()).unwrap();
        let doubled: Vec<f64> = a.values().iter().map(|v| 2.0 * v).collect();
        f.refactor(&doubled).unwrap();
        let direct = sym.factor(&doubled).unwrap();
        assert!((f.logdet() - direct.logdet()).abs() < 1e-12);
        let neg: Vec<f64> = a.values().iter().map(|v| -v).collect();
        assert!(matches!(f.refactor(&neg), Err(Error::Conditioning(_))));
    }
}
