use nalgebra::DMatrix;

/// Compressed sparse column matrix with sorted row indices and no duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    colptr: Vec<usize>,
    rowidx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; ncols + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[c + 1] += 1;
        }
        for c in 0..ncols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let p = next[c];
            rows[p] = r;
            vals[p] = v;
            next[c] += 1;
        }

        let mut colptr = Vec::with_capacity(ncols + 1);
        let mut rowidx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        colptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for c in 0..ncols {
            order.clear();
            order.extend(counts[c]..counts[c + 1]);
            order.sort_by_key(|&p| rows[p]);
            for &p in &order {
                if rowidx.len() > *colptr.last().unwrap() && *rowidx.last().unwrap() == rows[p] {
                    *values.last_mut().unwrap() += vals[p];
                } else {
                    rowidx.push(rows[p]);
                    values.push(vals[p]);
                }
            }
            colptr.push(rowidx.len());
        }
        Self { nrows, ncols, colptr, rowidx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            colptr: (0..=n).collect(),
            rowidx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Keeps every entry of `m` with magnitude above `tol`.
    pub fn from_dense(m: &DMatrix<f64>, tol: f64) -> Self {
        let mut trips = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)].abs() > tol {
                    trips.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &trips)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn colptr(&self) -> &[usize] {
        &self.colptr
    }

    pub fn rowidx(&self) -> &[usize] {
        &self.rowidx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Iterates `(row, value)` over column `j`.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.colptr[j]..self.colptr[j + 1];
        self.rowidx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.colptr[j]..self.colptr[j + 1];
        match self.rowidx[r.clone()].binary_search(&i) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for p in self.colptr[j]..self.colptr[j + 1] {
                y[self.rowidx[p]] += self.values[p] * xj;
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y = A' x`
    pub fn tr_mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for (j, yj) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.colptr[j]..self.colptr[j + 1] {
                acc += self.values[p] * x[self.rowidx[p]];
            }
            *yj = acc;
        }
    }

    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.tr_mul_vec_into(x, &mut y);
        y
    }

    /// `x' A x` for square `A`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let mut col = 0.0;
            for p in self.colptr[j]..self.colptr[j + 1] {
                col += self.values[p] * x[self.rowidx[p]];
            }
            acc += col * xj;
        }
        acc
    }

    pub fn transpose(&self) -> Self {
        let mut trips = Vec::with_capacity(self.nnz());
        for j in 0..self.ncols {
            for (i, v) in self.column(j) {
                trips.push((j, i, v));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &trips)
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &CscMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows, "matmul dimension mismatch");
        let mut trips = Vec::new();
        let mut acc = vec![0.0; self.nrows];
        let mut touched = vec![false; self.nrows];
        let mut rows = Vec::new();
        for j in 0..other.ncols {
            rows.clear();
            for (k, bkj) in other.column(j) {
                for (i, aik) in self.column(k) {
                    if !touched[i] {
                        touched[i] = true;
                        rows.push(i);
                    }
                    acc[i] += aik * bkj;
                }
            }
            for &i in &rows {
                trips.push((i, j, acc[i]));
                acc[i] = 0.0;
                touched[i] = false;
            }
        }
        Self::from_triplets(self.nrows, other.ncols, &trips)
    }

    /// Scales column `j` by `s[j]`, i.e. returns `A diag(s)`.
    pub fn scale_columns(&self, s: &[f64]) -> Self {
        let mut out = self.clone();
        for j in 0..self.ncols {
            for p in self.colptr[j]..self.colptr[j + 1] {
                out.values[p] *= s[j];
            }
        }
        out
    }

    /// Structural union of several same-shaped matrices, with zero values.
    pub fn pattern_union(mats: &[&CscMatrix]) -> Self {
        let (nrows, ncols) = (mats[0].nrows, mats[0].ncols);
        let mut trips = Vec::new();
        for m in mats {
            assert_eq!((m.nrows, m.ncols), (nrows, ncols), "pattern_union shape mismatch");
            for j in 0..ncols {
                for (i, _) in m.column(j) {
                    trips.push((i, j, 0.0));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &trips)
    }

    /// Values of `self` laid out on the (super)pattern of `target`.
    ///
    /// Panics if `self` has an entry outside the target pattern.
    pub fn values_on_pattern(&self, target: &CscMatrix) -> Vec<f64> {
        let mut out = vec![0.0; target.nnz()];
        for j in 0..self.ncols {
            let r = target.colptr[j]..target.colptr[j + 1];
            let trows = &target.rowidx[r.clone()];
            for (i, v) in self.column(j) {
                let k = trows.binary_search(&i).expect("entry outside target pattern");
                out[r.start + k] = v;
            }
        }
        out
    }

    /// Same pattern, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.nnz());
        Self { values, ..self.clone() }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for j in 0..self.ncols {
            for (i, v) in self.column(j) {
                m[(i, j)] += v;
            }
        }
        m
    }
}
