//! Coordinate-list sparse matrices for graph propagation operators.

/// Square sparse matrix stored as (row, col, value) triplets sorted by row then column.
#[derive(Debug, Clone, PartialEq)]
pub struct CooMatrix {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CooMatrix {
    /// Builds a matrix from triplets. Duplicate coordinates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut rows = Vec::with_capacity(triplets.len());
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if rows.last() == Some(&r) && cols.last() == Some(&c) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
        CooMatrix { n, rows, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.vals)
            .map(|((&r, &c), &v)| (r, c, v))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.iter()
            .find(|&(r, c, _)| r == row && c == col)
            .map_or(0.0, |(_, _, v)| v)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for (r, c, v) in self.iter() {
            out[r][c] += v;
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for (r, _, v) in self.iter() {
            sums[r] += v;
        }
        sums
    }

    /// `out = self · dense`, where `dense` is `n × cols` row-major.
    pub fn matmul_dense(&self, dense: &[f64], cols: usize, out: &mut [f64]) {
        debug_assert_eq!(dense.len(), self.n * cols);
        debug_assert_eq!(out.len(), self.n * cols);
        for (r, c, v) in self.iter() {
            let src = &dense[c * cols..(c + 1) * cols];
            let dst = &mut out[r * cols..(r + 1) * cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += v * s;
            }
        }
    }

    /// `out += selfᵀ · dense`.
    pub fn transpose_matmul_dense(&self, dense: &[f64], cols: usize, out: &mut [f64]) {
        for (r, c, v) in self.iter() {
            let src = &dense[r * cols..(r + 1) * cols];
            let dst = &mut out[c * cols..(c + 1) * cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += v * s;
            }
        }
    }

    /// Relabels nodes so that new index `i` holds old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        Self::from_triplets(
            self.n,
            self.iter()
                .map(|(r, c, v)| (inverse[r], inverse[c], v))
                .collect(),
        )
    }
}
