//! Compressed-row symmetric sparse matrices and deterministic parallel
//! kernels. All reductions run over fixed-size chunks combined in order, so
//! results are bit-identical for any thread count (and with the `parallel`
//! feature disabled).

const CHUNK: usize = 4096;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sum of `f(i)` for i in 0..n, chunk-ordered.
pub fn det_sum_indexed(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let n_chunks = n.div_ceil(CHUNK).max(1);
    let chunk_sum = |c: usize| -> f64 {
        let lo = c * CHUNK;
        let hi = ((c + 1) * CHUNK).min(n);
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        acc
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = (0..n_chunks).into_par_iter().map(chunk_sum).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = (0..n_chunks).map(chunk_sum).collect();
    partials.iter().sum()
}

pub fn det_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    det_sum_indexed(a.len(), |i| a[i] * b[i])
}

/// Map i -> T in parallel, preserving index order.
pub fn par_map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Symmetric sparse matrix in compressed-row layout.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build the structure from sorted, deduplicated column lists per row.
    pub fn from_rows(cols_per_row: Vec<Vec<u32>>) -> Self {
        let n = cols_per_row.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0usize);
        let mut col_idx = Vec::new();
        for cols in &cols_per_row {
            debug_assert!(cols.windows(2).all(|w| w[0] < w[1]));
            col_idx.extend_from_slice(cols);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Add `v` to entry (row, col); the position must exist in the pattern.
    pub fn add(&mut self, row: usize, col: u32, v: f64) {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        let k = self.col_idx[lo..hi]
            .binary_search(&col)
            .unwrap_or_else(|_| panic!("entry ({row}, {col}) not in sparsity pattern"));
        self.values[lo + k] += v;
    }

    pub fn get(&self, row: usize, col: u32) -> f64 {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        match self.col_idx[lo..hi].binary_search(&col) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i as u32)).collect()
    }

    /// y = M x; rows are independent, hence deterministic under parallelism.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        let row = |i: usize| -> f64 {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.values[k] * x[self.col_idx[k] as usize];
            }
            acc
        };
        #[cfg(feature = "parallel")]
        y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        #[cfg(not(feature = "parallel"))]
        y.iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
    }

    /// Maximum |M - M^T| over the pattern (0 for exactly symmetric matrices).
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k] as usize;
                worst = worst.max((self.values[k] - self.get(j, i as u32)).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CsrMatrix {
        // [2 1 0; 1 3 1; 0 1 4]
        let mut m = CsrMatrix::from_rows(vec![vec![0, 1], vec![0, 1, 2], vec![1, 2]]);
        m.add(0, 0, 2.0);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, 3.0);
        m.add(1, 2, 1.0);
        m.add(2, 1, 1.0);
        m.add(2, 2, 4.0);
        m
    }

    #[test]
    fn matvec_and_symmetry() {
        let m = small();
        let mut y = vec![0.0; 3];
        m.matvec(&[1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, vec![3.0, 5.0, 5.0]);
        assert_eq!(m.max_asymmetry(), 0.0);
    }

    #[test]
    fn det_sum_matches_sequential() {
        let xs: Vec<f64> = (0..100_000).map(|i| (i as f64).sin()).collect();
        let par = det_dot(&xs, &xs);
        let mut seq_chunks = 0.0;
        for c in xs.chunks(4096) {
            let mut acc = 0.0;
            for v in c {
                acc += v * v;
            }
            seq_chunks += acc;
        }
        assert_eq!(par, seq_chunks);
    }
}
