//! Compressed sparse row matrices with u32 column indices.
//!
//! Column indices are 32-bit on purpose: the largest systems assembled here
//! have a few million unknowns but hundreds of millions of stored entries,
//! and the index array is a large share of the memory footprint.

/// CSR matrix. Column indices within each row are strictly increasing.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Matrix with a given sorted pattern and zero values.
    pub fn from_pattern(nrows: usize, ncols: usize, row_ptr: Vec<usize>, cols: Vec<u32>) -> Self {
        debug_assert_eq!(row_ptr.len(), nrows + 1);
        debug_assert_eq!(*row_ptr.last().unwrap(), cols.len());
        debug_assert!((0..nrows).all(|r| {
            cols[row_ptr[r]..row_ptr[r + 1]].windows(2).all(|w| w[0] < w[1])
        }));
        let nnz = cols.len();
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            cols,
            vals: vec![0.0; nnz],
        }
    }

    /// Build a pattern from per-row column lists (sorted and deduplicated here).
    pub fn from_row_lists(ncols: usize, mut rows: Vec<Vec<u32>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        row_ptr.push(0usize);
        let mut cols = Vec::new();
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            cols.extend_from_slice(r);
            row_ptr.push(cols.len());
        }
        CsrMatrix::from_pattern(nrows, ncols, row_ptr, cols)
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    pub fn row_vals_mut(&mut self, r: usize) -> &mut [f64] {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        &mut self.vals[span]
    }

    /// Index into `vals`/`cols` of entry (r, c), if present.
    pub fn find(&self, r: usize, c: u32) -> Option<usize> {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .binary_search(&c)
            .ok()
            .map(|k| span.start + k)
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[r] = acc;
        }
    }

    /// y += A x.
    pub fn matvec_add(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[r] += acc;
        }
    }

    /// y += A^T x, using the natural CSR column scatter.
    pub fn transpose_matvec_add(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for r in 0..self.nrows {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.cols[k] as usize] += self.vals[k] * xr;
            }
        }
    }

    /// Explicit transpose (pattern and values).
    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.cols {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut cols = vec![0u32; self.nnz()];
        let mut vals = vec![0.0f64; self.nnz()];
        let mut cursor = counts;
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[k] as usize;
                let dst = cursor[c];
                cols[dst] = r as u32;
                vals[dst] = self.vals[k];
                cursor[c] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr,
            cols,
            vals,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        // [ 2 0 1 ]
        // [ 0 3 0 ]
        // [ 4 0 5 ]
        let mut a = CsrMatrix::from_row_lists(3, vec![vec![0, 2], vec![1], vec![0, 2]]);
        a.vals.copy_from_slice(&[2.0, 1.0, 3.0, 4.0, 5.0]);
        a
    }

    #[test]
    fn matvec_matches_dense() {
        let a = sample();
        let mut y = vec![0.0; 3];
        a.matvec(&[1.0, 2.0, 3.0], &mut y);
        assert_eq!(y, vec![5.0, 6.0, 19.0]);
        a.matvec_add(&[1.0, 2.0, 3.0], &mut y);
        assert_eq!(y, vec![10.0, 12.0, 38.0]);
    }

    #[test]
    fn transpose_round_trip() {
        let a = sample();
        let att = a.transpose().transpose();
        assert_eq!(att.row_ptr, a.row_ptr);
        assert_eq!(att.cols, a.cols);
        assert_eq!(att.vals, a.vals);
        let mut y1 = vec![0.0; 3];
        let mut y2 = vec![0.0; 3];
        a.transpose().matvec(&[1.0, -1.0, 2.0], &mut y1);
        a.transpose_matvec_add(&[1.0, -1.0, 2.0], &mut y2);
        assert_eq!(y1, y2);
    }

    #[test]
    fn row_lists_sort_and_dedup() {
        let a = CsrMatrix::from_row_lists(4, vec![vec![3, 0, 3, 1], vec![2, 2]]);
        assert_eq!(a.row(0).0, &[0, 1, 3]);
        assert_eq!(a.row(1).0, &[2]);
        assert_eq!(a.find(0, 3), Some(2));
        assert_eq!(a.find(1, 0), None);
    }
}
