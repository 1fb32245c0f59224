//! Dense LU with partial pivoting on row-major storage.
//!
//! The factor/solve kernels are exposed as free functions over flat slices so
//! patch solvers can keep thousands of factorizations in one contiguous
//! buffer (or stream them through a file) without per-patch allocations.

use crate::{Error, Result};

/// LU-factorize the row-major n-by-n matrix `a` in place.
/// `piv[j]` records the row swapped into position j at step j.
pub fn dense_factorize_in_place(a: &mut [f64], piv: &mut [u32], n: usize) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(piv.len(), n);
    for j in 0..n {
        let mut p = j;
        let mut best = a[j * n + j].abs();
        for i in j + 1..n {
            let v = a[i * n + j].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            return Err(Error::SingularMatrix { row: j });
        }
        piv[j] = p as u32;
        if p != j {
            for c in 0..n {
                a.swap(j * n + c, p * n + c);
            }
        }
        let inv = 1.0 / a[j * n + j];
        for i in j + 1..n {
            let l = a[i * n + j] * inv;
            a[i * n + j] = l;
            if l != 0.0 {
                let (pivot_row, rest) = a.split_at_mut((j + 1) * n);
                let pivot_row = &pivot_row[j * n + j + 1..j * n + n];
                let row = &mut rest[(i - j - 1) * n + j + 1..(i - j - 1) * n + n];
                for (ri, pi) in row.iter_mut().zip(pivot_row) {
                    *ri -= l * pi;
                }
            }
        }
    }
    Ok(())
}

/// Solve with a factorization from [`dense_factorize_in_place`], overwriting `rhs`.
///
/// The factorization swaps whole rows (stored L included), so the solve
/// applies every recorded swap first and then runs clean triangular solves.
pub fn dense_solve_in_place(lu: &[f64], piv: &[u32], n: usize, rhs: &mut [f64]) {
    debug_assert_eq!(rhs.len(), n);
    for j in 0..n {
        let p = piv[j] as usize;
        if p != j {
            rhs.swap(j, p);
        }
    }
    for j in 0..n {
        let rj = rhs[j];
        if rj != 0.0 {
            for i in j + 1..n {
                rhs[i] -= lu[i * n + j] * rj;
            }
        }
    }
    for j in (0..n).rev() {
        let mut acc = rhs[j];
        for c in j + 1..n {
            acc -= lu[j * n + c] * rhs[c];
        }
        rhs[j] = acc / lu[j * n + j];
    }
}

/// Owned dense factorization.
#[derive(Debug, Clone)]
pub struct DenseBlockFactorization {
    pub n: usize,
    lu: Vec<f64>,
    piv: Vec<u32>,
}

/// Factor a row-major dense matrix.
pub fn dense_factorize(a: Vec<f64>, n: usize) -> Result<DenseBlockFactorization> {
    let mut lu = a;
    let mut piv = vec![0u32; n];
    dense_factorize_in_place(&mut lu, &mut piv, n)?;
    Ok(DenseBlockFactorization { n, lu, piv })
}

/// Solve `A x = rhs` given a factorization of A.
pub fn dense_solve(f: &DenseBlockFactorization, rhs: &[f64]) -> Vec<f64> {
    let mut x = rhs.to_vec();
    dense_solve_in_place(&f.lu, &f.piv, f.n, &mut x);
    x
}

impl DenseBlockFactorization {
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        dense_solve_in_place(&self.lu, &self.piv, self.n, rhs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn matmul(a: &[f64], x: &[f64], n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum())
            .collect()
    }

    #[test]
    fn random_systems_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 5, 17, 60] {
            let a: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = matmul(&a, &x, n);
            let f = dense_factorize(a, n).unwrap();
            let got = dense_solve(&f, &b);
            for (g, e) in got.iter().zip(&x) {
                assert!((g - e).abs() < 1e-9, "n={n}: {g} vs {e}");
            }
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // [0 1; 1 0] needs a row swap at step 0
        let f = dense_factorize(vec![0.0, 1.0, 1.0, 0.0], 2).unwrap();
        let x = dense_solve(&f, &[3.0, 4.0]);
        assert_eq!(x, vec![4.0, 3.0]);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let err = dense_factorize(vec![1.0, 2.0, 2.0, 4.0], 2).unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { row: 1 }));
    }
}
