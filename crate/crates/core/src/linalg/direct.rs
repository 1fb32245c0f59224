//! Direct solver for operators that are block lower bidiagonal in time:
//! factor each diagonal time block (dense or RCM-banded LU) and march
//! forward, subtracting the sub-diagonal coupling from the right-hand side.

use super::banded::{permuted_bandwidth, rcm_order, BandedLu};
use super::csr::CsrMatrix;
use super::dense::{dense_factorize_in_place, dense_solve_in_place};
use crate::Result;

/// Time-block layout of a space-time operator.
#[derive(Debug, Clone)]
pub struct TimeBlockStructure {
    pub n_blocks: usize,
    pub block_size: usize,
    /// All diagonal blocks are identical, so one factorization serves all.
    pub time_invariant: bool,
    /// Block-local rows replaced by identity rows during factorization
    /// (used to pin one pressure value per temporal degree of freedom; the
    /// corresponding right-hand side entries are forced to zero).
    pub pin_rows: Vec<u32>,
}

/// Blocks at most this large are factored densely; larger ones go banded.
const DENSE_CUTOFF: usize = 900;

enum BlockFactor {
    Dense { lu: Vec<f64>, piv: Vec<u32> },
    Banded(BandedLu),
}

/// Factored diagonal blocks plus the orderings used to build them.
pub struct BlockTriangularFactor {
    st: TimeBlockStructure,
    /// perm[new] = old, block-local; identity for dense blocks.
    perm: Vec<u32>,
    inv_perm: Vec<u32>,
    /// Half bandwidth after reordering; zero for dense factorizations.
    pub bandwidth: usize,
    factors: Vec<BlockFactor>,
}

fn diag_block_pattern(a: &CsrMatrix, st: &TimeBlockStructure, blk: usize) -> CsrMatrix {
    let b = st.block_size;
    let base = blk * b;
    let mut rows = Vec::with_capacity(b);
    for i in 0..b {
        let (cols, _) = a.row(base + i);
        rows.push(
            cols.iter()
                .filter(|&&c| (c as usize) >= base && (c as usize) < base + b)
                .map(|&c| c - base as u32)
                .collect(),
        );
    }
    CsrMatrix::from_row_lists(b, rows)
}

impl BlockTriangularFactor {
    fn fill_and_factor(
        a: &CsrMatrix,
        st: &TimeBlockStructure,
        blk: usize,
        perm: &[u32],
        inv_perm: &[u32],
        bandwidth: usize,
    ) -> Result<BlockFactor> {
        let b = st.block_size;
        let base = blk * b;
        let pinned = {
            let mut p = vec![false; b];
            for &r in &st.pin_rows {
                p[r as usize] = true;
            }
            p
        };
        if b <= DENSE_CUTOFF {
            let mut dense = vec![0.0; b * b];
            for i in 0..b {
                if pinned[i] {
                    dense[i * b + i] = 1.0;
                    continue;
                }
                let (cols, vals) = a.row(base + i);
                for (&c, &v) in cols.iter().zip(vals) {
                    let c = c as usize;
                    if c >= base && c < base + b {
                        dense[i * b + (c - base)] = v;
                    }
                }
            }
            let mut piv = vec![0u32; b];
            dense_factorize_in_place(&mut dense, &mut piv, b)?;
            Ok(BlockFactor::Dense { lu: dense, piv })
        } else {
            let mut band = BandedLu::zeros(b, bandwidth, bandwidth);
            for i in 0..b {
                let pi = inv_perm[i] as usize;
                if pinned[i] {
                    band.set(pi, pi, 1.0);
                    continue;
                }
                let (cols, vals) = a.row(base + i);
                for (&c, &v) in cols.iter().zip(vals) {
                    let c = c as usize;
                    if c >= base && c < base + b {
                        band.set(pi, inv_perm[c - base] as usize, v);
                    }
                }
            }
            band.factorize()?;
            let _ = perm;
            Ok(BlockFactor::Banded(band))
        }
    }

    /// Solve A x = rhs by forward block substitution.
    pub fn solve(&self, a: &CsrMatrix, rhs: &[f64]) -> Vec<f64> {
        let b = self.st.block_size;
        let n = self.st.n_blocks * b;
        debug_assert_eq!(rhs.len(), n);
        let mut x = vec![0.0; n];
        let mut local = vec![0.0; b];
        let mut permuted = vec![0.0; b];
        for blk in 0..self.st.n_blocks {
            let base = blk * b;
            for i in 0..b {
                let mut acc = rhs[base + i];
                let (cols, vals) = a.row(base + i);
                for (&c, &v) in cols.iter().zip(vals) {
                    if (c as usize) < base {
                        acc -= v * x[c as usize];
                    }
                }
                local[i] = acc;
            }
            for &r in &self.st.pin_rows {
                local[r as usize] = 0.0;
            }
            let f = if self.st.time_invariant {
                &self.factors[0]
            } else {
                &self.factors[blk]
            };
            match f {
                BlockFactor::Dense { lu, piv } => {
                    dense_solve_in_place(lu, piv, b, &mut local);
                    x[base..base + b].copy_from_slice(&local);
                }
                BlockFactor::Banded(band) => {
                    for new in 0..b {
                        permuted[new] = local[self.perm[new] as usize];
                    }
                    band.solve_in_place(&mut permuted);
                    for new in 0..b {
                        x[base + self.perm[new] as usize] = permuted[new];
                    }
                }
            }
        }
        x
    }

    /// Estimated bytes one diagonal-block factorization occupies, for memory
    /// gating before committing to a factorize call.
    pub fn estimate_factor_bytes(a: &CsrMatrix, st: &TimeBlockStructure) -> usize {
        let b = st.block_size;
        let per_block = if b <= DENSE_CUTOFF {
            b * b * 8
        } else {
            let pattern = diag_block_pattern(a, st, 0);
            let perm = rcm_order(&pattern);
            let bw = permuted_bandwidth(&pattern, &perm);
            BandedLu::storage_bytes(b, bw, bw)
        };
        if st.time_invariant {
            per_block
        } else {
            per_block * st.n_blocks
        }
    }
}

/// Factor the diagonal time blocks of a block lower bidiagonal operator.
pub fn block_triangular_factorize(
    a: &CsrMatrix,
    st: &TimeBlockStructure,
) -> Result<BlockTriangularFactor> {
    let b = st.block_size;
    assert_eq!(a.nrows, st.n_blocks * b);
    let (perm, inv_perm, bandwidth) = if b <= DENSE_CUTOFF {
        (Vec::new(), Vec::new(), 0)
    } else {
        let pattern = diag_block_pattern(a, st, 0);
        let perm = rcm_order(&pattern);
        let mut inv = vec![0u32; b];
        for (new, &old) in perm.iter().enumerate() {
            inv[old as usize] = new as u32;
        }
        let bw = permuted_bandwidth(&pattern, &perm);
        (perm, inv, bw)
    };
    let n_factors = if st.time_invariant { 1 } else { st.n_blocks };
    let mut factors = Vec::with_capacity(n_factors);
    for blk in 0..n_factors {
        factors.push(BlockTriangularFactor::fill_and_factor(
            a, st, blk, &perm, &inv_perm, bandwidth,
        )?);
    }
    Ok(BlockTriangularFactor {
        st: st.clone(),
        perm,
        inv_perm,
        bandwidth,
        factors,
    })
}

impl BlockTriangularFactor {
    /// Refactor after a value update, reusing structure and ordering. The
    /// matrix must keep the block layout and sparsity of the original.
    pub fn refactor(&mut self, a: &CsrMatrix) -> Result<()> {
        let n_factors = if self.st.time_invariant {
            1
        } else {
            self.st.n_blocks
        };
        self.factors.clear();
        for blk in 0..n_factors {
            self.factors.push(Self::fill_and_factor(
                a,
                &self.st,
                blk,
                &self.perm,
                &self.inv_perm,
                self.bandwidth,
            )?);
        }
        Ok(())
    }
}

/// Convenience: factorize and solve in one call.
pub fn block_triangular_direct_solve(
    a: &CsrMatrix,
    st: &TimeBlockStructure,
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let f = block_triangular_factorize(a, st)?;
    Ok(f.solve(a, rhs))
}
