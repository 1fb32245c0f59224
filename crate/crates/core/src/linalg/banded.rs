//! Banded LU with partial pivoting (LAPACK `dgbtrf`-style storage) and
//! reverse Cuthill-McKee ordering to obtain small bandwidths from sparse
//! patterns.

use super::csr::CsrMatrix;
use crate::{Error, Result};

/// Band matrix A(i,j), |i-j| within (kl, ku), stored column-major with kl
/// extra superdiagonal rows of fill space so partial pivoting stays inside
/// the layout. Entry (i, j) lives at `ab[j * ldab + (kl + ku + i - j)]` with
/// `ldab = 2 kl + ku + 1`; a column's entries are contiguous.
#[derive(Debug, Clone)]
pub struct BandedLu {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    piv: Vec<u32>,
    factored: bool,
}

impl BandedLu {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandedLu {
            n,
            kl,
            ku,
            ldab,
            ab: vec![0.0; ldab * n],
            piv: vec![0; n],
            factored: false,
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ldab + self.kl + self.ku + i - j
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(!self.factored);
        debug_assert!(i <= j + self.kl && j <= i + self.ku, "entry outside band");
        let k = self.idx(i, j);
        self.ab[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(!self.factored);
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    /// Reset values to zero, keeping the band structure (for refactorization).
    pub fn clear(&mut self) {
        self.ab.fill(0.0);
        self.factored = false;
    }

    /// Bytes the band storage for these dimensions would occupy.
    pub fn storage_bytes(n: usize, kl: usize, ku: usize) -> usize {
        (2 * kl + ku + 1) * n * 8
    }

    pub fn factorize(&mut self) -> Result<()> {
        assert!(!self.factored);
        let n = self.n;
        let (kl, ku, ldab) = (self.kl, self.ku, self.ldab);
        let width = kl + ku; // superdiagonal reach after fill
        for j in 0..n {
            let ilast = (j + kl).min(n - 1);
            let col = self.idx(j, j);
            let mut p = j;
            let mut best = self.ab[col].abs();
            for i in j + 1..=ilast {
                let v = self.ab[col + (i - j)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::SingularMatrix { row: j });
            }
            self.piv[j] = p as u32;
            let mlast = (j + width).min(n - 1);
            if p != j {
                // row swap walks across columns with stride ldab - 1
                let mut a = self.idx(j, j);
                let mut b = self.idx(p, j);
                for _ in j..=mlast {
                    self.ab.swap(a, b);
                    a += ldab - 1;
                    b += ldab - 1;
                }
            }
            let inv = 1.0 / self.ab[col];
            for i in j + 1..=ilast {
                self.ab[col + (i - j)] *= inv;
            }
            let nsub = ilast - j;
            if nsub == 0 {
                continue;
            }
            // right-looking update, one contiguous column segment at a time
            for m in j + 1..=mlast {
                let amj = self.ab[self.idx(j, m)];
                if amj == 0.0 {
                    continue;
                }
                let dst = self.idx(j + 1, m);
                let src = col + 1;
                for t in 0..nsub {
                    self.ab[dst + t] -= amj * self.ab[src + t];
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        assert!(self.factored);
        let n = self.n;
        let width = self.kl + self.ku;
        for j in 0..n {
            let p = self.piv[j] as usize;
            if p != j {
                rhs.swap(j, p);
            }
            let rj = rhs[j];
            if rj != 0.0 {
                let ilast = (j + self.kl).min(n - 1);
                let col = self.idx(j, j);
                for i in j + 1..=ilast {
                    rhs[i] -= self.ab[col + (i - j)] * rj;
                }
            }
        }
        for j in (0..n).rev() {
            let mlast = (j + width).min(n - 1);
            let mut acc = rhs[j];
            for m in j + 1..=mlast {
                acc -= self.ab[self.idx(j, m)] * rhs[m];
            }
            rhs[j] = acc / self.ab[self.idx(j, j)];
        }
    }
}

/// Reverse Cuthill-McKee ordering of a sparse pattern.
///
/// The pattern is symmetrized internally. Returns `perm` with `perm[new] =
/// old`; applying it clusters connected unknowns, shrinking the bandwidth of
/// lattice-like patterns to O(sqrt(n)).
pub fn rcm_order(a: &CsrMatrix) -> Vec<u32> {
    let n = a.nrows;
    assert_eq!(a.nrows, a.ncols);
    // undirected adjacency = pattern union its transpose, no self loops
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for r in 0..n {
        for &c in a.row(r).0 {
            if c as usize != r {
                adj[r].push(c);
                adj[c as usize].push(r as u32);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|l| l.len()).collect();

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    let mut scratch: Vec<u32> = Vec::new();
    loop {
        // lowest-degree unvisited vertex seeds the next component
        let seed = match (0..n).filter(|&v| !visited[v]).min_by_key(|&v| (degree[v], v)) {
            Some(s) => s,
            None => break,
        };
        visited[seed] = true;
        queue.push_back(seed as u32);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            scratch.clear();
            scratch.extend(adj[v as usize].iter().filter(|&&w| !visited[w as usize]));
            scratch.sort_by_key(|&w| (degree[w as usize], w));
            for &w in &scratch {
                visited[w as usize] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Half bandwidth of a pattern under a permutation (`perm[new] = old`).
pub fn permuted_bandwidth(a: &CsrMatrix, perm: &[u32]) -> usize {
    let mut inv = vec![0u32; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old as usize] = new as u32;
    }
    let mut band = 0usize;
    for r in 0..a.nrows {
        let ri = inv[r] as usize;
        for &c in a.row(r).0 {
            let ci = inv[c as usize] as usize;
            band = band.max(ri.abs_diff(ci));
        }
    }
    band
}
