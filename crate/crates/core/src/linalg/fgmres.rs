//! Flexible GMRES (right preconditioning, modified Gram-Schmidt, Givens
//! rotations). Flexible means the preconditioned vectors are stored, so the
//! preconditioner may change between iterations; a multigrid V-cycle with
//! inexact pieces is exactly such a preconditioner.

use super::csr::CsrMatrix;
use crate::linalg::{axpy, dot, norm2};

/// Operator action y = A x.
pub trait LinOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinOp for CsrMatrix {
    fn dim(&self) -> usize {
        debug_assert_eq!(self.nrows, self.ncols);
        self.nrows
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }
}

/// Preconditioner action z = M^{-1} r. Takes `&mut self` because multigrid
/// preconditioners carry scratch state.
pub trait Precondition {
    fn apply(&mut self, r: &[f64], z: &mut [f64]);
}

/// No preconditioning.
pub struct IdentityPrecond;

impl Precondition for IdentityPrecond {
    fn apply(&mut self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// Krylov solve controls.
#[derive(Debug, Clone, Copy)]
pub struct KrylovConfig {
    /// Stop when the residual drops below `rtol` times the initial residual.
    pub rtol: f64,
    /// Absolute residual floor; the effective target is max(rtol*|r0|, atol).
    pub atol: f64,
    pub max_it: usize,
    /// Restart length; `None` runs one unrestarted cycle of up to `max_it`.
    pub restart: Option<usize>,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig {
            rtol: 1e-6,
            atol: 0.0,
            max_it: 200,
            restart: None,
        }
    }
}

/// Result of an FGMRES solve.
#[derive(Debug, Clone)]
pub struct FgmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Residual norms, one entry per iteration plus the initial residual.
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// True when the Arnoldi basis became exact (lucky breakdown).
    pub breakdown: bool,
}

const BREAKDOWN_TOL: f64 = 1e-30;

/// Solve A x = b with right-preconditioned flexible GMRES starting from x0
/// (zero when `None`).
pub fn fgmres(
    op: &dyn LinOp,
    precond: &mut dyn Precondition,
    b: &[f64],
    x0: Option<&[f64]>,
    cfg: &KrylovConfig,
) -> FgmresOutcome {
    let n = op.dim();
    debug_assert_eq!(b.len(), n);
    let mut x = match x0 {
        Some(v) => v.to_vec(),
        None => vec![0.0; n],
    };

    let mut r = vec![0.0; n];
    op.apply(&x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let beta0 = norm2(&r);
    let mut residuals = vec![beta0];
    if beta0 == 0.0 {
        return FgmresOutcome {
            x,
            iterations: 0,
            residuals,
            converged: true,
            breakdown: false,
        };
    }
    let target = (cfg.rtol * beta0).max(cfg.atol);
    let mut iterations = 0usize;
    let mut converged = beta0 <= target;
    let mut breakdown = false;

    'outer: while !converged && iterations < cfg.max_it {
        let cycle = cfg.restart.unwrap_or(cfg.max_it).min(cfg.max_it - iterations);
        let mut beta = norm2(&r);
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(cycle + 1);
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(cycle);
        let mut first = r.clone();
        for vi in first.iter_mut() {
            *vi /= beta;
        }
        v.push(first);
        // Hessenberg columns after Givens, plus rotation pairs and rhs g
        let mut hcols: Vec<Vec<f64>> = Vec::with_capacity(cycle);
        let mut givens: Vec<(f64, f64)> = Vec::with_capacity(cycle);
        let mut g = vec![beta];
        let mut inner = 0usize;

        for j in 0..cycle {
            let mut zj = vec![0.0; n];
            precond.apply(&v[j], &mut zj);
            let mut w = vec![0.0; n];
            op.apply(&zj, &mut w);
            z.push(zj);

            let norm_before = norm2(&w);
            let mut h = vec![0.0; j + 2];
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(&w, vi);
                h[i] = hij;
                axpy(-hij, vi, &mut w);
            }
            // one re-orthogonalization pass when cancellation was severe
            if norm2(&w) < 1e-3 * norm_before {
                for (i, vi) in v.iter().enumerate() {
                    let corr = dot(&w, vi);
                    h[i] += corr;
                    axpy(-corr, vi, &mut w);
                }
            }
            let hnext = norm2(&w);
            h[j + 1] = hnext;

            // apply accumulated rotations, then the new one
            for (i, &(c, s)) in givens.iter().enumerate() {
                let t = c * h[i] + s * h[i + 1];
                h[i + 1] = -s * h[i] + c * h[i + 1];
                h[i] = t;
            }
            let (c, s) = if h[j + 1] == 0.0 {
                (1.0, 0.0)
            } else {
                let d = (h[j] * h[j] + h[j + 1] * h[j + 1]).sqrt();
                (h[j] / d, h[j + 1] / d)
            };
            h[j] = c * h[j] + s * h[j + 1];
            h[j + 1] = 0.0;
            givens.push((c, s));
            let gj = g[j];
            g[j] = c * gj;
            g.push(-s * gj);
            hcols.push(h);

            inner = j + 1;
            iterations += 1;
            beta = g[j + 1].abs();
            residuals.push(beta);

            if hnext < BREAKDOWN_TOL {
                breakdown = true;
                converged = true;
                break;
            }
            if beta <= target {
                converged = true;
                break;
            }
            if iterations >= cfg.max_it {
                break;
            }
            if j + 1 < cycle {
                let mut next = w;
                for wi in next.iter_mut() {
                    *wi /= hnext;
                }
                v.push(next);
            }
        }

        // back-substitute the triangular system and update x with Z y
        let mut y = vec![0.0; inner];
        for i in (0..inner).rev() {
            let mut acc = g[i];
            for k in i + 1..inner {
                acc -= hcols[k][i] * y[k];
            }
            y[i] = acc / hcols[i][i];
        }
        for (k, yk) in y.iter().enumerate() {
            axpy(*yk, &z[k], &mut x);
        }

        if converged {
            break 'outer;
        }
        // recompute the true residual for the restart
        op.apply(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        if cfg.restart.is_none() {
            break;
        }
    }

    FgmresOutcome {
        x,
        iterations,
        residuals,
        converged,
        breakdown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense::{dense_factorize, dense_solve};
    use rand::{Rng, SeedableRng};

    struct DenseOp {
        n: usize,
        a: Vec<f64>,
    }
    impl LinOp for DenseOp {
        fn dim(&self) -> usize {
            self.n
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            for i in 0..self.n {
                y[i] = (0..self.n).map(|j| self.a[i * self.n + j] * x[j]).sum();
            }
        }
    }

    fn random_diag_dominant(n: usize, seed: u64) -> DenseOp {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut a: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for i in 0..n {
            a[i * n + i] += n as f64;
        }
        DenseOp { n, a }
    }

    #[test]
    fn unpreconditioned_matches_direct_solve() {
        let n = 24;
        let op = random_diag_dominant(n, 3);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let out = fgmres(
            &op,
            &mut IdentityPrecond,
            &b,
            None,
            &KrylovConfig {
                rtol: 1e-12,
                ..Default::default()
            },
        );
        assert!(out.converged);
        let direct = dense_solve(&dense_factorize(op.a.clone(), n).unwrap(), &b);
        for (g, e) in out.x.iter().zip(&direct) {
            assert!((g - e).abs() < 1e-9);
        }
        // history: initial residual plus one entry per iteration
        assert_eq!(out.residuals.len(), out.iterations + 1);
        assert!(out.residuals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn zero_rhs_returns_zero_without_iterating() {
        let op = random_diag_dominant(9, 5);
        let out = fgmres(&op, &mut IdentityPrecond, &[0.0; 9], None, &KrylovConfig::default());
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
        assert!(out.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_preconditioner_converges_in_one_iteration() {
        struct Exact {
            f: crate::linalg::dense::DenseBlockFactorization,
        }
        impl Precondition for Exact {
            fn apply(&mut self, r: &[f64], z: &mut [f64]) {
                z.copy_from_slice(&dense_solve(&self.f, r));
            }
        }
        let n = 16;
        let op = random_diag_dominant(n, 8);
        let b: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let mut pc = Exact {
            f: dense_factorize(op.a.clone(), n).unwrap(),
        };
        let out = fgmres(&op, &mut pc, &b, None, &KrylovConfig::default());
        assert!(out.converged);
        assert!(out.iterations <= 2, "took {}", out.iterations);
    }

    #[test]
    fn restart_still_converges() {
        let n = 30;
        let op = random_diag_dominant(n, 13);
        let b = vec![1.0; n];
        let out = fgmres(
            &op,
            &mut IdentityPrecond,
            &b,
            None,
            &KrylovConfig {
                rtol: 1e-10,
                restart: Some(5),
                max_it: 400,
                ..Default::default()
            },
        );
        assert!(out.converged);
        let mut check = vec![0.0; n];
        op.apply(&out.x, &mut check);
        for (c, bi) in check.iter().zip(&b) {
            assert!((c - bi).abs() < 1e-8);
        }
    }

    #[test]
    fn nonzero_initial_guess_is_used() {
        let n = 12;
        let op = random_diag_dominant(n, 21);
        let xstar: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut b = vec![0.0; n];
        op.apply(&xstar, &mut b);
        let out = fgmres(&op, &mut IdentityPrecond, &b, Some(&xstar), &KrylovConfig::default());
        assert!(out.converged);
        assert_eq!(out.iterations, 0, "exact guess should converge immediately");
    }
}
