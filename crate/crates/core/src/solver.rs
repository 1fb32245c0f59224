//! Multigrid orchestration: V(2,2) cycles over the space-time hierarchy,
//! FGMRES preconditioned with one cycle, Newton with Eisenstat-Walker
//! forcing for the flow system, and a sequential timestepping mode that
//! reuses the same machinery one time element at a time.

use crate::forms::{NsSystem, SpaceTimeOperator};
use crate::linalg::csr::CsrMatrix;
use crate::linalg::direct::{block_triangular_factorize, BlockTriangularFactor};
use crate::linalg::fgmres::{fgmres, KrylovConfig, Precondition};
use crate::linalg::norm2;
use crate::mesh::{MeshLevel, TimePartition};
use crate::relax::{
    build_patches, build_smoother, chebyshev, estimate_lambda, remove_pressure_means,
    ChebyshevParams, LambdaEstimate, Smoother, SpillPolicy,
};
use crate::spaces::SpaceTimeSpace;
use crate::transfer::{build_transfer_pair, TransferPair};
use crate::{Error, Result};

/// Relaxation steps used for the spectral radius estimate.
const LAMBDA_STEPS: usize = 50;

/// One level of the multigrid hierarchy. The coarsest level carries no
/// smoother; it is solved directly.
pub struct LevelData {
    pub space: SpaceTimeSpace,
    pub op: SpaceTimeOperator,
    pub smoother: Option<Smoother>,
    pub cheby: ChebyshevParams,
    pub lambda: LambdaEstimate,
}

/// Space-time multigrid hierarchy, coarsest level first.
pub struct MgHierarchy {
    pub levels: Vec<LevelData>,
    /// transfers[l] couples level l (coarse) with level l+1 (fine).
    pub transfers: Vec<TransferPair>,
    coarse_csr: CsrMatrix,
    coarse_factor: BlockTriangularFactor,
    lambda_seed: u64,
}

/// Zero the constrained slab rows of a space-time vector.
pub fn zero_constrained_rows(op: &SpaceTimeOperator, v: &mut [f64]) {
    for s in 0..op.n_elements * op.nq {
        let base = s * op.slab;
        for &r in &op.constrained {
            v[base + r as usize] = 0.0;
        }
    }
}

fn recenter_pressure(op: &SpaceTimeOperator, v: &mut [f64]) {
    if let Some((off, np)) = op.pressure {
        remove_pressure_means(v, op.n_elements * op.nq, op.slab, off, np);
    }
}

/// Assemble the hierarchy from per-level spaces and operators (coarsest
/// first) and the transfer pairs between consecutive levels. Builds patch
/// smoothers and Chebyshev intervals on every level above the coarsest and
/// factors the coarsest operator.
pub fn build_hierarchy(
    data: Vec<(SpaceTimeSpace, SpaceTimeOperator)>,
    transfers: Vec<TransferPair>,
    meshes: &[MeshLevel],
    spill: SpillPolicy,
    lambda_seed: u64,
) -> Result<MgHierarchy> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("hierarchy needs at least one level".into()));
    }
    if transfers.len() + 1 != data.len() || meshes.len() != data.len() {
        return Err(Error::InvalidConfig(
            "hierarchy needs one transfer per consecutive level pair".into(),
        ));
    }
    let mut levels = Vec::with_capacity(data.len());
    for (l, (space, op)) in data.into_iter().enumerate() {
        let (smoother, cheby, lambda) = if l == 0 {
            (
                None,
                ChebyshevParams::from_lambda(1.0),
                LambdaEstimate {
                    lambda: 1.0,
                    iterations: 0,
                    flagged: false,
                },
            )
        } else {
            let set = build_patches(&meshes[l], &space, &op);
            let sm = build_smoother(&op, set, spill)?;
            let est = estimate_lambda(
                &op,
                |r: &[f64], z: &mut [f64]| sm.apply(r, z),
                LAMBDA_STEPS,
                lambda_seed.wrapping_add(l as u64),
            );
            (Some(sm), ChebyshevParams::from_lambda(est.lambda), est)
        };
        levels.push(LevelData {
            space,
            op,
            smoother,
            cheby,
            lambda,
        });
    }
    let coarse_csr = levels[0].op.to_global_csr();
    let coarse_factor = block_triangular_factorize(&coarse_csr, &levels[0].op.structure())?;
    Ok(MgHierarchy {
        levels,
        transfers,
        coarse_csr,
        coarse_factor,
        lambda_seed,
    })
}

impl MgHierarchy {
    pub fn finest(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn fine_op(&self) -> &SpaceTimeOperator {
        &self.levels[self.finest()].op
    }

    /// Current spectral radius estimates, coarsest level first (the
    /// coarsest entry reports its placeholder 1.0).
    pub fn lambdas(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.lambda.lambda).collect()
    }

    /// Swap in re-assembled operators (one per level, coarsest first),
    /// refresh the patch factorizations and eigenvalue estimates, and
    /// refactor the coarsest level.
    pub fn update_operators(&mut self, ops: Vec<SpaceTimeOperator>) -> Result<()> {
        if ops.len() != self.levels.len() {
            return Err(Error::InvalidConfig("one operator per level".into()));
        }
        for (l, (level, op)) in self.levels.iter_mut().zip(ops).enumerate() {
            level.op = op;
            if let Some(sm) = &mut level.smoother {
                sm.refresh(&level.op)?;
                let est = estimate_lambda(
                    &level.op,
                    |r: &[f64], z: &mut [f64]| sm.apply(r, z),
                    LAMBDA_STEPS,
                    self.lambda_seed.wrapping_add(l as u64),
                );
                level.cheby = ChebyshevParams::from_lambda(est.lambda);
                level.lambda = est;
            }
        }
        self.coarse_csr = self.levels[0].op.to_global_csr();
        self.coarse_factor.refactor(&self.coarse_csr)?;
        Ok(())
    }
}

/// One V(2,2) cycle on `level`: returns the correction for `rhs`. The
/// coarsest level solves directly; every other level smooths with one
/// Chebyshev(2) pass before and after the coarse-grid correction.
pub fn v_cycle(hier: &MgHierarchy, level: usize, rhs: &[f64]) -> Vec<f64> {
    let lv = &hier.levels[level];
    if level == 0 {
        let mut x = hier.coarse_factor.solve(&hier.coarse_csr, rhs);
        recenter_pressure(&lv.op, &mut x);
        return x;
    }
    let sm = lv.smoother.as_ref().expect("smoother on every level above the coarsest");
    let n = lv.op.total_dofs();
    let mut x = vec![0.0; n];
    chebyshev(&lv.op, |r: &[f64], z: &mut [f64]| sm.apply(r, z), lv.cheby, rhs, &mut x);

    let mut r = vec![0.0; n];
    lv.op.apply_into(&x, &mut r);
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri = bi - *ri;
    }
    let tp = &hier.transfers[level - 1];
    let mut rc = vec![0.0; tp.coarse_len()];
    tp.restrict(&r, &mut rc);
    let coarse_op = &hier.levels[level - 1].op;
    zero_constrained_rows(coarse_op, &mut rc);
    recenter_pressure(coarse_op, &mut rc);

    let ec = v_cycle(hier, level - 1, &rc);

    let mut ef = vec![0.0; n];
    tp.prolong(&ec, &mut ef);
    zero_constrained_rows(&lv.op, &mut ef);
    for (xi, ei) in x.iter_mut().zip(&ef) {
        *xi += ei;
    }
    chebyshev(&lv.op, |r: &[f64], z: &mut [f64]| sm.apply(r, z), lv.cheby, rhs, &mut x);
    recenter_pressure(&lv.op, &mut x);
    x
}

/// The hierarchy as an FGMRES preconditioner: one V(2,2) cycle per apply.
pub struct WrmgPrecond<'a> {
    pub hier: &'a MgHierarchy,
}

impl Precondition for WrmgPrecond<'_> {
    fn apply(&mut self, r: &[f64], z: &mut [f64]) {
        let x = v_cycle(self.hier, self.hier.finest(), r);
        z.copy_from_slice(&x);
    }
}

/// Outcome of one linear solve.
#[derive(Debug, Clone)]
pub struct LinearStats {
    pub iterations: usize,
    /// Residual norms including the initial one.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Solve the finest-level system with WRMG-preconditioned FGMRES.
pub fn solve_linear_wrmg(
    hier: &MgHierarchy,
    rhs: &[f64],
    cfg: &KrylovConfig,
) -> (Vec<f64>, LinearStats) {
    let mut pre = WrmgPrecond { hier };
    let out = fgmres(hier.fine_op(), &mut pre, rhs, None, cfg);
    (
        out.x,
        LinearStats {
            iterations: out.iterations,
            residuals: out.residuals,
            converged: out.converged,
        },
    )
}

/// Solve one assembled operator directly via the time-block factorization;
/// the pressure mean is removed per slab afterwards.
pub fn solve_linear_direct(op: &SpaceTimeOperator, rhs: &[f64]) -> Result<Vec<f64>> {
    let csr = op.to_global_csr();
    let factor = block_triangular_factorize(&csr, &op.structure())?;
    let mut x = factor.solve(&csr, rhs);
    recenter_pressure(op, &mut x);
    Ok(x)
}

/// Inner linear solver of Newton's method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearSolverKind {
    Wrmg,
    Direct,
}

/// Newton controls with Eisenstat-Walker forcing (choice 2).
#[derive(Debug, Clone, Copy)]
pub struct NewtonConfig {
    /// Stop when the residual drops below `rtol` times the initial one.
    pub rtol: f64,
    /// Absolute residual floor for the stopping test; keeps warm-started
    /// solves from chasing an unattainable relative reduction.
    pub atol: f64,
    pub max_it: usize,
    pub eta0: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub eta_max: f64,
    /// Absolute floor passed to the inner Krylov solve.
    pub linear_atol: f64,
    pub linear_max_it: usize,
    pub linear: LinearSolverKind,
    pub lambda_seed: u64,
    pub spill: SpillPolicy,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            rtol: 1e-8,
            atol: 0.0,
            max_it: 30,
            eta0: 0.3,
            gamma: 1.0,
            alpha: 0.5 * (1.0 + 5.0f64.sqrt()),
            eta_max: 0.9,
            linear_atol: 1e-12,
            linear_max_it: 200,
            linear: LinearSolverKind::Wrmg,
            lambda_seed: 4242,
            spill: SpillPolicy::Auto,
        }
    }
}

/// Newton solve outcome; `converged` is false when the iteration budget ran
/// out or an inner solve failed, with the reason in `failure`.
#[derive(Debug, Clone, Default)]
pub struct NewtonStats {
    pub newton_iterations: usize,
    /// Nonlinear residual norms, one per evaluated iterate.
    pub nonlinear_residuals: Vec<f64>,
    pub linear_iterations: Vec<usize>,
    pub linear_residuals: Vec<Vec<f64>>,
    /// Forcing term per Newton step.
    pub forcing: Vec<f64>,
    /// Spectral radius estimates per hierarchy setup, coarsest level first.
    pub lambda_history: Vec<Vec<f64>>,
    pub converged: bool,
    pub failure: Option<String>,
}

impl NewtonStats {
    pub fn linear_total(&self) -> usize {
        self.linear_iterations.iter().sum()
    }
}

fn eisenstat_walker(cfg: &NewtonConfig, k: usize, fk: f64, fk_prev: f64, eta_prev: f64) -> f64 {
    if k == 0 {
        return cfg.eta0.min(cfg.eta_max);
    }
    let mut eta = cfg.gamma * (fk / fk_prev).powf(cfg.alpha);
    let safeguard = cfg.gamma * eta_prev.powf(cfg.alpha);
    if safeguard > 0.1 {
        eta = eta.max(safeguard);
    }
    eta.min(cfg.eta_max)
}

/// Newton's method with full steps on the flow system, one `NsSystem` per
/// hierarchy level (coarsest first). `x0` is the initial iterate on the
/// finest level with boundary values already applied. Coarse-level states
/// for the Jacobians come from nodal injection of the current iterate.
pub fn solve_newton(
    systems: &[NsSystem],
    meshes: &[MeshLevel],
    x0: Vec<f64>,
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, NewtonStats)> {
    let nlev = systems.len();
    assert_eq!(meshes.len(), nlev);
    let fine = nlev - 1;
    let mut stats = NewtonStats::default();

    let transfers: Vec<TransferPair> = (0..nlev - 1)
        .map(|l| {
            build_transfer_pair(&meshes[l + 1], &systems[l].space, &systems[l + 1].space)
        })
        .collect::<Result<_>>()?;

    let mut x = x0;
    let mut f = vec![0.0; systems[fine].total_dofs()];
    systems[fine].residual(&x, &mut f);
    let f0 = norm2(&f);
    stats.nonlinear_residuals.push(f0);
    let target = (cfg.rtol * f0).max(cfg.atol);
    if f0 <= cfg.atol || f0 == 0.0 {
        stats.converged = true;
        return Ok((x, stats));
    }

    // injected iterates per level, fine one borrowed from x
    let mut coarse_states: Vec<Vec<f64>> = (0..nlev - 1)
        .map(|l| vec![0.0; systems[l].total_dofs()])
        .collect();

    let mut hier: Option<MgHierarchy> = None;
    let mut direct: Option<(CsrMatrix, BlockTriangularFactor)> = None;
    let mut eta_prev = cfg.eta0;
    let mut fk = f0;

    for k in 0..cfg.max_it {
        if fk <= target {
            stats.converged = true;
            break;
        }
        // inject the iterate down the hierarchy
        for l in (0..nlev - 1).rev() {
            let (finer_tmp, coarser) = if l == nlev - 2 {
                (&x[..], &mut coarse_states[l])
            } else {
                let (lo, hi) = coarse_states.split_at_mut(l + 1);
                (&hi[0][..], &mut lo[l])
            };
            transfers[l].inject_state(finer_tmp, coarser);
        }

        let fk_prev = if k == 0 { fk } else { stats.nonlinear_residuals[k - 1] };
        let eta = eisenstat_walker(cfg, k, fk, fk_prev, eta_prev);
        eta_prev = eta;
        stats.forcing.push(eta);

        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();

        let (delta, lin) = match cfg.linear {
            LinearSolverKind::Wrmg => {
                let ops: Vec<SpaceTimeOperator> = (0..nlev)
                    .map(|l| {
                        let state = if l == fine { &x } else { &coarse_states[l] };
                        systems[l].jacobian(state)
                    })
                    .collect();
                match &mut hier {
                    None => {
                        let data: Vec<(SpaceTimeSpace, SpaceTimeOperator)> = systems
                            .iter()
                            .zip(ops)
                            .map(|(s, op)| (s.space.clone(), op))
                            .collect();
                        hier = Some(build_hierarchy(
                            data,
                            transfers.clone(),
                            meshes,
                            cfg.spill,
                            cfg.lambda_seed,
                        )?);
                    }
                    Some(h) => h.update_operators(ops)?,
                }
                let h = hier.as_ref().unwrap();
                stats.lambda_history.push(h.lambdas());
                let kcfg = KrylovConfig {
                    rtol: eta,
                    atol: cfg.linear_atol,
                    max_it: cfg.linear_max_it,
                    restart: None,
                };
                solve_linear_wrmg(h, &rhs, &kcfg)
            }
            LinearSolverKind::Direct => {
                let op = systems[fine].jacobian(&x);
                let csr = op.to_global_csr();
                match &mut direct {
                    None => {
                        let factor = block_triangular_factorize(&csr, &op.structure())?;
                        direct = Some((csr, factor));
                    }
                    Some((stored, factor)) => {
                        *stored = csr;
                        factor.refactor(stored)?;
                    }
                }
                let (csr, factor) = direct.as_ref().unwrap();
                let mut d = factor.solve(csr, &rhs);
                recenter_pressure(&op, &mut d);
                let mut resid = vec![0.0; d.len()];
                op.apply_into(&d, &mut resid);
                for (ri, bi) in resid.iter_mut().zip(&rhs) {
                    *ri = bi - *ri;
                }
                let hist = vec![norm2(&rhs), norm2(&resid)];
                (
                    d,
                    LinearStats {
                        iterations: 1,
                        residuals: hist,
                        converged: true,
                    },
                )
            }
        };

        stats.linear_iterations.push(lin.iterations);
        stats.linear_residuals.push(lin.residuals.clone());
        if !lin.converged {
            stats.failure = Some(format!(
                "linear solve stalled at Newton step {k}: residual {:.3e} after {} iterations",
                lin.residuals.last().copied().unwrap_or(f64::NAN),
                lin.iterations
            ));
            stats.newton_iterations = k + 1;
            return Ok((x, stats));
        }

        for (xi, di) in x.iter_mut().zip(&delta) {
            *xi += di;
        }
        stats.newton_iterations = k + 1;
        systems[fine].residual(&x, &mut f);
        fk = norm2(&f);
        stats.nonlinear_residuals.push(fk);
    }

    if fk <= target {
        stats.converged = true;
    } else if stats.failure.is_none() && !stats.converged {
        stats.failure = Some(format!(
            "Newton did not reach rtol {:.1e} in {} iterations",
            cfg.rtol, cfg.max_it
        ));
    }
    Ok((x, stats))
}

/// Sequential timestepping for the heat system: one time element per solve,
/// carrying the end-of-element trace forward. Returns the concatenated
/// space-time state matching the all-at-once layout.
pub fn solve_heat_timestepping(
    meshes: &[MeshLevel],
    k: usize,
    q: usize,
    partition: TimePartition,
    u0: &[f64],
    krylov: &KrylovConfig,
    spill: SpillPolicy,
    lambda_seed: u64,
) -> Result<(Vec<f64>, Vec<LinearStats>)> {
    use crate::forms::assemble_heat;
    use crate::spaces::{build_scalar_space, build_spacetime_space, build_temporal_space};

    let single = TimePartition::new(partition.dt(), 1);
    let mut data = Vec::new();
    for mesh in meshes {
        let sp = build_spacetime_space(
            vec![build_scalar_space(mesh, k)],
            build_temporal_space(q, single),
        );
        let zero = vec![0.0; sp.components[0].ndofs];
        let (op, _) = assemble_heat(mesh, &sp, &zero)?;
        data.push((sp, op));
    }
    let transfers: Vec<TransferPair> = (0..data.len() - 1)
        .map(|l| build_transfer_pair(&meshes[l + 1], &data[l].0, &data[l + 1].0))
        .collect::<Result<_>>()?;
    let hier = build_hierarchy(data, transfers, meshes, spill, lambda_seed)?;

    let fine = hier.finest();
    let ndofs = hier.levels[fine].space.components[0].ndofs;
    let nq = q + 1;
    let at0 = hier.levels[fine].op.at0.clone();
    let mass = hier.levels[fine].op.sub.clone();

    let mut out = vec![0.0; partition.n * nq * ndofs];
    let mut carry = u0.to_vec();
    let mut rhs = vec![0.0; nq * ndofs];
    let mut stats = Vec::with_capacity(partition.n);
    for n in 0..partition.n {
        let mut tmp = vec![0.0; ndofs];
        mass.matvec(&carry, &mut tmp);
        rhs.fill(0.0);
        for (b, &w) in at0.iter().enumerate() {
            if w != 0.0 {
                for (r, t) in rhs[b * ndofs..(b + 1) * ndofs].iter_mut().zip(&tmp) {
                    *r = w * t;
                }
            }
        }
        let (x, lin) = solve_linear_wrmg(&hier, &rhs, krylov);
        if !lin.converged {
            return Err(Error::NoConvergence {
                solver: "timestepping fgmres".into(),
                iterations: lin.iterations,
                residual: lin.residuals.last().copied().unwrap_or(f64::NAN),
            });
        }
        carry.copy_from_slice(&x[(nq - 1) * ndofs..]);
        out[n * nq * ndofs..(n + 1) * nq * ndofs].copy_from_slice(&x);
        stats.push(lin);
    }
    Ok((out, stats))
}

/// Sequential timestepping for the flow system: per element, a Newton solve
/// of the single-element space-time problem, feeding the end trace forward.
/// `systems` are single-element contexts per level (coarsest first); the
/// finest one's jump data is replaced each step. `guess0` seeds the first
/// element's iterate (boundary values applied).
pub fn solve_ns_timestepping(
    systems: &mut [NsSystem],
    meshes: &[MeshLevel],
    n_elements: usize,
    guess0: Vec<f64>,
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, Vec<NewtonStats>)> {
    let fine = systems.len() - 1;
    assert_eq!(systems[fine].space.temporal.partition.n, 1);
    let slab = systems[fine].space.slab_size;
    let nq = systems[fine].space.temporal.n_nodes();

    let mut out = vec![0.0; n_elements * nq * slab];
    let mut guess = guess0;
    let mut all_stats = Vec::with_capacity(n_elements);
    for n in 0..n_elements {
        let (x, stats) = solve_newton(systems, meshes, guess.clone(), cfg)?;
        if !stats.converged {
            return Err(Error::NoConvergence {
                solver: format!("timestepping Newton, element {n}"),
                iterations: stats.newton_iterations,
                residual: stats.nonlinear_residuals.last().copied().unwrap_or(f64::NAN),
            });
        }
        out[n * nq * slab..(n + 1) * nq * slab].copy_from_slice(&x);
        let trace = &x[(nq - 1) * slab..];
        systems[fine].initial.copy_from_slice(trace);
        // warm start: repeat the end trace at every temporal node
        for a in 0..nq {
            guess[a * slab..(a + 1) * slab].copy_from_slice(trace);
        }
        systems[fine].bcs.apply_to_state(&systems[fine].space, &mut guess);
        all_stats.push(stats);
    }
    Ok((out, all_stats))
}
