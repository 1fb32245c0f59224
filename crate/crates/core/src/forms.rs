//! Space-time weak forms: the heat operator, the Navier-Stokes residual and
//! Jacobian, Dirichlet constraint handling, nodal interpolation, and the
//! space-time L2 error functional.
//!
//! Assembled operators are block lower bidiagonal in time. The diagonal
//! (n, n) block combines the temporal advection-plus-jump matrix tensored
//! with the spatial mass and dt times the temporal mass tensored with the
//! "stationary" part (viscous, pressure gradient, divergence); Navier-Stokes
//! adds a per-element advection block assembled at the current state. The
//! subdiagonal (n, n-1) block is the jump coupling -theta_b(0) theta_a(1) x
//! mass, and since the temporal nodes include the right endpoint only the
//! last temporal column a = q survives, exactly.

use crate::linalg::csr::CsrMatrix;
use crate::linalg::direct::TimeBlockStructure;
use crate::linalg::fgmres::LinOp;
use crate::mesh::MeshLevel;
use crate::spaces::quadrature::{interval_rule, triangle_rule};
use crate::spaces::{basis::lagrange_values, ScalarSpatialSpace, SpaceTimeSpace};
use crate::{Error, Result};

/// Sparsity accounting for reports. `alloc_nnz` follows the allocated-storage
/// convention (q+1)^2 (3N-2) S where S counts the full field-coupling slab
/// pattern including the structurally empty pressure-pressure block;
/// `stored_nnz` counts values this implementation actually keeps.
#[derive(Debug, Clone, Copy, Default)]
pub struct OperatorMeta {
    pub s_full: usize,
    pub s_stored: usize,
    pub s_adv: usize,
    pub s_sub: usize,
    pub alloc_nnz: u64,
    pub stored_nnz: u64,
}

/// Per-element advection values over the velocity-velocity sub-pattern.
#[derive(Debug, Clone)]
pub struct AdvBlocks {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    /// vals[element][b * (q+1) + a] aligned with the advection pattern.
    pub vals: Vec<Vec<Vec<f64>>>,
}

/// Assembled space-time operator, block lower bidiagonal in time.
#[derive(Debug, Clone)]
pub struct SpaceTimeOperator {
    /// Temporal nodes per element (q+1).
    pub nq: usize,
    pub n_elements: usize,
    /// Spatial DoFs per slab (all fields).
    pub slab: usize,
    /// Field offsets within a slab.
    pub offsets: Vec<usize>,
    /// Shared spatial slab pattern for the diagonal blocks.
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    /// Element-independent diagonal values, indexed [b * nq + a].
    pub base: Vec<Vec<f64>>,
    /// State-dependent advection part; `None` for time-invariant operators.
    pub adv: Option<AdvBlocks>,
    /// Velocity (or scalar) mass matrix entering jump terms.
    pub sub: CsrMatrix,
    /// Temporal basis values at the left endpoint.
    pub at0: Vec<f64>,
    /// Identity-constrained slab rows, sorted.
    pub constrained: Vec<u32>,
    /// Pressure field offset and size, when a pressure block exists.
    pub pressure: Option<(usize, usize)>,
    pub meta: OperatorMeta,
}

impl SpaceTimeOperator {
    pub fn total_dofs(&self) -> usize {
        self.n_elements * self.nq * self.slab
    }

    #[inline]
    fn slab_start(&self, n: usize, a: usize) -> usize {
        (n * self.nq + a) * self.slab
    }

    /// Position of (row, col) in the diagonal slab pattern.
    pub fn slab_find(&self, r: usize, c: u32) -> Option<usize> {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        self.cols[lo..hi].binary_search(&c).ok().map(|i| lo + i)
    }

    /// y = A x over the full space-time vector.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.total_dofs());
        debug_assert_eq!(y.len(), self.total_dofs());
        let nq = self.nq;
        let mut tmp = vec![0.0; self.slab];
        for n in 0..self.n_elements {
            for b in 0..nq {
                let ys = self.slab_start(n, b);
                let yrow = &mut y[ys..ys + self.slab];
                yrow.fill(0.0);
                for a in 0..nq {
                    let xs = self.slab_start(n, a);
                    let xa = &x[xs..xs + self.slab];
                    csr_apply_add(&self.row_ptr, &self.cols, &self.base[b * nq + a], 1.0, xa, yrow);
                    if let Some(adv) = &self.adv {
                        csr_apply_add(&adv.row_ptr, &adv.cols, &adv.vals[n][b * nq + a], 1.0, xa, yrow);
                    }
                }
            }
            if n > 0 {
                let xs = self.slab_start(n - 1, nq - 1);
                self.sub.matvec(&x[xs..xs + self.slab], &mut tmp);
                for b in 0..nq {
                    let ys = self.slab_start(n, b);
                    let w = self.at0[b];
                    if w != 0.0 {
                        for (yv, tv) in y[ys..ys + self.slab].iter_mut().zip(&tmp) {
                            *yv -= w * tv;
                        }
                    }
                }
            }
        }
    }

    /// Time-block metadata for the block-triangular direct solver, pinning
    /// one pressure DoF per temporal slab when a pressure block exists.
    pub fn structure(&self) -> TimeBlockStructure {
        let pin_rows = match self.pressure {
            Some((off, _)) => (0..self.nq).map(|a| (a * self.slab + off) as u32).collect(),
            None => Vec::new(),
        };
        TimeBlockStructure {
            n_blocks: self.n_elements,
            block_size: self.nq * self.slab,
            time_invariant: self.adv.is_none(),
            pin_rows,
        }
    }

    /// Expand to one global CSR matrix (coarse levels only; sizes stay
    /// small). The pattern covers every stored position regardless of value
    /// so repeated expansions share sparsity and factors can be reused.
    pub fn to_global_csr(&self) -> CsrMatrix {
        let total = self.total_dofs();
        let nq = self.nq;
        let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(total);
        for n in 0..self.n_elements {
            for b in 0..nq {
                for r in 0..self.slab {
                    let mut row: Vec<(u32, f64)> = Vec::new();
                    for a in 0..nq {
                        let cbase = self.slab_start(n, a) as u32;
                        for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                            row.push((cbase + self.cols[p], self.base[b * nq + a][p]));
                        }
                        if let Some(adv) = &self.adv {
                            for p in adv.row_ptr[r]..adv.row_ptr[r + 1] {
                                row.push((cbase + adv.cols[p], adv.vals[n][b * nq + a][p]));
                            }
                        }
                    }
                    if n > 0 {
                        let cbase = self.slab_start(n - 1, nq - 1) as u32;
                        let (cols, vals) = self.sub.row(r);
                        for (c, v) in cols.iter().zip(vals) {
                            row.push((cbase + c, -self.at0[b] * v));
                        }
                    }
                    row.sort_unstable_by_key(|e| e.0);
                    row.dedup_by(|later, first| {
                        if later.0 == first.0 {
                            first.1 += later.1;
                            true
                        } else {
                            false
                        }
                    });
                    rows.push(row);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(total + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        let mut m = CsrMatrix::from_pattern(total, total, row_ptr, cols);
        m.vals = vals;
        m
    }
}

impl LinOp for SpaceTimeOperator {
    fn dim(&self) -> usize {
        self.total_dofs()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.apply_into(x, y);
    }
}

/// y += alpha * A x for a raw CSR triple.
#[inline]
fn csr_apply_add(
    row_ptr: &[usize],
    cols: &[u32],
    vals: &[f64],
    alpha: f64,
    x: &[f64],
    y: &mut [f64],
) {
    for (r, yv) in y.iter_mut().enumerate().take(row_ptr.len() - 1) {
        let mut acc = 0.0;
        for p in row_ptr[r]..row_ptr[r + 1] {
            acc += vals[p] * x[cols[p] as usize];
        }
        *yv += alpha * acc;
    }
}

/// Boundary condition flavor of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcKind {
    /// Do-nothing boundaries, no constrained DoFs (heat).
    Natural,
    /// Zero normal velocity component, tangential component free.
    NormalComponent,
    /// Full velocity Dirichlet with a moving lid.
    LidDriven,
}

/// Strongly imposed constraints, constant in time.
#[derive(Debug, Clone)]
pub struct BoundaryConditions {
    pub kind: BcKind,
    /// Per field: (spatial DoF, value), sorted by DoF, deduplicated.
    pub constraints: Vec<Vec<(u32, f64)>>,
}

impl BoundaryConditions {
    pub fn natural(n_fields: usize) -> Self {
        BoundaryConditions {
            kind: BcKind::Natural,
            constraints: vec![Vec::new(); n_fields],
        }
    }

    /// Constrained slab rows (union over fields), sorted.
    pub fn constrained_slab_rows(&self, space: &SpaceTimeSpace) -> Vec<u32> {
        let mut out = Vec::new();
        for (f, cs) in self.constraints.iter().enumerate() {
            for (d, _) in cs {
                out.push((space.offsets[f] + *d as usize) as u32);
            }
        }
        out.sort_unstable();
        out
    }

    /// Write the constraint values into every temporal slab of a state.
    pub fn apply_to_state(&self, space: &SpaceTimeSpace, state: &mut [f64]) {
        for s in 0..space.temporal.n_time_dofs() {
            let base = s * space.slab_size;
            for (f, cs) in self.constraints.iter().enumerate() {
                for (d, v) in cs {
                    state[base + space.offsets[f] + *d as usize] = *v;
                }
            }
        }
    }
}

/// Slab sparsity pattern over the listed (row field, col field) couplings.
fn build_slab_pattern(
    space: &SpaceTimeSpace,
    couplings: &[(usize, usize)],
) -> (Vec<usize>, Vec<u32>) {
    let slab = space.slab_size;
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); slab];
    let ncells = space.components[0].mesh_cells;
    for &(f, g) in couplings {
        let sf = &space.components[f];
        let sg = &space.components[g];
        let (of, og) = (space.offsets[f], space.offsets[g] as u32);
        for cell in 0..ncells {
            for &df in sf.cell_dofs_of(cell) {
                let row = &mut rows[of + df as usize];
                for &dg in sg.cell_dofs_of(cell) {
                    row.push(og + dg);
                }
            }
        }
    }
    let mut row_ptr = Vec::with_capacity(slab + 1);
    let mut cols = Vec::new();
    row_ptr.push(0);
    for mut row in rows {
        row.sort_unstable();
        row.dedup();
        cols.extend_from_slice(&row);
        row_ptr.push(cols.len());
    }
    (row_ptr, cols)
}

#[inline]
fn pattern_find(row_ptr: &[usize], cols: &[u32], r: usize, c: u32) -> usize {
    let lo = row_ptr[r];
    let hi = row_ptr[r + 1];
    lo + cols[lo..hi].binary_search(&c).expect("entry must be in the pattern")
}

struct CellGeom {
    /// Inverse transpose Jacobian, mapping reference to physical gradients.
    invjt: [[f64; 2]; 2],
    det: f64,
}

fn cell_geometry(mesh: &MeshLevel, cell: usize) -> CellGeom {
    let j = mesh.jacobian(cell);
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let invjt = [
        [j[1][1] / det, -j[1][0] / det],
        [-j[0][1] / det, j[0][0] / det],
    ];
    CellGeom { invjt, det }
}

#[inline]
fn phys_grad(geom: &CellGeom, g: [f64; 2]) -> [f64; 2] {
    [
        geom.invjt[0][0] * g[0] + geom.invjt[0][1] * g[1],
        geom.invjt[1][0] * g[0] + geom.invjt[1][1] * g[1],
    ]
}

/// Scalar mass and stiffness values over a shared adjacency pattern.
fn assemble_scalar_mass_stiffness(
    mesh: &MeshLevel,
    comp: &ScalarSpatialSpace,
) -> Result<(Vec<usize>, Vec<u32>, Vec<f64>, Vec<f64>)> {
    let nd = comp.ndofs_per_cell;
    let rule = triangle_rule(2 * comp.k + 2)?;
    let pts: Vec<[f64; 2]> = rule.iter().map(|&(p, _)| p).collect();
    let tab = comp.basis.tabulate(&pts);

    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); comp.ndofs];
    for cell in 0..comp.mesh_cells {
        for &di in comp.cell_dofs_of(cell) {
            rows[di as usize].extend_from_slice(comp.cell_dofs_of(cell));
        }
    }
    let mut row_ptr = Vec::with_capacity(comp.ndofs + 1);
    let mut cols = Vec::new();
    row_ptr.push(0);
    for mut row in rows {
        row.sort_unstable();
        row.dedup();
        cols.extend_from_slice(&row);
        row_ptr.push(cols.len());
    }

    let nnz = cols.len();
    let mut mass = vec![0.0; nnz];
    let mut stiff = vec![0.0; nnz];
    let mut mloc = vec![0.0; nd * nd];
    let mut kloc = vec![0.0; nd * nd];
    let mut gp = vec![[0.0; 2]; nd];
    for cell in 0..comp.mesh_cells {
        let geom = cell_geometry(mesh, cell);
        mloc.fill(0.0);
        kloc.fill(0.0);
        for (g, &(_, w)) in rule.iter().enumerate() {
            let phi = tab.values(g);
            for (i, gr) in tab.grads(g).iter().enumerate() {
                gp[i] = phys_grad(&geom, *gr);
            }
            let wd = w * geom.det;
            for i in 0..nd {
                for j in 0..nd {
                    mloc[i * nd + j] += wd * phi[i] * phi[j];
                    kloc[i * nd + j] += wd * (gp[i][0] * gp[j][0] + gp[i][1] * gp[j][1]);
                }
            }
        }
        let dofs = comp.cell_dofs_of(cell);
        for (i, &di) in dofs.iter().enumerate() {
            for (j, &dj) in dofs.iter().enumerate() {
                let pos = pattern_find(&row_ptr, &cols, di as usize, dj);
                mass[pos] += mloc[i * nd + j];
                stiff[pos] += kloc[i * nd + j];
            }
        }
    }
    Ok((row_ptr, cols, mass, stiff))
}

/// Temporal coefficient matrices, indexed [b * nq + a].
fn temporal_coefficients(space: &SpaceTimeSpace) -> (Vec<f64>, Vec<f64>) {
    let ts = &space.temporal;
    let nq = ts.n_nodes();
    let dt = ts.partition.dt();
    let mut cmass = vec![0.0; nq * nq];
    let mut cstiff = vec![0.0; nq * nq];
    for b in 0..nq {
        for a in 0..nq {
            cmass[b * nq + a] = ts.dmass[b * nq + a] + ts.at0[a] * ts.at0[b];
            cstiff[b * nq + a] = dt * ts.mass[b * nq + a];
        }
    }
    (cmass, cstiff)
}

fn alloc_nnz(nq: usize, n_elements: usize, s_full: usize) -> u64 {
    (nq * nq) as u64 * (3 * n_elements - 2) as u64 * s_full as u64
}

/// Space-time heat operator and right-hand side for initial data `u0`
/// (coefficients in the scalar spatial space). Natural boundaries: no
/// constrained rows.
pub fn assemble_heat(
    mesh: &MeshLevel,
    space: &SpaceTimeSpace,
    u0: &[f64],
) -> Result<(SpaceTimeOperator, Vec<f64>)> {
    if space.n_fields() != 1 {
        return Err(Error::InvalidConfig(
            "heat assembly needs a scalar space".into(),
        ));
    }
    let comp = &space.components[0];
    if u0.len() != comp.ndofs {
        return Err(Error::InvalidConfig(
            "initial data length must match the spatial space".into(),
        ));
    }
    let (row_ptr, cols, mass, stiff) = assemble_scalar_mass_stiffness(mesh, comp)?;
    let (cmass, cstiff) = temporal_coefficients(space);
    let nq = space.temporal.n_nodes();
    let n_elements = space.temporal.partition.n;
    let nnz = cols.len();

    let mut base = Vec::with_capacity(nq * nq);
    for ba in 0..nq * nq {
        let (cm, cs) = (cmass[ba], cstiff[ba]);
        base.push(
            mass.iter()
                .zip(&stiff)
                .map(|(m, k)| cm * m + cs * k)
                .collect::<Vec<f64>>(),
        );
    }
    let mut sub = CsrMatrix::from_pattern(comp.ndofs, comp.ndofs, row_ptr.clone(), cols.clone());
    sub.vals = mass;

    let mut rhs = vec![0.0; space.total_dofs];
    let mut tmp = vec![0.0; comp.ndofs];
    sub.matvec(u0, &mut tmp);
    for (b, &w) in space.temporal.at0.iter().enumerate() {
        if w != 0.0 {
            let s = space.slab_start(0, b);
            for (r, t) in rhs[s..s + comp.ndofs].iter_mut().zip(&tmp) {
                *r = w * t;
            }
        }
    }

    let meta = OperatorMeta {
        s_full: nnz,
        s_stored: nnz,
        s_adv: 0,
        s_sub: nnz,
        alloc_nnz: alloc_nnz(nq, n_elements, nnz),
        stored_nnz: (nq * nq * nnz + nnz) as u64,
    };
    Ok((
        SpaceTimeOperator {
            nq,
            n_elements,
            slab: space.slab_size,
            offsets: space.offsets.clone(),
            row_ptr,
            cols,
            base,
            adv: None,
            sub,
            at0: space.temporal.at0.clone(),
            constrained: Vec::new(),
            pressure: None,
            meta,
        },
        rhs,
    ))
}

/// Field indices of the flow system.
const VX: usize = 0;
const VY: usize = 1;
const PR: usize = 2;

/// Assembly context for the Navier-Stokes system on one level. Holds the
/// unconstrained mass/stationary value arrays for residual evaluation and
/// produces constraint-baked Jacobians.
pub struct NsSystem {
    pub space: SpaceTimeSpace,
    pub reynolds: f64,
    pub bcs: BoundaryConditions,
    /// Initial velocity as a slab-sized vector (pressure part ignored).
    pub initial: Vec<f64>,
    dt: f64,
    nq: usize,
    n_elements: usize,
    slab: usize,
    /// Slab pattern (velocity-velocity, velocity-pressure, pressure-velocity).
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    mass_vals: Vec<f64>,
    stiff_vals: Vec<f64>,
    /// Velocity-velocity advection pattern.
    adv_row_ptr: Vec<usize>,
    adv_cols: Vec<u32>,
    /// Scatter positions into the advection pattern, per cell, laid out
    /// [(comp_i * nd + i) * 2 nd + comp_j * nd + j].
    adv_scatter: Vec<u32>,
    sub: CsrMatrix,
    cell_geom: Vec<CellGeom>,
    /// Trilinear-order spatial rule and velocity tabulation.
    tri_rule: Vec<([f64; 2], f64)>,
    tri_tab: crate::spaces::basis::TriTabulation,
    /// Trilinear-order temporal rule with basis values per point.
    tq: Vec<(f64, f64)>,
    theta_q: Vec<Vec<f64>>,
    cmass: Vec<f64>,
    cstiff: Vec<f64>,
    constrained: Vec<u32>,
    constrained_mask: Vec<bool>,
    pp_nnz: usize,
}

impl NsSystem {
    pub fn new(
        mesh: &MeshLevel,
        space: SpaceTimeSpace,
        reynolds: f64,
        bcs: BoundaryConditions,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if reynolds <= 0.0 {
            return Err(Error::InvalidConfig("Reynolds number must be positive".into()));
        }
        if space.n_fields() != 3 {
            return Err(Error::InvalidConfig(
                "flow assembly needs velocity-x, velocity-y, pressure".into(),
            ));
        }
        let kv = space.components[VX].k;
        if space.components[VY].k != kv || space.components[PR].k + 1 != kv {
            return Err(Error::InvalidConfig(
                "flow spaces must be Taylor-Hood: velocity degree = pressure degree + 1".into(),
            ));
        }
        if initial.len() != space.slab_size {
            return Err(Error::InvalidConfig("initial slab has the wrong length".into()));
        }
        if !bcs.constraints[PR].is_empty() {
            return Err(Error::InvalidConfig("pressure must stay unconstrained".into()));
        }

        let vsp = &space.components[VX];
        let psp = &space.components[PR];
        let ncells = vsp.mesh_cells;
        let (ndv, ndp) = (vsp.ndofs_per_cell, psp.ndofs_per_cell);

        let (row_ptr, cols) = build_slab_pattern(
            &space,
            &[(VX, VX), (VX, VY), (VY, VX), (VY, VY), (VX, PR), (VY, PR), (PR, VX), (PR, VY)],
        );
        let (pp_ptr, _) = build_slab_pattern(&space, &[(PR, PR)]);
        let pp_nnz = pp_ptr[space.slab_size];
        let (adv_row_ptr, adv_cols) =
            build_slab_pattern(&space, &[(VX, VX), (VX, VY), (VY, VX), (VY, VY)]);

        // bilinear-order rule covers mass, viscous, and mixed terms
        let bil_rule = triangle_rule(2 * kv + 2)?;
        let bil_pts: Vec<[f64; 2]> = bil_rule.iter().map(|&(p, _)| p).collect();
        let vtab = vsp.basis.tabulate(&bil_pts);
        let ptab = psp.basis.tabulate(&bil_pts);

        let nnz = cols.len();
        let mut mass_vals = vec![0.0; nnz];
        let mut stiff_vals = vec![0.0; nnz];
        let mut cell_geom = Vec::with_capacity(ncells);
        let mut mloc = vec![0.0; ndv * ndv];
        let mut kloc = vec![0.0; ndv * ndv];
        let mut bloc = vec![0.0; 2 * ndv * ndp];
        let mut gp = vec![[0.0; 2]; ndv];
        let ov = [space.offsets[VX] as u32, space.offsets[VY] as u32];
        let op = space.offsets[PR] as u32;
        for cell in 0..ncells {
            let geom = cell_geometry(mesh, cell);
            mloc.fill(0.0);
            kloc.fill(0.0);
            bloc.fill(0.0);
            for (g, &(_, w)) in bil_rule.iter().enumerate() {
                let phi = vtab.values(g);
                let chi = ptab.values(g);
                for (i, gr) in vtab.grads(g).iter().enumerate() {
                    gp[i] = phys_grad(&geom, *gr);
                }
                let wd = w * geom.det;
                for i in 0..ndv {
                    for j in 0..ndv {
                        mloc[i * ndv + j] += wd * phi[i] * phi[j];
                        kloc[i * ndv + j] += wd * (gp[i][0] * gp[j][0] + gp[i][1] * gp[j][1]);
                    }
                    for j in 0..ndp {
                        // +(Phi, div psi): component c picks d_c psi_i
                        bloc[(i * ndp + j) * 2] += wd * chi[j] * gp[i][0];
                        bloc[(i * ndp + j) * 2 + 1] += wd * chi[j] * gp[i][1];
                    }
                }
            }
            let vdofs = vsp.cell_dofs_of(cell);
            let pdofs = psp.cell_dofs_of(cell);
            for (i, &di) in vdofs.iter().enumerate() {
                for (j, &dj) in vdofs.iter().enumerate() {
                    for c in 0..2 {
                        let pos = pattern_find(
                            &row_ptr,
                            &cols,
                            (ov[c] + di) as usize,
                            ov[c] + dj,
                        );
                        mass_vals[pos] += mloc[i * ndv + j];
                        stiff_vals[pos] += kloc[i * ndv + j];
                    }
                }
                for (j, &dj) in pdofs.iter().enumerate() {
                    for c in 0..2 {
                        let b = bloc[(i * ndp + j) * 2 + c];
                        // gradient block, velocity row
                        let pos = pattern_find(&row_ptr, &cols, (ov[c] + di) as usize, op + dj);
                        stiff_vals[pos] += b;
                        // divergence block, exactly the negative transpose
                        let pos =
                            pattern_find(&row_ptr, &cols, (op + dj) as usize, ov[c] + di);
                        stiff_vals[pos] -= b;
                    }
                }
            }
            cell_geom.push(geom);
        }

        // advection scatter positions, cached once per level
        let mut adv_scatter = vec![0u32; ncells * 4 * ndv * ndv];
        for cell in 0..ncells {
            let vdofs = vsp.cell_dofs_of(cell);
            let base = cell * 4 * ndv * ndv;
            for ci in 0..2 {
                for (i, &di) in vdofs.iter().enumerate() {
                    for cj in 0..2 {
                        for (j, &dj) in vdofs.iter().enumerate() {
                            let pos = pattern_find(
                                &adv_row_ptr,
                                &adv_cols,
                                (ov[ci] + di) as usize,
                                ov[cj] + dj,
                            );
                            adv_scatter
                                [base + (ci * ndv + i) * 2 * ndv + cj * ndv + j] = pos as u32;
                        }
                    }
                }
            }
        }

        // velocity mass for jump terms
        let (sub_ptr, sub_cols) = build_slab_pattern(&space, &[(VX, VX), (VY, VY)]);
        let mut sub_vals = vec![0.0; sub_cols.len()];
        for r in 0..space.slab_size {
            for p in sub_ptr[r]..sub_ptr[r + 1] {
                let pos = pattern_find(&row_ptr, &cols, r, sub_cols[p]);
                sub_vals[p] = mass_vals[pos];
            }
        }
        let mut sub = CsrMatrix::from_pattern(
            space.slab_size,
            space.slab_size,
            sub_ptr,
            sub_cols,
        );
        sub.vals = sub_vals;

        let tq = interval_rule(3 * space.temporal.q + 1)?;
        let theta_q: Vec<Vec<f64>> = tq
            .iter()
            .map(|&(t, _)| {
                let mut v = vec![0.0; space.temporal.n_nodes()];
                lagrange_values(&space.temporal.nodes, t, &mut v);
                v
            })
            .collect();
        let tri_rule = triangle_rule(3 * kv)?;
        let tri_pts: Vec<[f64; 2]> = tri_rule.iter().map(|&(p, _)| p).collect();
        let tri_tab = vsp.basis.tabulate(&tri_pts);

        let (cmass, cstiff) = temporal_coefficients(&space);
        let constrained = bcs.constrained_slab_rows(&space);
        let mut constrained_mask = vec![false; space.slab_size];
        for &r in &constrained {
            constrained_mask[r as usize] = true;
        }

        Ok(NsSystem {
            dt: space.temporal.partition.dt(),
            nq: space.temporal.n_nodes(),
            n_elements: space.temporal.partition.n,
            slab: space.slab_size,
            space,
            reynolds,
            bcs,
            initial,
            row_ptr,
            cols,
            mass_vals,
            stiff_vals,
            adv_row_ptr,
            adv_cols,
            adv_scatter,
            sub,
            cell_geom,
            tri_rule,
            tri_tab,
            tq,
            theta_q,
            cmass,
            cstiff,
            constrained,
            constrained_mask,
            pp_nnz,
        })
    }

    pub fn total_dofs(&self) -> usize {
        self.space.total_dofs
    }

    /// Size metadata of the Jacobian pattern; identical to the meta carried
    /// by any assembled Jacobian of this system.
    pub fn operator_meta(&self) -> OperatorMeta {
        let nnz = self.cols.len();
        let s_adv = self.adv_cols.len();
        let s_full = nnz + self.pp_nnz;
        OperatorMeta {
            s_full,
            s_stored: nnz,
            s_adv,
            s_sub: self.sub.nnz(),
            alloc_nnz: alloc_nnz(self.nq, self.n_elements, s_full),
            stored_nnz: (self.nq * self.nq * (nnz + self.n_elements * s_adv) + self.sub.nnz())
                as u64,
        }
    }

    /// Nonlinear residual F(state); constrained rows report zero.
    pub fn residual(&self, state: &[f64], out: &mut [f64]) {
        debug_assert_eq!(state.len(), self.total_dofs());
        debug_assert_eq!(out.len(), self.total_dofs());
        out.fill(0.0);
        let nq = self.nq;
        let slab = self.slab;
        let mut tmpm = vec![0.0; slab];
        let mut tmps = vec![0.0; slab];

        for n in 0..self.n_elements {
            for a in 0..nq {
                let xs = (n * nq + a) * slab;
                let xa = &state[xs..xs + slab];
                tmpm.fill(0.0);
                tmps.fill(0.0);
                csr_apply_add(&self.row_ptr, &self.cols, &self.mass_vals, 1.0, xa, &mut tmpm);
                csr_apply_add(&self.row_ptr, &self.cols, &self.stiff_vals, 1.0, xa, &mut tmps);
                for b in 0..nq {
                    let (cm, cs) = (self.cmass[b * nq + a], self.cstiff[b * nq + a]);
                    let ys = (n * nq + b) * slab;
                    for ((o, m), s) in out[ys..ys + slab].iter_mut().zip(&tmpm).zip(&tmps) {
                        *o += cm * m + cs * s;
                    }
                }
            }
            // jump from the previous element (or the initial data)
            let prev: &[f64] = if n == 0 {
                &self.initial
            } else {
                let xs = (n * nq - 1) * slab;
                &state[xs..xs + slab]
            };
            self.sub.matvec(prev, &mut tmpm);
            for b in 0..nq {
                let w = self.space.temporal.at0[b];
                if w != 0.0 {
                    let ys = (n * nq + b) * slab;
                    for (o, m) in out[ys..ys + slab].iter_mut().zip(&tmpm) {
                        *o -= w * m;
                    }
                }
            }
        }

        self.advection_residual(state, out);

        for s in 0..self.n_elements * nq {
            let base = s * slab;
            for &r in &self.constrained {
                out[base + r as usize] = 0.0;
            }
        }
    }

    fn advection_residual(&self, state: &[f64], out: &mut [f64]) {
        let vsp = &self.space.components[VX];
        let ndv = vsp.ndofs_per_cell;
        let nq = self.nq;
        let slab = self.slab;
        let (oux, ouy) = (self.space.offsets[VX], self.space.offsets[VY]);
        let mut un = vec![0.0; ndv];
        let mut vn = vec![0.0; ndv];
        let mut gp = vec![[0.0; 2]; ndv];
        let mut rx = vec![0.0; ndv];
        let mut ry = vec![0.0; ndv];
        for n in 0..self.n_elements {
            for (g, &(_, wt)) in self.tq.iter().enumerate() {
                let theta = &self.theta_q[g];
                for cell in 0..vsp.mesh_cells {
                    let geom = &self.cell_geom[cell];
                    let vdofs = vsp.cell_dofs_of(cell);
                    for (i, &d) in vdofs.iter().enumerate() {
                        let (mut u, mut v) = (0.0, 0.0);
                        for (c, &th) in theta.iter().enumerate() {
                            let base = (n * nq + c) * slab;
                            u += th * state[base + oux + d as usize];
                            v += th * state[base + ouy + d as usize];
                        }
                        un[i] = u;
                        vn[i] = v;
                    }
                    rx.fill(0.0);
                    ry.fill(0.0);
                    for (gx, &(_, w)) in self.tri_rule.iter().enumerate() {
                        let phi = self.tri_tab.values(gx);
                        for (i, gr) in self.tri_tab.grads(gx).iter().enumerate() {
                            gp[i] = phys_grad(geom, *gr);
                        }
                        let (mut u, mut v) = (0.0, 0.0);
                        let mut du = [0.0; 2];
                        let mut dv = [0.0; 2];
                        for i in 0..ndv {
                            u += un[i] * phi[i];
                            v += vn[i] * phi[i];
                            du[0] += un[i] * gp[i][0];
                            du[1] += un[i] * gp[i][1];
                            dv[0] += vn[i] * gp[i][0];
                            dv[1] += vn[i] * gp[i][1];
                        }
                        let wd = w * geom.det * self.reynolds;
                        let ax = wd * (u * du[0] + v * du[1]);
                        let ay = wd * (u * dv[0] + v * dv[1]);
                        for i in 0..ndv {
                            rx[i] += phi[i] * ax;
                            ry[i] += phi[i] * ay;
                        }
                    }
                    for b in 0..nq {
                        let coef = self.dt * wt * theta[b];
                        if coef == 0.0 {
                            continue;
                        }
                        let base = (n * nq + b) * slab;
                        for (i, &d) in vdofs.iter().enumerate() {
                            out[base + oux + d as usize] += coef * rx[i];
                            out[base + ouy + d as usize] += coef * ry[i];
                        }
                    }
                }
            }
        }
    }

    /// Jacobian at `state`, constraint rows as identity, columns zeroed.
    pub fn jacobian(&self, state: &[f64]) -> SpaceTimeOperator {
        let nq = self.nq;
        let nnz = self.cols.len();
        let mut base = Vec::with_capacity(nq * nq);
        for ba in 0..nq * nq {
            let (cm, cs) = (self.cmass[ba], self.cstiff[ba]);
            base.push(
                self.mass_vals
                    .iter()
                    .zip(&self.stiff_vals)
                    .map(|(m, k)| cm * m + cs * k)
                    .collect::<Vec<f64>>(),
            );
        }

        let s_adv = self.adv_cols.len();
        let mut adv_vals: Vec<Vec<Vec<f64>>> = (0..self.n_elements)
            .map(|_| (0..nq * nq).map(|_| vec![0.0; s_adv]).collect())
            .collect();
        self.advection_jacobian(state, &mut adv_vals);

        let mut op = SpaceTimeOperator {
            nq,
            n_elements: self.n_elements,
            slab: self.slab,
            offsets: self.space.offsets.clone(),
            row_ptr: self.row_ptr.clone(),
            cols: self.cols.clone(),
            base,
            adv: Some(AdvBlocks {
                row_ptr: self.adv_row_ptr.clone(),
                cols: self.adv_cols.clone(),
                vals: adv_vals,
            }),
            sub: self.sub.clone(),
            at0: self.space.temporal.at0.clone(),
            constrained: self.constrained.clone(),
            pressure: Some((
                self.space.offsets[PR],
                self.space.components[PR].ndofs,
            )),
            meta: OperatorMeta::default(),
        };
        bake_constraints(&mut op, &self.constrained, &self.constrained_mask);

        let s_full = nnz + self.pp_nnz;
        op.meta = OperatorMeta {
            s_full,
            s_stored: nnz,
            s_adv,
            s_sub: self.sub.nnz(),
            alloc_nnz: alloc_nnz(nq, self.n_elements, s_full),
            stored_nnz: (nq * nq * (nnz + self.n_elements * s_adv) + self.sub.nnz()) as u64,
        };
        op
    }

    fn advection_jacobian(&self, state: &[f64], adv_vals: &mut [Vec<Vec<f64>>]) {
        let vsp = &self.space.components[VX];
        let ndv = vsp.ndofs_per_cell;
        let nq = self.nq;
        let slab = self.slab;
        let (oux, ouy) = (self.space.offsets[VX], self.space.offsets[VY]);
        let mut un = vec![0.0; ndv];
        let mut vn = vec![0.0; ndv];
        let mut gp = vec![[0.0; 2]; ndv];
        let mut nloc = vec![0.0; 4 * ndv * ndv];
        // coefficient dt w_g theta_a theta_b per temporal quadrature point
        let cab: Vec<Vec<f64>> = self
            .tq
            .iter()
            .enumerate()
            .map(|(g, &(_, wt))| {
                let th = &self.theta_q[g];
                let mut c = vec![0.0; nq * nq];
                for b in 0..nq {
                    for a in 0..nq {
                        c[b * nq + a] = self.dt * wt * th[a] * th[b];
                    }
                }
                c
            })
            .collect();

        for (n, adv_n) in adv_vals.iter_mut().enumerate() {
            for (g, coefs) in cab.iter().enumerate() {
                let theta = &self.theta_q[g];
                for cell in 0..vsp.mesh_cells {
                    let geom = &self.cell_geom[cell];
                    let vdofs = vsp.cell_dofs_of(cell);
                    for (i, &d) in vdofs.iter().enumerate() {
                        let (mut u, mut v) = (0.0, 0.0);
                        for (c, &th) in theta.iter().enumerate() {
                            let base = (n * nq + c) * slab;
                            u += th * state[base + oux + d as usize];
                            v += th * state[base + ouy + d as usize];
                        }
                        un[i] = u;
                        vn[i] = v;
                    }
                    nloc.fill(0.0);
                    for (gx, &(_, w)) in self.tri_rule.iter().enumerate() {
                        let phi = self.tri_tab.values(gx);
                        for (i, gr) in self.tri_tab.grads(gx).iter().enumerate() {
                            gp[i] = phys_grad(geom, *gr);
                        }
                        let (mut u, mut v) = (0.0, 0.0);
                        let mut du = [0.0; 2];
                        let mut dv = [0.0; 2];
                        for i in 0..ndv {
                            u += un[i] * phi[i];
                            v += vn[i] * phi[i];
                            du[0] += un[i] * gp[i][0];
                            du[1] += un[i] * gp[i][1];
                            dv[0] += vn[i] * gp[i][0];
                            dv[1] += vn[i] * gp[i][1];
                        }
                        let wd = w * geom.det * self.reynolds;
                        for i in 0..ndv {
                            let wphi = wd * phi[i];
                            for j in 0..ndv {
                                let conv = u * gp[j][0] + v * gp[j][1];
                                // blocks: (x, x), (x, y), (y, x), (y, y)
                                nloc[i * ndv + j] += wphi * (conv + phi[j] * du[0]);
                                nloc[ndv * ndv + i * ndv + j] += wphi * phi[j] * du[1];
                                nloc[2 * ndv * ndv + i * ndv + j] += wphi * phi[j] * dv[0];
                                nloc[3 * ndv * ndv + i * ndv + j] +=
                                    wphi * (conv + phi[j] * dv[1]);
                            }
                        }
                    }
                    let sbase = cell * 4 * ndv * ndv;
                    for ci in 0..2 {
                        for i in 0..ndv {
                            for cj in 0..2 {
                                for j in 0..ndv {
                                    let v = nloc[(ci * 2 + cj) * ndv * ndv + i * ndv + j];
                                    if v == 0.0 {
                                        continue;
                                    }
                                    let pos = self.adv_scatter
                                        [sbase + (ci * ndv + i) * 2 * ndv + cj * ndv + j]
                                        as usize;
                                    for (ba, coef) in coefs.iter().enumerate() {
                                        adv_n[ba][pos] += coef * v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Replace constrained rows by identity and zero the matching columns in all
/// value arrays of an operator.
fn bake_constraints(op: &mut SpaceTimeOperator, constrained: &[u32], mask: &[bool]) {
    if constrained.is_empty() {
        return;
    }
    let nq = op.nq;
    // columns first so the later identity diagonal survives
    for ba in 0..nq * nq {
        let vals = &mut op.base[ba];
        for (p, c) in op.cols.iter().enumerate() {
            if mask[*c as usize] {
                vals[p] = 0.0;
            }
        }
    }
    if let Some(adv) = &mut op.adv {
        for adv_n in &mut adv.vals {
            for vals in adv_n.iter_mut() {
                for (p, c) in adv.cols.iter().enumerate() {
                    if mask[*c as usize] {
                        vals[p] = 0.0;
                    }
                }
            }
        }
    }
    {
        let sub = &mut op.sub;
        for r in 0..sub.nrows {
            let lo = sub.row_ptr[r];
            let hi = sub.row_ptr[r + 1];
            let row_constrained = mask[r];
            for p in lo..hi {
                if row_constrained || mask[sub.cols[p] as usize] {
                    sub.vals[p] = 0.0;
                }
            }
        }
    }
    for &r in constrained {
        let r = r as usize;
        let lo = op.row_ptr[r];
        let hi = op.row_ptr[r + 1];
        for ba in 0..nq * nq {
            let vals = &mut op.base[ba];
            vals[lo..hi].fill(0.0);
        }
        if let Some(adv) = &mut op.adv {
            let alo = adv.row_ptr[r];
            let ahi = adv.row_ptr[r + 1];
            for adv_n in &mut adv.vals {
                for vals in adv_n.iter_mut() {
                    vals[alo..ahi].fill(0.0);
                }
            }
        }
        let dpos = op.slab_find(r, r as u32).expect("diagonal entry in pattern");
        for b in 0..nq {
            op.base[b * nq + b][dpos] = 1.0;
        }
    }
}

/// Impose Dirichlet rows on an assembled operator: identity rows, zeroed
/// columns, and (when given) the constraint values written into the
/// right-hand side at every temporal DoF.
pub fn apply_dirichlet(
    op: &mut SpaceTimeOperator,
    rhs: Option<&mut [f64]>,
    space: &SpaceTimeSpace,
    bcs: &BoundaryConditions,
) {
    let constrained = bcs.constrained_slab_rows(space);
    let mut mask = vec![false; space.slab_size];
    for &r in &constrained {
        mask[r as usize] = true;
    }
    bake_constraints(op, &constrained, &mask);
    op.constrained = constrained;
    if let Some(rhs) = rhs {
        for s in 0..space.temporal.n_time_dofs() {
            let base = s * space.slab_size;
            for (f, cs) in bcs.constraints.iter().enumerate() {
                for (d, v) in cs {
                    rhs[base + space.offsets[f] + *d as usize] = *v;
                }
            }
        }
    }
}

/// Convenience wrapper: build the context and evaluate one residual.
pub fn assemble_ns_residual(
    mesh: &MeshLevel,
    space: &SpaceTimeSpace,
    state: &[f64],
    reynolds: f64,
    bcs: &BoundaryConditions,
    initial: &[f64],
) -> Result<Vec<f64>> {
    let sys = NsSystem::new(mesh, space.clone(), reynolds, bcs.clone(), initial.to_vec())?;
    let mut out = vec![0.0; sys.total_dofs()];
    sys.residual(state, &mut out);
    Ok(out)
}

/// Convenience wrapper: build the context and assemble one Jacobian.
pub fn assemble_ns_jacobian(
    mesh: &MeshLevel,
    space: &SpaceTimeSpace,
    state: &[f64],
    reynolds: f64,
    bcs: &BoundaryConditions,
    initial: &[f64],
) -> Result<SpaceTimeOperator> {
    let sys = NsSystem::new(mesh, space.clone(), reynolds, bcs.clone(), initial.to_vec())?;
    Ok(sys.jacobian(state))
}

/// Nodal interpolation of per-field closed forms onto one slab.
pub fn interpolate_initial<F>(space: &SpaceTimeSpace, f: F) -> Vec<f64>
where
    F: Fn([f64; 2], usize) -> f64,
{
    let mut out = vec![0.0; space.slab_size];
    for (fi, comp) in space.components.iter().enumerate() {
        let off = space.offsets[fi];
        for (d, &p) in comp.dof_coords.iter().enumerate() {
            out[off + d] = f(p, fi);
        }
    }
    out
}

/// Space-time L2 error over the listed fields:
/// sqrt(int_0^T int_Omega sum_f (U_f - exact_f)^2).
pub fn spacetime_l2_error<F>(
    mesh: &MeshLevel,
    space: &SpaceTimeSpace,
    state: &[f64],
    fields: &[usize],
    exact: F,
) -> Result<f64>
where
    F: Fn(f64, [f64; 2], usize) -> f64,
{
    let q = space.temporal.q;
    let trule = interval_rule((q + 4).max(8))?;
    let kmax = fields.iter().map(|&f| space.components[f].k).max().unwrap_or(1);
    let xrule = triangle_rule(2 * kmax + 2)?;
    let pts: Vec<[f64; 2]> = xrule.iter().map(|&(p, _)| p).collect();
    let tabs: Vec<_> = fields
        .iter()
        .map(|&f| space.components[f].basis.tabulate(&pts))
        .collect();

    let nq = space.temporal.n_nodes();
    let dt = space.temporal.partition.dt();
    let mut theta = vec![0.0; nq];
    let mut acc = 0.0;
    for n in 0..space.temporal.partition.n {
        let (t0, _) = space.temporal.partition.element(n);
        for &(tau, wt) in &trule {
            let t = t0 + tau * dt;
            space.temporal.eval(tau, &mut theta);
            for cell in 0..mesh.n_cells() {
                let geom = cell_geometry(mesh, cell);
                for (g, &(xi, wx)) in xrule.iter().enumerate() {
                    let xp = mesh.ref_to_physical(cell, xi);
                    let mut diff2 = 0.0;
                    for (fi, &f) in fields.iter().enumerate() {
                        let comp = &space.components[f];
                        let phi = tabs[fi].values(g);
                        let mut val = 0.0;
                        for (a, &th) in theta.iter().enumerate() {
                            if th == 0.0 {
                                continue;
                            }
                            let base = space.slab_start(n, a) + space.offsets[f];
                            let mut s = 0.0;
                            for (i, &d) in comp.cell_dofs_of(cell).iter().enumerate() {
                                s += state[base + d as usize] * phi[i];
                            }
                            val += th * s;
                        }
                        let e = val - exact(t, xp, f);
                        diff2 += e * e;
                    }
                    acc += dt * wt * geom.det * wx * diff2;
                }
            }
        }
    }
    Ok(acc.sqrt())
}
