//! Finite element spaces: continuous Lagrange of degree k on triangles,
//! discontinuous Lagrange of degree q on time intervals, and their tensor
//! product with the global degree-of-freedom ordering
//! (time element n, time node a, field f, spatial DoF i), n outermost.

pub mod basis;
pub mod quadrature;

use crate::mesh::{MeshLevel, Side, TimePartition};
use basis::{interval_nodes, lagrange_derivatives, lagrange_values, triangle_nodes, TriBasis};
use quadrature::gauss_legendre;

/// Scalar continuous Lagrange space of degree k on one mesh level.
///
/// Global DoF ids: vertex v -> v, then edge e slot j -> V + e(k-1) + j with
/// slots ordered along the edge from its lower to its higher vertex id, then
/// cell-interior DoFs. Snapshot of everything assembly needs; holds no mesh
/// reference.
#[derive(Debug, Clone)]
pub struct ScalarSpatialSpace {
    pub k: usize,
    pub ndofs: usize,
    pub ndofs_per_cell: usize,
    /// ncells x ndofs_per_cell global ids, local order matching
    /// [`basis::triangle_nodes`].
    pub cell_dofs: Vec<u32>,
    pub dof_coords: Vec<[f64; 2]>,
    /// Per-side boundary DoF ids, ascending; corner DoFs appear on both
    /// adjacent sides.
    pub boundary_dofs: [Vec<u32>; 4],
    pub basis: TriBasis,
    /// Mesh identity for cross-checks.
    pub mesh_level: u32,
    pub mesh_cells: usize,
}

/// Continuous Lagrange space over a mesh level.
pub fn build_scalar_space(mesh: &MeshLevel, k: usize) -> ScalarSpatialSpace {
    assert!((1..=3).contains(&k), "spatial degree must be 1..=3");
    let v = mesh.n_vertices();
    let e = mesh.n_edges();
    let c = mesh.n_cells();
    let per_edge = k - 1;
    let per_cell_int = per_edge * k.saturating_sub(2) / 2;
    let ndofs = v + per_edge * e + per_cell_int * c;
    let ndofs_per_cell = (k + 1) * (k + 2) / 2;
    let edge_base = v;
    let cell_base = v + per_edge * e;

    let ref_nodes = triangle_nodes(k);
    let mut cell_dofs = Vec::with_capacity(c * ndofs_per_cell);
    let mut dof_coords = vec![[f64::NAN; 2]; ndofs];
    for (cid, cell) in mesh.cells.iter().enumerate() {
        for &vid in cell {
            cell_dofs.push(vid);
            dof_coords[vid as usize] = mesh.vertices[vid as usize];
        }
        for (le, (a, b)) in [(0usize, 1usize), (1, 2), (2, 0)].into_iter().enumerate() {
            let eid = mesh.cell_edges[cid][le] as usize;
            let (ga, gb) = (cell[a], cell[b]);
            for j in 0..per_edge {
                // slots run along the global low -> high direction
                let slot = if ga < gb { j } else { per_edge - 1 - j };
                let id = (edge_base + eid * per_edge + slot) as u32;
                cell_dofs.push(id);
                let t = (j + 1) as f64 / k as f64;
                let pa = mesh.vertices[ga as usize];
                let pb = mesh.vertices[gb as usize];
                dof_coords[id as usize] = [
                    pa[0] + t * (pb[0] - pa[0]),
                    pa[1] + t * (pb[1] - pa[1]),
                ];
            }
        }
        for j in 0..per_cell_int {
            let id = (cell_base + cid * per_cell_int + j) as u32;
            cell_dofs.push(id);
            let local = ndofs_per_cell - per_cell_int + j;
            dof_coords[id as usize] = mesh.ref_to_physical(cid, ref_nodes[local]);
        }
    }
    debug_assert!(dof_coords.iter().all(|p| !p[0].is_nan()));

    let tol = 1e-12;
    let mut boundary_dofs: [Vec<u32>; 4] = Default::default();
    for (d, p) in dof_coords.iter().enumerate().take(v + per_edge * e) {
        // vertex and edge DoFs can sit on the boundary; cell DoFs cannot
        if p[1].abs() < tol {
            boundary_dofs[Side::Bottom as usize].push(d as u32);
        }
        if (p[0] - 1.0).abs() < tol {
            boundary_dofs[Side::Right as usize].push(d as u32);
        }
        if (p[1] - 1.0).abs() < tol {
            boundary_dofs[Side::Top as usize].push(d as u32);
        }
        if p[0].abs() < tol {
            boundary_dofs[Side::Left as usize].push(d as u32);
        }
    }

    ScalarSpatialSpace {
        k,
        ndofs,
        ndofs_per_cell,
        cell_dofs,
        dof_coords,
        boundary_dofs,
        basis: TriBasis::new(k),
        mesh_level: mesh.level,
        mesh_cells: c,
    }
}

impl ScalarSpatialSpace {
    pub fn cell_dofs_of(&self, cell: usize) -> &[u32] {
        &self.cell_dofs[cell * self.ndofs_per_cell..(cell + 1) * self.ndofs_per_cell]
    }

    /// All boundary DoFs (union over sides), ascending and deduplicated.
    pub fn all_boundary_dofs(&self) -> Vec<u32> {
        let mut all: Vec<u32> = self.boundary_dofs.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// Evaluate a coefficient vector at a reference point of a cell.
    pub fn eval_scalar(&self, coeffs: &[f64], cell: usize, xi: [f64; 2]) -> f64 {
        let mut vals = vec![0.0; self.ndofs_per_cell];
        self.basis.eval(xi, &mut vals);
        self.cell_dofs_of(cell)
            .iter()
            .zip(&vals)
            .map(|(&d, v)| coeffs[d as usize] * v)
            .sum()
    }
}

/// Discontinuous nodal Lagrange space of degree q over a uniform time
/// partition, with the reference-element matrices every assembly needs.
#[derive(Debug, Clone)]
pub struct TemporalSpace {
    pub q: usize,
    pub partition: TimePartition,
    /// Nodes on [0,1]; q = 0 has its single node at the right endpoint.
    pub nodes: Vec<f64>,
    /// mass[b * (q+1) + a] = int_0^1 theta_a theta_b.
    pub mass: Vec<f64>,
    /// dmass[b * (q+1) + a] = int_0^1 theta_a' theta_b.
    pub dmass: Vec<f64>,
    /// Basis values at the element endpoints (exact 0/1).
    pub at0: Vec<f64>,
    pub at1: Vec<f64>,
}

/// Temporal DG space over a time partition.
pub fn build_temporal_space(q: usize, partition: TimePartition) -> TemporalSpace {
    assert!(q <= 3, "temporal degree must be 0..=3");
    let nodes = interval_nodes(q);
    let m = q + 1;
    let rule = gauss_legendre(q + 1); // exact through degree 2q+1
    let mut mass = vec![0.0; m * m];
    let mut dmass = vec![0.0; m * m];
    let mut vals = vec![0.0; m];
    let mut ders = vec![0.0; m];
    for &(t, w) in &rule {
        lagrange_values(&nodes, t, &mut vals);
        lagrange_derivatives(&nodes, t, &mut ders);
        for b in 0..m {
            for a in 0..m {
                mass[b * m + a] += w * vals[a] * vals[b];
                dmass[b * m + a] += w * ders[a] * vals[b];
            }
        }
    }
    let mut at0 = vec![0.0; m];
    let mut at1 = vec![0.0; m];
    lagrange_values(&nodes, 0.0, &mut at0);
    lagrange_values(&nodes, 1.0, &mut at1);
    TemporalSpace {
        q,
        partition,
        nodes,
        mass,
        dmass,
        at0,
        at1,
    }
}

impl TemporalSpace {
    pub fn n_nodes(&self) -> usize {
        self.q + 1
    }

    /// Total temporal DoFs N(q+1).
    pub fn n_time_dofs(&self) -> usize {
        self.partition.n * (self.q + 1)
    }

    /// Physical time of node a in element n.
    pub fn node_time(&self, n: usize, a: usize) -> f64 {
        let (t0, t1) = self.partition.element(n);
        t0 + self.nodes[a] * (t1 - t0)
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) {
        lagrange_values(&self.nodes, t, out);
    }

    pub fn eval_deriv(&self, t: f64, out: &mut [f64]) {
        lagrange_derivatives(&self.nodes, t, out);
    }
}

/// Tensor-product space-time layout over one or more spatial component
/// spaces (heat: one; flow: velocity-x, velocity-y, pressure).
#[derive(Debug, Clone)]
pub struct SpaceTimeSpace {
    pub components: Vec<ScalarSpatialSpace>,
    pub temporal: TemporalSpace,
    /// Spatial DoFs per (n, a) slab, summed over fields.
    pub slab_size: usize,
    /// Field offsets within a slab.
    pub offsets: Vec<usize>,
    pub total_dofs: usize,
}

/// Combine component spaces with a temporal space.
pub fn build_spacetime_space(
    components: Vec<ScalarSpatialSpace>,
    temporal: TemporalSpace,
) -> SpaceTimeSpace {
    assert!(!components.is_empty());
    assert!(
        components
            .windows(2)
            .all(|w| w[0].mesh_level == w[1].mesh_level && w[0].mesh_cells == w[1].mesh_cells),
        "component spaces must share a mesh level"
    );
    let mut offsets = Vec::with_capacity(components.len());
    let mut slab = 0usize;
    for c in &components {
        offsets.push(slab);
        slab += c.ndofs;
    }
    let total = temporal.n_time_dofs() * slab;
    SpaceTimeSpace {
        components,
        temporal,
        slab_size: slab,
        offsets,
        total_dofs: total,
    }
}

impl SpaceTimeSpace {
    pub fn n_fields(&self) -> usize {
        self.components.len()
    }

    pub fn n_time_elements(&self) -> usize {
        self.temporal.partition.n
    }

    /// Rows/cols per time-element block: (q+1) slabs.
    pub fn block_size(&self) -> usize {
        self.temporal.n_nodes() * self.slab_size
    }

    /// Global index of (time element n, time node a, field f, spatial DoF i).
    #[inline]
    pub fn index(&self, n: usize, a: usize, f: usize, i: usize) -> usize {
        (n * self.temporal.n_nodes() + a) * self.slab_size + self.offsets[f] + i
    }

    /// Start of the (n, a) slab.
    #[inline]
    pub fn slab_start(&self, n: usize, a: usize) -> usize {
        (n * self.temporal.n_nodes() + a) * self.slab_size
    }
}

/// Quadrature entry point matching the operations contract; see
/// [`quadrature::interval_rule`] and [`quadrature::triangle_rule`] for the
/// typed variants.
pub enum QuadDomain {
    Interval,
    Triangle,
}

pub fn quadrature_points(
    domain: QuadDomain,
    exactness_degree: usize,
) -> crate::Result<Vec<([f64; 2], f64)>> {
    match domain {
        QuadDomain::Interval => Ok(quadrature::interval_rule(exactness_degree)?
            .into_iter()
            .map(|(x, w)| ([x, 0.0], w))
            .collect()),
        QuadDomain::Triangle => quadrature::triangle_rule(exactness_degree),
    }
}
