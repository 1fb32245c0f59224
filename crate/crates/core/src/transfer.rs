//! Grid transfer between space-time levels.
//!
//! Spatial prolongation is finite-element interpolation from the coarse to
//! the fine space, tensored with the identity in time: each (time element,
//! time node) slab is transferred independently, field by field. Restriction
//! is the transpose of prolongation, applied through the same stored matrix.
//! State injection reads coarse nodal values off the fine vector at the
//! coincident fine nodes, which is exact for nested lattices of equal degree.

use crate::linalg::csr::CsrMatrix;
use crate::mesh::MeshLevel;
use crate::spaces::basis::triangle_nodes;
use crate::spaces::{ScalarSpatialSpace, SpaceTimeSpace};
use crate::{Error, Result};

/// Interpolation weights within this distance of 0 or 1 are snapped, so
/// coincident-node rows come out as a single exact 1.
const SNAP_TOL: f64 = 1e-12;

/// Prolongation for one scalar field plus the coincident-node map.
#[derive(Debug, Clone)]
pub struct FieldTransfer {
    /// fine ndofs x coarse ndofs interpolation matrix.
    pub p: CsrMatrix,
    /// For each coarse DoF, the fine DoF at the same point.
    pub injection: Vec<u32>,
}

/// Transfer operators between two space-time levels sharing a time partition.
#[derive(Debug, Clone)]
pub struct TransferPair {
    pub fields: Vec<FieldTransfer>,
    coarse_offsets: Vec<usize>,
    fine_offsets: Vec<usize>,
    coarse_slab: usize,
    fine_slab: usize,
    n_slabs: usize,
}

/// Map a child-cell reference point into its parent's reference coordinates.
/// Children are ordered as in [`crate::mesh::refine`]: three corner children
/// then the inverted center child.
fn child_ref_map(child: u8, xi: [f64; 2]) -> [f64; 2] {
    let (x, y) = (xi[0], xi[1]);
    match child {
        0 => [0.5 * x, 0.5 * y],
        1 => [0.5 + 0.5 * x, 0.5 * y],
        2 => [0.5 * x, 0.5 + 0.5 * y],
        3 => [0.5 - 0.5 * y, 0.5 * (x + y)],
        _ => unreachable!("child index is 0..4"),
    }
}

/// Interpolation matrix for one scalar field between nested levels.
pub fn build_scalar_prolongation(
    fine_mesh: &MeshLevel,
    coarse_space: &ScalarSpatialSpace,
    fine_space: &ScalarSpatialSpace,
) -> Result<FieldTransfer> {
    let refinement = fine_mesh.refinement.as_ref().ok_or_else(|| {
        Error::InvalidConfig("prolongation requires a refined fine mesh".into())
    })?;
    if coarse_space.k != fine_space.k {
        return Err(Error::InvalidConfig(
            "prolongation requires equal spatial degree on both levels".into(),
        ));
    }
    if coarse_space.mesh_level + 1 != fine_space.mesh_level
        || fine_space.mesh_cells != 4 * coarse_space.mesh_cells
        || fine_mesh.n_cells() != fine_space.mesh_cells
    {
        return Err(Error::InvalidConfig("levels are not nested".into()));
    }

    let ref_nodes = triangle_nodes(fine_space.k);
    let mut rows: Vec<Option<Vec<(u32, f64)>>> = vec![None; fine_space.ndofs];
    let mut vals = vec![0.0; coarse_space.ndofs_per_cell];
    for fc in 0..fine_mesh.n_cells() {
        let pc = refinement.parent_cell[fc] as usize;
        let child = refinement.child_index[fc];
        let pdofs = coarse_space.cell_dofs_of(pc);
        for (l, &fd) in fine_space.cell_dofs_of(fc).iter().enumerate() {
            if rows[fd as usize].is_some() {
                // continuity of the coarse space makes every owner agree;
                // first writer wins for determinism
                continue;
            }
            coarse_space.basis.eval(child_ref_map(child, ref_nodes[l]), &mut vals);
            let mut row = Vec::new();
            for (m, &cd) in pdofs.iter().enumerate() {
                let mut v = vals[m];
                if (v - 1.0).abs() < SNAP_TOL {
                    v = 1.0;
                }
                if v.abs() < SNAP_TOL {
                    continue;
                }
                row.push((cd, v));
            }
            row.sort_unstable_by_key(|e| e.0);
            rows[fd as usize] = Some(row);
        }
    }

    let mut row_ptr = Vec::with_capacity(fine_space.ndofs + 1);
    let mut cols = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    let mut injection = vec![u32::MAX; coarse_space.ndofs];
    for (fd, row) in rows.into_iter().enumerate() {
        let row = row.expect("every fine DoF belongs to some cell");
        if let [(cd, v)] = row[..] {
            if v == 1.0 && injection[cd as usize] == u32::MAX {
                injection[cd as usize] = fd as u32;
            }
        }
        for (c, v) in row {
            cols.push(c);
            values.push(v);
        }
        row_ptr.push(cols.len());
    }
    if injection.contains(&u32::MAX) {
        return Err(Error::InvalidConfig(
            "levels are not nested: a coarse node has no coincident fine node".into(),
        ));
    }
    let mut p = CsrMatrix::from_pattern(fine_space.ndofs, coarse_space.ndofs, row_ptr, cols);
    p.vals = values;
    Ok(FieldTransfer { p, injection })
}

/// Transfer operators between two nested space-time levels.
pub fn build_transfer_pair(
    fine_mesh: &MeshLevel,
    coarse: &SpaceTimeSpace,
    fine: &SpaceTimeSpace,
) -> Result<TransferPair> {
    if coarse.n_fields() != fine.n_fields()
        || coarse.temporal.q != fine.temporal.q
        || coarse.temporal.partition.n != fine.temporal.partition.n
    {
        return Err(Error::InvalidConfig(
            "transfer levels must share field layout and time partition".into(),
        ));
    }
    let fields = coarse
        .components
        .iter()
        .zip(&fine.components)
        .map(|(cs, fs)| build_scalar_prolongation(fine_mesh, cs, fs))
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferPair {
        fields,
        coarse_offsets: coarse.offsets.clone(),
        fine_offsets: fine.offsets.clone(),
        coarse_slab: coarse.slab_size,
        fine_slab: fine.slab_size,
        n_slabs: fine.temporal.n_time_dofs(),
    })
}

impl TransferPair {
    /// fine = P coarse, every temporal slab independently.
    pub fn prolong(&self, coarse: &[f64], fine: &mut [f64]) {
        debug_assert_eq!(coarse.len(), self.n_slabs * self.coarse_slab);
        debug_assert_eq!(fine.len(), self.n_slabs * self.fine_slab);
        for s in 0..self.n_slabs {
            for (f, ft) in self.fields.iter().enumerate() {
                let cbase = s * self.coarse_slab + self.coarse_offsets[f];
                let fbase = s * self.fine_slab + self.fine_offsets[f];
                ft.p.matvec(
                    &coarse[cbase..cbase + ft.p.ncols],
                    &mut fine[fbase..fbase + ft.p.nrows],
                );
            }
        }
    }

    /// fine += P coarse.
    pub fn prolong_add(&self, coarse: &[f64], fine: &mut [f64]) {
        for s in 0..self.n_slabs {
            for (f, ft) in self.fields.iter().enumerate() {
                let cbase = s * self.coarse_slab + self.coarse_offsets[f];
                let fbase = s * self.fine_slab + self.fine_offsets[f];
                ft.p.matvec_add(
                    &coarse[cbase..cbase + ft.p.ncols],
                    &mut fine[fbase..fbase + ft.p.nrows],
                );
            }
        }
    }

    /// coarse = P^T fine, sharing the prolongation storage.
    pub fn restrict(&self, fine: &[f64], coarse: &mut [f64]) {
        coarse.fill(0.0);
        for s in 0..self.n_slabs {
            for (f, ft) in self.fields.iter().enumerate() {
                let cbase = s * self.coarse_slab + self.coarse_offsets[f];
                let fbase = s * self.fine_slab + self.fine_offsets[f];
                ft.p.transpose_matvec_add(
                    &fine[fbase..fbase + ft.p.nrows],
                    &mut coarse[cbase..cbase + ft.p.ncols],
                );
            }
        }
    }

    /// coarse nodal values read off the fine vector at coincident nodes.
    pub fn inject_state(&self, fine: &[f64], coarse: &mut [f64]) {
        for s in 0..self.n_slabs {
            for (f, ft) in self.fields.iter().enumerate() {
                let cbase = s * self.coarse_slab + self.coarse_offsets[f];
                let fbase = s * self.fine_slab + self.fine_offsets[f];
                for (cd, &fd) in ft.injection.iter().enumerate() {
                    coarse[cbase + cd] = fine[fbase + fd as usize];
                }
            }
        }
    }

    pub fn coarse_len(&self) -> usize {
        self.n_slabs * self.coarse_slab
    }

    pub fn fine_len(&self) -> usize {
        self.n_slabs * self.fine_slab
    }
}

/// Zero the listed per-field spatial DoFs in every temporal slab. Correction
/// transfers use this to keep Dirichlet rows homogeneous.
pub fn zero_constrained(space: &SpaceTimeSpace, constrained: &[Vec<u32>], vec: &mut [f64]) {
    debug_assert_eq!(constrained.len(), space.n_fields());
    for s in 0..space.temporal.n_time_dofs() {
        let base = s * space.slab_size;
        for (f, dofs) in constrained.iter().enumerate() {
            for &d in dofs {
                vec[base + space.offsets[f] + d as usize] = 0.0;
            }
        }
    }
}
