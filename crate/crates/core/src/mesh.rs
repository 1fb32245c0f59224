//! Triangulated rectangle meshes and uniform (red) refinement hierarchies.
//!
//! The base mesh splits an `nx` by `ny` lattice of squares on the unit square
//! into two triangles each, with the diagonal running from the lower-right to
//! the upper-left corner of every square. Refinement quadrisects each triangle
//! through its edge midpoints, which reproduces the same structured pattern at
//! twice the resolution; the coarse vertices keep their ids in the fine mesh,
//! and each coarse edge contributes exactly one new (midpoint) vertex.

/// One side of the rectangular domain boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];
}

/// Uniform partition of [0, t_final] into N temporal elements.
#[derive(Debug, Clone, Copy)]
pub struct TimePartition {
    pub t_final: f64,
    pub n: usize,
}

impl TimePartition {
    pub fn new(t_final: f64, n: usize) -> Self {
        assert!(n >= 1 && t_final > 0.0);
        TimePartition { t_final, n }
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n as f64
    }

    /// (t_n, t_{n+1}) bounds of element n.
    pub fn element(&self, n: usize) -> (f64, f64) {
        let dt = self.dt();
        (n as f64 * dt, (n + 1) as f64 * dt)
    }
}

/// How a fine mesh was produced from its parent.
///
/// Fine vertex ids are arranged so that coarse vertex `i` is fine vertex `i`
/// and the midpoint of coarse edge `e` is fine vertex `n_coarse_vertices + e`.
#[derive(Debug, Clone)]
pub struct Refinement {
    /// Parent cell id for every fine cell.
    pub parent_cell: Vec<u32>,
    /// Which of the four children (0..4) a fine cell is within its parent.
    pub child_index: Vec<u8>,
    /// Number of vertices in the parent mesh.
    pub n_coarse_vertices: usize,
}

/// A conforming triangle mesh of the unit square, one level of a hierarchy.
#[derive(Debug, Clone)]
pub struct MeshLevel {
    /// Vertex coordinates.
    pub vertices: Vec<[f64; 2]>,
    /// Counter-clockwise vertex triples.
    pub cells: Vec<[u32; 3]>,
    /// Unique edges as (low, high) vertex id pairs.
    pub edges: Vec<[u32; 2]>,
    /// Global edge ids of each cell's local edges (v0,v1), (v1,v2), (v2,v0).
    pub cell_edges: Vec<[u32; 3]>,
    /// Boundary side for each edge; `None` for interior edges.
    pub edge_side: Vec<Option<Side>>,
    /// Lattice resolution (squares per direction) at this level.
    pub nx: u32,
    pub ny: u32,
    /// Refinement depth (0 for a base mesh).
    pub level: u32,
    /// Present on refined meshes.
    pub refinement: Option<Refinement>,
    /// Cells incident on each vertex, cell-id order (flattened, with offsets).
    pub vertex_cell_offsets: Vec<usize>,
    pub vertex_cells: Vec<u32>,
    /// Edges incident on each vertex, edge-id order.
    pub vertex_edge_offsets: Vec<usize>,
    pub vertex_edges: Vec<u32>,
}

const COORD_TOL: f64 = 1e-12;

impl MeshLevel {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Twice the signed area of a cell; positive for counter-clockwise cells.
    pub fn double_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cells[cell];
        let pa = self.vertices[a as usize];
        let pb = self.vertices[b as usize];
        let pc = self.vertices[c as usize];
        (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1])
    }

    /// Jacobian of the affine map from the reference triangle
    /// {(0,0),(1,0),(0,1)} onto a cell, columns (v1-v0, v2-v0).
    pub fn jacobian(&self, cell: usize) -> [[f64; 2]; 2] {
        let [a, b, c] = self.cells[cell];
        let pa = self.vertices[a as usize];
        let pb = self.vertices[b as usize];
        let pc = self.vertices[c as usize];
        [
            [pb[0] - pa[0], pc[0] - pa[0]],
            [pb[1] - pa[1], pc[1] - pa[1]],
        ]
    }

    /// Sides a vertex lies on (0, 1, or 2 entries; corners report 2).
    pub fn vertex_sides(&self, v: usize) -> Vec<Side> {
        point_sides(self.vertices[v])
    }

    /// Cells incident on a vertex, ascending cell id.
    pub fn cells_of_vertex(&self, v: usize) -> &[u32] {
        &self.vertex_cells[self.vertex_cell_offsets[v]..self.vertex_cell_offsets[v + 1]]
    }

    /// Edges incident on a vertex, ascending edge id.
    pub fn edges_of_vertex(&self, v: usize) -> &[u32] {
        &self.vertex_edges[self.vertex_edge_offsets[v]..self.vertex_edge_offsets[v + 1]]
    }

    /// Plain-text dump: vertex coordinates, then cell vertex triples.
    pub fn export_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "vertices {}", self.n_vertices()).unwrap();
        for v in &self.vertices {
            writeln!(out, "{:.17} {:.17}", v[0], v[1]).unwrap();
        }
        writeln!(out, "cells {}", self.n_cells()).unwrap();
        for c in &self.cells {
            writeln!(out, "{} {} {}", c[0], c[1], c[2]).unwrap();
        }
        out
    }

    /// Map from reference coordinates in a cell to physical coordinates.
    pub fn ref_to_physical(&self, cell: usize, xi: [f64; 2]) -> [f64; 2] {
        let [a, b, c] = self.cells[cell];
        let pa = self.vertices[a as usize];
        let pb = self.vertices[b as usize];
        let pc = self.vertices[c as usize];
        [
            pa[0] + (pb[0] - pa[0]) * xi[0] + (pc[0] - pa[0]) * xi[1],
            pa[1] + (pb[1] - pa[1]) * xi[0] + (pc[1] - pa[1]) * xi[1],
        ]
    }

    /// Locate the cell containing a point of the unit square and return the
    /// cell id with the point's reference coordinates in that cell.
    ///
    /// Uses the structured lattice layout, so it costs O(1) after an O(cells)
    /// first-call table build per mesh... callers that sample many points
    /// should build the locator once via [`MeshLevel::cell_locator`].
    pub fn locate(&self, locator: &CellLocator, p: [f64; 2]) -> (usize, [f64; 2]) {
        locator.locate(self, p)
    }

    /// Build the lattice lookup table used by [`MeshLevel::locate`].
    pub fn cell_locator(&self) -> CellLocator {
        let nx = self.nx as usize;
        let ny = self.ny as usize;
        let mut table = vec![u32::MAX; 2 * nx * ny];
        for (cid, _) in self.cells.iter().enumerate() {
            let [a, b, c] = self.cells[cid];
            let cx = (self.vertices[a as usize][0]
                + self.vertices[b as usize][0]
                + self.vertices[c as usize][0])
                / 3.0;
            let cy = (self.vertices[a as usize][1]
                + self.vertices[b as usize][1]
                + self.vertices[c as usize][1])
                / 3.0;
            let qa = ((cx * nx as f64).floor() as usize).min(nx - 1);
            let qb = ((cy * ny as f64).floor() as usize).min(ny - 1);
            // local coordinates within the square; the lower triangle satisfies
            // s + t <= 1 with s, t measured from the square's lower-left corner
            let s = cx * nx as f64 - qa as f64;
            let t = cy * ny as f64 - qb as f64;
            let slot = if s + t <= 1.0 { 0 } else { 1 };
            table[2 * (qb * nx + qa) + slot] = cid as u32;
        }
        debug_assert!(table.iter().all(|&c| c != u32::MAX));
        CellLocator { table }
    }
}

/// Lattice-indexed cell lookup for structured meshes.
#[derive(Debug, Clone)]
pub struct CellLocator {
    table: Vec<u32>,
}

impl CellLocator {
    fn locate(&self, mesh: &MeshLevel, p: [f64; 2]) -> (usize, [f64; 2]) {
        let nx = mesh.nx as usize;
        let ny = mesh.ny as usize;
        let x = p[0].clamp(0.0, 1.0);
        let y = p[1].clamp(0.0, 1.0);
        let qa = ((x * nx as f64).floor() as usize).min(nx - 1);
        let qb = ((y * ny as f64).floor() as usize).min(ny - 1);
        let s = x * nx as f64 - qa as f64;
        let t = y * ny as f64 - qb as f64;
        let slot = if s + t <= 1.0 { 0 } else { 1 };
        let cid = self.table[2 * (qb * nx + qa) + slot] as usize;
        // invert the affine map onto the reference triangle
        let [a, _, _] = mesh.cells[cid];
        let pa = mesh.vertices[a as usize];
        let j = mesh.jacobian(cid);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let dx = x - pa[0];
        let dy = y - pa[1];
        let xi = (j[1][1] * dx - j[0][1] * dy) / det;
        let eta = (-j[1][0] * dx + j[0][0] * dy) / det;
        (cid, [xi, eta])
    }
}

fn point_sides(p: [f64; 2]) -> Vec<Side> {
    let mut sides = Vec::new();
    if p[1].abs() < COORD_TOL {
        sides.push(Side::Bottom);
    }
    if (p[0] - 1.0).abs() < COORD_TOL {
        sides.push(Side::Right);
    }
    if (p[1] - 1.0).abs() < COORD_TOL {
        sides.push(Side::Top);
    }
    if p[0].abs() < COORD_TOL {
        sides.push(Side::Left);
    }
    sides
}

/// Triangulate the unit square with an `nx` by `ny` lattice of split squares.
pub fn build_base_mesh(nx: u32, ny: u32) -> MeshLevel {
    assert!(nx > 0 && ny > 0, "mesh must have at least one square");
    let nvx = (nx + 1) as usize;
    let nvy = (ny + 1) as usize;
    let mut vertices = Vec::with_capacity(nvx * nvy);
    for j in 0..nvy {
        for i in 0..nvx {
            vertices.push([i as f64 / nx as f64, j as f64 / ny as f64]);
        }
    }
    let vid = |i: usize, j: usize| (j * nvx + i) as u32;
    let mut cells = Vec::with_capacity(2 * (nx * ny) as usize);
    for b in 0..ny as usize {
        for a in 0..nx as usize {
            // diagonal from (a+1, b) to (a, b+1)
            cells.push([vid(a, b), vid(a + 1, b), vid(a, b + 1)]);
            cells.push([vid(a + 1, b), vid(a + 1, b + 1), vid(a, b + 1)]);
        }
    }
    finish_mesh(vertices, cells, nx, ny, 0, None)
}

/// Quadrisect every cell through its edge midpoints.
pub fn refine(coarse: &MeshLevel) -> MeshLevel {
    let ncv = coarse.n_vertices();
    let mut vertices = coarse.vertices.clone();
    vertices.reserve(coarse.n_edges());
    for e in &coarse.edges {
        let pa = coarse.vertices[e[0] as usize];
        let pb = coarse.vertices[e[1] as usize];
        vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
    }
    let mid = |edge: u32| (ncv + edge as usize) as u32;

    let mut cells = Vec::with_capacity(4 * coarse.n_cells());
    let mut parent_cell = Vec::with_capacity(4 * coarse.n_cells());
    let mut child_index = Vec::with_capacity(4 * coarse.n_cells());
    for (cid, cell) in coarse.cells.iter().enumerate() {
        let [v0, v1, v2] = *cell;
        let [e01, e12, e02] = {
            let e = coarse.cell_edges[cid];
            [mid(e[0]), mid(e[1]), mid(e[2])]
        };
        let children = [
            [v0, e01, e02],
            [e01, v1, e12],
            [e02, e12, v2],
            [e01, e12, e02],
        ];
        for (slot, ch) in children.iter().enumerate() {
            cells.push(*ch);
            parent_cell.push(cid as u32);
            child_index.push(slot as u8);
        }
    }
    let refinement = Refinement {
        parent_cell,
        child_index,
        n_coarse_vertices: ncv,
    };
    finish_mesh(
        vertices,
        cells,
        coarse.nx * 2,
        coarse.ny * 2,
        coarse.level + 1,
        Some(refinement),
    )
}

/// Base mesh plus `mref` uniform refinements, coarse to fine.
pub fn build_hierarchy(nx: u32, ny: u32, mref: u32) -> Vec<MeshLevel> {
    let mut levels = vec![build_base_mesh(nx, ny)];
    for _ in 0..mref {
        let fine = refine(levels.last().unwrap());
        levels.push(fine);
    }
    levels
}

/// Deduplicate edges and tag boundary sides; shared by base build and refine.
fn finish_mesh(
    vertices: Vec<[f64; 2]>,
    cells: Vec<[u32; 3]>,
    nx: u32,
    ny: u32,
    level: u32,
    refinement: Option<Refinement>,
) -> MeshLevel {
    use std::collections::HashMap;
    let mut edge_ids: HashMap<[u32; 2], u32> = HashMap::new();
    let mut edges: Vec<[u32; 2]> = Vec::new();
    let mut edge_cell_count: Vec<u8> = Vec::new();
    let mut cell_edges = Vec::with_capacity(cells.len());
    for cell in &cells {
        let locals = [
            [cell[0], cell[1]],
            [cell[1], cell[2]],
            [cell[2], cell[0]],
        ];
        let mut ids = [0u32; 3];
        for (l, pair) in locals.iter().enumerate() {
            let key = [pair[0].min(pair[1]), pair[0].max(pair[1])];
            let id = *edge_ids.entry(key).or_insert_with(|| {
                edges.push(key);
                edge_cell_count.push(0);
                (edges.len() - 1) as u32
            });
            edge_cell_count[id as usize] += 1;
            ids[l] = id;
        }
        cell_edges.push(ids);
    }
    let edge_side = edges
        .iter()
        .zip(&edge_cell_count)
        .map(|(e, &count)| {
            if count != 1 {
                return None;
            }
            let pa = vertices[e[0] as usize];
            let pb = vertices[e[1] as usize];
            let m = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            let sides = point_sides(m);
            debug_assert_eq!(sides.len(), 1, "boundary edge midpoint on one side");
            sides.first().copied()
        })
        .collect();

    let nv = vertices.len();
    let (vertex_cell_offsets, vertex_cells) =
        incidence(nv, cells.iter().enumerate().flat_map(|(c, vs)| {
            vs.iter().map(move |&v| (v as usize, c as u32))
        }));
    let (vertex_edge_offsets, vertex_edges) =
        incidence(nv, edges.iter().enumerate().flat_map(|(e, vs)| {
            vs.iter().map(move |&v| (v as usize, e as u32))
        }));

    MeshLevel {
        vertices,
        cells,
        edges,
        cell_edges,
        edge_side,
        nx,
        ny,
        level,
        refinement,
        vertex_cell_offsets,
        vertex_cells,
        vertex_edge_offsets,
        vertex_edges,
    }
}

/// Bucket (vertex, entity) pairs into a flat offset/list incidence table.
fn incidence(nv: usize, pairs: impl Iterator<Item = (usize, u32)>) -> (Vec<usize>, Vec<u32>) {
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); nv];
    for (v, e) in pairs {
        lists[v].push(e);
    }
    let mut offsets = Vec::with_capacity(nv + 1);
    offsets.push(0usize);
    let mut flat = Vec::new();
    for mut l in lists {
        l.sort_unstable();
        flat.append(&mut l);
        offsets.push(flat.len());
    }
    (offsets, flat)
}
