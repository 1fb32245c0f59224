//! Waveform patch smoother: additive Schwarz over spatial patches where each
//! patch solves its full space-time restriction exactly, marched element by
//! element through the block bidiagonal structure. Chebyshev acceleration
//! and the Arnoldi estimate of the smoothed spectral radius live here too.
//!
//! Patches are built per mesh vertex. Scalar problems take the open star
//! (every DoF whose support lies inside the star: the vertex itself, DoFs on
//! incident edges, DoFs in incident cells). Flow problems take a Vanka patch:
//! both velocity components on the closure of the star (all DoFs of incident
//! cells) plus the pressure open star. Constrained DoFs are dropped.

use std::fs::File;
use std::io::Write as _;
use std::os::unix::fs::FileExt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::forms::SpaceTimeOperator;
use crate::linalg::dense::{dense_factorize_in_place, dense_solve_in_place};
use crate::linalg::fgmres::LinOp;
use crate::linalg::{dot, norm2};
use crate::mesh::MeshLevel;
use crate::spaces::SpaceTimeSpace;
use crate::{Error, Result};

/// Structurally absent pattern position.
const ABSENT: u32 = u32::MAX;

/// Spatial patch decomposition of one slab.
pub struct PatchSet {
    /// Patch slab-row lists, concatenated; each patch sorted ascending
    /// within a field, fields in slab order.
    rows: Vec<u32>,
    row_offsets: Vec<usize>,
    /// Position of each patch (i, j) pair in the slab pattern, row-major
    /// per patch; `ABSENT` marks pairs outside the pattern.
    pos_base: Vec<u32>,
    /// Same for the advection pattern; empty when the operator has none.
    pos_adv: Vec<u32>,
    /// Dense patch blocks of the jump mass matrix.
    sub_dense: Vec<f64>,
    pos_offsets: Vec<usize>,
    /// Largest spatial patch size.
    pub max_patch: usize,
}

impl PatchSet {
    pub fn n_patches(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn patch_rows(&self, p: usize) -> &[u32] {
        &self.rows[self.row_offsets[p]..self.row_offsets[p + 1]]
    }
}

/// Scalar open star: DoFs supported strictly inside the vertex star.
fn scalar_open_star(mesh: &MeshLevel, k: usize, v: usize) -> Vec<u32> {
    let per_edge = k - 1;
    let n_int = per_edge * k.saturating_sub(2) / 2;
    let edge_base = mesh.n_vertices();
    let cell_base = edge_base + per_edge * mesh.n_edges();
    let mut ids = vec![v as u32];
    for &e in mesh.edges_of_vertex(v) {
        for j in 0..per_edge {
            ids.push((edge_base + e as usize * per_edge + j) as u32);
        }
    }
    for &c in mesh.cells_of_vertex(v) {
        for j in 0..n_int {
            ids.push((cell_base + c as usize * n_int + j) as u32);
        }
    }
    ids.sort_unstable();
    ids
}

/// Scalar closure of the star: every DoF of every incident cell.
fn scalar_closure_star(space: &crate::spaces::ScalarSpatialSpace, mesh: &MeshLevel, v: usize) -> Vec<u32> {
    let mut ids = Vec::new();
    for &c in mesh.cells_of_vertex(v) {
        ids.extend_from_slice(space.cell_dofs_of(c as usize));
    }
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Build the per-vertex patch decomposition for an assembled operator.
pub fn build_patches(
    mesh: &MeshLevel,
    space: &SpaceTimeSpace,
    op: &SpaceTimeOperator,
) -> PatchSet {
    let mut mask = vec![false; op.slab];
    for &r in &op.constrained {
        mask[r as usize] = true;
    }
    let vanka = space.n_fields() == 3;

    let mut rows = Vec::new();
    let mut row_offsets = vec![0usize];
    let mut max_patch = 0;
    for v in 0..mesh.n_vertices() {
        let mut patch: Vec<u32> = Vec::new();
        if vanka {
            let closure = scalar_closure_star(&space.components[0], mesh, v);
            for f in 0..2 {
                let off = space.offsets[f] as u32;
                patch.extend(closure.iter().map(|&d| off + d));
            }
            let off = space.offsets[2] as u32;
            patch.extend(
                scalar_open_star(mesh, space.components[2].k, v)
                    .iter()
                    .map(|&d| off + d),
            );
        } else {
            patch = scalar_open_star(mesh, space.components[0].k, v);
        }
        patch.retain(|&r| !mask[r as usize]);
        if patch.is_empty() {
            continue;
        }
        max_patch = max_patch.max(patch.len());
        rows.extend_from_slice(&patch);
        row_offsets.push(rows.len());
    }

    // cache pattern positions and the dense jump blocks
    let n_pairs: usize = (0..row_offsets.len() - 1)
        .map(|p| {
            let m = row_offsets[p + 1] - row_offsets[p];
            m * m
        })
        .sum();
    let mut pos_base = vec![ABSENT; n_pairs];
    let has_adv = op.adv.is_some();
    let mut pos_adv = if has_adv { vec![ABSENT; n_pairs] } else { Vec::new() };
    let mut sub_dense = vec![0.0; n_pairs];
    let mut pos_offsets = vec![0usize];
    let mut at = 0;
    for p in 0..row_offsets.len() - 1 {
        let pr = &rows[row_offsets[p]..row_offsets[p + 1]];
        let m = pr.len();
        for (i, &r) in pr.iter().enumerate() {
            for (j, &c) in pr.iter().enumerate() {
                let e = at + i * m + j;
                if let Some(pos) = op.slab_find(r as usize, c) {
                    pos_base[e] = pos as u32;
                }
                if let Some(adv) = &op.adv {
                    let lo = adv.row_ptr[r as usize];
                    let hi = adv.row_ptr[r as usize + 1];
                    if let Ok(k) = adv.cols[lo..hi].binary_search(&c) {
                        pos_adv[e] = (lo + k) as u32;
                    }
                }
                if let Some(pos) = op.sub.find(r as usize, c) {
                    sub_dense[e] = op.sub.vals[pos];
                }
            }
        }
        at += m * m;
        pos_offsets.push(at);
    }

    PatchSet {
        rows,
        row_offsets,
        pos_base,
        pos_adv,
        sub_dense,
        pos_offsets,
        max_patch,
    }
}

/// Where patch factors live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpillPolicy {
    /// Keep factors in memory when they fit comfortably, else spill.
    Auto,
    Ram,
    Disk,
}

enum FactorStore {
    Ram(Vec<f64>),
    Disk(File),
}

/// `MemAvailable` from /proc/meminfo, in bytes.
pub fn mem_available_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("MemAvailable:") {
            let kb: u64 = rest.trim().trim_end_matches(" kB").trim().parse().ok()?;
            return Some(kb * 1024);
        }
    }
    None
}

fn spill_dir() -> std::path::PathBuf {
    std::env::var_os("WRMG_SPILL_DIR")
        .map(Into::into)
        .unwrap_or_else(std::env::temp_dir)
}

/// Additive Schwarz waveform smoother with factored patch systems.
pub struct Smoother {
    set: PatchSet,
    nq: usize,
    n_elements: usize,
    slab: usize,
    at0: Vec<f64>,
    pressure: Option<(usize, usize)>,
    /// One factor element when the operator is time invariant.
    n_factor_elements: usize,
    /// Blob byte offsets per (factor element, patch), row-major.
    blob_offsets: Vec<u64>,
    piv: Vec<u32>,
    piv_offsets: Vec<usize>,
    store: FactorStore,
}

impl Smoother {
    /// Total factor bytes.
    pub fn factor_bytes(&self) -> u64 {
        *self.blob_offsets.last().unwrap()
    }

    pub fn on_disk(&self) -> bool {
        matches!(self.store, FactorStore::Disk(_))
    }

    /// Re-gather and re-factor the patch systems after the operator values
    /// changed (same patterns, same constraints).
    pub fn refresh(&mut self, op: &SpaceTimeOperator) -> Result<()> {
        factorize_patches(op, &self.set, self.n_factor_elements, &mut self.store, &mut self.piv)
    }

    /// z = sum over patches of the exact patch space-time solve of r.
    /// Constrained rows stay zero; pressure slab means are removed.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let nq = self.nq;
        let set = &self.set;
        let n_patches = set.n_patches();
        z.fill(0.0);
        // previous-element patch corrections at the last temporal node
        let mut prev = vec![0.0; set.rows.len()];
        let maxm = nq * set.max_patch;
        let mut rhs = vec![0.0; maxm];
        let mut blob = Vec::new();
        if self.on_disk() {
            blob.resize(maxm * maxm, 0.0);
        }
        let mut bytes = Vec::new();

        for n in 0..self.n_elements {
            let felem = if self.n_factor_elements == 1 { 0 } else { n };
            for p in 0..n_patches {
                let pr = set.patch_rows(p);
                let m = pr.len();
                let bs = nq * m;
                let sub = &set.sub_dense[set.pos_offsets[p]..set.pos_offsets[p + 1]];
                for b in 0..nq {
                    let base = (n * nq + b) * self.slab;
                    for (i, &row) in pr.iter().enumerate() {
                        rhs[b * m + i] = r[base + row as usize];
                    }
                }
                if n > 0 {
                    let pv = &prev[set.row_offsets[p]..set.row_offsets[p + 1]];
                    for (b, &w) in self.at0.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        for i in 0..m {
                            let mut acc = 0.0;
                            for (j, &pvj) in pv.iter().enumerate() {
                                acc += sub[i * m + j] * pvj;
                            }
                            rhs[b * m + i] += w * acc;
                        }
                    }
                }
                let piv = &self.piv[self.piv_offsets[felem * n_patches + p]
                    ..self.piv_offsets[felem * n_patches + p + 1]];
                match &self.store {
                    FactorStore::Ram(all) => {
                        let off = (self.blob_offsets[felem * n_patches + p] / 8) as usize;
                        dense_solve_in_place(&all[off..off + bs * bs], piv, bs, &mut rhs[..bs]);
                    }
                    FactorStore::Disk(file) => {
                        let off = self.blob_offsets[felem * n_patches + p];
                        let nbytes = bs * bs * 8;
                        bytes.resize(nbytes, 0);
                        file.read_exact_at(&mut bytes, off)
                            .expect("patch factor read failed");
                        for (v, ch) in blob[..bs * bs].iter_mut().zip(bytes.chunks_exact(8)) {
                            *v = f64::from_le_bytes(ch.try_into().unwrap());
                        }
                        dense_solve_in_place(&blob[..bs * bs], piv, bs, &mut rhs[..bs]);
                    }
                }
                prev[set.row_offsets[p]..set.row_offsets[p + 1]]
                    .copy_from_slice(&rhs[(nq - 1) * m..nq * m]);
                for b in 0..nq {
                    let base = (n * nq + b) * self.slab;
                    for (i, &row) in pr.iter().enumerate() {
                        z[base + row as usize] += rhs[b * m + i];
                    }
                }
            }
        }

        if let Some((off, np)) = self.pressure {
            remove_pressure_means(z, self.n_elements * nq, self.slab, off, np);
        }
    }
}

/// Subtract the mean of each temporal slab's pressure block.
pub fn remove_pressure_means(v: &mut [f64], n_slabs: usize, slab: usize, off: usize, np: usize) {
    for s in 0..n_slabs {
        let base = s * slab + off;
        let mean: f64 = v[base..base + np].iter().sum::<f64>() / np as f64;
        for x in &mut v[base..base + np] {
            *x -= mean;
        }
    }
}

fn factorize_patches(
    op: &SpaceTimeOperator,
    set: &PatchSet,
    n_factor_elements: usize,
    store: &mut FactorStore,
    piv_out: &mut Vec<u32>,
) -> Result<()> {
    let nq = op.nq;
    let n_patches = set.n_patches();
    piv_out.clear();
    let maxm = nq * set.max_patch;
    let mut dense = vec![0.0; maxm * maxm];
    let mut piv = vec![0u32; maxm];
    let mut bytes: Vec<u8> = Vec::new();
    let mut cursor = 0u64;
    if let FactorStore::Ram(all) = store {
        all.clear();
    }
    for felem in 0..n_factor_elements {
        for p in 0..n_patches {
            let pr = set.patch_rows(p);
            let m = pr.len();
            let bs = nq * m;
            let posb = &set.pos_base[set.pos_offsets[p]..set.pos_offsets[p + 1]];
            let posa = if set.pos_adv.is_empty() {
                &[][..]
            } else {
                &set.pos_adv[set.pos_offsets[p]..set.pos_offsets[p + 1]]
            };
            let d = &mut dense[..bs * bs];
            d.fill(0.0);
            for b in 0..nq {
                for a in 0..nq {
                    let vals = &op.base[b * nq + a];
                    let avals = op.adv.as_ref().map(|adv| &adv.vals[felem][b * nq + a]);
                    for i in 0..m {
                        for j in 0..m {
                            let mut v = 0.0;
                            let pb = posb[i * m + j];
                            if pb != ABSENT {
                                v = vals[pb as usize];
                            }
                            if let Some(av) = avals {
                                let pa = posa[i * m + j];
                                if pa != ABSENT {
                                    v += av[pa as usize];
                                }
                            }
                            d[(b * m + i) * bs + a * m + j] = v;
                        }
                    }
                }
            }
            dense_factorize_in_place(d, &mut piv[..bs], bs)?;
            piv_out.extend_from_slice(&piv[..bs]);
            match store {
                FactorStore::Ram(all) => all.extend_from_slice(d),
                FactorStore::Disk(file) => {
                    bytes.clear();
                    for v in d.iter() {
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                    file.write_all_at(&bytes, cursor).map_err(Error::Io)?;
                    cursor += bytes.len() as u64;
                }
            }
        }
    }
    if let FactorStore::Disk(file) = store {
        file.flush().map_err(Error::Io)?;
    }
    Ok(())
}

/// Build and factor the smoother for an assembled operator.
pub fn build_smoother(
    op: &SpaceTimeOperator,
    set: PatchSet,
    policy: SpillPolicy,
) -> Result<Smoother> {
    let nq = op.nq;
    let n_patches = set.n_patches();
    let n_factor_elements = if op.adv.is_none() { 1 } else { op.n_elements };

    let mut blob_offsets = Vec::with_capacity(n_factor_elements * n_patches + 1);
    let mut piv_offsets = Vec::with_capacity(n_factor_elements * n_patches + 1);
    blob_offsets.push(0u64);
    piv_offsets.push(0usize);
    for _ in 0..n_factor_elements {
        for p in 0..n_patches {
            let m = set.patch_rows(p).len();
            let bs = nq * m;
            blob_offsets.push(blob_offsets.last().unwrap() + (bs * bs * 8) as u64);
            piv_offsets.push(piv_offsets.last().unwrap() + bs);
        }
    }
    let total_bytes = *blob_offsets.last().unwrap();

    let use_disk = match policy {
        SpillPolicy::Ram => false,
        SpillPolicy::Disk => true,
        SpillPolicy::Auto => match mem_available_bytes() {
            // leave half of available memory to the rest of the solver
            Some(avail) => total_bytes > avail / 2,
            None => total_bytes > 2 << 30,
        },
    };
    let mut store = if use_disk {
        let f = tempfile::tempfile_in(spill_dir()).map_err(Error::Io)?;
        FactorStore::Disk(f)
    } else {
        FactorStore::Ram(Vec::with_capacity((total_bytes / 8) as usize))
    };

    let mut piv = Vec::new();
    factorize_patches(op, &set, n_factor_elements, &mut store, &mut piv)?;
    Ok(Smoother {
        nq,
        n_elements: op.n_elements,
        slab: op.slab,
        at0: op.at0.clone(),
        pressure: op.pressure,
        n_factor_elements,
        blob_offsets,
        piv,
        piv_offsets,
        store,
        set,
    })
}

/// Chebyshev interval for a spectral radius estimate of the smoothed operator.
#[derive(Debug, Clone, Copy)]
pub struct ChebyshevParams {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub degree: usize,
}

impl ChebyshevParams {
    pub fn from_lambda(lambda: f64) -> Self {
        ChebyshevParams {
            lambda_min: 0.25 * lambda,
            lambda_max: 1.05 * lambda,
            degree: 2,
        }
    }
}

/// One Chebyshev-accelerated smoothing pass on A x = b: a degree-`degree`
/// polynomial in the preconditioned operator applied to the current error.
pub fn chebyshev<L, P>(op: &L, mut precond: P, params: ChebyshevParams, b: &[f64], x: &mut [f64])
where
    L: LinOp + ?Sized,
    P: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let theta = 0.5 * (params.lambda_max + params.lambda_min);
    let delta = 0.5 * (params.lambda_max - params.lambda_min);
    let sigma = theta / delta;
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut w = vec![0.0; n];

    op.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    precond(&r, &mut z);
    for (di, zi) in d.iter_mut().zip(&z) {
        *di = zi / theta;
    }
    let mut rho_prev = 1.0 / sigma;
    for _ in 1..params.degree {
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += di;
        }
        op.apply(&d, &mut w);
        for (ri, wi) in r.iter_mut().zip(&w) {
            *ri -= wi;
        }
        precond(&r, &mut z);
        let rho = 1.0 / (2.0 * sigma - rho_prev);
        let c1 = rho * rho_prev;
        let c2 = 2.0 * rho / delta;
        for (di, zi) in d.iter_mut().zip(&z) {
            *di = c1 * *di + c2 * zi;
        }
        rho_prev = rho;
    }
    for (xi, di) in x.iter_mut().zip(&d) {
        *xi += di;
    }
}

/// Spectral radius estimate of the smoothed operator.
#[derive(Debug, Clone, Copy)]
pub struct LambdaEstimate {
    pub lambda: f64,
    pub iterations: usize,
    /// Set when the Krylov space degenerated before five steps; the
    /// returned value is then the fallback 1.0.
    pub flagged: bool,
}

/// Estimate the largest eigenvalue modulus of A M^{-1} by `steps` Arnoldi
/// iterations from a seeded random start; Ritz values come from the
/// Hessenberg eigenvalues.
pub fn estimate_lambda<L, P>(op: &L, mut precond: P, steps: usize, seed: u64) -> LambdaEstimate
where
    L: LinOp + ?Sized,
    P: FnMut(&[f64], &mut [f64]),
{
    let n = op.dim();
    let steps = steps.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nrm = norm2(&v0);
    for v in &mut v0 {
        *v /= nrm;
    }
    let mut basis = vec![v0];
    let mut h = vec![0.0; (steps + 1) * steps]; // h[i + j * (steps + 1)]
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut m = 0;
    for j in 0..steps {
        precond(&basis[j], &mut z);
        op.apply(&z, &mut w);
        for (i, vi) in basis.iter().enumerate() {
            let hij = dot(&w, vi);
            h[i + j * (steps + 1)] = hij;
            for (wk, vk) in w.iter_mut().zip(vi) {
                *wk -= hij * vk;
            }
        }
        let beta = norm2(&w);
        m = j + 1;
        if beta < 1e-12 {
            break;
        }
        h[j + 1 + j * (steps + 1)] = beta;
        let mut next = w.clone();
        for v in &mut next {
            *v /= beta;
        }
        basis.push(next);
    }
    if m < 5 {
        return LambdaEstimate {
            lambda: 1.0,
            iterations: m,
            flagged: true,
        };
    }
    let hm = DMatrix::from_fn(m, m, |i, j| {
        if i <= j + 1 {
            h[i + j * (steps + 1)]
        } else {
            0.0
        }
    });
    let lambda = hm
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re * c.re + c.im * c.im).sqrt())
        .fold(0.0f64, f64::max);
    LambdaEstimate {
        lambda,
        iterations: m,
        flagged: false,
    }
}
