//! Closed-form problem definitions: the heat initial profile, the decaying
//! vortex with its exact solution, and lid-driven cavity boundary data.

use crate::forms::{spacetime_l2_error, BcKind, BoundaryConditions};
use crate::mesh::{MeshLevel, Side};
use crate::spaces::SpaceTimeSpace;
use crate::{Error, Result};
use std::f64::consts::PI;

const VX: usize = 0;
const VY: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Heat,
    Chorin,
    Cavity,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Heat => "heat",
            ProblemKind::Chorin => "chorin",
            ProblemKind::Cavity => "cavity",
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heat" => Ok(ProblemKind::Heat),
            "chorin" => Ok(ProblemKind::Chorin),
            "cavity" => Ok(ProblemKind::Cavity),
            other => Err(Error::InvalidConfig(format!("unknown problem '{other}'"))),
        }
    }
}

/// Benchmark problem description. `k` is the scalar degree for the heat
/// problem and the pressure degree for the flow problems (velocity runs one
/// higher).
#[derive(Debug, Clone, Copy)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub reynolds: f64,
    pub t_final: f64,
    pub n_time: usize,
    pub q: usize,
    pub k: usize,
    pub mref: u32,
}

impl ProblemConfig {
    /// Per-problem defaults: q=0, k=1, Mref=2, R=10 for the flow problems;
    /// heat and cavity run on t in [0,0.02] with 20 elements, the vortex on
    /// [0,0.1].
    pub fn new(kind: ProblemKind) -> Self {
        let (t_final, n_time) = match kind {
            ProblemKind::Chorin => (0.1, 20),
            ProblemKind::Heat | ProblemKind::Cavity => (0.02, 20),
        };
        ProblemConfig {
            kind,
            reynolds: 10.0,
            t_final,
            n_time,
            q: 0,
            k: 1,
            mref: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != ProblemKind::Heat && self.reynolds <= 0.0 {
            return Err(Error::InvalidConfig("Reynolds number must be positive".into()));
        }
        if self.t_final <= 0.0 || self.n_time == 0 {
            return Err(Error::InvalidConfig("time interval must be nonempty".into()));
        }
        if self.q > 3 {
            return Err(Error::InvalidConfig("temporal degree must be 0..=3".into()));
        }
        if self.k == 0 || self.k > 3 {
            return Err(Error::InvalidConfig("spatial degree must be 1..=3".into()));
        }
        // velocity runs one degree above pressure and tops out at cubic
        if self.kind != ProblemKind::Heat && self.k > 2 {
            return Err(Error::InvalidConfig(
                "flow pressure degree must be 1 or 2".into(),
            ));
        }
        Ok(())
    }
}

/// Heat initial profile sin(pi x) + cos(2 pi y).
pub fn heat_initial(x: [f64; 2]) -> f64 {
    (PI * x[0]).sin() + (2.0 * PI * x[1]).cos()
}

/// Exact decaying-vortex velocity; tangential flow on the unit square, zero
/// normal component on all four sides, independent of the Reynolds number.
pub fn chorin_velocity(t: f64, x: [f64; 2]) -> [f64; 2] {
    let decay = (-2.0 * PI * PI * t).exp();
    [
        (PI * x[0]).sin() * (PI * x[1]).cos() * decay,
        -(PI * x[0]).cos() * (PI * x[1]).sin() * decay,
    ]
}

/// Exact vortex solution (velocity, pressure). The pressure balances the
/// convective term under the sign convention of the assembled momentum form
/// and scales linearly in the Reynolds number; its spatial mean is zero.
pub fn chorin_exact(t: f64, x: [f64; 2], reynolds: f64) -> ([f64; 2], f64) {
    let p = -(reynolds / 4.0)
        * ((2.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).cos())
        * (-4.0 * PI * PI * t).exp();
    (chorin_velocity(t, x), p)
}

fn sorted_zero_constraints(dofs: &mut Vec<u32>) -> Vec<(u32, f64)> {
    dofs.sort_unstable();
    dofs.dedup();
    dofs.iter().map(|&d| (d, 0.0)).collect()
}

/// Zero normal velocity: the x-component is pinned on the vertical walls,
/// the y-component on the horizontal ones; tangential flow stays free.
pub fn chorin_bcs(space: &SpaceTimeSpace) -> BoundaryConditions {
    let v = &space.components[VX];
    let mut vx: Vec<u32> = Vec::new();
    for side in [Side::Left, Side::Right] {
        vx.extend_from_slice(&v.boundary_dofs[side as usize]);
    }
    let mut vy: Vec<u32> = Vec::new();
    for side in [Side::Bottom, Side::Top] {
        vy.extend_from_slice(&v.boundary_dofs[side as usize]);
    }
    BoundaryConditions {
        kind: BcKind::NormalComponent,
        constraints: vec![
            sorted_zero_constraints(&mut vx),
            sorted_zero_constraints(&mut vy),
            Vec::new(),
        ],
    }
}

/// No-slip walls with unit x-velocity along the lid; the side walls win at
/// the two lid corners so the boundary data stays continuous.
pub fn cavity_bcs(space: &SpaceTimeSpace) -> BoundaryConditions {
    let v = &space.components[VX];
    let mut vx: Vec<(u32, f64)> = v.all_boundary_dofs().iter().map(|&d| (d, 0.0)).collect();
    for &d in &v.boundary_dofs[Side::Top as usize] {
        if let Ok(i) = vx.binary_search_by_key(&d, |e| e.0) {
            vx[i].1 = 1.0;
        }
    }
    for side in [Side::Left, Side::Right] {
        for &d in &v.boundary_dofs[side as usize] {
            if let Ok(i) = vx.binary_search_by_key(&d, |e| e.0) {
                vx[i].1 = 0.0;
            }
        }
    }
    let vy: Vec<(u32, f64)> = v.all_boundary_dofs().iter().map(|&d| (d, 0.0)).collect();
    BoundaryConditions {
        kind: BcKind::LidDriven,
        constraints: vec![vx, vy, Vec::new()],
    }
}

/// Slab-sized vortex initial data: exact velocity at t=0, zero pressure.
pub fn chorin_initial(space: &SpaceTimeSpace) -> Vec<f64> {
    crate::forms::interpolate_initial(space, |p, field| match field {
        VX | VY => chorin_velocity(0.0, p)[field],
        _ => 0.0,
    })
}

/// Nodal space-time interpolant of `f(t, x, field)` over the whole state.
pub fn interpolate_spacetime<F>(space: &SpaceTimeSpace, f: F) -> Vec<f64>
where
    F: Fn(f64, [f64; 2], usize) -> f64,
{
    let nq = space.temporal.n_nodes();
    let dt = space.temporal.partition.dt();
    let mut out = vec![0.0; space.total_dofs];
    for n in 0..space.temporal.partition.n {
        let t0 = n as f64 * dt;
        for (a, &node) in space.temporal.nodes.iter().enumerate() {
            let t = t0 + node * dt;
            let base = (n * nq + a) * space.slab_size;
            for (field, comp) in space.components.iter().enumerate() {
                let off = base + space.offsets[field];
                for (d, &p) in comp.dof_coords.iter().enumerate() {
                    out[off + d] = f(t, p, field);
                }
            }
        }
    }
    out
}

/// Zero state with the problem's boundary values imposed; the standard
/// Newton starting iterate for both flow problems.
pub fn ns_initial_guess(space: &SpaceTimeSpace, bcs: &BoundaryConditions) -> Vec<f64> {
    let mut state = vec![0.0; space.total_dofs];
    bcs.apply_to_state(space, &mut state);
    state
}

/// Space-time L2 velocity error against the exact vortex solution.
pub fn chorin_velocity_error(
    mesh: &MeshLevel,
    space: &SpaceTimeSpace,
    state: &[f64],
) -> Result<f64> {
    spacetime_l2_error(mesh, space, state, &[VX, VY], |t, x, field| {
        chorin_velocity(t, x)[field]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::NsSystem;
    use crate::linalg::norm2;
    use crate::mesh::build_hierarchy;
    use crate::mesh::TimePartition;
    use crate::spaces::{build_scalar_space, build_spacetime_space, build_temporal_space};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const PR: usize = 2;

    #[test]
    fn heat_initial_matches_known_values() {
        assert!((heat_initial([0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((heat_initial([0.5, 0.25]) - 1.0).abs() < 1e-15);
        assert!((heat_initial([1.0, 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vortex_velocity_has_known_values_and_ignores_reynolds() {
        let (v, _) = chorin_exact(0.0, [0.0, 0.5], 10.0);
        assert!((v[0]).abs() < 1e-15);
        assert!((v[1] + 1.0).abs() < 1e-15);
        let (v2, _) = chorin_exact(0.0, [0.0, 0.5], 250.0);
        assert_eq!(v, v2);
        let (v3, _) = chorin_exact(0.3, [0.37, 0.81], 1.0);
        let (v4, _) = chorin_exact(0.3, [0.37, 0.81], 400.0);
        assert_eq!(v3, v4);
    }

    #[test]
    fn vortex_pressure_scales_linearly_in_reynolds() {
        let (_, p0) = chorin_exact(0.0, [0.0, 0.0], 10.0);
        assert!((p0 + 5.0).abs() < 1e-13);
        let (_, p1) = chorin_exact(0.07, [0.3, 0.9], 10.0);
        let (_, p2) = chorin_exact(0.07, [0.3, 0.9], 70.0);
        assert!((p2 - 7.0 * p1).abs() < 1e-12 * p2.abs().max(1.0));
    }

    #[test]
    fn vortex_velocity_is_divergence_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..40 {
            let t: f64 = rng.gen_range(0.0..0.1);
            let x: f64 = rng.gen_range(0.0..1.0);
            let y: f64 = rng.gen_range(0.0..1.0);
            let dvx = (chorin_velocity(t, [x + h, y])[0] - chorin_velocity(t, [x - h, y])[0])
                / (2.0 * h);
            let dvy = (chorin_velocity(t, [x, y + h])[1] - chorin_velocity(t, [x, y - h])[1])
                / (2.0 * h);
            assert!((dvx + dvy).abs() < 1e-8, "divergence {} at ({x},{y})", dvx + dvy);
        }
        // analytic cancellation is exact
        let d_analytic = |t: f64, x: f64, y: f64| {
            let e = (-2.0 * PI * PI * t).exp();
            PI * (PI * x).cos() * (PI * y).cos() * e - PI * (PI * x).cos() * (PI * y).cos() * e
        };
        assert_eq!(d_analytic(0.03, 0.21, 0.77), 0.0);
    }

    #[test]
    fn vortex_normal_velocity_vanishes_on_the_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..25 {
            let t: f64 = rng.gen_range(0.0..0.1);
            let s: f64 = rng.gen_range(0.0..1.0);
            assert!(chorin_velocity(t, [0.0, s])[0].abs() < 1e-12);
            assert!(chorin_velocity(t, [1.0, s])[0].abs() < 1e-12);
            assert!(chorin_velocity(t, [s, 0.0])[1].abs() < 1e-12);
            assert!(chorin_velocity(t, [s, 1.0])[1].abs() < 1e-12);
        }
    }

    #[test]
    fn vortex_pressure_has_zero_mean() {
        // 20x20 midpoint rule integrates cos(2 pi x) exactly to roundoff
        let n = 20;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = (i as f64 + 0.5) / n as f64;
                let y = (j as f64 + 0.5) / n as f64;
                let (_, p) = chorin_exact(0.01, [x, y], 10.0);
                total += p;
            }
        }
        assert!((total / (n * n) as f64).abs() < 1e-13);
    }

    fn taylor_hood_space(mesh: &MeshLevel, kp: usize, q: usize, tp: TimePartition) -> SpaceTimeSpace {
        build_spacetime_space(
            vec![
                build_scalar_space(mesh, kp + 1),
                build_scalar_space(mesh, kp + 1),
                build_scalar_space(mesh, kp),
            ],
            build_temporal_space(q, tp),
        )
    }

    #[test]
    fn normal_component_bcs_pin_exactly_the_wall_normals() {
        let meshes = build_hierarchy(4, 4, 1);
        let mesh = meshes.last().unwrap();
        let sp = taylor_hood_space(mesh, 1, 0, TimePartition::new(0.1, 2));
        let bcs = chorin_bcs(&sp);
        assert_eq!(bcs.kind, BcKind::NormalComponent);
        assert!(bcs.constraints[PR].is_empty());
        let v = &sp.components[VX];
        for &(d, val) in &bcs.constraints[VX] {
            assert_eq!(val, 0.0);
            let p = v.dof_coords[d as usize];
            assert!(p[0].abs() < 1e-14 || (p[0] - 1.0).abs() < 1e-14);
        }
        for &(d, val) in &bcs.constraints[VY] {
            assert_eq!(val, 0.0);
            let p = v.dof_coords[d as usize];
            assert!(p[1].abs() < 1e-14 || (p[1] - 1.0).abs() < 1e-14);
        }
        // interpolated exact initial data satisfies the constraints
        let state = chorin_initial(&sp);
        for (f, list) in bcs.constraints.iter().enumerate() {
            for &(d, val) in list {
                let got = state[sp.offsets[f] + d as usize];
                assert!((got - val).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn cavity_bcs_apply_the_lid_with_no_slip_corners() {
        let meshes = build_hierarchy(4, 4, 0);
        let mesh = meshes.last().unwrap();
        let sp = taylor_hood_space(mesh, 1, 0, TimePartition::new(0.02, 2));
        let bcs = cavity_bcs(&sp);
        let v = &sp.components[VX];
        let find = |list: &[(u32, f64)], p: [f64; 2]| -> f64 {
            let d = v
                .dof_coords
                .iter()
                .position(|&c| (c[0] - p[0]).abs() < 1e-12 && (c[1] - p[1]).abs() < 1e-12)
                .expect("dof at the probe point") as u32;
            list.iter().find(|e| e.0 == d).expect("constrained").1
        };
        assert_eq!(find(&bcs.constraints[VX], [0.5, 1.0]), 1.0);
        assert_eq!(find(&bcs.constraints[VX], [0.0, 0.5]), 0.0);
        assert_eq!(find(&bcs.constraints[VX], [0.0, 1.0]), 0.0);
        assert_eq!(find(&bcs.constraints[VX], [1.0, 1.0]), 0.0);
        assert_eq!(find(&bcs.constraints[VY], [0.5, 1.0]), 0.0);
        assert!(bcs.constraints[VY].iter().all(|e| e.1 == 0.0));
        assert_eq!(
            bcs.constraints[VX].len(),
            sp.components[VX].all_boundary_dofs().len()
        );
    }

    #[test]
    fn config_defaults_follow_the_benchmarks() {
        let h = ProblemConfig::new(ProblemKind::Heat);
        assert_eq!((h.t_final, h.n_time), (0.02, 20));
        let c = ProblemConfig::new(ProblemKind::Chorin);
        assert_eq!((c.t_final, c.n_time), (0.1, 20));
        let l = ProblemConfig::new(ProblemKind::Cavity);
        assert_eq!((l.t_final, l.n_time), (0.02, 20));
        assert!(h.validate().is_ok());
        let bad = ProblemConfig {
            reynolds: -1.0,
            ..ProblemConfig::new(ProblemKind::Cavity)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn exact_vortex_interpolant_residual_decreases_under_refinement() {
        let norm_at = |mref: u32, n_time: usize| -> f64 {
            let meshes = build_hierarchy(10, 10, mref);
            let mesh = meshes.last().unwrap();
            let sp = taylor_hood_space(mesh, 1, 1, TimePartition::new(0.1, n_time));
            let bcs = chorin_bcs(&sp);
            let initial = chorin_initial(&sp);
            let sys = NsSystem::new(mesh, sp.clone(), 10.0, bcs, initial).unwrap();
            let state = interpolate_spacetime(&sp, |t, x, field| match field {
                VX | VY => chorin_velocity(t, x)[field],
                _ => chorin_exact(t, x, 10.0).1,
            });
            let mut r = vec![0.0; sys.total_dofs()];
            sys.residual(&state, &mut r);
            norm2(&r)
        };
        let coarse = norm_at(1, 10);
        let fine = norm_at(2, 20);
        assert!(
            fine < coarse,
            "interpolant residual must decrease: {coarse:.3e} -> {fine:.3e}"
        );
    }
}
