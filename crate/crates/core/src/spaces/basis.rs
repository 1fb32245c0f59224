//! Nodal Lagrange bases: degree-k triangles (via monomial coefficients from
//! an inverted Vandermonde system) and degree-q intervals (product form, so
//! endpoint evaluations are exact Kronecker deltas).

use crate::linalg::dense::{dense_factorize_in_place, dense_solve_in_place};

/// Local node layout on the reference triangle, matching the global DoF
/// convention: the 3 vertices, then k-1 interior nodes per edge in the order
/// (v0,v1), (v1,v2), (v2,v0), each run directed from its first to its second
/// vertex, then cell-interior lattice nodes.
pub fn triangle_nodes(k: usize) -> Vec<[f64; 2]> {
    assert!((1..=3).contains(&k), "spatial degree must be 1..=3");
    let kf = k as f64;
    let mut nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let verts = [[0.0f64, 0.0], [1.0, 0.0], [0.0, 1.0]];
    for (a, b) in [(0usize, 1usize), (1, 2), (2, 0)] {
        for j in 1..k {
            let t = j as f64 / kf;
            nodes.push([
                verts[a][0] + t * (verts[b][0] - verts[a][0]),
                verts[a][1] + t * (verts[b][1] - verts[a][1]),
            ]);
        }
    }
    for j in 1..k {
        for i in 1..k {
            if i + j <= k - 1 {
                nodes.push([i as f64 / kf, j as f64 / kf]);
            }
        }
    }
    debug_assert_eq!(nodes.len(), (k + 1) * (k + 2) / 2);
    nodes
}

/// Monomial exponent pairs (i, j) with i + j <= k, ordered by total degree.
fn monomial_exponents(k: usize) -> Vec<(u32, u32)> {
    let mut e = Vec::new();
    for t in 0..=k as u32 {
        for i in (0..=t).rev() {
            e.push((i, t - i));
        }
    }
    e
}

/// Degree-k scalar Lagrange basis on the reference triangle.
#[derive(Debug, Clone)]
pub struct TriBasis {
    pub k: usize,
    pub ndofs: usize,
    exps: Vec<(u32, u32)>,
    /// coeffs[n * ndofs + m]: coefficient of monomial m in basis function n.
    coeffs: Vec<f64>,
}

impl TriBasis {
    pub fn new(k: usize) -> Self {
        let nodes = triangle_nodes(k);
        let nd = nodes.len();
        let exps = monomial_exponents(k);
        debug_assert_eq!(exps.len(), nd);
        // Vandermonde A[p][m] = mono_m(node_p); basis n solves A c_n = e_n
        let mut a = vec![0.0; nd * nd];
        for (p, node) in nodes.iter().enumerate() {
            for (m, &(i, j)) in exps.iter().enumerate() {
                a[p * nd + m] = node[0].powi(i as i32) * node[1].powi(j as i32);
            }
        }
        let mut piv = vec![0u32; nd];
        dense_factorize_in_place(&mut a, &mut piv, nd).expect("unisolvent nodes");
        let mut coeffs = vec![0.0; nd * nd];
        let mut rhs = vec![0.0; nd];
        for n in 0..nd {
            rhs.fill(0.0);
            rhs[n] = 1.0;
            dense_solve_in_place(&a, &piv, nd, &mut rhs);
            coeffs[n * nd..(n + 1) * nd].copy_from_slice(&rhs);
        }
        TriBasis {
            k,
            ndofs: nd,
            exps,
            coeffs,
        }
    }

    /// Values of all basis functions at a reference point.
    pub fn eval(&self, p: [f64; 2], values: &mut [f64]) {
        debug_assert_eq!(values.len(), self.ndofs);
        let monos: Vec<f64> = self
            .exps
            .iter()
            .map(|&(i, j)| p[0].powi(i as i32) * p[1].powi(j as i32))
            .collect();
        for n in 0..self.ndofs {
            values[n] = self.coeffs[n * self.ndofs..]
                .iter()
                .zip(&monos)
                .map(|(c, m)| c * m)
                .sum();
        }
    }

    /// Reference gradients of all basis functions at a reference point.
    pub fn eval_grad(&self, p: [f64; 2], grads: &mut [[f64; 2]]) {
        debug_assert_eq!(grads.len(), self.ndofs);
        let dmono: Vec<[f64; 2]> = self
            .exps
            .iter()
            .map(|&(i, j)| {
                let (i, j) = (i as i32, j as i32);
                [
                    if i > 0 {
                        i as f64 * p[0].powi(i - 1) * p[1].powi(j)
                    } else {
                        0.0
                    },
                    if j > 0 {
                        j as f64 * p[0].powi(i) * p[1].powi(j - 1)
                    } else {
                        0.0
                    },
                ]
            })
            .collect();
        for n in 0..self.ndofs {
            let row = &self.coeffs[n * self.ndofs..(n + 1) * self.ndofs];
            let mut g = [0.0, 0.0];
            for (c, d) in row.iter().zip(&dmono) {
                g[0] += c * d[0];
                g[1] += c * d[1];
            }
            grads[n] = g;
        }
    }

    /// Tabulate values and gradients at a set of reference points.
    pub fn tabulate(&self, points: &[[f64; 2]]) -> TriTabulation {
        let nd = self.ndofs;
        let mut vals = vec![0.0; points.len() * nd];
        let mut grads = vec![[0.0; 2]; points.len() * nd];
        for (g, p) in points.iter().enumerate() {
            self.eval(*p, &mut vals[g * nd..(g + 1) * nd]);
            self.eval_grad(*p, &mut grads[g * nd..(g + 1) * nd]);
        }
        TriTabulation {
            ndofs: nd,
            vals,
            grads,
        }
    }
}

/// Basis values/gradients at a fixed set of points (point-major).
#[derive(Debug, Clone)]
pub struct TriTabulation {
    pub ndofs: usize,
    vals: Vec<f64>,
    grads: Vec<[f64; 2]>,
}

impl TriTabulation {
    pub fn values(&self, point: usize) -> &[f64] {
        &self.vals[point * self.ndofs..(point + 1) * self.ndofs]
    }
    pub fn grads(&self, point: usize) -> &[[f64; 2]] {
        &self.grads[point * self.ndofs..(point + 1) * self.ndofs]
    }
}

/// Equispaced Lagrange nodes on [0,1] for temporal degree q; the single
/// q = 0 node sits at the right endpoint so upwind jump terms stay nodal.
pub fn interval_nodes(q: usize) -> Vec<f64> {
    if q == 0 {
        vec![1.0]
    } else {
        (0..=q).map(|j| j as f64 / q as f64).collect()
    }
}

/// Evaluate 1D Lagrange basis values at t via the product form; exact 0/1 at
/// the nodes themselves.
pub fn lagrange_values(nodes: &[f64], t: f64, out: &mut [f64]) {
    let n = nodes.len();
    debug_assert_eq!(out.len(), n);
    for a in 0..n {
        let mut v = 1.0;
        for m in 0..n {
            if m != a {
                v *= (t - nodes[m]) / (nodes[a] - nodes[m]);
            }
        }
        out[a] = v;
    }
}

/// Evaluate 1D Lagrange basis derivatives at t.
pub fn lagrange_derivatives(nodes: &[f64], t: f64, out: &mut [f64]) {
    let n = nodes.len();
    debug_assert_eq!(out.len(), n);
    for a in 0..n {
        let mut sum = 0.0;
        for m in 0..n {
            if m == a {
                continue;
            }
            let mut term = 1.0 / (nodes[a] - nodes[m]);
            for l in 0..n {
                if l != a && l != m {
                    term *= (t - nodes[l]) / (nodes[a] - nodes[l]);
                }
            }
            sum += term;
        }
        out[a] = sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_basis_is_nodal() {
        for k in 1..=3 {
            let basis = TriBasis::new(k);
            let nodes = triangle_nodes(k);
            let mut vals = vec![0.0; basis.ndofs];
            for (p, node) in nodes.iter().enumerate() {
                basis.eval(*node, &mut vals);
                for (n, &v) in vals.iter().enumerate() {
                    let expect = if n == p { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-12, "k={k} phi_{n}(node_{p}) = {v}");
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_and_gradient_sum() {
        let points = [[0.21, 0.34], [0.0, 0.99], [0.5, 0.5], [0.123, 0.456]];
        for k in 1..=3 {
            let basis = TriBasis::new(k);
            let mut vals = vec![0.0; basis.ndofs];
            let mut grads = vec![[0.0; 2]; basis.ndofs];
            for p in points {
                basis.eval(p, &mut vals);
                let s: f64 = vals.iter().sum();
                assert!((s - 1.0).abs() < 1e-13, "k={k} sum {s}");
                basis.eval_grad(p, &mut grads);
                let gx: f64 = grads.iter().map(|g| g[0]).sum();
                let gy: f64 = grads.iter().map(|g| g[1]).sum();
                assert!(gx.abs() < 1e-12 && gy.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degree_reproduction() {
        // interpolating x^2 - 3xy at the nodes reproduces it exactly for k >= 2
        let k = 2;
        let basis = TriBasis::new(k);
        let nodes = triangle_nodes(k);
        let f = |p: [f64; 2]| p[0] * p[0] - 3.0 * p[0] * p[1];
        let coef: Vec<f64> = nodes.iter().map(|&n| f(n)).collect();
        let mut vals = vec![0.0; basis.ndofs];
        for p in [[0.3, 0.3], [0.1, 0.77], [0.0, 0.0]] {
            basis.eval(p, &mut vals);
            let got: f64 = vals.iter().zip(&coef).map(|(v, c)| v * c).sum();
            assert!((got - f(p)).abs() < 1e-13);
        }
    }

    #[test]
    fn interval_basis_endpoint_values_are_exact() {
        for q in 0..=3 {
            let nodes = interval_nodes(q);
            let mut v0 = vec![0.0; q + 1];
            let mut v1 = vec![0.0; q + 1];
            lagrange_values(&nodes, 0.0, &mut v0);
            lagrange_values(&nodes, 1.0, &mut v1);
            for a in 0..=q {
                // exact bit-for-bit, not approximately
                let expect1 = if a == q { 1.0 } else { 0.0 };
                assert_eq!(v1[a], expect1, "q={q} theta_{a}(1)");
                if q > 0 {
                    let expect0 = if a == 0 { 1.0 } else { 0.0 };
                    assert_eq!(v0[a], expect0, "q={q} theta_{a}(0)");
                }
            }
        }
    }

    #[test]
    fn interval_derivatives_match_finite_differences() {
        let nodes = interval_nodes(3);
        let mut d = vec![0.0; 4];
        let mut vp = vec![0.0; 4];
        let mut vm = vec![0.0; 4];
        let t = 0.37;
        let h = 1e-6;
        lagrange_derivatives(&nodes, t, &mut d);
        lagrange_values(&nodes, t + h, &mut vp);
        lagrange_values(&nodes, t - h, &mut vm);
        for a in 0..4 {
            let fd = (vp[a] - vm[a]) / (2.0 * h);
            assert!((d[a] - fd).abs() < 1e-8, "theta_{a}' {} vs {}", d[a], fd);
        }
    }
}
