//! Quadrature rules: Gauss-Legendre on [0,1] and a Duffy-collapsed tensor
//! rule on the reference triangle {(0,0),(1,0),(0,1)}.

use crate::{Error, Result};

/// Max polynomial exactness supported on the interval.
pub const MAX_INTERVAL_DEGREE: usize = 20;
/// Max polynomial exactness supported on the triangle.
pub const MAX_TRIANGLE_DEGREE: usize = 12;

/// Gauss-Legendre nodes/weights on [0,1], exact through degree 2n-1.
///
/// Nodes are found by Newton iteration on the Legendre polynomial, using the
/// Chebyshev points as starting guesses.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        // root in (-1, 1)
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..64 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((0.5 * (x + 1.0), 0.5 * w));
    }
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Rule on [0,1] exact for polynomials of the given degree.
pub fn interval_rule(degree: usize) -> Result<Vec<(f64, f64)>> {
    if degree > MAX_INTERVAL_DEGREE {
        return Err(Error::InvalidConfig(format!(
            "interval quadrature degree {degree} exceeds {MAX_INTERVAL_DEGREE}"
        )));
    }
    Ok(gauss_legendre(degree / 2 + 1))
}

/// Rule on the reference triangle exact for total degree `degree`.
///
/// Duffy map (u,v) -> (u(1-v), v) turns the triangle integral into a square
/// integral with an extra (1-v) factor, so a tensor Gauss rule with one extra
/// point in v is exact.
pub fn triangle_rule(degree: usize) -> Result<Vec<([f64; 2], f64)>> {
    if degree > MAX_TRIANGLE_DEGREE {
        return Err(Error::InvalidConfig(format!(
            "triangle quadrature degree {degree} exceeds {MAX_TRIANGLE_DEGREE}"
        )));
    }
    let gu = gauss_legendre(degree / 2 + 1);
    let gv = gauss_legendre((degree + 1) / 2 + 1);
    let mut rule = Vec::with_capacity(gu.len() * gv.len());
    for &(v, wv) in &gv {
        for &(u, wu) in &gu {
            rule.push(([u * (1.0 - v), v], wu * wv * (1.0 - v)));
        }
    }
    Ok(rule)
}
