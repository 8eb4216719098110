//! Gegenbauer and dimension-`D` Legendre polynomials, spherical-harmonic
//! counts, sphere areas and the Gauss–Legendre rules used for every zonal
//! integral in the crate.
//!
//! Zonal integrals `∫_{-1}^{1} f(t) (1 - t²)^{(D-3)/2} dt` are evaluated in the
//! polar angle, `∫_0^π f(cos θ) sin^{D-2} θ dθ`, with the Gauss–Legendre nodes
//! mapped onto `[0, π]`. In that variable every integrand used here is analytic
//! on the closed interval, so convergence is spectral for all `D`, including
//! the half-integer weight exponents of even `D`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quadrature order used when callers do not ask for one.
pub const DEFAULT_QUADRATURE_ORDER: usize = 128;

/// Which derivative of a polynomial to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deriv {
    Value,
    First,
}

/// Dimension/degree pair for a Gegenbauer polynomial `C_n^{(α)}`, `α = (D-2)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisIndex {
    dim: u32,
    degree: u32,
}

impl BasisIndex {
    pub fn new(dim: u32, degree: u32) -> Result<Self> {
        check_dim(dim)?;
        Ok(BasisIndex { dim, degree })
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn alpha(&self) -> f64 {
        gegenbauer_order(self.dim)
    }
}

pub(crate) fn check_dim(dim: u32) -> Result<()> {
    if dim < 3 {
        return Err(Error::invalid(format!("dimension must be >= 3, got {dim}")));
    }
    Ok(())
}

/// `α = (D-2)/2`.
pub fn gegenbauer_order(dim: u32) -> f64 {
    (dim as f64 - 2.0) / 2.0
}

fn check_unit(t: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&t) {
        return Err(Error::Domain {
            what: "t",
            value: t,
            domain: "[-1, 1]",
        });
    }
    Ok(())
}

/// Number of linearly independent degree-`n` spherical harmonics on `S^{D-1}`,
/// `N(D,n) = (2n+D-2)(n+D-3)! / ((D-2)! n!)`, in exact integer arithmetic.
pub fn harmonic_count(dim: u32, degree: u32) -> Result<u64> {
    check_dim(dim)?;
    let n = degree as u128;
    let d = dim as u128;
    let overflow = || Error::Overflow(format!("N({dim}, {degree})"));
    // binom(n + D - 3, D - 3), built so that every partial product is an
    // integer.
    let mut binom: u128 = 1;
    for i in 1..=(d - 3) {
        binom = binom.checked_mul(n + i).ok_or_else(overflow)? / i;
    }
    let count = (2 * n + d - 2).checked_mul(binom).ok_or_else(overflow)? / (d - 2);
    u64::try_from(count).map_err(|_| overflow())
}

/// Surface measure of the unit sphere in `R^D`, `2π^{D/2} / Γ(D/2)`.
pub fn surface_area(dim: u32) -> Result<f64> {
    if dim < 2 {
        return Err(Error::invalid(format!("surface area needs dimension >= 2, got {dim}")));
    }
    // σ_1 = 2, σ_2 = 2π, σ_{D+2} = 2π σ_D / D
    let mut d = if dim.is_multiple_of(2) { 2 } else { 1 };
    let mut area = if d == 2 { 2.0 * PI } else { 2.0 };
    while d < dim {
        area *= 2.0 * PI / d as f64;
        d += 2;
    }
    Ok(area)
}

fn gegenbauer_raw(alpha: f64, n: u32, t: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut cur = 2.0 * alpha * t;
    for k in 1..n {
        let k = k as f64;
        let next = (2.0 * t * (k + alpha) * cur - (k + 2.0 * alpha - 1.0) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `C_n^{(α)}(t)` or its first derivative, by three-term recurrence.
pub fn gegenbauer_eval(idx: BasisIndex, t: f64, deriv: Deriv) -> Result<f64> {
    check_unit(t)?;
    let alpha = idx.alpha();
    Ok(match deriv {
        Deriv::Value => gegenbauer_raw(alpha, idx.degree, t),
        Deriv::First if idx.degree == 0 => 0.0,
        Deriv::First => 2.0 * alpha * gegenbauer_raw(alpha + 1.0, idx.degree - 1, t),
    })
}

/// Zonal Legendre polynomial `P_n(D,t) = C_n^{(α)}(t) / C_n^{(α)}(1)`.
pub fn legendre_eval(dim: u32, degree: u32, t: f64, deriv: Deriv) -> Result<f64> {
    let idx = BasisIndex::new(dim, degree)?;
    let value = gegenbauer_eval(idx, t, deriv)?;
    Ok(value / gegenbauer_raw(idx.alpha(), degree, 1.0))
}

/// Evaluates `P_0(D,t) ..= P_max(D,t)` in one pass.
///
/// The normalisations `C_n^{(α)}(1)` come from running the same recurrence
/// at `t = 1`, so `P_n(D,1)` is exactly `1.0`.
#[derive(Debug, Clone)]
pub struct ZonalLegendre {
    alpha: f64,
    norms: Vec<f64>,
}

impl ZonalLegendre {
    pub fn new(dim: u32, max_degree: usize) -> Result<Self> {
        check_dim(dim)?;
        let alpha = gegenbauer_order(dim);
        let mut norms = vec![0.0; max_degree + 1];
        gegenbauer_sweep(alpha, 1.0, &mut norms);
        Ok(ZonalLegendre { alpha, norms })
    }

    pub fn max_degree(&self) -> usize {
        self.norms.len() - 1
    }

    /// Fills `out[n] = P_n(D, t)` for `n < out.len()`.
    pub fn fill(&self, t: f64, out: &mut [f64]) {
        debug_assert!(out.len() <= self.norms.len());
        gegenbauer_sweep(self.alpha, t, out);
        for (v, norm) in out.iter_mut().zip(&self.norms) {
            *v /= norm;
        }
    }

    pub fn values(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.norms.len()];
        self.fill(t, &mut out);
        out
    }
}

fn gegenbauer_sweep(alpha: f64, t: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() == 1 {
        return;
    }
    out[1] = 2.0 * alpha * t;
    for k in 1..out.len() - 1 {
        let kf = k as f64;
        out[k + 1] = (2.0 * t * (kf + alpha) * out[k] - (kf + 2.0 * alpha - 1.0) * out[k - 1]) / (kf + 1.0);
    }
}

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `Σ w_i f(x_i)`, the plain rule on `[-1, 1]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Gauss–Legendre nodes and weights by Newton iteration on `P_order`.
pub fn quadrature_rule(order: usize) -> Result<QuadratureRule> {
    if order == 0 {
        return Err(Error::invalid("quadrature order must be >= 1"));
    }
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // i-th largest root
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadratureRule { nodes, weights })
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// A quadrature rule for `∫_{-1}^{1} f(t) (1 - t²)^{(D-3)/2} dt`, i.e. for
/// `∫_0^π f(cos θ) sin^{D-2}θ dθ`, with nodes in the polar angle.
#[derive(Debug, Clone)]
pub struct ZonalRule {
    dim: u32,
    theta: Vec<f64>,
    t: Vec<f64>,
    weights: Vec<f64>,
}

impl ZonalRule {
    pub fn new(dim: u32, rule: &QuadratureRule) -> Result<Self> {
        check_dim(dim)?;
        let power = dim as i32 - 2;
        let mut theta = Vec::with_capacity(rule.order());
        let mut t = Vec::with_capacity(rule.order());
        let mut weights = Vec::with_capacity(rule.order());
        for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
            let th = 0.5 * PI * (x + 1.0);
            theta.push(th);
            t.push(th.cos());
            weights.push(0.5 * PI * w * th.sin().powi(power));
        }
        Ok(ZonalRule { dim, theta, t, weights })
    }

    pub fn with_order(dim: u32, order: usize) -> Result<Self> {
        Self::new(dim, &quadrature_rule(order)?)
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Polar angles of the nodes, increasing.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// `cos θ` at the nodes.
    pub fn t(&self) -> &[f64] {
        &self.t
    }

    /// Weights with `sin^{D-2} θ` folded in.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.t.iter().zip(&self.weights).map(|(&t, &w)| w * f(t)).sum()
    }

    pub fn try_integrate<F: FnMut(f64) -> Result<f64>>(&self, mut f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (&t, &w) in self.t.iter().zip(&self.weights) {
            acc += w * f(t)?;
        }
        Ok(acc)
    }
}

/// `∫_{-1}^{1} f(t) (1 - t²)^{(D-3)/2} dt` with the rule's nodes mapped to
/// the polar angle.
pub fn weighted_integral<F>(f: F, dim: u32, rule: &QuadratureRule) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    ZonalRule::new(dim, rule)?.try_integrate(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn harmonic_count_examples() {
        assert_eq!(harmonic_count(3, 0).unwrap(), 1);
        assert_eq!(harmonic_count(3, 2).unwrap(), 5);
        assert_eq!(harmonic_count(4, 2).unwrap(), 9);
        // D = 4 gives (n+1)^2, D = 3 gives 2n+1
        for n in 0..50 {
            assert_eq!(harmonic_count(4, n).unwrap(), (n as u64 + 1).pow(2));
            assert_eq!(harmonic_count(3, n).unwrap(), 2 * n as u64 + 1);
        }
        // degree-2 harmonics on S^4: traceless symmetric 5x5 matrices
        assert_eq!(harmonic_count(5, 2).unwrap(), 14);
    }

    #[test]
    fn harmonic_count_overflow_is_reported() {
        assert!(matches!(harmonic_count(200, 4_000_000_000), Err(Error::Overflow(_))));
        assert!(harmonic_count(2, 1).is_err());
    }

    #[test]
    fn surface_areas() {
        assert_relative_eq!(surface_area(2).unwrap(), 2.0 * PI, max_relative = 1e-15);
        assert_relative_eq!(surface_area(3).unwrap(), 4.0 * PI, max_relative = 1e-15);
        assert_relative_eq!(surface_area(4).unwrap(), 2.0 * PI * PI, max_relative = 1e-15);
        assert_relative_eq!(surface_area(5).unwrap(), 8.0 * PI * PI / 3.0, max_relative = 1e-15);
        assert!(surface_area(1).is_err());
    }

    #[test]
    fn gegenbauer_seeds() {
        for dim in 3..8 {
            let alpha = gegenbauer_order(dim);
            for &t in &[-1.0, -0.3, 0.0, 0.7, 1.0] {
                let c0 = gegenbauer_eval(BasisIndex::new(dim, 0).unwrap(), t, Deriv::Value);
                let c1 = gegenbauer_eval(BasisIndex::new(dim, 1).unwrap(), t, Deriv::Value);
                assert_eq!(c0.unwrap(), 1.0);
                assert_relative_eq!(c1.unwrap(), 2.0 * alpha * t);
            }
        }
        let idx = BasisIndex::new(3, 2).unwrap();
        assert_relative_eq!(idx.alpha(), 0.5);
        assert_relative_eq!(gegenbauer_eval(idx, 0.0, Deriv::Value).unwrap(), -0.5);
    }

    #[test]
    fn gegenbauer_rejects_outside_unit_interval() {
        let idx = BasisIndex::new(3, 4).unwrap();
        assert!(matches!(
            gegenbauer_eval(idx, 1.0 + 1e-12, Deriv::Value),
            Err(Error::Domain { .. })
        ));
        assert!(legendre_eval(4, 2, -1.5, Deriv::First).is_err());
    }

    #[test]
    fn legendre_examples() {
        for dim in 3..9 {
            for n in 0..40 {
                assert_eq!(legendre_eval(dim, n, 1.0, Deriv::Value).unwrap(), 1.0);
            }
        }
        assert_relative_eq!(legendre_eval(3, 2, 0.0, Deriv::Value).unwrap(), -0.5);
        assert_relative_eq!(
            legendre_eval(4, 2, 0.0, Deriv::Value).unwrap(),
            -1.0 / 3.0,
            max_relative = 1e-15
        );
        let t = 0.37;
        assert_relative_eq!(
            legendre_eval(4, 2, t, Deriv::Value).unwrap(),
            (4.0 * t * t - 1.0) / 3.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn zonal_table_matches_pointwise() {
        let table = ZonalLegendre::new(5, 30).unwrap();
        let vals = table.values(-0.42);
        for (n, v) in vals.iter().enumerate() {
            let direct = legendre_eval(5, n as u32, -0.42, Deriv::Value).unwrap();
            assert_relative_eq!(*v, direct, max_relative = 1e-13, epsilon = 1e-15);
        }
        assert!(table.values(1.0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn quadrature_examples() {
        let r1 = quadrature_rule(1).unwrap();
        assert_eq!(r1.nodes(), &[0.0]);
        assert_relative_eq!(r1.weights()[0], 2.0, max_relative = 1e-15);
        let r2 = quadrature_rule(2).unwrap();
        assert_relative_eq!(r2.integrate(|t| t * t), 2.0 / 3.0, max_relative = 1e-15);
        let r64 = quadrature_rule(64).unwrap();
        let half_disc = r64.integrate(|t| (1.0 - t * t).sqrt());
        assert!((half_disc - PI / 2.0).abs() < 1e-5);
        assert!(quadrature_rule(0).is_err());
    }

    #[test]
    fn quadrature_rule_invariants() {
        for order in [1, 2, 3, 7, 16, 64, 128, 257, 600] {
            let r = quadrature_rule(order).unwrap();
            assert!(r.nodes().windows(2).all(|w| w[0] < w[1]));
            assert!(r.nodes().iter().all(|x| x.abs() < 1.0));
            assert!(r.weights().iter().all(|&w| w > 0.0));
            let total: f64 = r.weights().iter().sum();
            assert!((total - 2.0).abs() < 1e-12, "order {order}: {total}");
            // exact up to degree 2n-1 (check the top even degree 2n-2)
            let deg = 2 * order as i32 - 2;
            let exact = 2.0 / (deg as f64 + 1.0);
            let approx = r.integrate(|x| x.powi(deg));
            assert!((approx - exact).abs() <= 1e-12 * exact.max(1.0));
        }
        assert_eq!(quadrature_rule(128).unwrap(), quadrature_rule(128).unwrap());
    }

    #[test]
    fn weighted_integral_examples() {
        let rule = quadrature_rule(64).unwrap();
        let one = weighted_integral(|_| Ok(1.0), 3, &rule).unwrap();
        assert_relative_eq!(one, 2.0, max_relative = 1e-14);
        let one4 = weighted_integral(|_| Ok(1.0), 4, &rule).unwrap();
        assert!((one4 - PI / 2.0).abs() < 1e-10);
        let p2 = weighted_integral(|t| legendre_eval(3, 2, t, Deriv::Value), 3, &rule).unwrap();
        assert!(p2.abs() < 1e-12);
        let err = weighted_integral(|t| legendre_eval(3, 2, 2.0 * t, Deriv::Value), 3, &rule);
        assert!(err.is_err());
    }
}
