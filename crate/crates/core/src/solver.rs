//! Axially symmetric self-consistency problem `u = λ G(u)`.
//!
//! A state is the coefficient vector of `u(θ) = Σ_{n=1}^{N} u_n P_{2n}(D, cos θ)`.
//! With the orientation density `g̃ ∝ e^{-u} sin^{D-2}θ` on `[0, π]` and its
//! zonal moments `a_n = ∫ g̃ P_{2n} dθ`, the Funk–Hecke identity turns the
//! nonlinear operator into a diagonal one:
//!
//! ```text
//! (λ G(u))_n = -λ k_n a_n(u)
//! ```
//!
//! All norms on states are Euclidean in coefficient space.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::polybasis::{check_dim, harmonic_count, surface_area, ZonalLegendre, ZonalRule, DEFAULT_QUADRATURE_ORDER};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Pivot ratio of `I - J` below which Newton gives up.
const SINGULAR_PIVOT_RATIO: f64 = 1e-13;
/// `|det(I - J)| / Π max(1, ‖row‖)` below which an index is not trusted.
const DEGENERATE_DET_RATIO: f64 = 1e-12;
/// Slack on the a priori bound `‖u‖_∞ ≤ λ ‖K̂‖_∞`.
const BOUND_SLACK: f64 = 1e-8;

/// Even zonal state without constant term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisymState {
    dim: u32,
    coeffs: Vec<f64>,
}

impl AxisymState {
    pub fn new(dim: u32, coeffs: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        if coeffs.is_empty() {
            return Err(Error::invalid("a state needs at least one mode"));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("state coefficients".into()));
        }
        Ok(AxisymState { dim, coeffs })
    }

    pub fn zeros(dim: u32, modes: usize) -> Result<Self> {
        Self::new(dim, vec![0.0; modes])
    }

    /// `amplitude · P_{2n}` embedded in `modes` coefficients (`n` is 1-based).
    pub fn mode(dim: u32, modes: usize, n: usize, amplitude: f64) -> Result<Self> {
        if n == 0 || n > modes {
            return Err(Error::invalid(format!("mode {n} outside 1..={modes}")));
        }
        let mut c = vec![0.0; modes];
        c[n - 1] = amplitude;
        Self::new(dim, c)
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn norm(&self) -> f64 {
        l2(&self.coeffs)
    }

    /// Distance to another state, padding the shorter one with zeros.
    pub fn distance(&self, other: &AxisymState) -> f64 {
        padded_distance(&self.coeffs, &other.coeffs)
    }

    /// Same state with `modes` coefficients (zero padded or cut).
    pub fn resized(&self, modes: usize) -> Result<Self> {
        let mut c = self.coeffs.clone();
        c.resize(modes, 0.0);
        Self::new(self.dim, c)
    }

    /// `u(θ)` evaluated directly from the series.
    pub fn eval(&self, theta: f64) -> Result<f64> {
        let table = ZonalLegendre::new(self.dim, 2 * self.coeffs.len())?;
        let p = table.values(theta.cos());
        Ok(self.coeffs.iter().enumerate().map(|(i, c)| c * p[2 * i + 2]).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Picard,
    Newton,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Picard => "picard",
            Method::Newton => "newton",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "picard" => Ok(Method::Picard),
            "newton" => Ok(Method::Newton),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub lambda: f64,
    pub dim: u32,
    pub modes: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub method: Method,
    pub converged: bool,
    /// `sign det(I - J)`, absent when not computed or degenerate.
    pub index: Option<i8>,
    pub sup_norm_u: f64,
}

impl SolutionReport {
    pub fn state(&self) -> AxisymState {
        AxisymState {
            dim: self.dim,
            coeffs: self.modes.clone(),
        }
    }

    pub fn amplitude(&self) -> f64 {
        l2(&self.modes)
    }

    /// Share of the coefficient norm carried by mode `n` (1-based).
    pub fn mode_fraction(&self, n: usize) -> f64 {
        let a = self.amplitude();
        if a == 0.0 {
            return 0.0;
        }
        self.modes.get(n - 1).map_or(0.0, |c| c.abs() / a)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Density `f = e^{-u}/β` on the sphere, sampled at the quadrature nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub dim: u32,
    pub theta: Vec<f64>,
    /// Zonal quadrature weights in θ, `sin^{D-2}θ` included.
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
    /// `β = ∫_{S^{D-1}} e^{-u} dσ`.
    pub beta: f64,
}

impl DensityProfile {
    /// `∫ f dσ`.
    pub fn mass(&self) -> Result<f64> {
        let s = surface_area(self.dim - 1)?;
        Ok(s * self.weights.iter().zip(&self.values).map(|(w, f)| w * f).sum::<f64>())
    }
}

/// Solver knobs; `relaxation` only affects Picard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
    pub relaxation: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            method: Method::Newton,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            relaxation: 1.0,
        }
    }
}

impl SolveOptions {
    fn check(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::invalid(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::invalid(format!(
                "relaxation must lie in (0, 1], got {}",
                self.relaxation
            )));
        }
        Ok(())
    }
}

/// Quadrature order used for a model with `modes` coefficients.
pub fn model_order(modes: usize) -> usize {
    DEFAULT_QUADRATURE_ORDER.max(8 * modes + 32)
}

/// A kernel together with the tabulated basis at the quadrature nodes.
///
/// The model works with exactly `spec.n_max()` modes; shorter states are
/// padded with zeros.
#[derive(Debug, Clone)]
pub struct ZonalModel {
    spec: KernelSpec,
    rule: ZonalRule,
    /// `basis[i * n + m] = P_{2(m+1)}(D, t_i)`.
    basis: Vec<f64>,
    harmonics: Vec<f64>,
}

impl ZonalModel {
    pub fn new(spec: &KernelSpec) -> Result<Self> {
        Self::with_order(spec, model_order(spec.n_max()))
    }

    pub fn with_order(spec: &KernelSpec, order: usize) -> Result<Self> {
        let rule = ZonalRule::with_order(spec.dim(), order)?;
        Self::with_rule(spec, rule)
    }

    pub fn with_rule(spec: &KernelSpec, rule: ZonalRule) -> Result<Self> {
        if rule.dim() != spec.dim() {
            return Err(Error::invalid("quadrature rule built for another dimension"));
        }
        let n = spec.n_max();
        let table = ZonalLegendre::new(spec.dim(), 2 * n)?;
        let mut row = vec![0.0; 2 * n + 1];
        let mut basis = Vec::with_capacity(rule.len() * n);
        for &t in rule.t() {
            table.fill(t, &mut row);
            basis.extend((1..=n).map(|m| row[2 * m]));
        }
        let harmonics = (1..=n)
            .map(|m| harmonic_count(spec.dim(), 2 * m as u32).map(|h| h as f64))
            .collect::<Result<Vec<_>>>()?;
        Ok(ZonalModel {
            spec: spec.clone(),
            rule,
            basis,
            harmonics,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn rule(&self) -> &ZonalRule {
        &self.rule
    }

    pub fn dim(&self) -> u32 {
        self.spec.dim()
    }

    pub fn n_modes(&self) -> usize {
        self.spec.n_max()
    }

    /// `N(D, 2n)` for `n = 1..N`.
    pub fn harmonics(&self) -> &[f64] {
        &self.harmonics
    }

    fn row(&self, i: usize) -> &[f64] {
        let n = self.n_modes();
        &self.basis[i * n..(i + 1) * n]
    }

    /// Pads `state` to the model size after checking it fits.
    pub fn coeffs_of(&self, state: &AxisymState) -> Result<Vec<f64>> {
        if state.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "state dimension {} does not match kernel dimension {}",
                state.dim(),
                self.dim()
            )));
        }
        if state.n_modes() > self.n_modes() {
            return Err(Error::invalid(format!(
                "state has {} modes but the kernel only {}",
                state.n_modes(),
                self.n_modes()
            )));
        }
        let mut c = state.coeffs().to_vec();
        c.resize(self.n_modes(), 0.0);
        Ok(c)
    }

    /// `u(θ_i)` at every node.
    pub fn potential(&self, coeffs: &[f64]) -> Vec<f64> {
        (0..self.rule.len())
            .map(|i| self.row(i).iter().zip(coeffs).map(|(p, c)| p * c).sum())
            .collect()
    }

    /// Node weights of `g̃`: `q_i = w_i e^{-(u_i - min u)} / Σ`, summing to 1.
    /// Also returns `log ∫_0^π e^{-u} sin^{D-2}θ dθ`.
    pub fn boltzmann(&self, coeffs: &[f64]) -> (Vec<f64>, f64) {
        let u = self.potential(coeffs);
        let shift = u.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut q: Vec<f64> = u
            .iter()
            .zip(self.rule.weights())
            .map(|(ui, w)| w * (-(ui - shift)).exp())
            .collect();
        let z: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= z);
        (q, z.ln() - shift)
    }

    /// Zonal moments `a_1..a_N` of `g̃`. They vanish identically at `u = 0`
    /// by orthogonality, which keeps `ū` an exact fixed point.
    pub fn moments(&self, coeffs: &[f64]) -> Vec<f64> {
        if coeffs.iter().all(|&c| c == 0.0) {
            return vec![0.0; self.n_modes()];
        }
        let (q, _) = self.boltzmann(coeffs);
        self.moments_from_weights(&q)
    }

    fn moments_from_weights(&self, q: &[f64]) -> Vec<f64> {
        let n = self.n_modes();
        let mut a = vec![0.0; n];
        for (i, &qi) in q.iter().enumerate() {
            for (am, p) in a.iter_mut().zip(self.row(i)) {
                *am += qi * p;
            }
        }
        a
    }

    /// Coefficients of `λ G(u)`.
    pub fn apply_g(&self, coeffs: &[f64], lambda: f64) -> Vec<f64> {
        let a = self.moments(coeffs);
        self.spec
            .coeffs()
            .iter()
            .zip(&a)
            .map(|(k, am)| -lambda * k * am)
            .collect()
    }

    /// `u - λ G(u)`.
    pub fn residual(&self, coeffs: &[f64], lambda: f64) -> Vec<f64> {
        let g = self.apply_g(coeffs, lambda);
        coeffs.iter().zip(&g).map(|(u, g)| u - g).collect()
    }

    /// `J_mn = ∂(λG)_m/∂u_n = λ k_m (⟨P_{2m} P_{2n}⟩ - a_m a_n)`.
    pub fn jacobian(&self, coeffs: &[f64], lambda: f64) -> DMatrix<f64> {
        let n = self.n_modes();
        if coeffs.iter().all(|&c| c == 0.0) {
            let k = self.spec.coeffs();
            return DMatrix::from_fn(
                n,
                n,
                |m, l| if m == l { lambda * k[m] / self.harmonics[m] } else { 0.0 },
            );
        }
        let (q, _) = self.boltzmann(coeffs);
        let a = self.moments_from_weights(&q);
        let mut second = DMatrix::<f64>::zeros(n, n);
        for (i, &qi) in q.iter().enumerate() {
            let p = self.row(i);
            for m in 0..n {
                let s = qi * p[m];
                for l in m..n {
                    second[(m, l)] += s * p[l];
                }
            }
        }
        let k = self.spec.coeffs();
        DMatrix::from_fn(n, n, |m, l| {
            let pair = if m <= l { second[(m, l)] } else { second[(l, m)] };
            lambda * k[m] * (pair - a[m] * a[l])
        })
    }

    /// `‖u‖_∞` over the quadrature nodes and both poles.
    pub fn sup_norm(&self, coeffs: &[f64]) -> f64 {
        let pole: f64 = coeffs.iter().sum::<f64>().abs();
        self.potential(coeffs).iter().fold(pole, |acc, v| acc.max(v.abs()))
    }

    /// `sign det(I - J)` with a degeneracy check.
    pub fn index(&self, coeffs: &[f64], lambda: f64) -> Result<i8> {
        let a = identity_minus(self.jacobian(coeffs, lambda));
        // Rows of `I - J` are measured against the identity, so a diagonal
        // matrix with an entry near zero still counts as degenerate.
        let row_norms: f64 = a.row_iter().map(|r| r.norm().max(1.0)).product();
        let det = a.determinant();
        let relative_det = if row_norms > 0.0 { det.abs() / row_norms } else { 0.0 };
        if !(relative_det >= DEGENERATE_DET_RATIO) {
            return Err(Error::DegenerateIndex { lambda, relative_det });
        }
        Ok(if det > 0.0 { 1 } else { -1 })
    }

    /// Density `f = e^{-u}/β` on the sphere at the nodes.
    pub fn density(&self, coeffs: &[f64]) -> Result<DensityProfile> {
        let u = self.potential(coeffs);
        let (_, log_z) = self.boltzmann(coeffs);
        let log_beta = log_z + surface_area(self.dim() - 1)?.ln();
        let values = u.iter().map(|ui| (-ui - log_beta).exp()).collect();
        Ok(DensityProfile {
            dim: self.dim(),
            theta: self.rule.theta().to_vec(),
            weights: self.rule.weights().to_vec(),
            values,
            beta: log_beta.exp(),
        })
    }

    fn bound(&self, lambda: f64) -> f64 {
        lambda * self.spec.sup_norm_khat() + BOUND_SLACK
    }

    fn report(
        &self,
        lambda: f64,
        coeffs: Vec<f64>,
        res: f64,
        iterations: usize,
        opts: &SolveOptions,
    ) -> SolutionReport {
        let sup = self.sup_norm(&coeffs);
        let converged = res <= opts.tol && sup <= self.bound(lambda);
        let index = if converged {
            self.index(&coeffs, lambda).ok()
        } else {
            None
        };
        SolutionReport {
            lambda,
            dim: self.dim(),
            modes: coeffs,
            residual_norm: res,
            iterations,
            method: opts.method,
            converged,
            index,
            sup_norm_u: sup,
        }
    }

    /// Solves `u = λ G(u)` from `init`.
    pub fn solve(&self, lambda: f64, init: &AxisymState, opts: &SolveOptions) -> Result<SolutionReport> {
        self.solve_deflated(lambda, init, opts, &[])
    }

    /// Newton or Picard iteration. With a nonempty `known` list the Newton
    /// steps are deflated so that the iteration is repelled from those roots.
    pub fn solve_deflated(
        &self,
        lambda: f64,
        init: &AxisymState,
        opts: &SolveOptions,
        known: &[Vec<f64>],
    ) -> Result<SolutionReport> {
        opts.check()?;
        check_lambda(lambda)?;
        let u = self.coeffs_of(init)?;
        match opts.method {
            Method::Picard => Ok(self.picard(lambda, u, opts)),
            Method::Newton => self.newton(lambda, u, opts, known),
        }
    }

    fn picard(&self, lambda: f64, mut u: Vec<f64>, opts: &SolveOptions) -> SolutionReport {
        let w = opts.relaxation;
        let mut res = f64::INFINITY;
        let mut iterations = 0;
        for it in 1..=opts.max_iter {
            let g = self.apply_g(&u, lambda);
            u.iter_mut().zip(&g).for_each(|(ui, gi)| *ui = (1.0 - w) * *ui + w * gi);
            iterations = it;
            if u.iter().any(|v| !v.is_finite()) {
                break;
            }
            res = l2(&self.residual(&u, lambda));
            if res <= opts.tol {
                break;
            }
        }
        self.report(lambda, u, res, iterations, opts)
    }

    fn newton(&self, lambda: f64, mut u: Vec<f64>, opts: &SolveOptions, known: &[Vec<f64>]) -> Result<SolutionReport> {
        let mut f = self.residual(&u, lambda);
        let mut res = l2(&f);
        let mut iterations = 0;
        // Near a critical value a residual of `tol` can still leave an error
        // much larger than `tol`, so a couple of extra steps polish the root
        // while they keep reducing the residual.
        let mut polish = 2;
        while iterations < opts.max_iter {
            if res <= opts.tol {
                if polish == 0 || res == 0.0 {
                    break;
                }
                polish -= 1;
            }
            iterations += 1;
            let a = identity_minus(self.jacobian(&u, lambda));
            let lu = a.full_piv_lu();
            let diag = lu.u().diagonal();
            let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
                (lo.min(d.abs()), hi.max(d.abs()))
            });
            let pivot_ratio = if hi > 0.0 { lo / hi } else { 0.0 };
            if !(pivot_ratio >= SINGULAR_PIVOT_RATIO) {
                return Err(Error::SingularLinearization { lambda, pivot_ratio });
            }
            let rhs = DVector::from_iterator(f.len(), f.iter().map(|v| -v));
            let Some(step) = lu.solve(&rhs) else {
                return Err(Error::SingularLinearization { lambda, pivot_ratio });
            };
            let mut step: Vec<f64> = step.iter().copied().collect();
            if !known.is_empty() {
                let (_, grad) = deflation(&u, known);
                let denom = 1.0 - dot(&grad, &step);
                if denom.abs() > 1e-12 {
                    step.iter_mut().for_each(|s| *s /= denom);
                }
            }

            // Backtracking on the (deflated) residual norm.
            let merit = |v: &[f64], r: f64| if known.is_empty() { r } else { deflation(v, known).0 * r };
            let current = merit(&u, res);
            let mut t = 1.0;
            let (next, next_f, next_res) = loop {
                let trial: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a + t * b).collect();
                let tf = self.residual(&trial, lambda);
                let tr = l2(&tf);
                if (tr.is_finite() && merit(&trial, tr) <= (1.0 - 1e-4 * t) * current) || t < 1.0 / 64.0 {
                    break (trial, tf, tr);
                }
                t *= 0.5;
            };
            if !next_res.is_finite() || (res <= opts.tol && next_res >= res) {
                break;
            }
            u = next;
            f = next_f;
            res = next_res;
        }
        Ok(self.report(lambda, u, res, iterations, opts))
    }
}

/// `m(u) = Π (1/‖u - r‖² + 1)` and `∇ log m`.
fn deflation(u: &[f64], known: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let mut m = 1.0;
    let mut grad = vec![0.0; u.len()];
    for r in known {
        let e: Vec<f64> = u
            .iter()
            .enumerate()
            .map(|(i, v)| v - r.get(i).copied().unwrap_or(0.0))
            .collect();
        let d2 = dot(&e, &e).max(1e-300);
        let factor = 1.0 / d2 + 1.0;
        m *= factor;
        let scale = -2.0 / (d2 * d2) / factor;
        grad.iter_mut().zip(&e).for_each(|(g, ei)| *g += scale * ei);
    }
    (m, grad)
}

fn identity_minus(mut j: DMatrix<f64>) -> DMatrix<f64> {
    j.neg_mut();
    for i in 0..j.nrows() {
        j[(i, i)] += 1.0;
    }
    j
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain {
            what: "lambda",
            value: lambda,
            domain: "[0, inf)",
        });
    }
    Ok(())
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn padded_distance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0))
        .map(|d| d * d)
        .sum::<f64>()
        .sqrt()
}

/// Orientation density `g̃(θ) = e^{-u} sin^{D-2}θ / ∫_0^π e^{-u} sin^{D-2}`.
pub fn gtilde(state: &AxisymState, theta: f64) -> Result<f64> {
    if !(0.0..=std::f64::consts::PI).contains(&theta) {
        return Err(Error::Domain {
            what: "theta",
            value: theta,
            domain: "[0, pi]",
        });
    }
    let d = state.dim();
    let rule = ZonalRule::with_order(d, model_order(state.n_modes()))?;
    let table = ZonalLegendre::new(d, 2 * state.n_modes())?;
    let u_at = |th: f64| -> f64 {
        let p = table.values(th.cos());
        state.coeffs().iter().enumerate().map(|(i, c)| c * p[2 * i + 2]).sum()
    };
    let nodes: Vec<f64> = rule.theta().iter().map(|&th| u_at(th)).collect();
    let u0 = u_at(theta);
    let shift = nodes.iter().cloned().fold(u0, f64::min);
    let z: f64 = nodes
        .iter()
        .zip(rule.weights())
        .map(|(u, w)| w * (-(u - shift)).exp())
        .sum();
    Ok((-(u0 - shift)).exp() * theta.sin().powi(d as i32 - 2) / z)
}

/// Zonal moments `a_1..a_{n_max}` of the state's orientation density.
pub fn zonal_moments(state: &AxisymState, spec: &KernelSpec, rule: &ZonalRule) -> Result<Vec<f64>> {
    let model = ZonalModel::with_rule(spec, rule.clone())?;
    let c = model.coeffs_of(state)?;
    Ok(model.moments(&c))
}

pub fn apply_g(state: &AxisymState, spec: &KernelSpec, lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let model = ZonalModel::new(spec)?;
    let c = model.coeffs_of(state)?;
    Ok(model.apply_g(&c, lambda))
}

pub fn residual(state: &AxisymState, spec: &KernelSpec, lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let model = ZonalModel::new(spec)?;
    let c = model.coeffs_of(state)?;
    Ok(model.residual(&c, lambda))
}

pub fn jacobian(state: &AxisymState, spec: &KernelSpec, lambda: f64) -> Result<DMatrix<f64>> {
    check_lambda(lambda)?;
    let model = ZonalModel::new(spec)?;
    let c = model.coeffs_of(state)?;
    Ok(model.jacobian(&c, lambda))
}

pub fn solve(
    spec: &KernelSpec,
    lambda: f64,
    init: &AxisymState,
    method: Method,
    tol: f64,
    max_iter: usize,
) -> Result<SolutionReport> {
    let opts = SolveOptions {
        method,
        tol,
        max_iter,
        ..SolveOptions::default()
    };
    ZonalModel::new(spec)?.solve(lambda, init, &opts)
}

/// Random starts in the box `|u_n| ≤ λ ‖K̂‖_∞`, one Picard map each, then
/// Newton. Distinct converged solutions are returned sorted by `u_1`.
pub fn multistart(spec: &KernelSpec, lambda: f64, n_starts: usize, seed: u64) -> Result<Vec<SolutionReport>> {
    let model = ZonalModel::new(spec)?;
    multistart_with(&model, lambda, n_starts, seed, &SolveOptions::default())
}

pub fn multistart_with(
    model: &ZonalModel,
    lambda: f64,
    n_starts: usize,
    seed: u64,
    opts: &SolveOptions,
) -> Result<Vec<SolutionReport>> {
    opts.check()?;
    check_lambda(lambda)?;
    if n_starts == 0 {
        return Err(Error::invalid("n_starts must be at least 1"));
    }
    let n = model.n_modes();
    let radius = lambda * model.spec().sup_norm_khat();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<Vec<f64>> = (0..n_starts)
        .map(|_| {
            (0..n)
                .map(|_| {
                    if radius > 0.0 {
                        rng.gen_range(-radius..=radius)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let newton = SolveOptions {
        method: Method::Newton,
        ..*opts
    };
    let reports: Vec<Result<SolutionReport>> = starts
        .par_iter()
        .map(|s| {
            let first = model.apply_g(s, lambda);
            let init = AxisymState::new(model.dim(), first)?;
            match model.solve(lambda, &init, &newton) {
                // A start landing on a singular linearization is just a miss.
                Err(Error::SingularLinearization { .. }) => Ok(SolutionReport {
                    converged: false,
                    ..model.report(lambda, s.clone(), f64::INFINITY, 0, &newton)
                }),
                other => other,
            }
        })
        .collect();
    let mut found: Vec<SolutionReport> = Vec::new();
    for r in reports {
        let r = r?;
        if r.converged
            && !found
                .iter()
                .any(|f| padded_distance(&f.modes, &r.modes) <= 10.0 * opts.tol)
        {
            found.push(r);
        }
    }
    found.sort_by(|a, b| a.modes[0].total_cmp(&b.modes[0]));
    Ok(found)
}

pub fn recover_density(state: &AxisymState, spec: &KernelSpec, lambda: f64) -> Result<DensityProfile> {
    check_lambda(lambda)?;
    let model = ZonalModel::new(spec)?;
    let c = model.coeffs_of(state)?;
    model.density(&c)
}

/// Free energy `E(f) = ∫ f (log f + U(f)/2) dσ` with the potential rebuilt
/// from the zonal moments of `f`.
pub fn free_energy(density: &DensityProfile, spec: &KernelSpec, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if density.dim != spec.dim() {
        return Err(Error::invalid("density and kernel dimensions differ"));
    }
    let d = density.dim;
    let sigma = surface_area(d - 1)?;
    let n = spec.n_max();
    let table = ZonalLegendre::new(d, 2 * n)?;
    let rows: Vec<Vec<f64>> = density.theta.iter().map(|th| table.values(th.cos())).collect();
    let mut a = vec![0.0; n];
    for ((row, w), f) in rows.iter().zip(&density.weights).zip(&density.values) {
        for (m, am) in a.iter_mut().enumerate() {
            *am += sigma * w * f * row[2 * m + 2];
        }
    }
    let mut e = 0.0;
    for ((row, w), &f) in rows.iter().zip(&density.weights).zip(&density.values) {
        if !(f > 0.0) {
            return Err(Error::Domain {
                what: "density",
                value: f,
                domain: "(0, inf)",
            });
        }
        let uhat: f64 = spec
            .coeffs()
            .iter()
            .zip(&a)
            .enumerate()
            .map(|(m, (k, am))| -k * am * row[2 * m + 2])
            .sum();
        let u = lambda * (spec.k0() + uhat);
        e += sigma * w * f * (f.ln() + 0.5 * u);
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSource;
    use std::f64::consts::PI;

    fn onsager(dim: u32, n: usize) -> KernelSpec {
        KernelSpec::onsager(dim, n, KernelSource::OnsagerRecurrence).unwrap()
    }

    #[test]
    fn gtilde_examples() {
        let zero = AxisymState::zeros(3, 4).unwrap();
        for th in [0.3, 1.0, 2.5] {
            assert!((gtilde(&zero, th).unwrap() - th.sin() / 2.0).abs() < 1e-14);
        }
        let p2 = AxisymState::mode(3, 4, 1, 1.0).unwrap();
        // Direct midpoint-rule oracle for Z = ∫ e^{-P_2(cos θ)} sin θ dθ.
        let m = 200_000;
        let h = PI / m as f64;
        let z: f64 = (0..m)
            .map(|i| {
                let th = (i as f64 + 0.5) * h;
                let c = th.cos();
                (-(1.5 * c * c - 0.5)).exp() * th.sin() * h
            })
            .sum();
        assert!((gtilde(&p2, PI / 2.0).unwrap() - 0.5f64.exp() / z).abs() < 1e-9);
        let rule = ZonalRule::with_order(3, 400).unwrap();
        let st = AxisymState::new(3, vec![2.0, -1.0, 0.5]).unwrap();
        let total: f64 = rule
            .theta()
            .iter()
            .zip(rule.weights())
            .map(|(&th, w)| w / th.sin() * gtilde(&st, th).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(gtilde(&st, -0.1).is_err());
    }

    #[test]
    fn moment_examples() {
        let spec = onsager(3, 6);
        let rule = ZonalRule::with_order(3, 128).unwrap();
        let zero = AxisymState::zeros(3, 6).unwrap();
        assert!(zonal_moments(&zero, &spec, &rule)
            .unwrap()
            .iter()
            .all(|a| a.abs() < 1e-12));
        let eps = 1e-4;
        let small = AxisymState::mode(3, 6, 1, eps).unwrap();
        let a = zonal_moments(&small, &spec, &rule).unwrap();
        assert!((a[0] + eps / 5.0).abs() < 1e-7, "{}", a[0]);
        // Concentration at the poles drives every moment towards 1.
        let rule = ZonalRule::with_order(3, 600).unwrap();
        let mut prev = vec![0.0; 6];
        for c in [-10.0, -50.0, -200.0] {
            let a = zonal_moments(&AxisymState::mode(3, 6, 1, c).unwrap(), &spec, &rule).unwrap();
            assert!(a.iter().zip(&prev).all(|(v, p)| v > p && *v <= 1.0), "{c}: {a:?}");
            prev = a;
        }
        assert!(prev[0] > 0.99);
    }

    #[test]
    fn apply_g_examples() {
        let spec = onsager(3, 5);
        let zero = AxisymState::zeros(3, 5).unwrap();
        assert!(apply_g(&zero, &spec, 7.0).unwrap().iter().all(|&v| v == 0.0));
        let nothing = KernelSpec::custom(3, vec![0.0; 5]).unwrap();
        let st = AxisymState::new(3, vec![1.0, -2.0, 0.3, 0.0, 0.1]).unwrap();
        assert!(apply_g(&st, &nothing, 7.0).unwrap().iter().all(|&v| v == 0.0));

        let model = ZonalModel::new(&spec).unwrap();
        let h = 1e-6;
        for n in 1..=5 {
            let mut e = vec![0.0; 5];
            e[n - 1] = h;
            let plus = model.apply_g(&e, 2.0);
            e[n - 1] = -h;
            let minus = model.apply_g(&e, 2.0);
            let expect = 2.0 * spec.coeff(n) / model.harmonics()[n - 1];
            for m in 0..5 {
                let fd = (plus[m] - minus[m]) / (2.0 * h);
                let want = if m == n - 1 { expect } else { 0.0 };
                assert!((fd - want).abs() < 1e-8, "n {n} m {m}: {fd} vs {want}");
            }
        }
    }

    #[test]
    fn residual_examples() {
        let spec = onsager(4, 6);
        let zero = AxisymState::zeros(4, 6).unwrap();
        assert!(residual(&zero, &spec, 30.0).unwrap().iter().all(|&v| v == 0.0));
        let st = AxisymState::new(4, vec![0.4, -0.2, 0.1]).unwrap();
        let r = residual(&st, &spec, 0.0).unwrap();
        assert_eq!(&r[..3], st.coeffs());
        assert!(r[3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_at_origin() {
        let spec = onsager(3, 6);
        let j = jacobian(&AxisymState::zeros(3, 6).unwrap(), &spec, 1.0).unwrap();
        assert!((j[(0, 0)] - PI / 32.0).abs() < 1e-10);
        for m in 0..6 {
            for n in 0..6 {
                if m != n {
                    assert!(j[(m, n)].abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in [3, 4] {
            let spec = onsager(dim, 6);
            let model = ZonalModel::new(&spec).unwrap();
            let lambda = 12.0;
            for _ in 0..20 {
                let u: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let j = model.jacobian(&u, lambda);
                let h = 1e-5;
                let mut max_err: f64 = 0.0;
                for n in 0..6 {
                    let mut up = u.clone();
                    up[n] += h;
                    let mut dn = u.clone();
                    dn[n] -= h;
                    let gp = model.apply_g(&up, lambda);
                    let gm = model.apply_g(&dn, lambda);
                    for m in 0..6 {
                        let fd = (gp[m] - gm[m]) / (2.0 * h);
                        max_err = max_err.max((fd - j[(m, n)]).abs());
                    }
                }
                assert!(max_err <= 1e-6 * j.norm(), "{max_err} vs {}", j.norm());
                for m in 0..6 {
                    for n in 0..6 {
                        assert!(j[(m, n)].abs() <= lambda * spec.coeff(m + 1) + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn picard_at_zero_lambda() {
        let spec = onsager(3, 4);
        let init = AxisymState::new(3, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let r = solve(&spec, 0.0, &init, Method::Picard, 1e-12, 10).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert!(r.modes.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nontrivial_solution_above_first_critical_value() {
        let spec = onsager(3, 12);
        let lambda = 1.05 * 32.0 / PI;
        // From this seed plain Newton falls back to ū, so ū is deflated.
        let init = AxisymState::mode(3, 12, 1, 0.1).unwrap();
        let model = ZonalModel::new(&spec).unwrap();
        let r = model
            .solve_deflated(lambda, &init, &SolveOptions::default(), &[vec![0.0; 12]])
            .unwrap();
        assert!(r.converged);
        assert!(r.amplitude() > 1e-3);
        assert!(r.mode_fraction(1) > 0.9);
        assert!(r.sup_norm_u <= lambda * spec.sup_norm_khat());
    }

    #[test]
    fn singular_linearization_is_reported() {
        // One mode, with λ placing the eigenvalue of J at exactly one.
        let c = 0.7;
        let probe = KernelSpec::custom(3, vec![1.0]).unwrap();
        let model = ZonalModel::new(&probe).unwrap();
        let var = model.jacobian(&[c], 1.0)[(0, 0)];
        let lambda = 1.0 / var;
        let init = AxisymState::new(3, vec![c]).unwrap();
        let err = model.solve(lambda, &init, &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, Error::SingularLinearization { .. }), "{err}");
    }

    #[test]
    fn invalid_options_are_rejected() {
        let spec = onsager(3, 4);
        let init = AxisymState::zeros(3, 4).unwrap();
        assert!(solve(&spec, 1.0, &init, Method::Newton, 0.0, 10).is_err());
        assert!(solve(&spec, -1.0, &init, Method::Newton, 1e-10, 10).is_err());
        let too_long = AxisymState::zeros(3, 5).unwrap();
        assert!(solve(&spec, 1.0, &too_long, Method::Newton, 1e-10, 10).is_err());
    }

    #[test]
    fn density_and_energy() {
        let spec = onsager(3, 6);
        let zero = AxisymState::zeros(3, 6).unwrap();
        let f = recover_density(&zero, &spec, 3.0).unwrap();
        assert!(f.values.iter().all(|v| (v - 1.0 / (4.0 * PI)).abs() < 1e-14));
        let lambda = 3.0;
        let e = free_energy(&f, &spec, lambda).unwrap();
        assert!((e - (-(4.0 * PI).ln() + lambda * PI / 8.0)).abs() < 1e-12);
        for dim in [3, 4, 5] {
            let spec = onsager(dim, 4);
            let f = recover_density(&AxisymState::zeros(dim, 4).unwrap(), &spec, 0.0).unwrap();
            let e = free_energy(&f, &spec, 0.0).unwrap();
            assert!((e + surface_area(dim).unwrap().ln()).abs() < 1e-12);
        }
        let st = AxisymState::new(3, vec![3.0, -1.0, 0.5]).unwrap();
        let f = recover_density(&st, &spec, 1.0).unwrap();
        assert!((f.mass().unwrap() - 1.0).abs() < 1e-10);
        assert!(f.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn multistart_is_deterministic_and_unique_at_small_lambda() {
        let spec = onsager(3, 8);
        let a = multistart(&spec, 0.1, 10, 5).unwrap();
        let b = multistart(&spec, 0.1, 10, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
        assert!(a[0].amplitude() < 1e-9);
        assert!(multistart(&spec, 0.1, 0, 5).is_err());
    }

    #[test]
    fn report_json_has_documented_fields() {
        let spec = onsager(3, 4);
        let r = solve(
            &spec,
            1.0,
            &AxisymState::zeros(3, 4).unwrap(),
            Method::Newton,
            1e-10,
            10,
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for key in [
            "lambda",
            "dim",
            "modes",
            "residual_norm",
            "iterations",
            "method",
            "converged",
            "index",
            "sup_norm_u",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["method"], "newton");
        assert_eq!(v["index"], 1);
    }
}
