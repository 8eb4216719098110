//! Zonal expansion of the interaction kernel.
//!
//! The kernel is stored through its mean `k0 = K̄` and the coefficients of its
//! mean-free part,
//!
//! ```text
//! K̂(γ) = K(γ) - K̄ = -Σ_{n≥1} k_n P_{2n}(D, cos γ).
//! ```
//!
//! For the Onsager kernel `K = |sin γ|` the coefficients are computed either
//! by quadrature of
//!
//! ```text
//! k_n = -(σ_{D-1} N(D,2n) / σ_D) ∫_{-1}^{1} (1-t²)^{(D-2)/2} P_{2n}(D,t) dt
//! ```
//!
//! or by the two-term recurrence `k_{n+1} = r(n, D) k_n` seeded with the
//! quadrature value of `k_1` (see [`recurrence_ratio`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polybasis::{check_dim, harmonic_count, surface_area, ZonalLegendre, ZonalRule, DEFAULT_QUADRATURE_ORDER};

/// Samples used for sup-norms of truncated series.
const SUP_SAMPLES: usize = 4096;

/// Relative tolerance for the quadrature self-check in [`coeff_by_quadrature`].
pub const QUADRATURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelSource {
    OnsagerQuadrature,
    OnsagerRecurrence,
    Custom,
}

impl KernelSource {
    pub fn is_onsager(self) -> bool {
        !matches!(self, KernelSource::Custom)
    }
}

/// Immutable kernel description shared by the solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    dim: u32,
    n_max: usize,
    source: KernelSource,
    k0: f64,
    coeffs: Vec<f64>,
    sup_norm_khat: f64,
}

impl KernelSpec {
    /// The Onsager kernel `|sin γ|` truncated after `n_max` modes.
    pub fn onsager(dim: u32, n_max: usize, source: KernelSource) -> Result<Self> {
        build_kernel_spec(dim, n_max, source, None, false)
    }

    /// A kernel given by its coefficients `k_1..k_N`, with mean zero.
    pub fn custom(dim: u32, coeffs: Vec<f64>) -> Result<Self> {
        let n = coeffs.len();
        build_kernel_spec(dim, n, KernelSource::Custom, Some(coeffs), false)
    }

    /// Replaces the kernel mean `K̄` of a custom kernel.
    pub fn with_mean(mut self, k0: f64) -> Result<Self> {
        if !k0.is_finite() {
            return Err(Error::NonFinite("kernel mean".into()));
        }
        if self.source.is_onsager() {
            return Err(Error::invalid("the Onsager kernel mean is fixed"));
        }
        self.k0 = k0;
        Ok(self)
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn source(&self) -> KernelSource {
        self.source
    }

    /// `K̄`, the sphere average of the kernel.
    pub fn k0(&self) -> f64 {
        self.k0
    }

    /// `k_1..k_{n_max}`; `coeffs()[n-1] = k_n`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, n: usize) -> f64 {
        self.coeffs[n - 1]
    }

    pub fn sup_norm_khat(&self) -> f64 {
        self.sup_norm_khat
    }

    /// Copy of the kernel keeping only the first `n` modes.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n_max {
            return Err(Error::invalid(format!("truncation {n} outside 1..={}", self.n_max)));
        }
        let mut out = self.clone();
        out.coeffs.truncate(n);
        out.n_max = n;
        if !self.source.is_onsager() {
            out.sup_norm_khat = sampled_sup(&out, |v| v)?;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: KernelSpec = serde_json::from_str(text)?;
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        check_dim(self.dim)?;
        if self.n_max == 0 || self.coeffs.len() != self.n_max {
            return Err(Error::invalid(format!(
                "n_max = {} but {} coefficients",
                self.n_max,
                self.coeffs.len()
            )));
        }
        if let Some(i) = self.coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::Validation {
                index: i + 1,
                reason: "coefficient is not finite".into(),
            });
        }
        if !self.k0.is_finite() || !self.sup_norm_khat.is_finite() || self.sup_norm_khat < 0.0 {
            return Err(Error::NonFinite("kernel constants".into()));
        }
        if self.source.is_onsager() {
            validate_prop_k(&self.coeffs)?;
        }
        Ok(())
    }
}

/// Checks `k_n > 0` and `k_{n+1} < k_n`; the error names the first offending
/// (1-based) index.
pub fn validate_prop_k(coeffs: &[f64]) -> Result<()> {
    for (i, &k) in coeffs.iter().enumerate() {
        if !(k > 0.0) {
            return Err(Error::Validation {
                index: i + 1,
                reason: format!("k_{} = {k} is not positive", i + 1),
            });
        }
        if i > 0 && !(k < coeffs[i - 1]) {
            return Err(Error::Validation {
                index: i + 1,
                reason: format!("k_{} = {k} is not below k_{} = {}", i + 1, i, coeffs[i - 1]),
            });
        }
    }
    Ok(())
}

/// Sphere average of a kernel given as a profile of the angle `γ ∈ [0, π]`:
/// `K̄ = (σ_{D-1}/σ_D) ∫_0^π K(γ) sin^{D-2}γ dγ`.
pub fn mean_value<F: FnMut(f64) -> f64>(mut profile: F, dim: u32, rule: &ZonalRule) -> Result<f64> {
    if rule.dim() != dim {
        return Err(Error::invalid("quadrature rule built for another dimension"));
    }
    let mut acc = 0.0;
    for (&theta, &w) in rule.theta().iter().zip(rule.weights()) {
        let v = profile(theta);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("kernel profile at gamma = {theta}")));
        }
        acc += w * v;
    }
    Ok(surface_area(dim - 1)? / surface_area(dim)? * acc)
}

/// Mean of the Onsager kernel `|sin γ|` on `S^{D-1}`.
pub fn onsager_mean(dim: u32) -> Result<f64> {
    let rule = ZonalRule::with_order(dim, DEFAULT_QUADRATURE_ORDER)?;
    mean_value(f64::sin, dim, &rule)
}

/// Quadrature order that resolves `k_n` spectrally.
pub(crate) fn coeff_order(dim: u32, n: usize) -> usize {
    DEFAULT_QUADRATURE_ORDER.max(2 * (2 * n + dim as usize) + 32)
}

/// Returns `k_n` together with the scale `prefactor · Σ|w f|` that bounds
/// its rounding error.
fn quadrature_coeff(dim: u32, n: usize, rule: &ZonalRule) -> Result<(f64, f64)> {
    let degree = 2 * n;
    let table = ZonalLegendre::new(dim, degree)?;
    let mut row = vec![0.0; degree + 1];
    let mut acc = 0.0;
    let mut magnitude = 0.0;
    for ((&theta, &t), &w) in rule.theta().iter().zip(rule.t()).zip(rule.weights()) {
        table.fill(t, &mut row);
        let term = w * theta.sin() * row[degree];
        acc += term;
        magnitude += term.abs();
    }
    let n_harm = harmonic_count(dim, degree as u32)? as f64;
    let prefactor = surface_area(dim - 1)? * n_harm / surface_area(dim)?;
    Ok((-prefactor * acc, prefactor * magnitude))
}

/// `k_n` of the Onsager kernel by quadrature, with the default order for `n`.
pub fn coeff_by_quadrature(dim: u32, n: usize) -> Result<f64> {
    coeff_by_quadrature_with(dim, n, coeff_order(dim, n), QUADRATURE_TOL)
}

/// `k_n` by quadrature at the given order; the result is compared with a rule
/// of 1.5× the order and rejected when the two differ by more than `tol`
/// (relative), plus a rounding allowance proportional to `Σ|w f|`.
pub fn coeff_by_quadrature_with(dim: u32, n: usize, order: usize, tol: f64) -> Result<f64> {
    check_dim(dim)?;
    if n == 0 {
        return Err(Error::invalid("coefficient index must be >= 1"));
    }
    let (coarse, scale) = quadrature_coeff(dim, n, &ZonalRule::with_order(dim, order)?)?;
    let fine_order = order + order.div_ceil(2);
    let (fine, _) = quadrature_coeff(dim, n, &ZonalRule::with_order(dim, fine_order)?)?;
    let rounding = 64.0 * f64::EPSILON * scale;
    let achieved = ((fine - coarse).abs() - rounding).max(0.0) / fine.abs().max(f64::MIN_POSITIVE);
    if !(achieved <= tol) {
        return Err(Error::Accuracy {
            achieved,
            requested: tol,
            order,
        });
    }
    Ok(coarse)
}

/// `k_{n+1} / k_n` for the Onsager kernel:
///
/// ```text
/// (2n-1)(4n+D+2)(2n+D-2) / [2(n+1)(4n+D-2)(2n+D+1)]
/// ```
///
/// This is the simplification of
/// `[C_{2n}(1) N(D,2n+2)] / [C_{2n+2}(1) N(D,2n)] · (2n-1)(n+α) / [(n+1)(2n+2α+3)]`.
pub fn recurrence_ratio(n: usize, dim: u32) -> f64 {
    let n = n as f64;
    let d = dim as f64;
    (2.0 * n - 1.0) * (4.0 * n + d + 2.0) * (2.0 * n + d - 2.0)
        / (2.0 * (n + 1.0) * (4.0 * n + d - 2.0) * (2.0 * n + d + 1.0))
}

/// `k_1..k_{n_max}` from `k_1` by the ratio recurrence.
pub fn coeff_by_recurrence(dim: u32, k1: f64, n_max: usize) -> Result<Vec<f64>> {
    check_dim(dim)?;
    if !(k1 > 0.0) || !k1.is_finite() {
        return Err(Error::invalid(format!("k1 must be positive, got {k1}")));
    }
    if n_max == 0 {
        return Err(Error::invalid("n_max must be >= 1"));
    }
    let mut out = Vec::with_capacity(n_max);
    out.push(k1);
    for n in 1..n_max {
        out.push(out[n - 1] * recurrence_ratio(n, dim));
    }
    Ok(out)
}

/// Builds a [`KernelSpec`]. `custom_coeffs` must be given exactly when
/// `source` is [`KernelSource::Custom`]; `validate_prop_k` additionally
/// requires custom coefficients to be positive and decreasing.
pub fn build_kernel_spec(
    dim: u32,
    n_max: usize,
    source: KernelSource,
    custom_coeffs: Option<Vec<f64>>,
    validate: bool,
) -> Result<KernelSpec> {
    build_kernel_spec_with_order(dim, n_max, source, custom_coeffs, validate, None)
}

/// [`build_kernel_spec`] with a fixed quadrature order for the Onsager
/// coefficients instead of the per-mode default.
pub fn build_kernel_spec_with_order(
    dim: u32,
    n_max: usize,
    source: KernelSource,
    custom_coeffs: Option<Vec<f64>>,
    validate: bool,
    order: Option<usize>,
) -> Result<KernelSpec> {
    check_dim(dim)?;
    let quad =
        |n: usize| coeff_by_quadrature_with(dim, n, order.unwrap_or_else(|| coeff_order(dim, n)), QUADRATURE_TOL);
    if n_max == 0 {
        return Err(Error::invalid("n_max must be >= 1"));
    }
    let (coeffs, k0) = match (source, custom_coeffs) {
        (KernelSource::Custom, Some(c)) => {
            if c.len() != n_max {
                return Err(Error::invalid(format!(
                    "{} custom coefficients for n_max = {n_max}",
                    c.len()
                )));
            }
            if let Some(i) = c.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation {
                    index: i + 1,
                    reason: "coefficient is not finite".into(),
                });
            }
            if validate {
                validate_prop_k(&c)?;
            }
            (c, 0.0)
        }
        (KernelSource::Custom, None) => return Err(Error::invalid("custom kernel requires coefficients")),
        (_, Some(_)) => return Err(Error::invalid("coefficients may only be supplied for a custom kernel")),
        (KernelSource::OnsagerQuadrature, None) => {
            let c = (1..=n_max).map(quad).collect::<Result<Vec<_>>>()?;
            (c, onsager_mean(dim)?)
        }
        (KernelSource::OnsagerRecurrence, None) => {
            let k1 = quad(1)?;
            (coeff_by_recurrence(dim, k1, n_max)?, onsager_mean(dim)?)
        }
    };
    let mut spec = KernelSpec {
        dim,
        n_max,
        source,
        k0,
        coeffs,
        sup_norm_khat: 0.0,
    };
    if source.is_onsager() {
        validate_prop_k(&spec.coeffs)?;
        // |sin γ| - K̄ ranges over [-K̄, 1 - K̄]
        spec.sup_norm_khat = k0.max(1.0 - k0);
    } else {
        spec.sup_norm_khat = sampled_sup(&spec, |v| v)?;
    }
    Ok(spec)
}

fn check_angle(gamma: f64) -> Result<()> {
    if !(0.0..=std::f64::consts::PI).contains(&gamma) {
        return Err(Error::Domain {
            what: "gamma",
            value: gamma,
            domain: "[0, pi]",
        });
    }
    Ok(())
}

fn series(spec: &KernelSpec, table: &ZonalLegendre, row: &mut [f64], gamma: f64) -> f64 {
    table.fill(gamma.cos(), row);
    -spec
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, k)| k * row[2 * (i + 1)])
        .sum::<f64>()
}

/// `K̂(γ) = -Σ k_n P_{2n}(D, cos γ)` for the stored coefficients.
pub fn khat_eval(spec: &KernelSpec, gamma: f64) -> Result<f64> {
    check_angle(gamma)?;
    let table = ZonalLegendre::new(spec.dim, 2 * spec.n_max)?;
    let mut row = vec![0.0; 2 * spec.n_max + 1];
    Ok(series(spec, &table, &mut row, gamma))
}

/// Evaluates `K̂` at many angles, reusing one polynomial table.
pub fn khat_eval_many(spec: &KernelSpec, gammas: &[f64]) -> Result<Vec<f64>> {
    let table = ZonalLegendre::new(spec.dim, 2 * spec.n_max)?;
    let mut row = vec![0.0; 2 * spec.n_max + 1];
    gammas
        .iter()
        .map(|&g| {
            check_angle(g)?;
            Ok(series(spec, &table, &mut row, g))
        })
        .collect()
}

/// `‖K̂‖_∞` over `[0, π]`.
pub fn sup_norm(spec: &KernelSpec) -> f64 {
    spec.sup_norm_khat
}

/// `‖K‖_∞ = sup |K̄ + K̂|`; exactly 1 for the Onsager kernel.
pub fn kernel_sup_norm(spec: &KernelSpec) -> Result<f64> {
    if spec.source.is_onsager() {
        Ok(1.0)
    } else {
        let k0 = spec.k0;
        sampled_sup(spec, |v| v + k0)
    }
}

/// Dense sampling of `|map(K̂(γ))|` on `[0, π/2]` (the series is even about
/// `π/2`) followed by golden-section refinement around the best sample.
fn sampled_sup<M: Fn(f64) -> f64>(spec: &KernelSpec, map: M) -> Result<f64> {
    let table = ZonalLegendre::new(spec.dim, 2 * spec.n_max)?;
    let mut row = vec![0.0; 2 * spec.n_max + 1];
    let half = std::f64::consts::FRAC_PI_2;
    let step = half / SUP_SAMPLES as f64;
    let mut eval = |g: f64| map(series(spec, &table, &mut row, g)).abs();
    let mut best = (0.0, eval(0.0));
    for i in 1..=SUP_SAMPLES {
        let g = i as f64 * step;
        let v = eval(g);
        if v > best.1 {
            best = (g, v);
        }
    }
    let (mut lo, mut hi) = ((best.0 - step).max(0.0), (best.0 + step).min(half));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (eval(x1), eval(x2));
    for _ in 0..80 {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = eval(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = eval(x2);
        }
    }
    let sup = best.1.max(f1).max(f2);
    if !sup.is_finite() {
        return Err(Error::NonFinite("kernel sup-norm".into()));
    }
    Ok(sup)
}

/// Local decay exponent `p` with `k_{m+1}/k_m = (m/(m+1))^p` at `m = n`.
pub fn decay_exponent(n: usize, dim: u32) -> f64 {
    -recurrence_ratio(n, dim).ln() / (1.0 / n as f64).ln_1p()
}

/// `min_{m ≥ n} p(m)`. The exponent dips over the first few modes and then
/// rises monotonically towards 2, so walking forward until it turns up is
/// enough.
pub fn min_decay_exponent(n: usize, dim: u32) -> f64 {
    let mut m = n.max(1);
    let mut p = decay_exponent(m, dim);
    loop {
        let next = decay_exponent(m + 1, dim);
        if next >= p {
            return p;
        }
        p = next;
        m += 1;
    }
}

/// Upper bound for `Σ_{m > n_max} k_m`.
///
/// With `p* = min_{m≥N} p(m)` for the local exponent of the ratio recurrence,
/// `k_m ≤ k_N (N/m)^{p*}` for `m ≥ N` and the tail is at most
/// `k_N N / (p* - 1)`. A custom kernel is exactly its stored series, so its
/// tail is zero.
pub fn tail_bound(spec: &KernelSpec) -> Result<f64> {
    if !spec.source.is_onsager() {
        return Ok(0.0);
    }
    let n = spec.n_max;
    let p = min_decay_exponent(n, spec.dim);
    if !(p > 1.0) {
        return Err(Error::ThresholdUndefined(format!(
            "decay exponent {p} at n = {n} does not guarantee a summable tail"
        )));
    }
    Ok(spec.coeff(n) * n as f64 / (p - 1.0))
}
