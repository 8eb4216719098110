//! Critical concentrations, uniqueness thresholds, indices, degree audits and
//! branch continuation for `u = λ G(u)`.
//!
//! The linearization at `ū = 0` is `diag(λ k_n / N(D,2n))`, so mode `n` turns
//! unstable at `λ_n = N(D,2n)/k_n`. The finite-rank degree of `I - λG` is the
//! sum of `sign det(I - J)` over all solutions and is `+1` at every regular
//! `λ`; the audit recomputes it from a multistart census at several
//! truncations.

use serde::{Deserialize, Serialize};

use crate::dynamics::{linear_probe_adaptive, MARGINAL_RATE};
use crate::error::{Error, Result};
use crate::kernel::{kernel_sup_norm, tail_bound, validate_prop_k, KernelSpec};
use crate::polybasis::harmonic_count;
use crate::solver::{multistart_with, AxisymState, SolutionReport, SolveOptions, ZonalModel};

/// Grid used by the stability probe.
pub const PROBE_GRID: usize = 64;
/// Relative distance to a critical value below which audits refuse to run.
pub const CRITICAL_GAP: f64 = 1e-6;

const SEED_AMPLITUDE: f64 = 1e-2;
const SEED_EPS: f64 = 5e-2;
const SEED_HALVINGS: usize = 6;
/// A genuine bifurcating branch roughly halves its amplitude with ε.
const SHRINK_RATIO: f64 = 0.85;
const MODE_DOMINANCE: f64 = 0.9;

/// `λ_n = N(D,2n)/k_n` for `n = 1..n_max`.
pub fn critical_values(spec: &KernelSpec) -> Result<Vec<f64>> {
    spec.coeffs()
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            if !(k > 0.0) {
                return Err(Error::UndefinedCriticalValue { index: i + 1, coeff: k });
            }
            Ok(harmonic_count(spec.dim(), 2 * (i as u32 + 1))? as f64 / k)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub dim: u32,
    pub n_max: usize,
    /// `λ̃_0 = 1 / (5 ‖K̂‖_∞)`.
    pub lambda_tilde0: f64,
    /// `λ_0 = (Σ k_m)^{-1}` bracketed as `[1/(S + tail), 1/S]`.
    pub lambda_0: [f64; 2],
    /// Largest `λ` with `λ e^{4λ‖K‖_∞} Σ k_m < 1/2`, using `S + tail`.
    pub lambda_contraction: f64,
    pub lambda_crit: Vec<f64>,
    pub partial_sum: f64,
    pub tail_bound: f64,
    pub sup_norm_khat: f64,
    pub sup_norm_kernel: f64,
}

pub fn uniqueness_thresholds(spec: &KernelSpec) -> Result<ThresholdReport> {
    validate_prop_k(spec.coeffs())?;
    let partial_sum: f64 = spec.coeffs().iter().sum();
    if !partial_sum.is_finite() || !(partial_sum > 0.0) {
        return Err(Error::ThresholdUndefined(format!("partial sum {partial_sum}")));
    }
    let tail = tail_bound(spec)?;
    let total = partial_sum + tail;
    if !total.is_finite() {
        return Err(Error::ThresholdUndefined("tail estimate diverges".into()));
    }
    let sup_khat = spec.sup_norm_khat();
    if !(sup_khat > 0.0) {
        return Err(Error::ThresholdUndefined("kernel has zero mean-free part".into()));
    }
    let sup_k = kernel_sup_norm(spec)?;

    // λ e^{4λκ} S is increasing, and equals 1/2 below λ = 1/(2S).
    let f = |l: f64| l * (4.0 * l * sup_k).exp() * total - 0.5;
    let (mut lo, mut hi) = (0.0, 0.5 / total);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    Ok(ThresholdReport {
        dim: spec.dim(),
        n_max: spec.n_max(),
        lambda_tilde0: 1.0 / (5.0 * sup_khat),
        lambda_0: [1.0 / total, 1.0 / partial_sum],
        lambda_contraction: lo,
        lambda_crit: critical_values(spec)?,
        partial_sum,
        tail_bound: tail,
        sup_norm_khat: sup_khat,
        sup_norm_kernel: sup_k,
    })
}

/// `Π_n sign(1 - λ k_n / N(D,2n))`, the index of `ū` from its spectrum.
pub fn trivial_index(spec: &KernelSpec, lambda: f64) -> Result<i8> {
    let crit = critical_values(spec)?;
    Ok(crit.iter().fold(1, |s, &c| if lambda > c { -s } else { s }))
}

/// `sign det(I - J)` at a converged solution.
pub fn index_of(report: &SolutionReport, spec: &KernelSpec, lambda: f64) -> Result<i8> {
    if !report.converged {
        return Err(Error::invalid("index of an unconverged report"));
    }
    let model = ZonalModel::new(spec)?;
    let c = model.coeffs_of(&report.state())?;
    model.index(&c, lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationCensus {
    pub modes: usize,
    pub solutions: usize,
    pub degree_sum: i32,
    pub indices: Vec<i8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub lambda: f64,
    /// Solutions at the largest audited truncation.
    pub solutions: Vec<SolutionReport>,
    pub degree_sum: i32,
    pub truncations_checked: Vec<usize>,
    pub censuses: Vec<TruncationCensus>,
    pub stable_across_truncations: bool,
}

/// Census of solutions at each truncation, each repeated with two seeds.
pub fn degree_audit(
    spec: &KernelSpec,
    lambda: f64,
    n_starts: usize,
    seed: u64,
    truncations: &[usize],
) -> Result<DegreeReport> {
    degree_audit_with(spec, lambda, n_starts, seed, truncations, &SolveOptions::default())
}

pub fn degree_audit_with(
    spec: &KernelSpec,
    lambda: f64,
    n_starts: usize,
    seed: u64,
    truncations: &[usize],
    opts: &SolveOptions,
) -> Result<DegreeReport> {
    if truncations.is_empty() {
        return Err(Error::invalid("no truncations to audit"));
    }
    let mut truncs = truncations.to_vec();
    truncs.sort_unstable();
    truncs.dedup();
    let largest = *truncs.last().expect("nonempty");
    let crit = critical_values(&spec.truncated(largest)?)?;
    for (i, &c) in crit.iter().enumerate() {
        let rel_gap = (lambda - c).abs() / c;
        if rel_gap < CRITICAL_GAP {
            return Err(Error::NearCritical {
                lambda,
                index: i + 1,
                rel_gap,
            });
        }
    }

    let mut censuses = Vec::new();
    let mut solutions = Vec::new();
    for &n in &truncs {
        let model = ZonalModel::new(&spec.truncated(n)?)?;
        let first = multistart_with(&model, lambda, n_starts, seed, opts)?;
        let second = multistart_with(&model, lambda, n_starts, seed.wrapping_add(1), opts)?;
        if first.len() != second.len() {
            return Err(Error::InconclusiveAudit {
                lambda,
                detail: format!(
                    "N = {n}: seed {seed} found {} solutions {:?}, seed {} found {} solutions {:?}",
                    first.len(),
                    leading(&first),
                    seed.wrapping_add(1),
                    second.len(),
                    leading(&second)
                ),
            });
        }
        let indices = first
            .iter()
            .map(|r| {
                r.index.ok_or_else(|| Error::InconclusiveAudit {
                    lambda,
                    detail: format!("N = {n}: degenerate solution with u_1 = {}", r.modes[0]),
                })
            })
            .collect::<Result<Vec<i8>>>()?;
        censuses.push(TruncationCensus {
            modes: n,
            solutions: first.len(),
            degree_sum: indices.iter().map(|&i| i as i32).sum(),
            indices,
        });
        solutions = first;
    }
    let degree_sum = censuses.last().expect("nonempty").degree_sum;
    let stable = censuses
        .iter()
        .all(|c| c.degree_sum == degree_sum && c.solutions == censuses[0].solutions);
    Ok(DegreeReport {
        lambda,
        solutions,
        degree_sum,
        truncations_checked: truncs,
        censuses,
        stable_across_truncations: stable,
    })
}

fn leading(reports: &[SolutionReport]) -> Vec<f64> {
    reports.iter().map(|r| r.modes[0]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
}

/// Stability under the axisymmetric Doi flow, from the sign of the largest
/// growth rate of even, mass-free perturbations.
pub fn classify_stability(lambda: f64, report: &SolutionReport, spec: &KernelSpec) -> Result<Stability> {
    if !report.converged {
        return Err(Error::invalid("stability of an unconverged report"));
    }
    let probe = linear_probe_adaptive(&report.state(), spec, lambda, PROBE_GRID)?;
    let rate = probe.max_rate();
    if rate.abs() < MARGINAL_RATE {
        return Err(Error::MarginalStability { rate });
    }
    Ok(if rate < 0.0 {
        Stability::Stable
    } else {
        Stability::Unstable
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub lambda: f64,
    pub report: SolutionReport,
    pub stability: Option<Stability>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub mode: usize,
    pub origin: f64,
    /// Sign of `u_mode` near the origin.
    pub sign: i8,
    /// `+1` if the branch leaves `λ_n` upwards, `-1` if downwards.
    pub side: i8,
    /// Ordered away from the origin.
    pub points: Vec<BranchPoint>,
    /// Continuation stopped before the target (typically at a fold).
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bifurcation {
    pub mode: usize,
    pub origin: f64,
    pub branches: Vec<Branch>,
}

/// Small solution bifurcating from `ū` at `λ_n (1 + side·ε)` with the given
/// sign of `u_n`, located by deflated Newton from `sign·δ·P_{2n}`.
///
/// A candidate is accepted when it is dominated by mode `n` and its
/// amplitude shrinks by at least [`SHRINK_RATIO`] when `ε` is halved.
/// Returns the two points `(ε/2, ε)` nearest the origin.
pub fn seed_branch(
    model: &ZonalModel,
    n: usize,
    sign: i8,
    side: i8,
    opts: &SolveOptions,
) -> Result<Option<[SolutionReport; 2]>> {
    let crit = critical_values(model.spec())?;
    if n == 0 || n > crit.len() {
        return Err(Error::invalid(format!("mode {n} outside 1..={}", crit.len())));
    }
    let origin = crit[n - 1];
    let modes = model.n_modes();
    let trivial = vec![vec![0.0; modes]];
    let mut eps = SEED_EPS;
    for _ in 0..=SEED_HALVINGS {
        let lambda = origin * (1.0 + side as f64 * eps);
        let init = AxisymState::mode(model.dim(), modes, n, sign as f64 * SEED_AMPLITUDE)?;
        let far = model.solve_deflated(lambda, &init, opts, &trivial);
        if let Ok(far) = far {
            if accept(&far, n, sign) {
                let half_lambda = origin * (1.0 + side as f64 * eps / 2.0);
                let half_init = AxisymState::new(model.dim(), far.modes.iter().map(|c| c / 2.0).collect())?;
                if let Ok(near) = model.solve_deflated(half_lambda, &half_init, opts, &trivial) {
                    if accept(&near, n, sign) && near.amplitude() < SHRINK_RATIO * far.amplitude() {
                        return Ok(Some([near, far]));
                    }
                }
            }
        }
        eps /= 2.0;
    }
    Ok(None)
}

fn accept(r: &SolutionReport, n: usize, sign: i8) -> bool {
    r.converged && r.amplitude() > 1e-8 && r.modes[n - 1].signum() as i8 == sign && r.mode_fraction(n) >= MODE_DOMINANCE
}

/// Both sign branches bifurcating from `ū` at `λ_n`, each continued by
/// natural-parameter stepping for `steps` steps.
///
/// Each branch is first located on whichever side of `λ_n` it lives and then
/// continued away from `λ_n` up to the distance `|lambda_end - λ_n|`.
pub fn trace_branch(spec: &KernelSpec, n: usize, lambda_end: f64, steps: usize) -> Result<Bifurcation> {
    trace_branch_with(spec, n, lambda_end, steps, &SolveOptions::default(), true)
}

pub fn trace_branch_with(
    spec: &KernelSpec,
    n: usize,
    lambda_end: f64,
    steps: usize,
    opts: &SolveOptions,
    with_stability: bool,
) -> Result<Bifurcation> {
    if steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    let model = ZonalModel::new(spec)?;
    let crit = critical_values(spec)?;
    if n == 0 || n > crit.len() {
        return Err(Error::invalid(format!("mode {n} outside 1..={}", crit.len())));
    }
    let origin = crit[n - 1];
    if !lambda_end.is_finite() || lambda_end <= 0.0 || lambda_end == origin {
        return Err(Error::invalid(format!(
            "lambda_end = {lambda_end} must differ from lambda_{n} = {origin}"
        )));
    }
    let reach = (lambda_end - origin).abs();

    let mut branches = Vec::new();
    for sign in [1i8, -1] {
        for side in [1i8, -1] {
            let Some([near, far]) = seed_branch(&model, n, sign, side, opts)? else {
                continue;
            };
            let target = (origin + side as f64 * reach).max(origin * 1e-3);
            let (mut reports, truncated) = continue_branch(&model, &near, &far, target, steps, opts);
            reports.insert(0, near);
            let points = reports
                .into_iter()
                .map(|r| {
                    let stability = if with_stability {
                        classify_stability(r.lambda, &r, spec).ok()
                    } else {
                        None
                    };
                    BranchPoint {
                        lambda: r.lambda,
                        report: r,
                        stability,
                    }
                })
                .collect();
            branches.push(Branch {
                mode: n,
                origin,
                sign,
                side,
                points,
                truncated,
            });
            break;
        }
    }
    if branches.is_empty() {
        return Err(Error::BranchNotFound { mode: n });
    }
    Ok(Bifurcation {
        mode: n,
        origin,
        branches,
    })
}

/// Natural-parameter continuation from `start` (with `before` one step back
/// for the secant predictor) to `target`. Returns the points after `before`
/// and whether the target was missed.
fn continue_branch(
    model: &ZonalModel,
    before: &SolutionReport,
    start: &SolutionReport,
    target: f64,
    steps: usize,
    opts: &SolveOptions,
) -> (Vec<SolutionReport>, bool) {
    let mut out = vec![start.clone()];
    let full = (target - start.lambda) / steps as f64;
    let mut prev = before.clone();
    let mut cur = start.clone();
    let mut step = full;
    let mut halvings = 0;
    while (target - cur.lambda) * full.signum() > 1e-12 * target.abs() {
        let lambda = if (target - cur.lambda).abs() <= step.abs() * (1.0 + 1e-9) {
            target
        } else {
            cur.lambda + step
        };
        let slope = (lambda - cur.lambda) / (cur.lambda - prev.lambda);
        let guess: Vec<f64> = cur
            .modes
            .iter()
            .zip(&prev.modes)
            .map(|(c, p)| c + slope * (c - p))
            .collect();
        let next = AxisymState::new(model.dim(), guess).and_then(|g| model.solve(lambda, &g, opts));
        let ok = match &next {
            Ok(r) => {
                r.converged
                    && r.amplitude() > 1e-8
                    && r.modes[0].signum() == cur.modes[0].signum()
                    && r.state().distance(&cur.state())
                        <= 0.5 * cur.amplitude().max(1e-3) + 10.0 * (lambda - cur.lambda).abs()
            }
            Err(_) => false,
        };
        if ok {
            prev = cur;
            cur = next.expect("checked");
            out.push(cur.clone());
            if halvings > 0 {
                halvings -= 1;
                step *= 2.0;
            }
        } else {
            if halvings == SEED_HALVINGS {
                return (out, true);
            }
            halvings += 1;
            step /= 2.0;
        }
    }
    (out, false)
}

/// Amplitudes of the branch with the given sign and side at
/// `λ_n (1 + side·ε)` for each `ε`, found by deflated Newton from the scaled
/// neighbouring solution.
pub fn branch_amplitudes(model: &ZonalModel, n: usize, sign: i8, side: i8, eps: &[f64]) -> Result<Vec<f64>> {
    let opts = SolveOptions::default();
    let Some([_, far]) = seed_branch(model, n, sign, side, &opts)? else {
        return Err(Error::BranchNotFound { mode: n });
    };
    let origin = critical_values(model.spec())?[n - 1];
    let trivial = vec![vec![0.0; model.n_modes()]];
    let mut anchor = far;
    let mut out = Vec::with_capacity(eps.len());
    for &e in eps {
        let lambda = origin * (1.0 + side as f64 * e);
        let scale = e / ((anchor.lambda / origin - 1.0) * side as f64);
        let init = AxisymState::new(model.dim(), anchor.modes.iter().map(|c| c * scale).collect())?;
        let r = model.solve_deflated(lambda, &init, &opts, &trivial)?;
        if !accept(&r, n, sign) {
            return Err(Error::BranchNotFound { mode: n });
        }
        out.push(r.amplitude());
        anchor = r;
    }
    Ok(out)
}
