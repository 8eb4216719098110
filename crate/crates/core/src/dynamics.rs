//! Axisymmetric Doi flow
//!
//! ```text
//! ∂f/∂t = sin^{2-D}θ ∂_θ [ sin^{D-2}θ (∂_θ f + f ∂_θ U(f)) ]
//! ```
//!
//! discretized by finite volumes on the interior nodes `θ_i = iπ/(G+1)`.
//!
//! The cell volumes `W_i` are the weights of a quadrature rule that is
//! spectrally accurate for `∫_0^π F(cos θ) sin^{D-2}θ dθ` (trapezoid for even
//! `D`, Fejér's second rule times `sin^{D-3}θ` for odd `D`). The same weights
//! define mass, zonal moments and the free energy, so mass is conserved to
//! rounding, the scheme is a discrete gradient flow, and its steady states
//! are `f ∝ e^{-u}` at the nodes for the spectral fixed points `u`. Face
//! fluxes use the Scharfetter–Gummel form, which vanishes exactly on
//! Boltzmann profiles.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::polybasis::{check_dim, harmonic_count, surface_area, ZonalLegendre};
use crate::solver::AxisymState;

pub const MIN_GRID_POINTS: usize = 32;
/// Early-exit threshold for `‖f_{k+1} - f_k‖ / dt`.
pub const STEADY_TOL: f64 = 1e-10;
/// Probe rates smaller than this in magnitude are treated as marginal.
pub const MARGINAL_RATE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    dim: u32,
    theta: Vec<f64>,
    h: f64,
    /// Cell volumes / quadrature weights for `∫ · sin^{D-2}θ dθ`.
    weights: Vec<f64>,
    /// `sin^{D-2}` at the interior faces `θ_{i+1/2}`, `i = 1..G-1`.
    faces: Vec<f64>,
    sigma: f64,
}

pub fn make_grid(dim: u32, points: usize) -> Result<ThetaGrid> {
    check_dim(dim)?;
    if points < MIN_GRID_POINTS {
        return Err(Error::Resolution {
            points,
            min: MIN_GRID_POINTS,
        });
    }
    let g = points;
    let h = PI / (g + 1) as f64;
    let theta: Vec<f64> = (1..=g).map(|i| i as f64 * h).collect();
    let p = dim as i32 - 2;
    let weights = if dim.is_multiple_of(2) {
        theta.iter().map(|t| h * t.sin().powi(p)).collect()
    } else {
        let terms = g.div_ceil(2);
        theta
            .iter()
            .map(|&t| {
                let s: f64 = (1..=terms)
                    .map(|j| {
                        let k = (2 * j - 1) as f64;
                        (k * t).sin() / k
                    })
                    .sum();
                4.0 * t.sin() / (g + 1) as f64 * s * t.sin().powi(p - 1)
            })
            .collect()
    };
    let faces = (1..g).map(|i| ((i as f64 + 0.5) * h).sin().powi(p)).collect();
    Ok(ThetaGrid {
        dim,
        theta,
        h,
        weights,
        faces,
        sigma: surface_area(dim - 1)?,
    })
}

impl ThetaGrid {
    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫ f dσ`.
    pub fn mass(&self, f: &[f64]) -> f64 {
        self.sigma * self.weights.iter().zip(f).map(|(w, v)| w * v).sum::<f64>()
    }

    /// `sqrt(∫ f² dσ)`.
    pub fn l2_norm(&self, f: &[f64]) -> f64 {
        (self.sigma * self.weights.iter().zip(f).map(|(w, v)| w * v * v).sum::<f64>()).sqrt()
    }

    /// The isotropic density `1/σ_D`, normalized on the grid.
    pub fn uniform(&self) -> Vec<f64> {
        let total: f64 = self.sigma * self.weights.iter().sum::<f64>();
        vec![1.0 / total; self.len()]
    }

    /// `f_i ∝ e^{-u(θ_i)}`, normalized on the grid.
    pub fn boltzmann(&self, state: &AxisymState) -> Result<Vec<f64>> {
        if state.dim() != self.dim {
            return Err(Error::invalid("state and grid dimensions differ"));
        }
        let table = ZonalLegendre::new(self.dim, 2 * state.n_modes())?;
        let u: Vec<f64> = self
            .theta
            .iter()
            .map(|t| {
                let p = table.values(t.cos());
                state.coeffs().iter().enumerate().map(|(i, c)| c * p[2 * i + 2]).sum()
            })
            .collect();
        let shift = u.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut f: Vec<f64> = u.iter().map(|v| (-(v - shift)).exp()).collect();
        let m = self.mass(&f);
        f.iter_mut().for_each(|v| *v /= m);
        Ok(f)
    }

    /// `f ← f (1 + ε P_{2n})`, renormalized.
    pub fn perturbed(&self, f: &[f64], n: usize, eps: f64) -> Result<Vec<f64>> {
        let table = ZonalLegendre::new(self.dim, 2 * n)?;
        let mut out: Vec<f64> = f
            .iter()
            .zip(&self.theta)
            .map(|(v, t)| v * (1.0 + eps * table.values(t.cos())[2 * n]))
            .collect();
        let m = self.mass(&out);
        out.iter_mut().for_each(|v| *v /= m);
        Ok(out)
    }

    /// Zonal moments `a_n = ∫ f P_{2n} dσ`, `n = 1..modes`.
    pub fn moments(&self, f: &[f64], modes: usize) -> Result<Vec<f64>> {
        let table = ZonalLegendre::new(self.dim, 2 * modes)?;
        let mut a = vec![0.0; modes];
        for ((t, w), v) in self.theta.iter().zip(&self.weights).zip(f) {
            let p = table.values(t.cos());
            for (m, am) in a.iter_mut().enumerate() {
                *am += self.sigma * w * v * p[2 * m + 2];
            }
        }
        Ok(a)
    }

    /// Projection of `-log f` onto `P_2, ..., P_{2·modes}`.
    pub fn project_state(&self, f: &[f64], modes: usize) -> Result<AxisymState> {
        if f.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("projection needs a positive density"));
        }
        let table = ZonalLegendre::new(self.dim, 2 * modes)?;
        let total: f64 = self.weights.iter().sum();
        let mut c = vec![0.0; modes];
        for ((t, w), v) in self.theta.iter().zip(&self.weights).zip(f) {
            let p = table.values(t.cos());
            let g = -v.ln();
            for (m, cm) in c.iter_mut().enumerate() {
                *cm += w * g * p[2 * m + 2];
            }
        }
        for (m, cm) in c.iter_mut().enumerate() {
            *cm *= harmonic_count(self.dim, 2 * (m as u32 + 1))? as f64 / total;
        }
        AxisymState::new(self.dim, c)
    }
}

/// Bernoulli function `x / (e^x - 1)`.
fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 - x / 2.0 + x * x / 12.0
    } else {
        x / x.exp_m1()
    }
}

fn bernoulli_prime(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        -0.5 + x / 6.0 - x.powi(3) / 180.0
    } else {
        let e = x.exp_m1();
        (e - x * (e + 1.0)) / (e * e)
    }
}

/// Kernel, concentration and grid bundled for repeated flow evaluations.
#[derive(Debug, Clone)]
pub struct Flow {
    grid: ThetaGrid,
    k0: f64,
    coeffs: Vec<f64>,
    lambda: f64,
    /// `basis[i * n + m] = P_{2(m+1)}(cos θ_i)`.
    basis: Vec<f64>,
}

impl Flow {
    pub fn new(spec: &KernelSpec, lambda: f64, grid: &ThetaGrid) -> Result<Self> {
        if spec.dim() != grid.dim {
            return Err(Error::invalid("kernel and grid dimensions differ"));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Domain {
                what: "lambda",
                value: lambda,
                domain: "[0, inf)",
            });
        }
        let n = spec.n_max();
        let table = ZonalLegendre::new(spec.dim(), 2 * n)?;
        let mut basis = Vec::with_capacity(grid.len() * n);
        for t in &grid.theta {
            let p = table.values(t.cos());
            basis.extend((1..=n).map(|m| p[2 * m]));
        }
        Ok(Flow {
            grid: grid.clone(),
            k0: spec.k0(),
            coeffs: spec.coeffs().to_vec(),
            lambda,
            basis,
        })
    }

    pub fn grid(&self) -> &ThetaGrid {
        &self.grid
    }

    fn n(&self) -> usize {
        self.coeffs.len()
    }

    fn moments(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut a = vec![0.0; n];
        for (i, (w, v)) in self.grid.weights.iter().zip(f).enumerate() {
            let s = self.grid.sigma * w * v;
            for (am, p) in a.iter_mut().zip(&self.basis[i * n..(i + 1) * n]) {
                *am += s * p;
            }
        }
        a
    }

    /// `U_i = λ (K̄ - Σ k_n a_n P_{2n}(cos θ_i))`, linear in `f` apart from
    /// the constant `λ K̄`; `with_mean = false` drops that constant.
    fn potential_from(&self, f: &[f64], with_mean: bool) -> Vec<f64> {
        let n = self.n();
        let b: Vec<f64> = self.moments(f).iter().zip(&self.coeffs).map(|(a, k)| -k * a).collect();
        let base = if with_mean { self.lambda * self.k0 } else { 0.0 };
        (0..self.grid.len())
            .map(|i| {
                let s: f64 = b.iter().zip(&self.basis[i * n..(i + 1) * n]).map(|(x, p)| x * p).sum();
                base + self.lambda * s
            })
            .collect()
    }

    pub fn potential(&self, f: &[f64]) -> Vec<f64> {
        self.potential_from(f, true)
    }

    fn flux(&self, i: usize, f: &[f64], u: &[f64]) -> f64 {
        let du = u[i + 1] - u[i];
        self.grid.faces[i] / self.grid.h * (bernoulli(-du) * f[i + 1] - bernoulli(du) * f[i])
    }

    /// `∂f/∂t` of the semi-discrete flow.
    pub fn rhs(&self, f: &[f64]) -> Vec<f64> {
        let u = self.potential(f);
        let g = self.grid.len();
        let mut out = vec![0.0; g];
        for i in 0..g - 1 {
            let j = self.flux(i, f, &u);
            out[i] += j;
            out[i + 1] -= j;
        }
        out.iter_mut().zip(&self.grid.weights).for_each(|(o, w)| *o /= w);
        out
    }

    /// Directional derivative of [`Flow::rhs`] at `f` along `df`.
    pub fn tangent(&self, f: &[f64], df: &[f64]) -> Vec<f64> {
        let u = self.potential(f);
        let du_dir = self.potential_from(df, false);
        let g = self.grid.len();
        let mut out = vec![0.0; g];
        for i in 0..g - 1 {
            let du = u[i + 1] - u[i];
            let ddu = du_dir[i + 1] - du_dir[i];
            let c = self.grid.faces[i] / self.grid.h;
            let j = c
                * (bernoulli(-du) * df[i + 1]
                    - bernoulli(du) * df[i]
                    - (bernoulli_prime(-du) * f[i + 1] + bernoulli_prime(du) * f[i]) * ddu);
            out[i] += j;
            out[i + 1] -= j;
        }
        out.iter_mut().zip(&self.grid.weights).for_each(|(o, w)| *o /= w);
        out
    }

    /// Largest admissible explicit step: `h²/4`, tightened when a pole cell
    /// is stiff enough to threaten positivity (large `D`).
    pub fn step_limit(&self) -> f64 {
        let g = &self.grid;
        let mut limit = g.h * g.h / 4.0;
        for i in 0..g.len() {
            let left = if i > 0 { g.faces[i - 1] } else { 0.0 };
            let right = if i + 1 < g.len() { g.faces[i] } else { 0.0 };
            let stiff = (left + right) / (g.h * g.weights[i]);
            limit = limit.min(0.9 / stiff);
        }
        limit
    }

    pub fn step(&self, f: &[f64], dt: f64) -> Result<Vec<f64>> {
        let limit = self.step_limit();
        if !(dt > 0.0) || dt > limit {
            return Err(Error::StepSize { dt, limit });
        }
        Ok(self.step_unchecked(f, dt))
    }

    fn step_unchecked(&self, f: &[f64], dt: f64) -> Vec<f64> {
        self.rhs(f).iter().zip(f).map(|(r, v)| v + dt * r).collect()
    }

    /// Free energy `∫ f (log f + U/2) dσ` on the grid.
    pub fn energy(&self, f: &[f64]) -> f64 {
        let u = self.potential(f);
        let g = &self.grid;
        g.sigma
            * g.weights
                .iter()
                .zip(f)
                .zip(&u)
                .map(|((w, v), ui)| if *v > 0.0 { w * v * (v.ln() + 0.5 * ui) } else { 0.0 })
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub dt: f64,
    pub t_max: f64,
    /// Record a sample every this many steps (the last state is always kept).
    pub sample_every: usize,
    pub steady_tol: f64,
}

impl EvolveOptions {
    pub fn new(dt: f64, t_max: f64) -> Self {
        EvolveOptions {
            dt,
            t_max,
            sample_every: 1000,
            steady_tol: STEADY_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    /// `a_1..a_4` at each sample (fewer if the kernel has fewer modes).
    pub moments: Vec<Vec<f64>>,
    pub steps: usize,
    /// Largest `E(f_{k+1}) - E(f_k)` over all steps.
    pub max_energy_increase: f64,
    /// Largest `|mass(f_k) - mass(f_0)|` over all steps.
    pub max_mass_drift: f64,
    pub reached_steady_state: bool,
}

impl Trajectory {
    pub fn final_density(&self) -> &[f64] {
        self.densities.last().expect("trajectory has at least one sample")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }

    /// Column names and rows `t, E, a_1..a_4`.
    pub fn table(&self) -> (Vec<String>, Vec<Vec<f64>>) {
        let k = self.moments.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string(), "energy".to_string()];
        header.extend((1..=k).map(|i| format!("a_{i}")));
        let rows = self
            .times
            .iter()
            .zip(&self.energies)
            .zip(&self.moments)
            .map(|((t, e), a)| {
                let mut row = vec![*t, *e];
                row.extend(a);
                row
            })
            .collect();
        (header, rows)
    }
}

pub fn potential_on_grid(density: &[f64], spec: &KernelSpec, lambda: f64, grid: &ThetaGrid) -> Result<Vec<f64>> {
    check_len(density, grid)?;
    Ok(Flow::new(spec, lambda, grid)?.potential(density))
}

pub fn step(f: &[f64], spec: &KernelSpec, lambda: f64, dt: f64, grid: &ThetaGrid) -> Result<Vec<f64>> {
    check_len(f, grid)?;
    Flow::new(spec, lambda, grid)?.step(f, dt)
}

pub fn evolve(f0: &[f64], spec: &KernelSpec, lambda: f64, dt: f64, t_max: f64, grid: &ThetaGrid) -> Result<Trajectory> {
    evolve_with(&Flow::new(spec, lambda, grid)?, f0, &EvolveOptions::new(dt, t_max))
}

pub fn evolve_with(flow: &Flow, f0: &[f64], opts: &EvolveOptions) -> Result<Trajectory> {
    let grid = flow.grid();
    check_len(f0, grid)?;
    let limit = flow.step_limit();
    if !(opts.dt > 0.0) || opts.dt > limit {
        return Err(Error::StepSize { dt: opts.dt, limit });
    }
    if !(opts.t_max >= 0.0) || !opts.t_max.is_finite() {
        return Err(Error::invalid(format!(
            "t_max must be finite and nonnegative, got {}",
            opts.t_max
        )));
    }
    if opts.sample_every == 0 {
        return Err(Error::invalid("sample_every must be at least 1"));
    }
    if f0.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("initial density must be finite and nonnegative"));
    }
    let k = flow.n().min(4);
    let record = |traj: &mut Trajectory, t: f64, f: &[f64], e: f64| {
        traj.times.push(t);
        traj.densities.push(f.to_vec());
        traj.energies.push(e);
        traj.moments.push(flow.moments(f)[..k].to_vec());
    };

    let mass0 = grid.mass(f0);
    let mut traj = Trajectory {
        times: vec![],
        densities: vec![],
        energies: vec![],
        moments: vec![],
        steps: 0,
        max_energy_increase: f64::NEG_INFINITY,
        max_mass_drift: 0.0,
        reached_steady_state: false,
    };
    let mut f = f0.to_vec();
    let mut e = flow.energy(&f);
    record(&mut traj, 0.0, &f, e);
    let total = (opts.t_max / opts.dt).round() as usize;
    let mut t = 0.0;
    for n in 1..=total {
        let next = flow.step_unchecked(&f, opts.dt);
        if next.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Divergence { time: t });
        }
        let change = grid.l2_norm(&next.iter().zip(&f).map(|(a, b)| a - b).collect::<Vec<_>>()) / opts.dt;
        let e_next = flow.energy(&next);
        traj.max_energy_increase = traj.max_energy_increase.max(e_next - e);
        traj.max_mass_drift = traj.max_mass_drift.max((grid.mass(&next) - mass0).abs());
        f = next;
        e = e_next;
        t = n as f64 * opts.dt;
        traj.steps = n;
        let steady = change < opts.steady_tol;
        if steady || n % opts.sample_every == 0 || n == total {
            record(&mut traj, t, &f, e);
        }
        if steady {
            traj.reached_steady_state = true;
            break;
        }
    }
    Ok(traj)
}

fn check_len(f: &[f64], grid: &ThetaGrid) -> Result<()> {
    if f.len() != grid.len() {
        return Err(Error::invalid(format!(
            "density has {} values but the grid {} nodes",
            f.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// Spectrum of the linearized flow at a steady state, restricted to even,
/// mass-free perturbations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    /// Growth rates (eigenvalues of the linearization), largest first.
    pub rates: Vec<f64>,
    /// Growth rate of `f·P_{2n}`-shaped perturbations at `t = 0⁺` for each
    /// retained mode, `⟨v, L v⟩ / ⟨v, v⟩` in the `W/f` inner product.
    pub mode_rates: Vec<f64>,
    /// `‖∂f/∂t‖` at the density the probe linearized about.
    pub steady_residual: f64,
    pub grid_points: usize,
}

impl LinearProbe {
    pub fn max_rate(&self) -> f64 {
        self.rates[0]
    }
}

/// Linearizes the flow at the Boltzmann density of `state` on `grid`.
///
/// In the variable `ρ = f e^U` the flux is `a_{i+1/2} (ρ_{i+1} - ρ_i)` with
/// `a = (s/h) B(ΔU) e^{-U_i}`, so `∂f/∂t = -W^{-1} Dᵀ A D ρ`. At a steady
/// state `Dρ = 0`, which kills the variation of `A`, and the linearization
/// is similar to `-Dᵀ A D Ĥ` with the symmetric
/// `Ĥ = diag(e^U / W) - ρ λ σ_{D-1} P K Pᵀ`. Its nonzero spectrum is that of
/// the symmetric `(G-1)×(G-1)` matrix `-A^{1/2} D Ĥ Dᵀ A^{1/2}`, which acts on
/// exactly the mass-free perturbations; its even block is what is returned.
pub fn linear_probe(state: &AxisymState, spec: &KernelSpec, lambda: f64, grid: &ThetaGrid) -> Result<LinearProbe> {
    let flow = Flow::new(spec, lambda, grid)?;
    let f = grid.boltzmann(state)?;
    let g = grid.len();
    let n = flow.n();
    let w = &grid.weights;
    let mut u = flow.potential(&f);
    let top = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    u.iter_mut().for_each(|v| *v -= top);
    let total_w: f64 = w.iter().sum();
    let rho = f
        .iter()
        .zip(&u)
        .zip(w)
        .map(|((fi, ui), wi)| wi * fi * ui.exp())
        .sum::<f64>()
        / total_w;

    let mut hhat = DMatrix::<f64>::zeros(g, g);
    for i in 0..g {
        let pi = &flow.basis[i * n..(i + 1) * n];
        for j in i..g {
            let pj = &flow.basis[j * n..(j + 1) * n];
            let kk: f64 = flow.coeffs.iter().zip(pi).zip(pj).map(|((k, a), b)| k * a * b).sum();
            let v = -rho * lambda * grid.sigma * kk;
            hhat[(i, j)] = v;
            hhat[(j, i)] = v;
        }
        hhat[(i, i)] += u[i].exp() / w[i];
    }
    let sqrt_a: Vec<f64> = (0..g - 1)
        .map(|i| (grid.faces[i] / grid.h * bernoulli(u[i + 1] - u[i]) * (-u[i]).exp()).sqrt())
        .collect();
    let m = DMatrix::from_fn(g - 1, g - 1, |a, b| {
        let d = hhat[(a + 1, b + 1)] - hhat[(a + 1, b)] - hhat[(a, b + 1)] + hhat[(a, b)];
        -sqrt_a[a] * d * sqrt_a[b]
    });
    // Even densities have face-antisymmetric differences; odd ones never
    // couple to the even kernel and only diffuse, so they are left out.
    let half = (g - 1) / 2;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let b = DMatrix::from_fn(g - 1, half, |a, k| {
        if a == k {
            s
        } else if a == g - 2 - k {
            -s
        } else {
            0.0
        }
    });
    let even = b.transpose() * m * b;
    let mut rates: Vec<f64> = even.symmetric_eigenvalues().iter().copied().collect();
    rates.sort_by(|a, b| b.total_cmp(a));

    let table = ZonalLegendre::new(grid.dim, 2 * n)?;
    let rows: Vec<Vec<f64>> = grid.theta.iter().map(|t| table.values(t.cos())).collect();
    let mut mode_rates = Vec::with_capacity(n);
    for k in 1..=n {
        let mut v: Vec<f64> = f.iter().zip(&rows).map(|(fi, p)| fi * p[2 * k]).collect();
        let shift = grid.mass(&v) / grid.mass(&f);
        v.iter_mut().zip(&f).for_each(|(x, fi)| *x -= shift * fi);
        let lv = flow.tangent(&f, &v);
        let num: f64 = (0..g).map(|i| w[i] * v[i] * lv[i] / f[i]).sum();
        let den: f64 = (0..g).map(|i| w[i] * v[i] * v[i] / f[i]).sum();
        mode_rates.push(num / den);
    }
    Ok(LinearProbe {
        rates,
        mode_rates,
        steady_residual: grid.l2_norm(&flow.rhs(&f)),
        grid_points: g,
    })
}

/// [`linear_probe`] starting on `points` nodes and doubling the grid (at most
/// four times) until the Boltzmann density is a discrete steady state to
/// `1e-8`; strongly ordered states need the finer grids.
pub fn linear_probe_adaptive(
    state: &AxisymState,
    spec: &KernelSpec,
    lambda: f64,
    points: usize,
) -> Result<LinearProbe> {
    let mut g = points;
    let mut probe = linear_probe(state, spec, lambda, &make_grid(spec.dim(), g)?)?;
    for _ in 0..4 {
        if probe.steady_residual <= 1e-8 {
            break;
        }
        g *= 2;
        probe = linear_probe(state, spec, lambda, &make_grid(spec.dim(), g)?)?;
    }
    Ok(probe)
}
