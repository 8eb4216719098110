//! Invariants of the library, checked on random inputs.

use std::f64::consts::PI;

use proptest::prelude::*;

use onsager::bifurcation::{critical_values, trivial_index};
use onsager::dynamics::{evolve_with, make_grid, EvolveOptions, Flow};
use onsager::kernel::{khat_eval, recurrence_ratio, KernelSource, KernelSpec};
use onsager::polybasis::{
    harmonic_count, legendre_eval, quadrature_rule, surface_area, weighted_integral, Deriv, ZonalRule,
};
use onsager::solver::{multistart, AxisymState, SolveOptions, ZonalModel};

fn onsager(dim: u32, n: usize) -> KernelSpec {
    KernelSpec::onsager(dim, n, KernelSource::OnsagerRecurrence).unwrap()
}

/// Positive, strictly decreasing coefficients.
fn custom_coeffs(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    (0.05f64..1.0, prop::collection::vec(0.3f64..0.95, 0..max_len)).prop_map(|(k1, ratios)| {
        let mut k = vec![k1];
        for r in ratios {
            let last = *k.last().unwrap();
            k.push(last * r);
        }
        k
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zonal_polynomials_are_orthogonal(dim in 3u32..=5, n in 0u32..=20, m in 0u32..=20) {
        let rule = quadrature_rule(64).unwrap();
        let ip = weighted_integral(
            |t| Ok(legendre_eval(dim, n, t, Deriv::Value)? * legendre_eval(dim, m, t, Deriv::Value)?),
            dim,
            &rule,
        )
        .unwrap();
        let want = if n == m {
            surface_area(dim).unwrap() / (surface_area(dim - 1).unwrap() * harmonic_count(dim, n).unwrap() as f64)
        } else {
            0.0
        };
        prop_assert!((ip - want).abs() <= 1e-10, "<P_{n}, P_{m}> = {ip}, expected {want}");
    }

    #[test]
    fn legendre_derivative_matches_differences(dim in 3u32..=6, n in 1u32..=20, t in -0.95f64..0.95) {
        let h = 1e-6;
        let fd = (legendre_eval(dim, n, t + h, Deriv::Value).unwrap() - legendre_eval(dim, n, t - h, Deriv::Value).unwrap())
            / (2.0 * h);
        let d = legendre_eval(dim, n, t, Deriv::First).unwrap();
        prop_assert!((d - fd).abs() <= 1e-6 * d.abs().max(1.0), "{d} vs {fd}");
    }

    #[test]
    fn recurrence_ratio_is_a_contraction(dim in 3u32..=10, n in 1usize..=500) {
        let r = recurrence_ratio(n, dim);
        prop_assert!(r > 0.0 && r < 1.0);
    }

    #[test]
    fn kernels_have_zero_mean(dim in 3u32..=5, coeffs in custom_coeffs(12)) {
        let spec = KernelSpec::custom(dim, coeffs).unwrap();
        let rule = ZonalRule::with_order(dim, 128).unwrap();
        let mean = rule.try_integrate(|t| khat_eval(&spec, t.acos())).unwrap() * surface_area(dim - 1).unwrap()
            / surface_area(dim).unwrap();
        prop_assert!(mean.abs() <= 1e-10, "mean {mean}");
    }

    #[test]
    fn kernel_json_round_trip_is_exact(dim in 3u32..=6, coeffs in custom_coeffs(20), k0 in 0.1f64..5.0) {
        let spec = KernelSpec::custom(dim, coeffs).unwrap().with_mean(k0).unwrap();
        let back = KernelSpec::from_json(&spec.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, spec);
    }

    #[test]
    fn zero_is_an_exact_fixed_point(dim in 3u32..=5, coeffs in custom_coeffs(10), lambda in 0.0f64..200.0) {
        let spec = KernelSpec::custom(dim, coeffs).unwrap();
        let model = ZonalModel::new(&spec).unwrap();
        let r = model.residual(&vec![0.0; spec.n_max()], lambda);
        prop_assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gruss_bound_holds(dim in 3u32..=4, lambda in 0.1f64..60.0, u in prop::collection::vec(-5.0f64..5.0, 6)) {
        let spec = onsager(dim, 6);
        let jac = ZonalModel::new(&spec).unwrap().jacobian(&u, lambda);
        for m in 0..6 {
            for n in 0..6 {
                prop_assert!(jac[(m, n)].abs() <= lambda * spec.coeff(m + 1) + 1e-12);
            }
        }
    }

    #[test]
    fn converged_solutions_are_fixed_points(lambda in 1.0f64..40.0, amp in -6.0f64..6.0, mode in 1usize..=3) {
        let spec = onsager(3, 12);
        let model = ZonalModel::new(&spec).unwrap();
        let opts = SolveOptions::default();
        let init = AxisymState::mode(3, 12, mode, amp).unwrap();
        if let Ok(r) = model.solve(lambda, &init, &opts) {
            if r.converged {
                let res: f64 = model.residual(&r.modes, lambda).iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(res <= opts.tol);
                prop_assert!(r.sup_norm_u <= lambda * spec.sup_norm_khat() + 1e-8);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn free_energy_never_increases(
        lambda in 1.0f64..25.0,
        eps in prop::collection::vec(-0.4f64..0.4, 3),
    ) {
        let grid = make_grid(3, 64).unwrap();
        let mut f = grid.uniform();
        for (n, e) in eps.iter().enumerate() {
            f = grid.perturbed(&f, n + 1, *e).unwrap();
        }
        let spec = onsager(3, 8);
        let flow = Flow::new(&spec, lambda, &grid).unwrap();
        let traj = evolve_with(&flow, &f, &EvolveOptions::new(flow.step_limit(), 1.0)).unwrap();
        prop_assert!(traj.max_energy_increase <= 1e-10, "rise {}", traj.max_energy_increase);
    }
}

#[test]
fn critical_values_increase() {
    for dim in 3..=5 {
        let crit = critical_values(&onsager(dim, 24)).unwrap();
        assert!(crit.windows(2).all(|w| w[0] < w[1]), "D = {dim}");
    }
}

#[test]
fn trivial_index_factorizes() {
    use rand::{Rng, SeedableRng};
    let spec = onsager(3, 8);
    let model = ZonalModel::new(&spec).unwrap();
    let crit = critical_values(&spec).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut tested = 0;
    while tested < 50 {
        let lambda: f64 = rng.gen_range(0.0..1.2 * crit[7]);
        if crit.iter().any(|c| (lambda - c).abs() < 1e-3 * c) {
            continue;
        }
        let product = (1..=8).fold(1i8, |s, n| {
            let x = 1.0 - lambda * spec.coeff(n) / harmonic_count(3, 2 * n as u32).unwrap() as f64;
            s * x.signum() as i8
        });
        assert_eq!(model.index(&[0.0; 8], lambda).unwrap(), product);
        assert_eq!(trivial_index(&spec, lambda).unwrap(), product);
        tested += 1;
    }
}

#[test]
fn trivial_index_flips_at_each_critical_value() {
    let spec = onsager(3, 8);
    let model = ZonalModel::new(&spec).unwrap();
    for &c in &critical_values(&spec).unwrap()[..3] {
        let eps = 1e-3 * c;
        let below = model.index(&[0.0; 8], c - eps).unwrap();
        let above = model.index(&[0.0; 8], c + eps).unwrap();
        assert_eq!(below * above, -1);
    }
}

/// A solution at truncation N barely moves when four modes are added.
#[test]
fn solutions_are_stable_under_truncation() {
    let l1 = 32.0 / PI;
    let n = 24;
    let small = onsager(3, n);
    let large = onsager(3, n + 4);
    let big_model = ZonalModel::new(&large).unwrap();
    for lambda in [0.5 * l1, 1.05 * l1, 1.5 * l1] {
        for r in multistart(&small, lambda, 50, 2).unwrap() {
            let init = r.state().resized(n + 4).unwrap();
            let again = big_model.solve(lambda, &init, &SolveOptions::default()).unwrap();
            assert!(again.converged);
            let moved = init.distance(&again.state());
            assert!(moved <= 1e-6, "λ = {lambda}, u_1 = {}: moved {moved:e}", r.modes[0]);
        }
    }
}

/// `log f + U` is constant over the sphere at a solution.
#[test]
fn solutions_are_critical_points_of_the_energy() {
    let spec = onsager(3, 16);
    let model = ZonalModel::new(&spec).unwrap();
    let lambda = 1.5 * 32.0 / PI;
    for r in multistart(&spec, lambda, 50, 4).unwrap() {
        let density = model.density(&r.modes).unwrap();
        let field = model.potential(&model.apply_g(&r.modes, lambda));
        let h: Vec<f64> = density.values.iter().zip(&field).map(|(f, u)| f.ln() + u).collect();
        let (lo, hi) = h
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let scale = h.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        assert!(
            (hi - lo) / scale <= 1e-6,
            "u_1 = {}: variation {}",
            r.modes[0],
            (hi - lo) / scale
        );
    }
}

#[test]
fn solver_solutions_are_discrete_steady_states() {
    let spec = onsager(3, 16);
    let grid = make_grid(3, 128).unwrap();
    let l1 = 32.0 / PI;
    for lambda in [0.5 * l1, 1.1 * l1, 1.5 * l1] {
        let flow = Flow::new(&spec, lambda, &grid).unwrap();
        for r in multistart(&spec, lambda, 50, 5).unwrap() {
            let f = grid.boltzmann(&r.state()).unwrap();
            let next = flow.step(&f, flow.step_limit()).unwrap();
            let change = grid.l2_norm(&next.iter().zip(&f).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(
                change <= 1e-6,
                "λ = {lambda}, u_1 = {}: step moves by {change:e}",
                r.modes[0]
            );
        }
    }
}

#[test]
fn flow_limits_are_solver_fixed_points() {
    let spec = onsager(3, 16);
    let model = ZonalModel::new(&spec).unwrap();
    let grid = make_grid(3, 128).unwrap();
    let lambda = 1.1 * 32.0 / PI;
    let flow = Flow::new(&spec, lambda, &grid).unwrap();
    let f0 = grid.perturbed(&grid.uniform(), 1, -0.01).unwrap();
    let traj = evolve_with(&flow, &f0, &EvolveOptions::new(flow.step_limit(), 200.0)).unwrap();
    assert!(traj.reached_steady_state);
    let u = grid.project_state(traj.final_density(), 16).unwrap();
    let res: f64 = model
        .residual(u.coeffs(), lambda)
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    assert!(res <= 1e-5, "projected residual {res:e}");
    assert!(u.norm() > 0.1);
}

#[test]
fn mass_is_conserved() {
    let spec = onsager(3, 8);
    let grid = make_grid(3, 64).unwrap();
    let flow = Flow::new(&spec, 15.0, &grid).unwrap();
    let f0 = grid.perturbed(&grid.uniform(), 1, 0.2).unwrap();
    let dt = flow.step_limit();
    let opts = EvolveOptions {
        steady_tol: 0.0,
        sample_every: 100_000,
        ..EvolveOptions::new(dt, 100_000.0 * dt)
    };
    let traj = evolve_with(&flow, &f0, &opts).unwrap();
    assert!(traj.steps >= 99_999, "{} steps", traj.steps);
    assert!(traj.max_mass_drift <= 1e-10, "drift {:e}", traj.max_mass_drift);
    let one = flow.step(&f0, dt).unwrap();
    assert!((grid.mass(&one) - grid.mass(&f0)).abs() <= 1e-14);
}

/// Halving h cuts the error of `a_1(T)` by about four.
#[test]
fn flow_converges_at_second_order() {
    let spec = onsager(3, 8);
    let lambda = 1.1 * 32.0 / PI;
    let dt = 1.0 / 32768.0;
    let a1: Vec<f64> = [64, 128, 256]
        .iter()
        .map(|&g| {
            let grid = make_grid(3, g).unwrap();
            let flow = Flow::new(&spec, lambda, &grid).unwrap();
            let f0 = grid.perturbed(&grid.uniform(), 1, 0.3).unwrap();
            let opts = EvolveOptions {
                steady_tol: 0.0,
                sample_every: usize::MAX,
                ..EvolveOptions::new(dt, 1.0)
            };
            let traj = evolve_with(&flow, &f0, &opts).unwrap();
            grid.moments(traj.final_density(), 1).unwrap()[0]
        })
        .collect();
    let ratio = (a1[0] - a1[1]) / (a1[1] - a1[2]);
    assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}, a_1 = {a1:?}");
}
