use std::sync::Arc;

use hyperfast::geometry::RadialGrid;
use hyperfast::operator::DiffusionOperator;
use hyperfast::OuterBoundary;
use hyperfast::stationary::{
    coupling_for_extinction_time, dirichlet_minimizer, find_ground_state, minimizer_norm, power_derivative_limit_check,
    profile_for_extinction_time, scale_factor, scale_profile, shoot, Classification,
};
use hyperfast::Error;

fn sech2(x: f64) -> f64 {
    1.0 / x.cosh().powi(2)
}

/// Exact ground states: 6 sech² r for (N, m, c) = (3, 1/2, 1) and
/// sech²(r/2) for (2, 1/2, 1). Both solve −ΔV = V² by direct substitution.
fn exact(dim: usize, r: f64) -> (f64, f64) {
    match dim {
        3 => (6.0 * sech2(r), -12.0 * sech2(r) * r.tanh()),
        2 => (sech2(0.5 * r), -sech2(0.5 * r) * (0.5 * r).tanh()),
        _ => unreachable!(),
    }
}

#[test]
fn closed_form_ground_states() {
    for dim in [3usize, 2] {
        let p = find_ground_state(1.0, 0.5, dim, 1e-14).unwrap();
        assert!((p.amplitude() / exact(dim, 0.0).0 - 1.0).abs() < 1e-9, "N={dim}: V(0) = {}", p.amplitude());
        let mut worst: f64 = 0.0;
        for j in 0..=2000 {
            let r = 14.0 * j as f64 / 2000.0;
            let (v, vp) = p.eval(r);
            let (e, ep) = exact(dim, r);
            worst = worst.max((v / e - 1.0).abs());
            if r > 0.01 {
                worst = worst.max((vp / ep - 1.0).abs());
            }
        }
        assert!(worst < 1e-6, "N={dim}: sup relative error {worst:.3e}");
    }
}

#[test]
fn tail_and_flux_constants_of_the_closed_forms() {
    // e^{2r}·6sech²r → 24 and −sinh²r·V′ → 12; e^{r}sech²(r/2) → 4 and −sinh r·V′ → 2.
    for (dim, l, cv) in [(3usize, 24.0, 12.0), (2, 4.0, 2.0)] {
        let p = find_ground_state(1.0, 0.5, dim, 1e-14).unwrap();
        assert!((p.tail_constant() / l - 1.0).abs() < 1e-6, "N={dim}: l = {}", p.tail_constant());
        let f = p.flux_constant();
        assert!(f.relative_gap() < 5e-3);
        assert!((f.from_integral / cv - 1.0).abs() < 1e-6, "N={dim}: C_V = {}", f.from_integral);
    }
}

#[test]
fn residual_is_small() {
    let p = find_ground_state(1.0, 0.5, 3, 1e-14).unwrap();
    let g = RadialGrid::uniform(3, 15.0, 3000).unwrap();
    assert!(p.residual(&g) <= 1e-6);
}

#[test]
fn scaling_law_matches_a_direct_solve() {
    for m in [0.5, 0.7] {
        let p1 = find_ground_state(1.0, m, 3, 1e-14).unwrap();
        let p2 = find_ground_state(2.0, m, 3, 1e-14).unwrap();
        let s = scale_profile(&p1, 2.0).unwrap();
        let mut worst: f64 = 0.0;
        for j in 0..=600 {
            let r = 12.0 * j as f64 / 600.0;
            worst = worst.max((s.eval(r).0 / p2.eval(r).0 - 1.0).abs());
        }
        assert!(worst < 1e-6, "m={m}: {worst:.3e}");
        let g = RadialGrid::uniform(3, 15.0, 1500).unwrap();
        assert!(s.residual(&g) < 1e-6);
        // l is linear in V.
        let lambda = scale_factor(1.0, 2.0, m);
        assert!((s.tail_constant() / p1.tail_constant() - lambda).abs() < 1e-12 * lambda);
    }
}

#[test]
fn scale_factor_and_coupling_examples() {
    assert_eq!(scale_factor(1.3, 1.3, 0.4), 1.0);
    assert!((scale_factor(1.0, 2.0, 0.5) - 0.5).abs() < 1e-15);
    assert!((coupling_for_extinction_time(2.0, 0.5) - 1.0).abs() < 1e-15);
    assert!((coupling_for_extinction_time(1.0, 0.5) - 2.0).abs() < 1e-15);
    // c → 0 as T → ∞ and m/(m−1) < 0, so the profile grows like T^{m/(1−m)}.
    let near = profile_for_extinction_time(2.0, 0.5, 3).unwrap();
    assert!((near.amplitude() - 6.0).abs() < 1e-8);
    let far = profile_for_extinction_time(2e6, 0.5, 3).unwrap();
    assert!((far.amplitude() / (6.0 * 1e6) - 1.0).abs() < 1e-12);
}

#[test]
fn subcritical_exponent_has_no_bracket() {
    match find_ground_state(1.0, 0.2, 3, 1e-12) {
        Err(Error::BracketNotFound { .. }) => {}
        other => panic!("expected a missing bracket, got {other:?}"),
    }
}

#[test]
fn shooting_classifies_both_sides_of_the_ground_state() {
    let a = find_ground_state(1.0, 0.5, 3, 1e-14).unwrap().amplitude();
    let above = shoot(1.01 * a, 1.0, 0.5, 3, 30.0).unwrap();
    let below = shoot(0.99 * a, 1.0, 0.5, 3, 30.0).unwrap();
    assert_ne!(above.classification, below.classification);
    assert!([above.classification, below.classification].contains(&Classification::CrossesZero));
    let zero = if above.classification == Classification::CrossesZero { above } else { below };
    assert!(zero.event_radius.is_some());

    // At the converged amplitude the e^{2r}V plateau is flat over the last
    // quarter of the trusted trajectory.
    let star = shoot(a, 1.0, 0.5, 3, 12.0).unwrap();
    let traj = &star.trajectory;
    let r_end = traj.last().unwrap()[0];
    let plateau: Vec<f64> = traj.iter().filter(|s| s[0] >= 0.75 * r_end).map(|s| (2.0 * s[0]).exp() * s[1]).collect();
    let (lo, hi) = plateau.iter().fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(*x), b.max(*x)));
    assert!(hi / lo - 1.0 < 0.01, "plateau spread {:.3e}", hi / lo - 1.0);
}

#[test]
fn minimizer_converges_to_the_ground_state() {
    let p = find_ground_state(1.0, 0.5, 3, 1e-14).unwrap();
    let h = 0.01;
    let target = minimizer_norm(&p, 15.0, h).unwrap();
    let res = dirichlet_minimizer(15.0, 0.5, 3, target, h).unwrap();
    assert_eq!(*res.profile.values().last().unwrap(), 0.0);
    let grid: Arc<RadialGrid> = res.grid.clone();
    let op = DiffusionOperator::new(&grid, OuterBoundary::DirichletZero).unwrap();
    let q = 3.0;
    let norm = op.integral_pow(res.profile.values(), q).powf(1.0 / q);
    assert!((norm / target - 1.0).abs() < 1e-10);
    let mut worst: f64 = 0.0;
    for (&r, &v) in grid.nodes().iter().zip(res.profile.values()) {
        if r <= 10.0 {
            worst = worst.max((v / p.eval(r).0 - 1.0).abs());
        }
    }
    assert!(worst <= 0.01, "sup relative distance {worst:.3e}");
}

#[test]
fn ball_extinction_times_increase_with_the_radius() {
    let p = find_ground_state(1.0, 0.5, 3, 1e-14).unwrap();
    let target = minimizer_norm(&p, 15.0, 0.02).unwrap();
    let t: Vec<f64> = [6.0, 9.0, 12.0]
        .iter()
        .map(|&n| dirichlet_minimizer(n, 0.5, 3, target, 0.02).unwrap().t_n)
        .collect();
    assert!(t.windows(2).all(|w| w[1] >= w[0]), "{t:?}");
}

#[test]
fn power_derivative_limits() {
    let p = find_ground_state(1.0, 0.5, 3, 1e-14).unwrap();
    for (alpha, k, expected) in [(1.0, 1usize, -2.0), (1.0, 2, 4.0), (-2.0, 1, 4.0), (1.0, 0, 1.0)] {
        let rep = power_derivative_limit_check(&p, alpha, k, (7.5, 13.0)).unwrap();
        assert_eq!(rep.expected, expected);
        assert!(rep.max_rel_deviation < 0.01, "α={alpha}, k={k}: {:.3e}", rep.max_rel_deviation);
    }
    assert!(power_derivative_limit_check(&p, 1.0, 4, (7.5, 13.0)).is_err());
    assert!(power_derivative_limit_check(&p, 0.0, 1, (7.5, 13.0)).is_err());
}
