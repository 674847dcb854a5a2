use std::sync::Arc;

use hyperfast::diagnostics::{
    default_window_alpha, derivative_bound_check, derivative_ratio_tables, g_direct, g_recursive, harnack_envelope,
    local_window, relative_error, subcritical_envelope_check, tail_window,
};
use hyperfast::evolution::{bump_datum, evolve, evolve_rescaled, EvolutionConfig, RescaledSchedule, Trajectory};
use hyperfast::geometry::{RadialField, RadialGrid};
use hyperfast::stationary::{profile_for_extinction_time, StationaryProfile};
use hyperfast::Error;

fn grid(r: f64, n: usize) -> Arc<RadialGrid> {
    Arc::new(RadialGrid::uniform(3, r, n).unwrap())
}

fn profile() -> StationaryProfile {
    profile_for_extinction_time(2.0, 0.5, 3).unwrap()
}

fn separable_run(g: &Arc<RadialGrid>) -> Trajectory {
    let p = profile();
    let mut cfg = EvolutionConfig::new(0.5, g.clone());
    cfg.dt_policy.rel_change_target = 2.5e-4;
    let outs: Vec<f64> = (1..=19).map(|i| 0.1 * i as f64).collect();
    evolve(&p.separable_datum(g), 1.9, &outs, &cfg).unwrap()
}

#[test]
fn relative_error_examples() {
    let g = grid(12.0, 600);
    let p = profile();
    let w = p.separable_datum(&g);
    let re = relative_error(&w, &p);
    assert!(re.sup < 1e-12);
    let doubled = RadialField::from_fn(g.clone(), |r| (2.0 * p.eval(r).0).powi(2));
    let re = relative_error(&doubled, &p);
    assert!(re.phi.iter().all(|x| (x - 1.0).abs() < 1e-12));
    assert!(re.psi().iter().all(|x| (x + 1.0).abs() < 1e-12));
}

#[test]
fn separable_envelope_is_read_off_the_profile() {
    let g = grid(15.0, 1500);
    let tr = separable_run(&g);
    let p = profile();
    let q: Vec<f64> = g.nodes().iter().map(|&r| ((2.0 * r).exp() * p.eval(r).0).powi(2)).collect();
    let (lo, hi) = q.iter().fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(*x), b.max(*x)));
    // 6sech²r·e^{2r} runs from 6 at the origin up to 24.
    assert!((lo - 36.0).abs() < 1e-6 && (hi / 576.0 - 1.0).abs() < 1e-3);
    let env = harnack_envelope(&tr, 2.0, 0.5, 1.9).unwrap();
    assert!(env.ratio() >= 1.0);
    assert!((env.c1 / lo - 1.0).abs() < 0.02, "c1 = {}", env.c1);
    assert!((env.c2 / hi - 1.0).abs() < 0.02, "c2 = {}", env.c2);
    // Time independence: a late window sees the same constants.
    let late = harnack_envelope(&tr, 2.0, 1.5, 1.9).unwrap();
    assert!((late.c1 / env.c1 - 1.0).abs() < 0.02);
    assert!(matches!(harnack_envelope(&tr, 2.0, 1.95, 1.99), Err(Error::EmptyWindow)));
}

#[test]
fn derivative_bounds_on_the_separable_run() {
    let g = grid(15.0, 1500);
    let tr = separable_run(&g);
    let p = profile();
    let env = harnack_envelope(&tr, 2.0, 0.5, 1.9).unwrap();
    let b0 = derivative_bound_check(&tr, 2.0, 0.5, 1.9, 0, (7.5, 1.0)).unwrap();
    assert!((b0.spatial_sup / env.c2 - 1.0).abs() < 1e-12);
    // |(V²)′| e^{4r} = 2|V′|V e^{4r} bounds the k=1 ratio.
    let bound = g.nodes().iter().fold(0.0f64, |a, &r| {
        let (v, vp) = p.eval(r);
        a.max(2.0 * vp.abs() * v * (4.0 * r).exp())
    });
    let b1 = derivative_bound_check(&tr, 2.0, 0.5, 1.9, 1, (7.5, 1.0)).unwrap();
    assert!(b1.spatial_sup <= 1.02 * bound && b1.spatial_sup >= 0.9 * bound);
    assert!(b1.spatial_lower_inf > 0.1 * bound, "lower {:.3e}", b1.spatial_lower_inf);
    assert!(b1.temporal_sup.is_finite());
    assert!(derivative_bound_check(&tr, 2.0, 0.5, 1.9, 3, (7.5, 1.0)).is_err());
}

#[test]
fn derivative_ratio_limits() {
    let p = profile();
    for r in [2.0, 6.0, 11.0] {
        let g = g_recursive(&p, r, 3).unwrap();
        for (k, gk) in g.iter().enumerate().skip(1) {
            let d = g_direct(&p, r, k).unwrap();
            assert!((gk / d - 1.0).abs() < 1e-10, "r = {r}, k = {k}");
        }
    }
    let g = g_recursive(&p, 13.0, 2).unwrap();
    assert!((g[1] / -4.0 - 1.0).abs() < 1e-3 && (g[2] / 16.0 - 1.0).abs() < 1e-3);
    assert!(g_recursive(&p, 1.0, 4).is_err());

    let gr = grid(15.0, 3000);
    let w = p.separable_datum(&gr);
    let rows = derivative_ratio_tables(&w, &p, 2, tail_window(&gr)).unwrap();
    for row in &rows {
        assert!((row.f_tail - 1.0).abs() < 0.02, "k = {}: F = {}", row.k, row.f_tail);
        assert!(row.empirical_sup_deviation < 1e-3, "k = {}: {}", row.k, row.empirical_sup_deviation);
    }
}

#[test]
fn local_window_contract() {
    let g = grid(15.0, 3000);
    let p = profile();
    let cfg = EvolutionConfig::new(0.5, g.clone());
    let outs: Vec<f64> = (1..=20).map(|i| 0.2 * i as f64).collect();
    let tr = evolve_rescaled(&p.separable_datum(&g), 4.0, 2.0, &outs, &cfg, &RescaledSchedule::default()).unwrap();
    let alpha = default_window_alpha(10.0, 3).unwrap();
    let w = local_window(&tr, 10.0, 2.0, alpha, 8).unwrap();
    assert!(w.a_min <= 1.0 && w.a_max >= 1.0);
    assert!(w.a_max / w.a_min < 1.5);
    assert!(w.sup_w.is_finite() && w.sup_w > 0.0);
    assert!(matches!(local_window(&tr, 10.0, 2.0, 10.0 * alpha, 8), Err(Error::WindowGuard(_))));
    // A physical-time trajectory has no rescaled window.
    let phys = evolve(&p.separable_datum(&g), 0.1, &[], &cfg).unwrap();
    assert!(local_window(&phys, 10.0, 0.05, alpha, 8).is_err());
}

#[test]
fn subcritical_envelope_is_linear_and_guarded() {
    let g = grid(6.0, 300);
    let u = bump_datum(&g, 1.0, 1.0, 1.0).unwrap().map(|x| x * 1e-3);
    let a = subcritical_envelope_check(&u, 0.2).unwrap();
    let b = subcritical_envelope_check(&u.map(|x| 3.0 * x), 0.2).unwrap();
    assert!((b.c1 / a.c1 - 3.0).abs() < 1e-12 && (b.c2 / a.c2 - 3.0).abs() < 1e-12);
    assert!(subcritical_envelope_check(&u, 0.5).is_err());
}

#[test]
fn subcritical_evolution_has_a_finite_envelope() {
    // A separable-like datum built from an m̃ = 1/2 profile, evolved at m = 0.2.
    let g = grid(8.0, 800);
    let p = profile();
    let u0 = p.separable_datum(&g);
    let cfg = EvolutionConfig::new(0.2, g.clone());
    let tr = evolve(&u0, 0.05, &[0.05], &cfg).unwrap();
    let e = subcritical_envelope_check(&tr.last().u, 0.2).unwrap();
    assert!(e.c1 > 0.0 && e.c2.is_finite() && e.c1 <= e.c2);
}
