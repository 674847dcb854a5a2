use std::sync::Arc;

use hyperfast::barriers::{
    admissible_rbar, check_lower_main, default_region, find_xi, k_eps, ratio_max_closed_form, ratio_rhs,
    relerr_rstar, upper_time_ratio, verify_comparison, verify_supersolution, Barrier, BarrierSpec, Family, Mode,
    Region, TimeProfile, Verdict,
};
use hyperfast::evolution::{bump_datum, evolve, separable_solution, EvolutionConfig};
use hyperfast::geometry::RadialGrid;
use hyperfast::stationary::profile_for_extinction_time;

const N: usize = 3;

fn check(spec: &BarrierSpec, m: f64, nr: usize, nt: usize) -> Verdict {
    let b = Barrier::build(spec, N, m).unwrap();
    let region = default_region(spec, m, N, nr, nt).unwrap();
    verify_supersolution(&b, spec.family.is_upper(), spec.family.default_pde(), &region, m, N).unwrap().verdict
}

fn psi(r_hat: f64) -> BarrierSpec {
    BarrierSpec::new(
        Family::PsiRelerr,
        &[("a", 1.0), ("b", 1.0), ("c", 0.75), ("eps", 0.2), ("big_t", 2.0), ("r_hat", r_hat)],
    )
}

#[test]
fn upper_basic_closed_form_properties() {
    let m = 0.5;
    let b = Barrier::build(&BarrierSpec::new(Family::UpperBasic, &[("c0", 2.0)]), N, m).unwrap();
    let b2 = Barrier::build(&BarrierSpec::new(Family::UpperBasic, &[("c0", 4.0)]), N, m).unwrap();
    assert!((b.value(0.0, 0.0, m, N) - 2.0).abs() < 1e-15);
    for j in 1..=300 {
        let r = 0.1 + (15.0 - 0.1) * j as f64 / 300.0;
        let s = b.sample(r, 0.0, m, N);
        // −Δ(B^m) ≥ ((N−1)²/4)·B^m > 0.
        assert!(-s.lap >= s.value.powf(m) * (1.0 - 1e-12));
        assert!((b2.value(r, 0.0, m, N) / s.value - 2.0).abs() < 1e-12);
    }
    let region = Region::new((0.5, 15.0), (0.0, 1.0), 400, 20);
    let rep = verify_supersolution(&b, true, Family::UpperBasic.default_pde(), &region, m, N).unwrap();
    assert_eq!(rep.verdict, Verdict::Pass);
}

#[test]
fn upper_sharp_endpoints() {
    let (m, c0, xi, t_star) = (0.5, 3.0, 2.0, 1.0);
    let spec = BarrierSpec::new(Family::UpperSharp, &[("c0", c0), ("xi", xi), ("m_tilde", 0.8), ("t_star", t_star)]);
    let b = Barrier::build(&spec, N, m).unwrap();
    let Barrier::UpperSharp { amp, .. } = &b else { unreachable!() };
    let amp = *amp;
    for j in 0..=200 {
        let r = xi + 20.0 * j as f64 / 200.0;
        let at0 = b.value(r, 0.0, m, N);
        assert!((at0 / (c0 * (-r / m).exp()) - 1.0).abs() < 1e-12);
        let bound = c0 * amp.powf(2.0 / m) * (xi / m).exp() * (-2.0 * r / m).exp();
        assert!(b.value(r, t_star, m, N) <= bound * (1.0 + 1e-12));
    }
    // m̃ must lie in (2m/(1+m), 1).
    assert!(Barrier::build(&spec.clone().with("m_tilde", 0.6), N, m).is_err());
}

#[test]
fn lower_barrier_endpoints() {
    let m = 0.5;
    let (mu0, xi, alpha, t_star) = (1e-3, 2.0, 2.5, 1.0);
    for tp in [TimeProfile::Linear, TimeProfile::HLower] {
        let spec = BarrierSpec::new(Family::LowerPre, &[("mu0", mu0), ("xi", xi), ("alpha", alpha), ("t_star", t_star)])
            .with_profile(tp);
        let b = Barrier::build(&spec, N, m).unwrap();
        for j in 0..=100 {
            let r = xi + 10.0 * j as f64 / 100.0;
            assert_eq!(b.value(r, 0.5 * t_star, m, N), 0.0);
            let end = mu0 * (alpha * xi / m).exp() * (-alpha * r / m).exp();
            assert!((b.value(r, t_star, m, N) / end - 1.0).abs() < 1e-12);
            let t = 0.5 * t_star * (1.0 + j as f64 / 100.0);
            assert!(b.value(xi, t, m, N) <= mu0 * (1.0 + 1e-12));
        }
    }

    let (beta, t_eps) = (1.5, 0.1);
    assert!(check_lower_main(alpha, beta, m, N).is_ok());
    assert!(check_lower_main(3.6, beta, m, N).is_err());
    let spec = BarrierSpec::new(
        Family::LowerMain,
        &[("mu0", mu0), ("xi", xi), ("alpha", alpha), ("beta", beta), ("t_eps", t_eps), ("t_star", t_star)],
    );
    let b = Barrier::build(&spec, N, m).unwrap();
    for j in 0..=100 {
        let r = xi + 10.0 * j as f64 / 100.0;
        let start = mu0 * (alpha * xi / m).exp() * (-alpha * r / m).exp();
        assert!((b.value(r, t_eps, m, N) / start - 1.0).abs() < 1e-12);
        let t = t_eps + (t_star - t_eps) * j as f64 / 100.0;
        assert!(b.value(xi, t, m, N) <= mu0 * 2f64.powf(1.0 / m) * (1.0 + 1e-12));
    }
}

#[test]
fn relative_error_barrier_basics() {
    assert!((k_eps(0.2, 3) - 0.16).abs() < 1e-14);
    let b = Barrier::build(&psi(3.0), N, 0.5).unwrap();
    for r in [0.5, 1.0, 5.0, 50.0] {
        assert!(b.value(r, 0.0, 0.5, N) < 0.75);
    }
    // ε outside (0, 1/5] is refused.
    assert!(Barrier::build(&psi(3.0).with("eps", 0.3), N, 0.5).is_err());
}

#[test]
fn psi_admissibility_is_monotone_in_r_hat() {
    for m in [0.45, 0.5, 0.7] {
        let p = profile_for_extinction_time(2.0, m, N).unwrap();
        let r0 = admissible_rbar(1.0, 1.0, 0.75, 0.2, m, N, 2.0, false).unwrap().max(relerr_rstar(&p, 0.2));
        for f in [1.0, 1.5, 2.5] {
            assert_eq!(check(&psi(f * r0), m, 400, 60), Verdict::Pass, "m = {m}, r̂ = {}", f * r0);
        }
    }
}

#[test]
fn strongly_violated_psi_fails_at_small_radius() {
    let m = 0.5;
    let spec = psi(1.0);
    let b = Barrier::build(&spec, N, m).unwrap();
    let region = default_region(&spec, m, N, 400, 60).unwrap();
    let rep = verify_supersolution(&b, true, spec.family.default_pde(), &region, m, N).unwrap();
    assert_eq!(rep.verdict, Verdict::Fail);
    assert!(rep.min_residual < 0.0);
    assert!(rep.worst.0 < 3.0, "worst at r = {}", rep.worst.0);
}

#[test]
fn passes_survive_refinement() {
    let m = 0.5;
    let specs = [
        BarrierSpec::new(Family::UpperBasic, &[("c0", 1.0)]),
        BarrierSpec::new(Family::UpperSharp, &[("c0", 10.0), ("xi", 5.0), ("m_tilde", 0.8), ("t_star", 1.0)]),
        BarrierSpec::new(Family::LowerPre, &[("mu0", 9e-4), ("xi", 2.0), ("alpha", 2.5), ("t_star", 1.0)]),
    ];
    for spec in &specs {
        let b = Barrier::build(spec, N, m).unwrap();
        let region = default_region(spec, m, N, 300, 60).unwrap();
        let coarse = verify_supersolution(&b, spec.family.is_upper(), spec.family.default_pde(), &region, m, N).unwrap();
        assert_eq!(coarse.verdict, Verdict::Pass, "{:?}", spec.family);
        let fine =
            verify_supersolution(&b, spec.family.is_upper(), spec.family.default_pde(), &region.refined(), m, N).unwrap();
        assert_eq!(fine.verdict, Verdict::Pass, "{:?} flipped under refinement", spec.family);
    }
}

#[test]
fn time_ratio_is_dominated_for_small_m() {
    // α = 1/m − 1 ≥ 1: numerator ≤ denominator, so the ratio is ≤ max h′ = 1.
    for m in [0.3, 0.45, 0.5] {
        for i in 1..100 {
            for j in 1..100 {
                let (x, tau) = (i as f64 / 100.0, j as f64 / 100.0);
                assert!(upper_time_ratio(x, tau, m, TimeProfile::Linear) <= 1.0 + 1e-12);
            }
        }
    }
}

#[test]
fn ratio_maximum_matches_a_grid_search() {
    for m in [0.55, 0.6, 0.7, 0.8, 0.9] {
        let alpha = 1.0 / m - 1.0;
        for x in [0.05, 0.3, 0.7, 0.99] {
            // σ on a log grid spanning fifteen decades.
            let best = (0..=30_000)
                .map(|i| 10f64.powf(-10.0 + 15.0 * i as f64 / 30_000.0))
                .map(|s| ratio_rhs(x, s, alpha))
                .fold(f64::NEG_INFINITY, f64::max);
            let closed = ratio_max_closed_form(x, alpha);
            assert!((best / closed - 1.0).abs() < 0.01, "m = {m}, x = {x}: {best} vs {closed}");
        }
    }
}

#[test]
fn xi_scan_is_monotone_in_c0() {
    let m = 0.7;
    let scan: Vec<f64> = (1..=40).map(|i| 0.25 * i as f64).collect();
    let spec = |c0: f64| BarrierSpec::new(Family::UpperSharp, &[("c0", c0), ("m_tilde", 0.9), ("t_star", 0.01)]);
    let hi = find_xi(&spec(1e6), m, N, &scan, 300, 60).unwrap();
    let lo = find_xi(&spec(1e3), m, N, &scan, 300, 60).unwrap();
    assert!(lo.xi <= hi.xi, "ξ(1e3) = {} > ξ(1e6) = {}", lo.xi, hi.xi);
    assert!(hi.ratio_sup.is_finite());
}

#[test]
fn comparison_with_data_driven_barriers() {
    let m = 0.5;
    let g = Arc::new(RadialGrid::uniform(N, 15.0, 1500).unwrap());
    let cfg = EvolutionConfig::new(m, g.clone());
    let outs: Vec<f64> = (1..=20).map(|i| 0.05 * i as f64).collect();

    // Generic datum below C0 e^{−(N−1)r/(2m)}, C0 read off the datum.
    let u0 = bump_datum(&g, 1.0, 1.0, 1.0).unwrap();
    let c0 = g.nodes().iter().zip(u0.values()).fold(0.0f64, |a, (&r, &u)| a.max(u * (2.0 * r / (2.0 * m)).exp()));
    let upper = Barrier::build(&BarrierSpec::new(Family::UpperBasic, &[("c0", c0)]), N, m).unwrap();
    let tr = evolve(&u0, 1.0, &outs, &cfg).unwrap();
    let region = Region::new((0.0, 15.0), (0.0, 1.0), 1, 1);
    let rep = verify_comparison(&tr, &|r, t| upper.value(r, t, m, N), Mode::Above, &region);
    assert_eq!(rep.verdict, Verdict::Pass, "{rep:?}");
    let zero = verify_comparison(&tr, &|_, _| 0.0, Mode::Above, &region);
    assert_eq!(zero.verdict, Verdict::Fail);

    // Separable solution above a LOWER_MAIN barrier with μ0 a small
    // fraction of min_t u(ξ, t).
    let p = profile_for_extinction_time(2.0, m, N).unwrap();
    let sep = evolve(&p.separable_datum(&g), 1.0, &outs, &cfg).unwrap();
    let (xi, t_eps, t_star) = (3.0, 0.1, 1.0);
    let u_xi = separable_solution(&p, t_star, &g).unwrap().values()[g.locate(xi)];
    let mu0 = 0.1 * u_xi / 2f64.powf(1.0 / m);
    let spec = BarrierSpec::new(
        Family::LowerMain,
        &[("mu0", mu0), ("xi", xi), ("alpha", 2.5), ("beta", 1.5), ("t_eps", t_eps), ("t_star", t_star)],
    );
    assert_eq!(check(&spec, m, 400, 100), Verdict::Pass);
    let lower = Barrier::build(&spec, N, m).unwrap();
    let region = Region::new((xi, 13.0), (t_eps, t_star), 1, 1);
    let rep = verify_comparison(&sep, &|r, t| lower.value(r, t, m, N), Mode::Below, &region);
    assert_eq!(rep.verdict, Verdict::Pass, "{rep:?}");
    assert_eq!(rep.boundary, Verdict::Pass);
}

#[test]
fn shifted_wrapper() {
    let m = 0.5;
    let spec = BarrierSpec::new(Family::LowerPre, &[("mu0", 1e-3), ("xi", 2.0), ("alpha", 2.5), ("t_star", 1.0)]);
    let b = Barrier::build(&spec, N, m).unwrap();
    let eps = 1e-4;
    let s = b.clone().shifted(eps);
    for j in 0..=50 {
        let r = 2.0 + 6.0 * j as f64 / 50.0;
        let v = b.value(r, 1.0, m, N);
        let expect = (v.powf(m) - eps).max(0.0).powf(1.0 / m);
        assert!((s.value(r, 1.0, m, N) - expect).abs() <= 1e-15 + 1e-12 * expect);
    }
}
