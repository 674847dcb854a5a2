//! Measured functionals and asymptotic verdicts.
//!
//! Everything here is a pure function of computed snapshots; nothing feeds
//! back into the solvers.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::evolution::{EvolutionState, TimeSample, Trajectory};
use crate::geometry::{critical_exponent, radial_derivative, s_map, s_map_inverse, RadialField, RadialGrid};
use crate::linalg::solve_tridiagonal;
use crate::operator::{DiffusionOperator, OuterBoundary};
use crate::stationary::{power_derivative_ratio, StationaryProfile};

/// Values below this are treated as numerically extinct by the envelopes.
pub const EXTINCT_FLOOR: f64 = 1e-290;

/// φ = w^m/V − 1 (relerr_m) and φ̂ = w/V^{1/m} − 1 (relerr_lin).
#[derive(Clone, Debug, Serialize)]
pub struct RelativeError {
    pub phi: Vec<f64>,
    pub phi_lin: Vec<f64>,
    pub sup: f64,
    /// Sup over r ≥ R/2.
    pub tail_sup: f64,
    pub sup_lin: f64,
}

impl RelativeError {
    /// ψ = −φ.
    pub fn psi(&self) -> Vec<f64> {
        self.phi.iter().map(|x| -x).collect()
    }
}

pub fn relative_error(w: &RadialField, profile: &StationaryProfile) -> RelativeError {
    let m = profile.m();
    let nodes = w.grid().nodes();
    let half = 0.5 * w.grid().radius();
    let mut phi = Vec::with_capacity(nodes.len());
    let mut phi_lin = Vec::with_capacity(nodes.len());
    let (mut sup, mut tail, mut sup_lin) = (0.0f64, 0.0f64, 0.0f64);
    for (&r, &x) in nodes.iter().zip(w.values()) {
        let v = profile.eval(r).0;
        let a = x.max(0.0).powf(m) / v - 1.0;
        let b = x / v.powf(1.0 / m) - 1.0;
        sup = sup.max(a.abs());
        sup_lin = sup_lin.max(b.abs());
        if r >= half {
            tail = tail.max(a.abs());
        }
        phi.push(a);
        phi_lin.push(b);
    }
    RelativeError { phi, phi_lin, sup, tail_sup: tail, sup_lin }
}

/// Amplitude-free distance between `u` and a reference of the same shape:
/// (max ρ − min ρ)/(max ρ + min ρ) with ρ = u/reference, over nodes where
/// the reference is positive. Time-stepping errors of a separable solution
/// only change its amplitude, so this isolates the spatial error.
pub fn shape_error(u: &RadialField, reference: &RadialField) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, b) in u.values().iter().zip(reference.values()) {
        if *b > EXTINCT_FLOOR {
            lo = lo.min(a / b);
            hi = hi.max(a / b);
        }
    }
    (hi - lo) / (hi + lo)
}

/// Largest relative per-step increase of a series (≤ 0 means nonincreasing).
pub fn max_relative_increase(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// |ΔM/Δt + (m+1)D| / ((m+1)D) per step, D evaluated at the new time level.
pub fn energy_identity_residuals(series: &[TimeSample], m: f64) -> Vec<f64> {
    series
        .windows(2)
        .map(|w| {
            let dm = (w[1].mass - w[0].mass) / (w[1].t - w[0].t);
            let d = (m + 1.0) * w[1].energy;
            (dm + d).abs() / d
        })
        .collect()
}

/// Envelope constants inf/sup of u / ((1 − t/T)^{1/(1−m)} e^{−(N−1)r/m}).
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct Envelope {
    pub c1: f64,
    pub c2: f64,
}

impl Envelope {
    fn empty() -> Self {
        Self { c1: f64::INFINITY, c2: 0.0 }
    }
    fn absorb(&mut self, q: f64) {
        self.c1 = self.c1.min(q);
        self.c2 = self.c2.max(q);
    }
    pub fn ratio(&self) -> f64 {
        self.c2 / self.c1
    }
}

fn envelope_of(state: &EvolutionState, time_factor: f64, m: f64) -> Envelope {
    let k = (state.u.grid().dim() - 1) as f64;
    let mut env = Envelope::empty();
    for (&r, &u) in state.u.grid().nodes().iter().zip(state.u.values()) {
        if u > EXTINCT_FLOOR {
            env.absorb(u / (time_factor * (-k * r / m).exp()));
        }
    }
    env
}

/// c1, c2 over every snapshot with t in [ε, t_max].
pub fn harnack_envelope(traj: &Trajectory, big_t: f64, eps: f64, t_max: f64) -> Result<Envelope> {
    let m = traj.m;
    let mut env = Envelope::empty();
    let mut used = 0;
    for s in traj.snapshots.iter().filter(|s| s.t >= eps && s.t <= t_max && s.t < big_t) {
        let g = (1.0 - s.t / big_t).powf(1.0 / (1.0 - m));
        let e = envelope_of(s, g, m);
        env.c1 = env.c1.min(e.c1);
        env.c2 = env.c2.max(e.c2);
        used += 1;
    }
    if used == 0 || !(env.c2 > 0.0) {
        return Err(Error::EmptyWindow);
    }
    Ok(env)
}

/// Envelope of a single snapshot against e^{−(N−1)r/m} (no time factor);
/// for the subcritical range m ≤ m_s.
pub fn subcritical_envelope_check(u: &RadialField, m: f64) -> Result<Envelope> {
    let dim = u.grid().dim();
    if m > critical_exponent(dim) + 1e-12 {
        return Err(invalid("m", "subcritical envelope needs m ≤ m_s; use harnack_envelope"));
    }
    let state = EvolutionState::initial(u.clone());
    let env = envelope_of(&state, 1.0, m);
    if !(env.c2 > 0.0) {
        return Err(Error::EmptyWindow);
    }
    Ok(env)
}

/// min/max of w^m/V over snapshots with τ ≥ τ_w, where τ_w is the first
/// snapshot time with relerr_sup < 0.5.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RescaledSandwich {
    pub tau_w: f64,
    pub c0: f64,
    pub c1: f64,
}

pub fn rescaled_harnack(traj: &Trajectory, profile: &StationaryProfile) -> Result<RescaledSandwich> {
    let mut tau_w = None;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for s in &traj.snapshots {
        let re = relative_error(&s.u, profile);
        if tau_w.is_none() && re.sup < 0.5 {
            tau_w = Some(s.t);
        }
        if tau_w.is_some() {
            for x in &re.phi {
                lo = lo.min(1.0 + x);
                hi = hi.max(1.0 + x);
            }
        }
    }
    let tau_w = tau_w.ok_or(Error::EmptyWindow)?;
    Ok(RescaledSandwich { tau_w, c0: lo, c1: hi })
}

/// Default tail window [R/2, R − 2] for asymptotic verdicts.
pub fn tail_window(grid: &RadialGrid) -> (f64, f64) {
    let r = grid.radius();
    (0.5 * r, r - 2.0)
}

/// G_k = (V^{1/m})^{(k)}/V^{1/m} through the binomial recursion
/// G_k = −Σ_{j<k} C(k,j) G_j H_{k−j}, H_i = (V^{−1/m})^{(i)}/V^{−1/m}.
pub fn g_recursive(profile: &StationaryProfile, r: f64, k_max: usize) -> Result<Vec<f64>> {
    if k_max > 3 {
        return Err(Error::OrderUnsupported { k: k_max, max: 3 });
    }
    let d = profile.derivatives(r);
    let rho = [1.0, d[1] / d[0], d[2] / d[0], d[3] / d[0]];
    let alpha = -1.0 / profile.m();
    let h: Vec<f64> = (0..=k_max).map(|i| power_derivative_ratio(rho, alpha, i)).collect::<Result<_>>()?;
    let mut g = vec![1.0];
    for k in 1..=k_max {
        let mut s = 0.0;
        let mut binom = 1.0;
        for j in 0..k {
            s += binom * g[j] * h[k - j];
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
        g.push(-s);
    }
    Ok(g)
}

/// G_k by direct expansion of (V^{1/m})^{(k)}.
pub fn g_direct(profile: &StationaryProfile, r: f64, k: usize) -> Result<f64> {
    let d = profile.derivatives(r);
    let rho = [1.0, d[1] / d[0], d[2] / d[0], d[3] / d[0]];
    power_derivative_ratio(rho, 1.0 / profile.m(), k)
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeRatioRow {
    pub k: usize,
    /// G_k and F_k = G_k/(−(N−1)/m)^k at the far end of the window.
    pub g_tail: f64,
    pub f_tail: f64,
    /// sup |F_k − 1| over the window.
    pub f_sup_deviation: f64,
    /// sup |E_k/F_k − 1|, E_k = ∂_r^k w / ((−(N−1)/m)^k V^{1/m}).
    pub empirical_sup_deviation: f64,
}

/// Derivative-ratio tables of a snapshot on `window`.
pub fn derivative_ratio_tables(
    w: &RadialField,
    profile: &StationaryProfile,
    k_max: usize,
    window: (f64, f64),
) -> Result<Vec<DerivativeRatioRow>> {
    if k_max > 3 {
        return Err(Error::OrderUnsupported { k: k_max, max: 3 });
    }
    let m = profile.m();
    let scale = -((w.grid().dim() - 1) as f64) / m;
    let nodes = w.grid().nodes();
    let mut rows = Vec::new();
    for k in 1..=k_max {
        let dk = radial_derivative(w, k)?;
        let mut f_dev: f64 = 0.0;
        let mut emp_dev: f64 = 0.0;
        let mut g_tail = f64::NAN;
        for (i, &r) in nodes.iter().enumerate() {
            if r < window.0 || r > window.1 {
                continue;
            }
            let g = g_recursive(profile, r, k)?[k];
            let f = g / scale.powi(k as i32);
            let vp = profile.eval(r).0.powf(1.0 / m);
            let e = dk.values()[i] / (scale.powi(k as i32) * vp);
            f_dev = f_dev.max((f - 1.0).abs());
            emp_dev = emp_dev.max((e / f - 1.0).abs());
            g_tail = g;
        }
        if g_tail.is_nan() {
            return Err(Error::EmptyWindow);
        }
        rows.push(DerivativeRatioRow {
            k,
            g_tail,
            f_tail: g_tail / scale.powi(k as i32),
            f_sup_deviation: f_dev,
            empirical_sup_deviation: emp_dev,
        });
    }
    Ok(rows)
}

/// Sup over snapshots of measured derivative / claimed envelope.
#[derive(Clone, Debug, Serialize)]
pub struct DerivativeBoundReport {
    pub k: usize,
    /// sup |∂_r^k u| / ((1−t/T)^{1/(1−m)} e^{−(N−1)r/m}).
    pub spatial_sup: f64,
    /// sup |∂_t^k u| / (envelope · e^{k(N−1)(1/m−1)r}/(1−t/T)^k).
    pub temporal_sup: f64,
    /// inf of the spatial ratio over r ≥ r_bar at the snapshots with t ≥ t_bar.
    pub spatial_lower_inf: f64,
}

/// Derivative bounds on snapshots with t ∈ [ε, t_max]. Time derivatives come
/// from divided differences of consecutive snapshots (k ≤ 2 needs three).
pub fn derivative_bound_check(
    traj: &Trajectory,
    big_t: f64,
    eps: f64,
    t_max: f64,
    k: usize,
    lower: (f64, f64),
) -> Result<DerivativeBoundReport> {
    if k > 2 {
        return Err(Error::OrderUnsupported { k, max: 2 });
    }
    let m = traj.m;
    let nd = (traj.grid.dim() - 1) as f64;
    let snaps: Vec<&EvolutionState> = traj.snapshots.iter().filter(|s| s.t >= eps && s.t <= t_max && s.t < big_t).collect();
    if snaps.len() < k + 1 {
        return Err(Error::EmptyWindow);
    }
    let nodes = traj.grid.nodes();
    let env = |r: f64, t: f64| (1.0 - t / big_t).powf(1.0 / (1.0 - m)) * (-nd * r / m).exp();
    let (r_bar, t_bar) = lower;
    let mut spatial: f64 = 0.0;
    let mut lower_inf = f64::INFINITY;
    for s in &snaps {
        let d = if k == 0 { s.u.clone() } else { radial_derivative(&s.u, k)? };
        for (i, &r) in nodes.iter().enumerate() {
            if s.u.values()[i] <= EXTINCT_FLOOR {
                continue;
            }
            let q = d.values()[i].abs() / env(r, s.t);
            spatial = spatial.max(q);
            // Keep off the last two units, which see the artificial boundary.
            if r >= r_bar && s.t >= t_bar && r <= traj.grid.radius() - 2.0 {
                lower_inf = lower_inf.min(q);
            }
        }
    }
    let mut temporal: f64 = 0.0;
    for win in snaps.windows(k + 1) {
        let tc = win.iter().map(|s| s.t).sum::<f64>() / (k + 1) as f64;
        for (i, &r) in nodes.iter().enumerate() {
            let dt_k = match k {
                0 => win[0].u.values()[i],
                1 => (win[1].u.values()[i] - win[0].u.values()[i]) / (win[1].t - win[0].t),
                _ => {
                    let (a, b, c) = (win[0], win[1], win[2]);
                    let d1 = (b.u.values()[i] - a.u.values()[i]) / (b.t - a.t);
                    let d2 = (c.u.values()[i] - b.u.values()[i]) / (c.t - b.t);
                    2.0 * (d2 - d1) / (c.t - a.t)
                }
            };
            let bound = env(r, tc) * (k as f64 * nd * (1.0 / m - 1.0) * r).exp() / (1.0 - tc / big_t).powi(k as i32);
            temporal = temporal.max(dt_k.abs() / bound);
        }
    }
    Ok(DerivativeBoundReport { k, spatial_sup: spatial, temporal_sup: temporal, spatial_lower_inf: lower_inf })
}

/// Local rescaled window around (r0, τ0).
#[derive(Clone, Debug, Serialize)]
pub struct WindowReport {
    pub r0: f64,
    pub tau0: f64,
    pub alpha: f64,
    /// sup |W| over the lattice (the bound M).
    pub sup_w: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub b: f64,
    /// (x, y, W) samples.
    pub lattice: Vec<(f64, f64, f64)>,
}

/// α = 0.1·s0·(sinh r0)^{N−1}: keeps s within 10% of s0.
pub fn default_window_alpha(r0: f64, dim: usize) -> Result<f64> {
    Ok(0.1 * s_map(r0, dim)? * r0.sinh().powi(dim as i32 - 1))
}

fn interp_linear(nodes: &[f64], vals: &[f64], r: f64) -> f64 {
    let i = nodes.partition_point(|x| *x < r).clamp(1, nodes.len() - 1);
    let (a, b) = (nodes[i - 1], nodes[i]);
    let t = ((r - a) / (b - a)).clamp(0.0, 1.0);
    vals[i - 1] * (1.0 - t) + vals[i] * t
}

/// W(x,y) = (sinh r0)^{(N−1)/m} w(r(s0 + x(sinh r0)^{−(N−1)}), τ0 + y(sinh r0)^{−(N−1)(1/m−1)})
/// sampled on a (2n+1)² lattice of (−α, α)²; `snapshots` is a rescaled-flow
/// trajectory with extinction time `big_t`.
pub fn local_window(traj: &Trajectory, r0: f64, tau0: f64, alpha: f64, n: usize) -> Result<WindowReport> {
    let big_t = traj.rescaled_t.ok_or_else(|| invalid("trajectory", "local window needs a rescaled-flow trajectory"))?;
    let m = traj.m;
    let dim = traj.grid.dim();
    let nd = (dim - 1) as f64;
    let sh = r0.sinh().powf(nd);
    let s0 = s_map(r0, dim)?;
    let ds = alpha / sh;
    if !(ds < 0.5 * s0) {
        return Err(Error::WindowGuard(format!(
            "α = {alpha:.3e} moves s by {ds:.3e}, outside (s0/2, 3s0/2) with s0 = {s0:.3e}"
        )));
    }
    let dtau = alpha * sh.powf(-(1.0 / m - 1.0));
    let (t_lo, t_hi) = (tau0 - dtau, tau0 + dtau);
    let first = traj.snapshots.first().unwrap().t;
    let last = traj.snapshots.last().unwrap().t;
    if t_lo < first || t_hi > last {
        return Err(Error::WindowGuard(format!("τ window [{t_lo:.3}, {t_hi:.3}] not covered by snapshots")));
    }
    let nodes = traj.grid.nodes();
    let w_at = |r: f64, tau: f64| -> f64 {
        let j = traj.snapshots.partition_point(|s| s.t < tau).clamp(1, traj.snapshots.len() - 1);
        let (a, b) = (&traj.snapshots[j - 1], &traj.snapshots[j]);
        let wa = interp_linear(nodes, a.u.values(), r);
        let wb = interp_linear(nodes, b.u.values(), r);
        let t = if b.t > a.t { ((tau - a.t) / (b.t - a.t)).clamp(0.0, 1.0) } else { 0.0 };
        wa * (1.0 - t) + wb * t
    };
    let pre = sh.powf(1.0 / m);
    let mut lattice = Vec::new();
    let (mut sup, mut a_min, mut a_max) = (0.0f64, f64::INFINITY, 0.0f64);
    for ix in 0..=2 * n {
        let x = alpha * (ix as f64 / n as f64 - 1.0);
        let r = s_map_inverse(s0 + x / sh, dim)?;
        if r > traj.grid.radius() {
            return Err(Error::WindowGuard(format!("window reaches r = {r:.3} beyond the grid")));
        }
        let a = (sh / r.sinh().powf(nd)).powi(2);
        a_min = a_min.min(a);
        a_max = a_max.max(a);
        for iy in 0..=2 * n {
            let y = alpha * (iy as f64 / n as f64 - 1.0);
            let wv = pre * w_at(r, tau0 + y * sh.powf(-(1.0 / m - 1.0)));
            sup = sup.max(wv.abs());
            lattice.push((x, y, wv));
        }
    }
    let b = sh.powf(-(1.0 / m - 1.0)) / ((1.0 - m) * big_t);
    Ok(WindowReport { r0, tau0, alpha, sup_w: sup, a_min, a_max, b, lattice })
}

/// Empirical Poincaré constant on [0, R] with v(R) = 0:
/// C_P = λ_min^{−1/2} for K v = λ M v, by inverse iteration.
pub fn poincare_constant(grid: &RadialGrid) -> Result<f64> {
    let op = DiffusionOperator::new(grid, OuterBoundary::DirichletZero)?;
    let (lo, di, up) = op.stiffness();
    let n = op.unknowns();
    let vol = op.volumes();
    let mut v = vec![1.0; n];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let mut rhs: Vec<f64> = (0..n).map(|i| vol[i] * v[i]).collect();
        solve_tridiagonal(&lo, &di, &up, &mut rhs);
        let num: f64 = (0..n).map(|i| vol[i] * rhs[i] * v[i]).sum();
        let den: f64 = (0..n).map(|i| vol[i] * rhs[i] * rhs[i]).sum();
        let next = num / den;
        let norm = den.sqrt();
        v = rhs.iter().map(|x| x / norm).collect();
        if (next - lambda).abs() <= 1e-13 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    Ok(1.0 / lambda.sqrt())
}

/// Everything measured on one run, serialised into report.json.
#[derive(Clone, Debug, Default, Serialize)]
pub struct DiagnosticsReport {
    pub series: Vec<SeriesRow>,
    pub envelope: Option<Envelope>,
    pub derivative_ratios: Vec<DerivativeRatioRow>,
    pub window_bound: Option<f64>,
    pub extinction_time: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SeriesRow {
    pub t: f64,
    pub tau: f64,
    pub mass: f64,
    pub energy: f64,
    pub ratio: f64,
    pub lyapunov: f64,
    pub relerr_sup: f64,
    pub relerr_tail_sup: f64,
    pub c1_running: f64,
    pub c2_running: f64,
}

/// Time series of a physical-time trajectory with relative error against
/// the profile of extinction time `big_t` (NaN where t ≥ T).
pub fn series_rows(traj: &Trajectory, profile: Option<&StationaryProfile>) -> Vec<SeriesRow> {
    let m = traj.m;
    let big_t = profile.map(|p| p.extinction_time());
    let op_m = m;
    let mut env = Envelope::empty();
    let mut rows = Vec::new();
    let snap_err: Vec<(f64, (f64, f64), Envelope)> = traj
        .snapshots
        .iter()
        .map(|s| {
            let (re, e) = match (profile, big_t, traj.rescaled_t) {
                (Some(p), _, Some(_)) => {
                    let re = relative_error(&s.u, p);
                    ((re.sup, re.tail_sup), envelope_of(s, 1.0, op_m))
                }
                (Some(p), Some(t_big), None) if s.t < t_big => {
                    let g = (1.0 - s.t / t_big).powf(1.0 / (1.0 - m));
                    let w = s.u.map(|x| x / g);
                    let re = relative_error(&w, p);
                    ((re.sup, re.tail_sup), envelope_of(s, g, op_m))
                }
                _ => ((f64::NAN, f64::NAN), Envelope::empty()),
            };
            (s.t, re, e)
        })
        .collect();
    for (t, re, e) in snap_err {
        let series = traj.series.iter().find(|x| (x.t - t).abs() <= 1e-12 * t.abs().max(1.0));
        let Some(s) = series else { continue };
        if e.c2 > 0.0 {
            env.c1 = env.c1.min(e.c1);
            env.c2 = env.c2.max(e.c2);
        }
        let tau = match (traj.rescaled_t, big_t) {
            (Some(_), _) => t,
            (None, Some(tb)) if t < tb => tb * (tb / (tb - t)).ln(),
            _ => f64::NAN,
        };
        rows.push(SeriesRow {
            t,
            tau,
            mass: s.mass,
            energy: s.energy,
            ratio: s.ratio,
            lyapunov: s.lyapunov,
            relerr_sup: re.0,
            relerr_tail_sup: re.1,
            c1_running: if env.c2 > 0.0 { env.c1 } else { f64::NAN },
            c2_running: if env.c2 > 0.0 { env.c2 } else { f64::NAN },
        });
    }
    rows
}

/// Grid with the same shape and twice the resolution.
pub fn refined_grid(grid: &Arc<RadialGrid>) -> Arc<RadialGrid> {
    Arc::new(grid.refined())
}
