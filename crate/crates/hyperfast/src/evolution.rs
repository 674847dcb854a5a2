//! Implicit time integration of u_t = Δ(u^m) and of the rescaled flow
//! w_τ = Δ(w^m) + w/((1−m)T).
//!
//! Every step is backward Euler on the finite-volume operator. The default
//! Newton iteration works with v = u^m: the residual
//!
//!   G(v) = vol·[(1 − κ dt) v^{1/m} − u_old] + dt·K v
//!
//! is convex in v and its Jacobian is an M-matrix, so after the first
//! iterate Newton decreases monotonically onto the (positive) solution.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{RadialField, RadialGrid};
use crate::linalg::solve_tridiagonal;
use crate::operator::{DiffusionOperator, OuterBoundary};
use crate::stationary::StationaryProfile;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtPolicy {
    pub dt_max: f64,
    /// Largest accepted relative change of ‖u‖_{m+1} per step.
    pub rel_change_target: f64,
    /// Once an extinction estimate exists, dt ≤ extinction_factor·(T_est − t).
    pub extinction_factor: f64,
    pub dt_init: f64,
    /// Constant step (still clipped to output times); disables adaptivity.
    pub fixed_dt: Option<f64>,
}

impl Default for DtPolicy {
    fn default() -> Self {
        Self { dt_max: 0.05, rel_change_target: 1e-3, extinction_factor: 0.05, dt_init: 1e-6, fixed_dt: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonOptions {
    /// Residual tolerance relative to ‖u_old‖_∞.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 40 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    /// Newton on u with the diffusivity clamped below u_floor.
    UForm,
    /// Newton on v = u^m (default; no clamp needed).
    VForm,
}

#[derive(Clone, Debug)]
pub struct EvolutionConfig {
    pub m: f64,
    pub grid: Arc<RadialGrid>,
    pub boundary: OuterBoundary,
    pub dt_policy: DtPolicy,
    pub newton: NewtonOptions,
    pub variable: Variable,
    /// Run declared extinct once ‖u‖_∞ < extinct_fraction·‖u₀‖_∞.
    pub extinct_fraction: f64,
    /// Switch off Δ (checks the reaction part of the rescaled stepper alone).
    pub diffusion: bool,
}

impl EvolutionConfig {
    pub fn new(m: f64, grid: Arc<RadialGrid>) -> Self {
        Self {
            m,
            grid,
            boundary: OuterBoundary::None,
            dt_policy: DtPolicy::default(),
            newton: NewtonOptions::default(),
            variable: Variable::VForm,
            extinct_fraction: 1e-12,
            diffusion: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.m < 1.0) {
            return Err(invalid("m", format!("need 0 < m < 1, got {}", self.m)));
        }
        let p = &self.dt_policy;
        if !(p.rel_change_target > 0.0 && p.rel_change_target <= 0.2) {
            return Err(invalid("rel_change_target", "must lie in (0, 0.2]"));
        }
        if !(p.dt_max > 0.0) || !(p.dt_init > 0.0) {
            return Err(invalid("dt_max", "time steps must be positive"));
        }
        if !(p.extinction_factor > 0.0 && p.extinction_factor < 1.0) {
            return Err(invalid("extinction_factor", "must lie in (0, 1)"));
        }
        if matches!(p.fixed_dt, Some(d) if !(d > 0.0)) {
            return Err(invalid("fixed_dt", "must be positive"));
        }
        if self.newton.max_iter == 0 || !(self.newton.tol > 0.0) {
            return Err(invalid("newton", "need tol > 0 and max_iter ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EvolutionState {
    /// Physical time t, or τ for the rescaled flow.
    pub t: f64,
    pub u: RadialField,
    pub step_count: usize,
    pub last_dt: f64,
}

impl EvolutionState {
    pub fn initial(u: RadialField) -> Self {
        Self { t: 0.0, u, step_count: 0, last_dt: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StepStats {
    pub newton_iterations: usize,
    pub floor_projections: usize,
}

/// Scalar functionals after one accepted step.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TimeSample {
    pub t: f64,
    pub dt: f64,
    /// ∫ u^{m+1} (lumped quadrature).
    pub mass: f64,
    /// ∫ [(u^m)']² including the exterior term.
    pub energy: f64,
    /// ‖(u^m)'‖₂ / ‖u‖_{m+1}^m.
    pub ratio: f64,
    /// ½·energy − m/((1−m²)T)·mass; NaN outside the rescaled flow.
    pub lyapunov: f64,
    pub sup: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub m: f64,
    pub grid: Arc<RadialGrid>,
    pub boundary: OuterBoundary,
    /// Set for rescaled-flow trajectories (times are then τ).
    pub rescaled_t: Option<f64>,
    pub snapshots: Vec<EvolutionState>,
    pub series: Vec<TimeSample>,
    pub extinct: bool,
    pub floor_projections: usize,
    pub rejected_steps: usize,
}

impl Trajectory {
    pub fn last(&self) -> &EvolutionState {
        self.snapshots.last().expect("a trajectory always holds its initial state")
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&EvolutionState> {
        self.snapshots.iter().find(|s| (s.t - t).abs() <= 1e-12 * t.abs().max(1.0))
    }
}

/// The discrete operator plus everything a step needs, built once per run.
#[derive(Clone, Debug)]
pub struct Stepper {
    cfg: EvolutionConfig,
    op: DiffusionOperator,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    kappa: f64,
}

impl Stepper {
    /// `kappa` is the implicit linear reaction rate (0 for the plain equation).
    pub fn new(cfg: &EvolutionConfig, kappa: f64) -> Result<Self> {
        cfg.validate()?;
        let op = DiffusionOperator::new(&cfg.grid, cfg.boundary)?;
        let (mut lower, mut diag, mut upper) = op.stiffness();
        if !cfg.diffusion {
            for x in lower.iter_mut().chain(diag.iter_mut()).chain(upper.iter_mut()) {
                *x = 0.0;
            }
        }
        Ok(Self { cfg: cfg.clone(), op, lower, diag, upper, kappa })
    }

    pub fn operator(&self) -> &DiffusionOperator {
        &self.op
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.cfg
    }

    fn k_apply(&self, v: &[f64], i: usize) -> f64 {
        let n = self.diag.len();
        let mut s = self.diag[i] * v[i];
        if i > 0 {
            s += self.lower[i] * v[i - 1];
        }
        if i + 1 < n {
            s += self.upper[i] * v[i + 1];
        }
        s
    }

    /// One backward-Euler step of size dt from `u_old`.
    pub fn step(&self, u_old: &[f64], dt: f64) -> Result<(Vec<f64>, StepStats)> {
        if !(dt > 0.0) {
            return Err(invalid("dt", "time step must be positive"));
        }
        let q = 1.0 - self.kappa * dt;
        if !(q > 0.0) {
            return Err(invalid("dt", "reaction makes the implicit step singular (need κ·dt < 1)"));
        }
        let scale = u_old.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if scale == 0.0 {
            return Ok((vec![0.0; u_old.len()], StepStats::default()));
        }
        match self.cfg.variable {
            Variable::VForm => self.step_v(u_old, dt, q, scale),
            Variable::UForm => self.step_u(u_old, dt, q, scale),
        }
    }

    fn step_v(&self, u_old: &[f64], dt: f64, q: f64, scale: f64) -> Result<(Vec<f64>, StepStats)> {
        let m = self.cfg.m;
        let p = 1.0 / m;
        let n = self.diag.len();
        let vol = self.op.volumes();
        let mut v: Vec<f64> = u_old.iter().map(|x| x.max(0.0).powf(m)).collect();
        if n < v.len() {
            v[n] = 0.0;
        }
        let mut stats = StepStats::default();
        let mut g = vec![0.0; n];
        let mut jd = vec![0.0; n];
        let lo: Vec<f64> = self.lower.iter().map(|x| dt * x).collect();
        let up: Vec<f64> = self.upper.iter().map(|x| dt * x).collect();
        let mut last_res = f64::INFINITY;
        for it in 1..=self.cfg.newton.max_iter {
            let mut res: f64 = 0.0;
            for i in 0..n {
                let vp = v[i].powf(p);
                g[i] = -(vol[i] * (q * vp - u_old[i]) + dt * self.k_apply(&v, i));
                res = res.max(g[i].abs() / vol[i]);
                jd[i] = vol[i] * q * p * if v[i] > 0.0 { vp / v[i] } else { 0.0 } + dt * self.diag[i];
            }
            if !res.is_finite() {
                return Err(Error::NewtonDiverged { iterations: it, residual: res });
            }
            solve_tridiagonal(&lo, &jd, &up, &mut g);
            let mut vmax: f64 = 0.0;
            let mut dmax: f64 = 0.0;
            for i in 0..n {
                v[i] += g[i];
                if !(v[i] >= 0.0) {
                    if v[i].is_nan() {
                        return Err(Error::NewtonDiverged { iterations: it, residual: f64::NAN });
                    }
                    v[i] = 0.0;
                    stats.floor_projections += 1;
                }
                vmax = vmax.max(v[i]);
                dmax = dmax.max(g[i].abs());
            }
            stats.newton_iterations = it;
            last_res = res;
            if res <= self.cfg.newton.tol * scale && dmax <= 1e-10 * vmax {
                let u: Vec<f64> = v.iter().map(|x| x.powf(p)).collect();
                return Ok((u, stats));
            }
        }
        Err(Error::NewtonDiverged { iterations: self.cfg.newton.max_iter, residual: last_res })
    }

    fn step_u(&self, u_old: &[f64], dt: f64, q: f64, scale: f64) -> Result<(Vec<f64>, StepStats)> {
        let m = self.cfg.m;
        let n = self.diag.len();
        let vol = self.op.volumes();
        let floor = 1e-14 * scale;
        let mut u: Vec<f64> = u_old.to_vec();
        if n < u.len() {
            u[n] = 0.0;
        }
        let mut stats = StepStats::default();
        let mut g = vec![0.0; n];
        let mut jl = vec![0.0; n];
        let mut jd = vec![0.0; n];
        let mut ju = vec![0.0; n];
        let mut last_res = f64::INFINITY;
        for it in 1..=self.cfg.newton.max_iter {
            let v: Vec<f64> = u.iter().map(|x| x.max(0.0).powf(m)).collect();
            let dv: Vec<f64> = u.iter().map(|x| m * x.max(floor).powf(m - 1.0)).collect();
            let mut res: f64 = 0.0;
            for i in 0..n {
                g[i] = -(vol[i] * (q * u[i] - u_old[i]) + dt * self.k_apply(&v, i));
                res = res.max(g[i].abs() / vol[i]);
                jd[i] = vol[i] * q + dt * self.diag[i] * dv[i];
                jl[i] = if i > 0 { dt * self.lower[i] * dv[i - 1] } else { 0.0 };
                ju[i] = if i + 1 < n { dt * self.upper[i] * dv[i + 1] } else { 0.0 };
            }
            if !res.is_finite() {
                return Err(Error::NewtonDiverged { iterations: it, residual: res });
            }
            solve_tridiagonal(&jl, &jd, &ju, &mut g);
            let mut umax: f64 = 0.0;
            let mut dmax: f64 = 0.0;
            for i in 0..n {
                u[i] += g[i];
                if !(u[i] >= 0.0) {
                    if u[i].is_nan() {
                        return Err(Error::NewtonDiverged { iterations: it, residual: f64::NAN });
                    }
                    u[i] = 0.0;
                    stats.floor_projections += 1;
                }
                umax = umax.max(u[i]);
                dmax = dmax.max(g[i].abs());
            }
            stats.newton_iterations = it;
            last_res = res;
            if res <= self.cfg.newton.tol * scale && dmax <= 1e-10 * umax {
                return Ok((u, stats));
            }
        }
        Err(Error::NewtonDiverged { iterations: self.cfg.newton.max_iter, residual: last_res })
    }

    /// Functionals of a state; `rescaled_t` switches on the Lyapunov term.
    pub fn sample(&self, t: f64, dt: f64, u: &[f64], rescaled_t: Option<f64>) -> TimeSample {
        sample_functionals(&self.op, self.cfg.m, t, dt, u, rescaled_t)
    }
}

pub(crate) fn sample_functionals(
    op: &DiffusionOperator,
    m: f64,
    t: f64,
    dt: f64,
    u: &[f64],
    rescaled_t: Option<f64>,
) -> TimeSample {
    let v: Vec<f64> = u.iter().map(|x| x.max(0.0).powf(m)).collect();
    let mass = op.integral_pow(u, m + 1.0);
    let energy = op.dirichlet_energy(&v);
    let norm = mass.powf(1.0 / (m + 1.0));
    let ratio = energy.sqrt() / norm.powf(m);
    let lyapunov = match rescaled_t {
        Some(big_t) => 0.5 * energy - m / ((1.0 - m * m) * big_t) * mass,
        None => f64::NAN,
    };
    let sup = u.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    TimeSample { t, dt, mass, energy, ratio, lyapunov, sup }
}

fn check_datum(u0: &RadialField, cfg: &EvolutionConfig) -> Result<()> {
    if !Arc::ptr_eq(u0.grid(), &cfg.grid) && u0.grid().nodes() != cfg.grid.nodes() {
        return Err(invalid("u0", "datum lives on a different grid"));
    }
    if u0.values().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { context: "initial datum".into() });
    }
    if !u0.is_nonnegative() {
        return Err(invalid("u0", "datum must be nonnegative"));
    }
    if u0.sup_abs() == 0.0 {
        return Err(invalid("u0", "datum must not vanish identically"));
    }
    Ok(())
}

/// One backward-Euler step of the equation.
pub fn step_implicit(state: &EvolutionState, dt: f64, cfg: &EvolutionConfig) -> Result<EvolutionState> {
    let stepper = Stepper::new(cfg, 0.0)?;
    let (u, _) = stepper.step(state.u.values(), dt)?;
    Ok(EvolutionState {
        t: state.t + dt,
        u: RadialField::new(state.u.grid().clone(), u)?,
        step_count: state.step_count + 1,
        last_dt: dt,
    })
}

/// One backward-Euler step of the rescaled flow with extinction time `big_t`.
pub fn step_rescaled(state: &EvolutionState, dtau: f64, big_t: f64, cfg: &EvolutionConfig) -> Result<EvolutionState> {
    if !(big_t > 0.0) {
        return Err(invalid("T", "extinction time must be positive"));
    }
    let stepper = Stepper::new(cfg, 1.0 / ((1.0 - cfg.m) * big_t))?;
    let (u, _) = stepper.step(state.u.values(), dtau)?;
    Ok(EvolutionState {
        t: state.t + dtau,
        u: RadialField::new(state.u.grid().clone(), u)?,
        step_count: state.step_count + 1,
        last_dt: dtau,
    })
}

/// Tries `dt`, halving up to ten times when Newton fails.
fn robust_step(stepper: &Stepper, u: &[f64], t: f64, dt: f64) -> Result<(Vec<f64>, StepStats, f64, usize)> {
    let mut dt = dt;
    for retry in 0..=10 {
        match stepper.step(u, dt) {
            Ok((next, stats)) => return Ok((next, stats, dt, retry)),
            Err(Error::NewtonDiverged { .. }) => dt *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::StepCollapse { t, retries: 10 })
}

fn sorted_outputs(outputs: &[f64], t_end: f64) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = outputs.iter().copied().filter(|&t| t > 0.0 && t <= t_end).collect();
    if out.iter().any(|t| !t.is_finite()) {
        return Err(invalid("output_times", "must be finite"));
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup();
    Ok(out)
}

/// Adaptive integration of u_t = Δ(u^m) to `t_end`, or until extinction.
pub fn evolve(u0: &RadialField, t_end: f64, output_times: &[f64], cfg: &EvolutionConfig) -> Result<Trajectory> {
    check_datum(u0, cfg)?;
    if !(t_end > 0.0) {
        return Err(invalid("t_end", "must be positive"));
    }
    let stepper = Stepper::new(cfg, 0.0)?;
    let outputs = sorted_outputs(output_times, t_end)?;
    let m = cfg.m;
    let pol = cfg.dt_policy;
    let grid = cfg.grid.clone();
    let sup0 = u0.sup_abs();

    let mut traj = Trajectory {
        m,
        grid: grid.clone(),
        boundary: cfg.boundary,
        rescaled_t: None,
        snapshots: vec![EvolutionState::initial(u0.clone())],
        series: vec![stepper.sample(0.0, 0.0, u0.values(), None)],
        extinct: false,
        floor_projections: 0,
        rejected_steps: 0,
    };
    let mut u = u0.values().to_vec();
    let mut t = 0.0;
    let mut steps = 0;
    let mut dt = pol.fixed_dt.unwrap_or(pol.dt_init).min(pol.dt_max);
    let mut next_out = 0;
    let e_of = |mass: f64| mass.powf((1.0 - m) / (m + 1.0));
    while t < t_end * (1.0 - 1e-14) {
        let mut trial = match pol.fixed_dt {
            Some(d) => d,
            None => {
                let mut d = dt.min(pol.dt_max);
                if let Some(t_est) = running_extinction_estimate(&traj.series, e_of) {
                    if t_est > t {
                        d = d.min(pol.extinction_factor * (t_est - t));
                    }
                }
                d
            }
        };
        let target = outputs.get(next_out).copied().unwrap_or(t_end).min(t_end);
        let mut hits = false;
        if t + trial >= target * (1.0 - 1e-13) {
            trial = target - t;
            hits = true;
        }
        let (next, stats, used, retries) = robust_step(&stepper, &u, t, trial)?;
        let hits = hits && retries == 0;
        let s = stepper.sample(t + used, used, &next, None);
        let prev = traj.series.last().unwrap();
        let norm_prev = prev.mass.powf(1.0 / (m + 1.0));
        let change = (s.mass.powf(1.0 / (m + 1.0)) - norm_prev).abs() / norm_prev;
        if pol.fixed_dt.is_none() && change > 2.0 * pol.rel_change_target && used > 1e-14 * t.max(1e-300) {
            // Too big a jump: retry from the same state with the suggested step.
            traj.rejected_steps += 1;
            dt = used * (pol.rel_change_target / change).max(0.1);
            continue;
        }
        traj.floor_projections += stats.floor_projections;
        t = if hits { target } else { t + used };
        u = next;
        steps += 1;
        traj.series.push(TimeSample { t, ..s });
        if pol.fixed_dt.is_none() {
            let grow = if change > 0.0 { (pol.rel_change_target / change).clamp(0.5, 2.0) } else { 2.0 };
            // An output-clipped step says nothing about the natural step size.
            dt = if hits { dt.max(used) } else { used * grow };
        }
        let sup = s.sup;
        let extinct = sup < cfg.extinct_fraction * sup0;
        if hits && next_out < outputs.len() && target == outputs[next_out] {
            next_out += 1;
            traj.snapshots.push(EvolutionState {
                t,
                u: RadialField::new(grid.clone(), u.clone())?,
                step_count: steps,
                last_dt: used,
            });
        }
        if extinct {
            traj.extinct = true;
            break;
        }
    }
    if traj.last().t < t {
        traj.snapshots.push(EvolutionState {
            t,
            u: RadialField::new(grid.clone(), u)?,
            step_count: steps,
            last_dt: traj.series.last().unwrap().dt,
        });
    }
    Ok(traj)
}

/// T_est = t + E/(−E') from the last two samples, E = ‖u‖_{m+1}^{1−m}.
fn running_extinction_estimate(series: &[TimeSample], e_of: impl Fn(f64) -> f64) -> Option<f64> {
    let n = series.len();
    if n < 3 {
        return None;
    }
    let (a, b) = (&series[n - 2], &series[n - 1]);
    let (ea, eb) = (e_of(a.mass), e_of(b.mass));
    let slope = (eb - ea) / (b.t - a.t);
    (slope < 0.0).then(|| b.t - eb / slope)
}

/// Knobs of the rescaled-flow integrator (a deterministic τ schedule).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescaledSchedule {
    /// First step as a fraction of T.
    pub dtau0: f64,
    /// Largest step as a fraction of T (must stay below 1 − m).
    pub dtau_max: f64,
    pub growth: f64,
}

impl Default for RescaledSchedule {
    fn default() -> Self {
        Self { dtau0: 1e-3, dtau_max: 0.02, growth: 1.05 }
    }
}

/// Early exit for rescaled runs: stop when ‖w‖_{m+1} leaves
/// [lo, hi]·reference.
#[derive(Clone, Copy, Debug)]
pub struct NormWindow {
    pub reference: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Integrates the rescaled flow from w0 to τ_end on the deterministic
/// schedule dτ_k = min(dτ0·growth^k, dτ_max)·T.
pub fn evolve_rescaled(
    w0: &RadialField,
    tau_end: f64,
    big_t: f64,
    output_taus: &[f64],
    cfg: &EvolutionConfig,
    schedule: &RescaledSchedule,
) -> Result<Trajectory> {
    evolve_rescaled_until(w0, tau_end, big_t, output_taus, cfg, schedule, None)
}

pub fn evolve_rescaled_until(
    w0: &RadialField,
    tau_end: f64,
    big_t: f64,
    output_taus: &[f64],
    cfg: &EvolutionConfig,
    schedule: &RescaledSchedule,
    window: Option<NormWindow>,
) -> Result<Trajectory> {
    check_datum(w0, cfg)?;
    if !(big_t > 0.0) {
        return Err(invalid("T", "extinction time must be positive"));
    }
    if !(tau_end > 0.0) {
        return Err(invalid("tau_end", "must be positive"));
    }
    let m = cfg.m;
    if !(schedule.dtau_max * big_t * (1.0 / ((1.0 - m) * big_t)) < 1.0) || !(schedule.dtau0 > 0.0) {
        return Err(invalid("dtau_max", "need dτ < (1−m)T"));
    }
    let stepper = Stepper::new(cfg, 1.0 / ((1.0 - m) * big_t))?;
    let outputs = sorted_outputs(output_taus, tau_end)?;
    let grid = cfg.grid.clone();
    let mut traj = Trajectory {
        m,
        grid: grid.clone(),
        boundary: cfg.boundary,
        rescaled_t: Some(big_t),
        snapshots: vec![EvolutionState::initial(w0.clone())],
        series: vec![stepper.sample(0.0, 0.0, w0.values(), Some(big_t))],
        extinct: false,
        floor_projections: 0,
        rejected_steps: 0,
    };
    let mut w = w0.values().to_vec();
    let mut tau = 0.0;
    let mut steps = 0;
    let mut dtau = schedule.dtau0 * big_t;
    let mut next_out = 0;
    // Output times never clip the τ schedule: a snapshot is taken at the first
    // step reaching each requested τ. The discrete flow is then identical with
    // and without outputs, which matters because its unstable T-mode makes the
    // neutral T depend on the exact step sequence.
    while tau < tau_end * (1.0 - 1e-14) {
        let trial = dtau.min(tau_end - tau);
        let (next, stats, used, _) = robust_step(&stepper, &w, tau, trial)?;
        tau += used;
        w = next;
        steps += 1;
        traj.floor_projections += stats.floor_projections;
        let s = stepper.sample(tau, used, &w, Some(big_t));
        traj.series.push(s);
        dtau = (dtau * schedule.growth).min(schedule.dtau_max * big_t);
        if next_out < outputs.len() && tau >= outputs[next_out] * (1.0 - 1e-13) {
            while next_out < outputs.len() && tau >= outputs[next_out] * (1.0 - 1e-13) {
                next_out += 1;
            }
            traj.snapshots.push(EvolutionState {
                t: tau,
                u: RadialField::new(grid.clone(), w.clone())?,
                step_count: steps,
                last_dt: used,
            });
        }
        if let Some(win) = window {
            let norm = s.mass.powf(1.0 / (m + 1.0));
            if norm > win.hi * win.reference || norm < win.lo * win.reference {
                break;
            }
        }
    }
    if traj.last().t < tau {
        traj.snapshots.push(EvolutionState {
            t: tau,
            u: RadialField::new(grid, w)?,
            step_count: steps,
            last_dt: traj.series.last().unwrap().dt,
        });
    }
    Ok(traj)
}

/// w = (T/(T−t))^{1/(1−m)} u and τ = T log(T/(T−t)).
pub fn rescale_solution(u: &RadialField, t: f64, big_t: f64, m: f64) -> Result<(RadialField, f64)> {
    if !(t >= 0.0 && t < big_t) {
        return Err(Error::PastExtinction { t, big_t });
    }
    let ratio = big_t / (big_t - t);
    let factor = ratio.powf(1.0 / (1.0 - m));
    Ok((u.map(|x| factor * x), big_t * ratio.ln()))
}

/// (1 − t/T)^{1/(1−m)} V^{1/m}, the separable solution built on `profile`.
pub fn separable_solution(profile: &StationaryProfile, t: f64, grid: &Arc<RadialGrid>) -> Result<RadialField> {
    let big_t = profile.extinction_time();
    if !(t >= 0.0) || t > big_t {
        return Err(Error::PastExtinction { t, big_t });
    }
    let g = (1.0 - t / big_t).max(0.0).powf(1.0 / (1.0 - profile.m()));
    Ok(profile.separable_datum(grid).map(|x| g * x))
}

/// A[exp(−((r−c)/w)²) + exp(−((r+c)/w)²)]: a smooth even bump.
pub fn bump_datum(grid: &Arc<RadialGrid>, center: f64, width: f64, amplitude: f64) -> Result<RadialField> {
    if !(width > 0.0) || !(amplitude > 0.0) || !(center >= 0.0) {
        return Err(invalid("bump", "need center ≥ 0, width > 0, amplitude > 0"));
    }
    Ok(RadialField::from_fn(grid.clone(), |r| {
        amplitude * ((-((r - center) / width).powi(2)).exp() + (-((r + center) / width).powi(2)).exp())
    }))
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// u0 cut off smoothly over [n−1, n], restricted to the ball grid [0, n].
pub fn ball_datum(u0: &RadialField, n: f64) -> Result<RadialField> {
    let ball = Arc::new(u0.grid().truncated(n)?);
    let n = ball.radius();
    let vals = u0.values()[..ball.len()]
        .iter()
        .zip(ball.nodes())
        .map(|(u, r)| u * smoothstep(n - r))
        .collect();
    RadialField::new(ball, vals)
}

/// The equation on the ball of radius n with u = 0 at r = n.
///
/// `u0` lives on the full grid; the datum actually evolved is
/// [`ball_datum`]`(u0, n)`, which is ≤ u0 and vanishes at n.
pub fn dirichlet_ball_evolve(
    n: f64,
    u0: &RadialField,
    t_end: f64,
    output_times: &[f64],
    cfg: &EvolutionConfig,
) -> Result<Trajectory> {
    let datum = ball_datum(u0, n)?;
    let mut ball_cfg = cfg.clone();
    ball_cfg.grid = datum.grid().clone();
    ball_cfg.boundary = OuterBoundary::DirichletZero;
    evolve(&datum, t_end, output_times, &ball_cfg)
}

/// Least-squares extinction estimate from E(t) = ‖u(t)‖_{m+1}^{1−m}.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ExtinctionEstimate {
    pub t_est: f64,
    /// Half-width of an approximate 95% interval for t_est.
    pub half_width: f64,
    pub slope: f64,
    pub intercept: f64,
    /// Largest fit residual as a fraction of the range of E in the window.
    pub fit_residual: f64,
    pub samples_used: usize,
}

/// Fits E over the trailing 30% of the samples and returns its zero.
pub fn estimate_extinction_time(traj: &Trajectory) -> Result<ExtinctionEstimate> {
    let m = traj.m;
    let pts: Vec<(f64, f64)> = traj
        .series
        .iter()
        .filter(|s| s.mass > 0.0)
        .map(|s| (s.t, s.mass.powf((1.0 - m) / (m + 1.0))))
        .collect();
    if pts.len() < 10 {
        return Err(Error::ExtinctionFit(format!("need ≥ 10 samples, have {}", pts.len())));
    }
    if pts.windows(2).any(|w| w[1].1 > w[0].1) {
        return Err(Error::ExtinctionFit("mass is not monotone decreasing".into()));
    }
    let start = pts.len() - ((0.3 * pts.len() as f64).ceil() as usize).max(3);
    fit_zero(&pts[start..])
}

/// Same fit restricted to samples with t in [t_lo, t_hi].
pub fn estimate_extinction_time_window(traj: &Trajectory, t_lo: f64, t_hi: f64) -> Result<ExtinctionEstimate> {
    let m = traj.m;
    let pts: Vec<(f64, f64)> = traj
        .series
        .iter()
        .filter(|s| s.mass > 0.0 && s.t >= t_lo && s.t <= t_hi)
        .map(|s| (s.t, s.mass.powf((1.0 - m) / (m + 1.0))))
        .collect();
    if pts.len() < 3 {
        return Err(Error::ExtinctionFit("window holds fewer than 3 samples".into()));
    }
    fit_zero(&pts)
}

fn fit_zero(pts: &[(f64, f64)]) -> Result<ExtinctionEstimate> {
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let me = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let ste: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - me)).sum();
    let slope = ste / stt;
    if !(slope < 0.0) {
        return Err(Error::ExtinctionFit(format!("fit slope {slope:.3e} is not negative")));
    }
    let intercept = me - slope * mt;
    let t_est = -intercept / slope;
    let resid: Vec<f64> = pts.iter().map(|p| p.1 - (intercept + slope * p.0)).collect();
    let range = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
        - pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let fit_residual = resid.iter().fold(0.0f64, |a, r| a.max(r.abs())) / range.max(f64::MIN_POSITIVE);
    // Delta method on t = −b/a with the usual OLS covariance.
    let s2 = if pts.len() > 2 { resid.iter().map(|r| r * r).sum::<f64>() / (n - 2.0) } else { 0.0 };
    let var_a = s2 / stt;
    let var_b = s2 * (1.0 / n + mt * mt / stt);
    let cov_ab = -mt * s2 / stt;
    let var_t = (var_b + t_est * t_est * var_a + 2.0 * t_est * cov_ab) / (slope * slope);
    Ok(ExtinctionEstimate {
        t_est,
        half_width: 1.96 * var_t.max(0.0).sqrt(),
        slope,
        intercept,
        fit_residual,
        samples_used: pts.len(),
    })
}

/// Fate of the rescaled flow for a trial extinction time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaledFate {
    /// ‖w‖ collapsed: the trial T is too large.
    Vanishes,
    /// ‖w‖ exploded: the trial T is too small.
    BlowsUp,
    /// Neither within the window.
    Undecided,
}

/// One bracket of the rescaled-flow bisection.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BisectionStep {
    pub lo: f64,
    pub hi: f64,
    pub trial: f64,
    pub fate: RescaledFate,
}

#[derive(Clone, Debug, Serialize)]
pub struct RescaledBisection {
    pub t_est: f64,
    pub lo: f64,
    pub hi: f64,
    pub history: Vec<BisectionStep>,
}

/// Options of the T bisection.
#[derive(Clone, Copy, Debug)]
pub struct BisectionOptions {
    /// Observation window in units of the trial T.
    pub window: f64,
    /// Blow-up / collapse thresholds relative to ‖V_T^{1/m}‖_{m+1}.
    pub factor: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub schedule: RescaledSchedule,
}

impl Default for BisectionOptions {
    fn default() -> Self {
        Self { window: 60.0, factor: 10.0, rel_tol: 1e-10, max_iter: 60, schedule: RescaledSchedule::default() }
    }
}

/// Runs the rescaled flow from u0 with trial T and reports what happens.
pub fn rescaled_fate(
    u0: &RadialField,
    big_t: f64,
    cfg: &EvolutionConfig,
    opts: &BisectionOptions,
) -> Result<RescaledFate> {
    let profile = crate::stationary::profile_for_extinction_time(big_t, cfg.m, cfg.dim())?;
    let op = DiffusionOperator::new(&cfg.grid, cfg.boundary)?;
    let vref = profile.separable_datum(&cfg.grid);
    let reference = op.integral_pow(vref.values(), cfg.m + 1.0).powf(1.0 / (cfg.m + 1.0));
    let win = NormWindow { reference, lo: 1.0 / opts.factor, hi: opts.factor };
    let traj = evolve_rescaled_until(u0, opts.window * big_t, big_t, &[], cfg, &opts.schedule, Some(win))?;
    let s = traj.series.last().unwrap();
    let norm = s.mass.powf(1.0 / (cfg.m + 1.0));
    Ok(if norm > win.hi * reference {
        RescaledFate::BlowsUp
    } else if norm < win.lo * reference {
        RescaledFate::Vanishes
    } else {
        RescaledFate::Undecided
    })
}

/// Bisection on T in the rescaled flow, starting from the bracket [lo, hi].
pub fn bisect_extinction_time(
    u0: &RadialField,
    mut lo: f64,
    mut hi: f64,
    cfg: &EvolutionConfig,
    opts: &BisectionOptions,
) -> Result<RescaledBisection> {
    if !(lo > 0.0 && hi > lo) {
        return Err(invalid("bracket", "need 0 < lo < hi"));
    }
    let mut history = Vec::new();
    // Make sure the ends really bracket the extinction time; widen if not.
    for _ in 0..20 {
        let f = rescaled_fate(u0, lo, cfg, opts)?;
        history.push(BisectionStep { lo, hi, trial: lo, fate: f });
        if f == RescaledFate::BlowsUp {
            break;
        }
        lo *= 0.8;
    }
    for _ in 0..20 {
        let f = rescaled_fate(u0, hi, cfg, opts)?;
        history.push(BisectionStep { lo, hi, trial: hi, fate: f });
        if f == RescaledFate::Vanishes {
            break;
        }
        hi *= 1.25;
    }
    for _ in 0..opts.max_iter {
        if hi - lo <= opts.rel_tol * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let f = rescaled_fate(u0, mid, cfg, opts)?;
        history.push(BisectionStep { lo, hi, trial: mid, fate: f });
        match f {
            RescaledFate::BlowsUp => lo = mid,
            RescaledFate::Vanishes => hi = mid,
            RescaledFate::Undecided => {
                lo = mid;
                hi = mid;
                break;
            }
        }
    }
    Ok(RescaledBisection { t_est: 0.5 * (lo + hi), lo, hi, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(m: f64, r: f64, n: usize) -> EvolutionConfig {
        EvolutionConfig::new(m, Arc::new(RadialGrid::uniform(3, r, n).unwrap()))
    }

    #[test]
    fn zero_state_is_a_fixed_point() {
        let c = cfg(0.5, 5.0, 50);
        let s = EvolutionState::initial(RadialField::zeros(c.grid.clone()));
        let next = step_implicit(&s, 0.1, &c).unwrap();
        assert!(next.u.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn u_and_v_forms_agree() {
        let mut c = cfg(0.6, 6.0, 120);
        let u0 = bump_datum(&c.grid, 1.0, 1.0, 1.0).unwrap();
        let s = EvolutionState::initial(u0);
        let a = step_implicit(&s, 1e-2, &c).unwrap();
        c.variable = Variable::UForm;
        let b = step_implicit(&s, 1e-2, &c).unwrap();
        for (x, y) in a.u.values().iter().zip(b.u.values()) {
            assert!((x - y).abs() <= 1e-8 * a.u.sup_abs());
        }
    }

    #[test]
    fn rescale_examples() {
        let g = Arc::new(RadialGrid::uniform(3, 1.0, 4).unwrap());
        let u = RadialField::from_fn(g, |r| 1.0 + r);
        let (w, tau) = rescale_solution(&u, 0.0, 3.0, 0.5).unwrap();
        assert_eq!(tau, 0.0);
        assert_eq!(w.values(), u.values());
        let (w, _) = rescale_solution(&u, 1.5, 3.0, 0.5).unwrap();
        assert!((w.values()[0] - 4.0).abs() < 1e-14);
        let (_, tau) = rescale_solution(&u, 3.0 * (1.0 - (-1f64).exp()), 3.0, 0.5).unwrap();
        assert!((tau - 3.0).abs() < 1e-13);
        assert!(rescale_solution(&u, 3.0, 3.0, 0.5).is_err());
    }

    #[test]
    fn fit_recovers_a_line_zero() {
        let pts: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 * 0.1, 3.0 - 1.5 * i as f64 * 0.1)).collect();
        let e = fit_zero(&pts).unwrap();
        assert!((e.t_est - 2.0).abs() < 1e-12);
        assert!(e.half_width < 1e-10);
        assert!(fit_zero(&[(0.0, 1.0), (1.0, 1.0), (2.0, 2.0)]).is_err());
    }

    #[test]
    fn ball_datum_vanishes_at_the_edge() {
        let g = Arc::new(RadialGrid::uniform(3, 10.0, 100).unwrap());
        let u = RadialField::from_fn(g, |r| (-r).exp());
        let b = ball_datum(&u, 6.0).unwrap();
        assert_eq!(*b.values().last().unwrap(), 0.0);
        assert!(b.values().iter().zip(u.values()).all(|(x, y)| x <= y));
    }
}
