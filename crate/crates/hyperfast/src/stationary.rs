//! The ground state of −ΔV = c V^{1/m} on H^N.
//!
//! Radial shooting: V'' + (N−1) coth(r) V' + c V^{1/m} = 0 from V(0) = a,
//! V'(0) = 0. Energy solutions decay like l·e^{−(N−1)r}; every other
//! positive solution decays polynomially, and large/small amplitudes either
//! cross zero or decay slowly. Bisection on a between the two behaviours
//! converges to the ground state.
//!
//! The Dirichlet minimizer (normalised nonlinear inverse iteration on a ball)
//! is an independent route to the same profile.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::geometry::{volume_weight, RadialField, RadialGrid};
use crate::linalg::solve_tridiagonal;
use crate::ode::{integrate, Control, Dopri5Options, Outcome};
use crate::operator::{DiffusionOperator, OuterBoundary};
use crate::quad::gauss5;

/// Series start of the shooting integration.
pub const R_START: f64 = 1e-3;
/// Relative disagreement between the two bracketing trajectories at which the
/// shooting data stops being trusted.
const RELIABLE_SPLIT: f64 = 1e-8;
/// Largest accepted relative gap between the two C_V routes.
const FLUX_GAP_MAX: f64 = 1e-4;
/// Knot spacing of the tabulated tail.
const TAIL_STEP: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Classification {
    CrossesZero,
    SlowDecay,
    GroundStateCandidate,
}

/// Which amplitude side of a* crosses zero; measured, never assumed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    LargeAmplitudeCrosses,
    SmallAmplitudeCrosses,
}

#[derive(Clone, Debug)]
pub struct ShootingResult {
    pub amplitude: f64,
    pub classification: Classification,
    /// Zero-crossing radius or the radius at which slow decay was detected.
    pub event_radius: Option<f64>,
    /// Accepted integrator steps as (r, V, V').
    pub trajectory: Vec<[f64; 3]>,
}

/// Knobs of the shooting classifier.
#[derive(Clone, Copy, Debug)]
pub struct ShootingOptions {
    pub r_max: f64,
    pub r_detect: f64,
    /// Log-rate slack δ: slow decay means −V'/V < (N−1)(1−δ) and falling
    /// by δ(N−1)/2 below its running maximum.
    pub delta: f64,
    pub rtol: f64,
}

impl ShootingOptions {
    pub fn for_dimension(dim: usize) -> Self {
        let k = (dim - 1) as f64;
        let r_detect = (10.0 / k).min(5.0);
        Self {
            // Far enough that double-precision amplitude errors always surface.
            r_max: r_detect + 45.0 / k,
            r_detect,
            delta: 0.1,
            rtol: 1e-12,
        }
    }
}

/// Start of the integration: R_START, pulled inward for amplitudes whose
/// natural length (a^{1−p}/c)^{1/2} is shorter, so the series stays valid.
fn series_start(a: f64, c: f64, p: f64) -> f64 {
    R_START * (a.powf(1.0 - p) / c).sqrt().min(1.0)
}

fn rhs(r: f64, y: &[f64; 2], c: f64, p: f64, k: f64) -> [f64; 2] {
    [y[1], -k / r.tanh() * y[1] - c * y[0].max(0.0).powf(p)]
}

/// Integrates the profile ODE from amplitude `a` and classifies the outcome.
pub fn shoot(a: f64, c: f64, m: f64, dim: usize, r_max: f64) -> Result<ShootingResult> {
    let opts = ShootingOptions { r_max, ..ShootingOptions::for_dimension(dim) };
    shoot_with(a, c, m, dim, &opts)
}

pub fn shoot_with(a: f64, c: f64, m: f64, dim: usize, opts: &ShootingOptions) -> Result<ShootingResult> {
    if !(a > 0.0) {
        return Err(invalid("a", "amplitude must be positive"));
    }
    if !(m > 0.0 && m < 1.0) {
        return Err(invalid("m", format!("need 0 < m < 1, got {m}")));
    }
    if !(c > 0.0) {
        return Err(invalid("c", "coupling must be positive"));
    }
    let p = 1.0 / m;
    let k = (dim - 1) as f64;
    let ap = a.powf(p);
    let r0 = series_start(a, c, p);
    let y0 = [a - c * ap * r0 * r0 / (2.0 * dim as f64), -c * ap * r0 / dim as f64];
    let ode = Dopri5Options { rtol: opts.rtol, atol: 1e-300, h_init: 0.1 * r0, h_max: 0.05, ..Default::default() };

    let mut traj = vec![[0.0, a, 0.0]];
    let mut class = Classification::GroundStateCandidate;
    let mut event = None;
    let mut max_rate = f64::NEG_INFINITY;
    let mut running_min = f64::INFINITY;
    let mut prev = [0.0, a, 0.0];
    let (r_end, y_end, outcome) = integrate(
        |r, y| rhs(r, y, c, p, k),
        r0,
        y0,
        opts.r_max,
        &ode,
        |r, y, _| {
            if y[0] <= 0.0 {
                // Linear interpolation of the crossing inside the last step.
                let rc = prev[0] + (r - prev[0]) * prev[1] / (prev[1] - y[0]);
                class = Classification::CrossesZero;
                event = Some(rc);
                traj.push([r, y[0], y[1]]);
                return Control::Stop;
            }
            traj.push([r, y[0], y[1]]);
            prev = [r, y[0], y[1]];
            if r > opts.r_detect {
                // The ground state's log-rate rises monotonically towards N−1
                // (slowly when m is near 1); other positive solutions turn back.
                let rate = -y[1] / y[0];
                max_rate = max_rate.max(rate);
                if rate < k * (1.0 - opts.delta) && rate < max_rate - 0.5 * opts.delta * k {
                    class = Classification::SlowDecay;
                    event = Some(r);
                    return Control::Stop;
                }
                let plateau = (k * r).exp() * y[0];
                running_min = running_min.min(plateau);
                if plateau > 10.0 * running_min {
                    class = Classification::SlowDecay;
                    event = Some(r);
                    return Control::Stop;
                }
            }
            Control::Continue
        },
    );
    if outcome == Outcome::Failed || y_end.iter().any(|v| !v.is_finite()) {
        return Err(Error::ShootingNonFinite { r: r_end });
    }
    Ok(ShootingResult { amplitude: a, classification: class, event_radius: event, trajectory: traj })
}

/// The computed ground state: the series near the origin, dense shooting
/// data on [r_start, r_rel], the decaying tail solution on [r_rel, r_tail]
/// and l_tail·e^{−(N−1)r} beyond (where the two agree to rounding).
#[derive(Clone, Debug)]
pub struct StationaryProfile {
    dim: usize,
    m: f64,
    c: f64,
    amplitude: f64,
    l: f64,
    l_tail: f64,
    r_rel: f64,
    r_tail: f64,
    orientation: Orientation,
    knots: Vec<f64>,
    v: Vec<f64>,
    vp: Vec<f64>,
}

/// Both evaluations of the flux constant C_V.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FluxConstant {
    /// lim −(sinh r)^{N−1} V'(r).
    pub from_limit: f64,
    /// c ∫ V^{1/m} (sinh r)^{N−1} dr.
    pub from_integral: f64,
}

impl FluxConstant {
    pub fn relative_gap(&self) -> f64 {
        (self.from_limit - self.from_integral).abs() / self.from_integral.abs()
    }
}

fn hermite5(t: f64, h: f64, f0: [f64; 3], f1: [f64; 3]) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h3 = 0.5 * (t3 - 2.0 * t4 + t5);
    let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h5 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    f0[0] * h0 + h * f0[1] * h1 + h * h * f0[2] * h2 + h * h * f1[2] * h3 + h * f1[1] * h4 + f1[0] * h5
}

impl StationaryProfile {
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn m(&self) -> f64 {
        self.m
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    /// V(0).
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
    /// Last radius where the shooting data is used directly.
    pub fn reliable_radius(&self) -> f64 {
        self.r_rel
    }
    pub fn orientation(&self) -> Orientation {
        self.orientation
    }
    /// Extinction time T with c = 1/((1−m)T).
    pub fn extinction_time(&self) -> f64 {
        1.0 / ((1.0 - self.m) * self.c)
    }

    /// V and V''' from the equation given V, V'.
    fn higher(&self, r: f64, v: f64, vp: f64) -> (f64, f64) {
        let k = (self.dim - 1) as f64;
        let p = 1.0 / self.m;
        let coth = 1.0 / r.tanh();
        let vpp = -k * coth * vp - self.c * v.powf(p);
        let csch2 = 1.0 / r.sinh().powi(2);
        let vppp = -k * (-csch2 * vp + coth * vpp) - self.c * p * v.powf(p - 1.0) * vp;
        (vpp, vppp)
    }

    /// (V(r), V'(r)).
    pub fn eval(&self, r: f64) -> (f64, f64) {
        let k = (self.dim - 1) as f64;
        if r <= self.knots[0] {
            let ap = self.amplitude.powf(1.0 / self.m);
            let n = self.dim as f64;
            return (self.amplitude - self.c * ap * r * r / (2.0 * n), -self.c * ap * r / n);
        }
        if r >= self.r_tail {
            let v = self.l_tail * (-k * r).exp();
            return (v, -k * v);
        }
        let i = match self.knots.binary_search_by(|x| x.partial_cmp(&r).unwrap()) {
            Ok(i) => return (self.v[i], self.vp[i]),
            Err(i) => i - 1,
        };
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        let h = b - a;
        let t = (r - a) / h;
        let (a2, a3) = self.higher(a, self.v[i], self.vp[i]);
        let (b2, b3) = self.higher(b, self.v[i + 1], self.vp[i + 1]);
        let v = hermite5(t, h, [self.v[i], self.vp[i], a2], [self.v[i + 1], self.vp[i + 1], b2]);
        let vp = hermite5(t, h, [self.vp[i], a2, a3], [self.vp[i + 1], b2, b3]);
        (v, vp)
    }

    /// [V, V', V'', V'''] with the higher derivatives taken from the equation.
    pub fn derivatives(&self, r: f64) -> [f64; 4] {
        let (v, vp) = self.eval(r);
        if r <= 0.0 {
            let n = self.dim as f64;
            return [v, 0.0, -self.c * v.powf(1.0 / self.m) / n, 0.0];
        }
        let (vpp, vppp) = self.higher(r, v, vp);
        [v, vp, vpp, vppp]
    }

    pub fn sample(&self, grid: &Arc<RadialGrid>) -> RadialField {
        RadialField::from_fn(grid.clone(), |r| self.eval(r).0)
    }

    pub fn sample_derivative(&self, grid: &Arc<RadialGrid>) -> RadialField {
        RadialField::from_fn(grid.clone(), |r| self.eval(r).1)
    }

    /// V^{1/m}: the separable profile at t = 0.
    pub fn separable_datum(&self, grid: &Arc<RadialGrid>) -> RadialField {
        let p = 1.0 / self.m;
        RadialField::from_fn(grid.clone(), |r| self.eval(r).0.powf(p))
    }

    /// l: plateau average of e^{(N−1)r}V over the calibrated tail window.
    pub fn tail_constant(&self) -> f64 {
        self.l
    }

    /// End of the tabulated tail.
    pub fn tail_radius(&self) -> f64 {
        self.r_tail
    }

    /// Amplitude of the pure exponential continuation beyond the tabulated tail.
    pub fn tail_extension_amplitude(&self) -> f64 {
        self.l_tail
    }

    /// C_V both as the flux limit and as c∫V^{1/m}w.
    ///
    /// The limit route reads −(sinh r)^{N−1}V' at the end of the tabulated
    /// tail, where the neglected source is below e^{−(N−1)(1/m−1)r}.
    pub fn flux_constant(&self) -> FluxConstant {
        let from_limit = -volume_weight(self.r_tail, self.dim) * self.vp[self.vp.len() - 1];
        let p = 1.0 / self.m;
        let w = |r: f64| volume_weight(r, self.dim) * self.eval(r).0.powf(p);
        let mut s = gauss5(w, 0.0, self.knots[0]);
        for win in self.knots.windows(2) {
            s += gauss5(w, win[0], win[1]);
        }
        // Tail: integrate the extension out to where it is negligible.
        let mut a = self.r_tail;
        let end = self.r_tail + 40.0 / ((self.dim - 1) as f64 * (p - 1.0)).max(0.1);
        while a < end {
            let b = a + 0.25;
            s += gauss5(w, a, b);
            a = b;
        }
        FluxConstant { from_limit, from_integral: self.c * s }
    }

    /// Flux-balance residual: sup over interior nodes of
    /// |−w V' − c∫_0^r V^{1/m} w| / (c∫_0^r V^{1/m} w).
    ///
    /// This is ΔV + cV^{1/m} = 0 integrated once against the volume weight.
    /// Unlike a pointwise difference quotient it stays well conditioned in
    /// the tail, where ΔV is a cancellation of two terms e^{2(N−1)r}·V^{1/m}
    /// times larger than the source.
    pub fn residual(&self, grid: &RadialGrid) -> f64 {
        let p = 1.0 / self.m;
        let wv = |r: f64| volume_weight(r, self.dim) * self.eval(r).0.powf(p);
        let r = grid.nodes();
        let mut acc = 0.0;
        let mut worst: f64 = 0.0;
        for i in 1..r.len() {
            // Split each cell at the series/shooting seam so every panel is smooth.
            let (a, b) = (r[i - 1], r[i]);
            if a < self.knots[0] && self.knots[0] < b {
                acc += gauss5(wv, a, self.knots[0]) + gauss5(wv, self.knots[0], b);
            } else {
                acc += gauss5(wv, a, b);
            }
            let s = self.c * acc;
            let flux = -volume_weight(b, self.dim) * self.eval(b).1;
            if i < r.len() - 1 || r.len() == 2 {
                worst = worst.max((flux - s).abs() / s);
            }
        }
        worst
    }

    /// A of A^{-1}e^{−(N−1)r} ≤ V ≤ A e^{−(N−1)r}, measured on [0, r_max].
    pub fn sandwich_constant(&self, r_max: f64) -> f64 {
        let k = (self.dim - 1) as f64;
        let n = 4000;
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for j in 0..=n {
            let r = r_max * j as f64 / n as f64;
            let q = (k * r).exp() * self.eval(r).0;
            lo = lo.min(q);
            hi = hi.max(q);
        }
        hi.max(1.0 / lo)
    }

    /// Writes the profile as `# N=.. m=.. c=.. l=.. C_V=..` followed by `r,V,Vprime` rows.
    pub fn write_csv<W: Write>(&self, grid: &RadialGrid, mut out: W) -> std::io::Result<()> {
        let cv = self.flux_constant();
        writeln!(
            out,
            "# N={} m={} c={} l={} C_V={}",
            self.dim,
            crate::io::fmt17(self.m),
            crate::io::fmt17(self.c),
            crate::io::fmt17(self.l),
            crate::io::fmt17(cv.from_limit)
        )?;
        writeln!(out, "r,V,Vprime")?;
        for &r in grid.nodes() {
            let (v, vp) = self.eval(r);
            writeln!(out, "{},{},{}", crate::io::fmt17(r), crate::io::fmt17(v), crate::io::fmt17(vp))?;
        }
        Ok(())
    }
}

fn validate(c: f64, m: f64, dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(invalid("N", "dimension must be >= 2"));
    }
    if !(m > 0.0 && m < 1.0) {
        return Err(invalid("m", format!("need 0 < m < 1, got {m}")));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(invalid("c", "coupling must be positive and finite"));
    }
    Ok(())
}

fn interp_traj(traj: &[[f64; 3]], r: f64) -> Option<f64> {
    if r < traj[0][0] || r > traj[traj.len() - 1][0] {
        return None;
    }
    let i = traj.partition_point(|s| s[0] < r).max(1);
    let (a, b) = (traj[i - 1], traj[i]);
    if b[0] == a[0] {
        return Some(a[1]);
    }
    // Cubic Hermite from (V, V'); only used to compare the two brackets.
    let h = b[0] - a[0];
    let t = (r - a[0]) / h;
    let h00 = 2.0 * t * t * t - 3.0 * t * t + 1.0;
    let h10 = t * t * t - 2.0 * t * t + t;
    let h01 = -2.0 * t * t * t + 3.0 * t * t;
    let h11 = t * t * t - t * t;
    Some(h00 * a[1] + h10 * h * a[2] + h01 * b[1] + h11 * h * b[2])
}

/// Bisection on the shooting amplitude between trajectories of opposite
/// classification, stopping when the bracket width is ≤ tol·a (or no
/// floating-point number separates the ends).
pub fn find_ground_state(c: f64, m: f64, dim: usize, tol: f64) -> Result<StationaryProfile> {
    validate(c, m, dim)?;
    if !(tol > 0.0) {
        return Err(invalid("tol", "tolerance must be positive"));
    }
    let opts = ShootingOptions::for_dimension(dim);
    let k = (dim - 1) as f64;

    // Geometric scan of [1e-4, 1e4] to find a sign change of the classifier.
    let scan: Vec<f64> = (0..=32).map(|j| 10f64.powf(-4.0 + j as f64 / 4.0)).collect();
    let mut prev: Option<ShootingResult> = None;
    let mut bracket = None;
    for &a in &scan {
        let s = shoot_with(a, c, m, dim, &opts)?;
        if let Some(p) = &prev {
            let pair = (p.classification, s.classification);
            if matches!(
                pair,
                (Classification::CrossesZero, Classification::SlowDecay)
                    | (Classification::SlowDecay, Classification::CrossesZero)
            ) {
                bracket = Some((p.clone(), s));
                break;
            }
        }
        prev = Some(s);
    }
    let (mut lo, mut hi) = bracket.ok_or(Error::BracketNotFound { lo: scan[0], hi: scan[scan.len() - 1] })?;
    let orientation = if hi.classification == Classification::CrossesZero {
        Orientation::LargeAmplitudeCrosses
    } else {
        Orientation::SmallAmplitudeCrosses
    };

    let mut exact = None;
    loop {
        let mid = 0.5 * (lo.amplitude + hi.amplitude);
        if hi.amplitude - lo.amplitude <= tol * mid || mid <= lo.amplitude || mid >= hi.amplitude {
            break;
        }
        let s = shoot_with(mid, c, m, dim, &opts)?;
        match s.classification {
            Classification::GroundStateCandidate => {
                exact = Some(s);
                break;
            }
            cl if cl == lo.classification => lo = s,
            _ => hi = s,
        }
    }

    // Trust the data where the two bracketing trajectories still agree.
    let (base, other) = match &exact {
        Some(s) => (s.clone(), None),
        None => (lo.clone(), Some(hi.clone())),
    };
    let mut knots = Vec::new();
    let mut v = Vec::new();
    let mut vp = Vec::new();
    let stop = base.event_radius.unwrap_or(opts.r_max);
    for s in base.trajectory.iter().skip(1) {
        let r = s[0];
        if r >= stop {
            break;
        }
        let (val, slope) = match &other {
            Some(o) => match interp_traj(&o.trajectory, r) {
                Some(vo) => {
                    if (vo - s[1]).abs() > RELIABLE_SPLIT * s[1] {
                        break;
                    }
                    (0.5 * (vo + s[1]), s[2])
                }
                None => break,
            },
            None => (s[1], s[2]),
        };
        knots.push(r);
        v.push(val);
        vp.push(slope);
    }
    if knots.len() < 8 {
        return Err(Error::PlateauFailure("shooting data unreliable from the start".into()));
    }
    let r_rel = *knots.last().unwrap();
    if r_rel < opts.r_detect {
        return Err(Error::PlateauFailure(format!(
            "reliable radius {r_rel:.3} below detection radius {}",
            opts.r_detect
        )));
    }
    // Long enough for the source, decaying like e^{−(N−1)(1/m−1)r}, to drop
    // out of the plateau.
    let r_tail = r_rel + (40.0 / k).max(12.0 / (k * (1.0 / m - 1.0)));
    extend_tail(&mut knots, &mut v, &mut vp, c, 1.0 / m, dim, r_tail)?;
    let r_tail = *knots.last().unwrap();

    // l: plateau of e^{(N−1)r}V over the last four units of the tabulation.
    let w_lo = r_tail - 4.0;
    let plateau: Vec<f64> = knots
        .iter()
        .zip(&v)
        .filter(|(r, _)| **r >= w_lo)
        .map(|(r, val)| (k * r).exp() * val)
        .collect();
    let l = plateau.iter().sum::<f64>() / plateau.len() as f64;
    let spread = plateau.iter().fold(0.0f64, |a, q| a.max((q - l).abs())) / l;
    if !(spread <= 0.01) || !l.is_finite() || l <= 0.0 {
        return Err(Error::PlateauFailure(format!(
            "e^{{(N-1)r}}V varies by {spread:.3e} over [{w_lo:.2}, {r_tail:.2}]"
        )));
    }
    let l_tail = (k * r_tail).exp() * v[v.len() - 1];
    let amplitude = exact.as_ref().map_or(0.5 * (lo.amplitude + hi.amplitude), |s| s.amplitude);
    let profile = StationaryProfile { dim, m, c, amplitude, l, l_tail, r_rel, r_tail, orientation, knots, v, vp };
    // The flux limit and the source integral are independent routes to C_V;
    // disagreement means the tail was not resolved.
    let gap = profile.flux_constant().relative_gap();
    if !(gap <= FLUX_GAP_MAX) {
        return Err(Error::PlateauFailure(format!("flux constant routes disagree by {gap:.3e}")));
    }
    Ok(profile)
}

/// ∫ over [a, b] with endpoint values and slopes (error O(h⁵)).
fn hermite_panel(h: f64, fa: f64, fb: f64, da: f64, db: f64) -> f64 {
    0.5 * h * (fa + fb) + h * h / 12.0 * (da - db)
}

/// Appends the decaying solution beyond the last shooting knot.
///
/// The energy solution satisfies, with F = −(sinh r)^{N−1}V',
///   F(r) = C − c∫_r^∞ V^p w,   V(r) = ∫_r^∞ F/w,
/// which is a contraction in the tail because the source is
/// e^{−(N−1)(p−1)r} smaller than V. V at the seam is affine in C, which fixes
/// C from the shooting value there.
fn extend_tail(
    knots: &mut Vec<f64>,
    v: &mut Vec<f64>,
    vp: &mut Vec<f64>,
    c: f64,
    p: f64,
    dim: usize,
    r_end: f64,
) -> Result<()> {
    let k = (dim - 1) as f64;
    let r0 = *knots.last().unwrap();
    let v0 = *v.last().unwrap();
    let steps = ((r_end - r0) / TAIL_STEP).ceil() as usize;
    let h = (r_end - r0) / steps as f64;
    let r: Vec<f64> = (0..=steps).map(|j| r0 + j as f64 * h).collect();
    let w: Vec<f64> = r.iter().map(|&x| volume_weight(x, dim)).collect();
    let dw: Vec<f64> = r.iter().map(|&x| k * x.sinh().powf(k - 1.0) * x.cosh()).collect();
    let mut ext: Vec<f64> = r.iter().map(|x| v0 * (-k * (x - r0)).exp()).collect();
    let mut slope: Vec<f64> = ext.iter().map(|x| -k * x).collect();
    let gamma = k * (p - 1.0);
    // S(r) = ∫_r^∞ 1/w; V(r0) is affine in C through S, so C is solved for
    // exactly at every sweep.
    let inv: Vec<f64> = w.iter().map(|x| 1.0 / x).collect();
    let dinv: Vec<f64> = (0..=steps).map(|j| -dw[j] / (w[j] * w[j])).collect();
    let mut big_s = vec![0.0; steps + 1];
    big_s[steps] = inv[steps] / k;
    for j in (0..steps).rev() {
        big_s[j] = big_s[j + 1] + hermite_panel(h, inv[j], inv[j + 1], dinv[j], dinv[j + 1]);
    }
    let mut converged = false;
    for _ in 0..400 {
        // Source integral I(r) = c∫_r^∞ V^p w, cumulated from the far end.
        let g: Vec<f64> = (0..=steps).map(|j| c * ext[j].powf(p) * w[j]).collect();
        let dg: Vec<f64> =
            (0..=steps).map(|j| c * (p * ext[j].powf(p - 1.0) * slope[j] * w[j] + ext[j].powf(p) * dw[j])).collect();
        let mut big_i = vec![0.0; steps + 1];
        big_i[steps] = g[steps] / gamma;
        for j in (0..steps).rev() {
            big_i[j] = big_i[j + 1] + hermite_panel(h, g[j], g[j + 1], dg[j], dg[j + 1]);
        }
        // J(r) = ∫_r^∞ I/w, so that V = C·S − J.
        let q: Vec<f64> = (0..=steps).map(|j| big_i[j] / w[j]).collect();
        let dq: Vec<f64> = (0..=steps).map(|j| -g[j] / w[j] - big_i[j] * dw[j] / (w[j] * w[j])).collect();
        let mut big_j = vec![0.0; steps + 1];
        big_j[steps] = q[steps] / (k + gamma);
        for j in (0..steps).rev() {
            big_j[j] = big_j[j + 1] + hermite_panel(h, q[j], q[j + 1], dq[j], dq[j + 1]);
        }
        let big_c = (v0 + big_j[0]) / big_s[0];
        let next: Vec<f64> = (0..=steps).map(|j| big_c * big_s[j] - big_j[j]).collect();
        if next.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::PlateauFailure("tail extension lost positivity".into()));
        }
        let change = next.iter().zip(&ext).fold(0.0f64, |a, (x, y)| a.max((x - y).abs() / x.abs()));
        slope = (0..=steps).map(|j| -(big_c - big_i[j]) / w[j]).collect();
        ext = next;
        if change < 1e-14 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::PlateauFailure("tail extension did not converge".into()));
    }
    for j in 1..=steps {
        knots.push(r[j]);
        v.push(ext[j]);
        vp.push(slope[j]);
    }
    Ok(())
}

/// λV with λ = (c_new/c)^{m/(m−1)}: the solution for coupling c_new.
pub fn scale_profile(p: &StationaryProfile, c_new: f64) -> Result<StationaryProfile> {
    if !(c_new > 0.0) || !c_new.is_finite() {
        return Err(invalid("c_new", "coupling must be positive"));
    }
    let lambda = scale_factor(p.c, c_new, p.m);
    let mut out = p.clone();
    out.c = c_new;
    out.amplitude *= lambda;
    out.l *= lambda;
    out.l_tail *= lambda;
    out.v.iter_mut().for_each(|x| *x *= lambda);
    out.vp.iter_mut().for_each(|x| *x *= lambda);
    Ok(out)
}

/// λ = (c_new/c)^{m/(m−1)}.
pub fn scale_factor(c: f64, c_new: f64, m: f64) -> f64 {
    (c_new / c).powf(m / (m - 1.0))
}

/// c = 1/((1−m)T).
pub fn coupling_for_extinction_time(t: f64, m: f64) -> f64 {
    1.0 / ((1.0 - m) * t)
}

type CacheKey = (usize, u64);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<StationaryProfile>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<StationaryProfile>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// The c = 1 ground state for (N, m), computed once per process.
pub fn unit_ground_state(m: f64, dim: usize) -> Result<Arc<StationaryProfile>> {
    let key = (dim, m.to_bits());
    if let Some(p) = cache().lock().unwrap().get(&key) {
        return Ok(p.clone());
    }
    // Computed outside the lock; a racing duplicate is harmless (deterministic).
    let p = Arc::new(find_ground_state(1.0, m, dim, 1e-16)?);
    Ok(cache().lock().unwrap().entry(key).or_insert(p).clone())
}

/// V solving −ΔV = V^{1/m}/((1−m)T).
pub fn profile_for_extinction_time(t: f64, m: f64, dim: usize) -> Result<StationaryProfile> {
    if !(t > 0.0) {
        return Err(invalid("T", "extinction time must be positive"));
    }
    let base = unit_ground_state(m, dim)?;
    scale_profile(&base, coupling_for_extinction_time(t, m))
}

/// Deviation of (V^α)^{(k)}/V^α from its tail limit (−α(N−1))^k.
#[derive(Clone, Debug, Serialize)]
pub struct PowerDerivativeReport {
    pub alpha: f64,
    pub k: usize,
    pub expected: f64,
    pub window: (f64, f64),
    pub samples: Vec<(f64, f64)>,
    pub max_rel_deviation: f64,
}

/// (V^α)^{(k)}/V^α from the ratios ρ_j = V^{(j)}/V.
pub fn power_derivative_ratio(rho: [f64; 4], alpha: f64, k: usize) -> Result<f64> {
    let a = alpha;
    Ok(match k {
        0 => 1.0,
        1 => a * rho[1],
        2 => a * (a - 1.0) * rho[1].powi(2) + a * rho[2],
        3 => a * (a - 1.0) * (a - 2.0) * rho[1].powi(3) + 3.0 * a * (a - 1.0) * rho[1] * rho[2] + a * rho[3],
        _ => return Err(Error::OrderUnsupported { k, max: 3 }),
    })
}

pub fn power_derivative_limit_check(
    p: &StationaryProfile,
    alpha: f64,
    k: usize,
    window: (f64, f64),
) -> Result<PowerDerivativeReport> {
    if alpha == 0.0 {
        return Err(invalid("alpha", "exponent must be nonzero"));
    }
    if k > 3 {
        return Err(Error::OrderUnsupported { k, max: 3 });
    }
    let expected = (-alpha * (p.dim - 1) as f64).powi(k as i32);
    let n = 64;
    let mut samples = Vec::with_capacity(n + 1);
    let mut worst: f64 = 0.0;
    for j in 0..=n {
        let r = window.0 + (window.1 - window.0) * j as f64 / n as f64;
        let d = p.derivatives(r);
        let rho = [1.0, d[1] / d[0], d[2] / d[0], d[3] / d[0]];
        let q = power_derivative_ratio(rho, alpha, k)?;
        worst = worst.max(((q - expected) / expected).abs());
        samples.push((r, q));
    }
    Ok(PowerDerivativeReport { alpha, k, expected, window, samples, max_rel_deviation: worst })
}

/// Output of the ball minimisation.
#[derive(Clone, Debug)]
pub struct MinimizerResult {
    pub grid: Arc<RadialGrid>,
    pub profile: RadialField,
    /// T_n = ‖v‖_q^q / ((1−m)‖v'‖₂²), q = (m+1)/m.
    pub t_n: f64,
    pub iterations: usize,
    pub negative_projections: usize,
}

/// Minimises ‖v'‖₂ on the ball of radius n with v(n) = 0 subject to a fixed
/// ‖v‖_{(m+1)/m}, by normalised inverse iteration −Δv_{k+1} = v_k^{1/m}.
/// `spacing` is the uniform cell width (nested grids for nested radii).
pub fn dirichlet_minimizer(n: f64, m: f64, dim: usize, norm_target: f64, spacing: f64) -> Result<MinimizerResult> {
    validate(1.0, m, dim)?;
    if !(n > 0.0) {
        return Err(invalid("n", "ball radius must be positive"));
    }
    if !(norm_target > 0.0) {
        return Err(invalid("norm_target", "must be positive"));
    }
    let cells = (n / spacing).round() as usize;
    let grid = Arc::new(RadialGrid::uniform(dim, n, cells)?);
    let op = DiffusionOperator::new(&grid, OuterBoundary::DirichletZero)?;
    let q = (m + 1.0) / m;
    let p = 1.0 / m;
    let nodes = grid.nodes();
    let unknowns = op.unknowns();
    let (lower, diag, upper) = op.stiffness();
    let vol = op.volumes();
    let normalise = |v: &mut Vec<f64>| {
        let s = op.integral_pow(v, q).powf(1.0 / q);
        let f = norm_target / s;
        v.iter_mut().for_each(|x| *x *= f);
    };
    let mut v: Vec<f64> = nodes
        .iter()
        .map(|r| (0.5 * std::f64::consts::PI * r / n).cos().max(0.0))
        .collect();
    v[nodes.len() - 1] = 0.0;
    normalise(&mut v);
    let mut best_energy = op.dirichlet_energy(&v);
    let mut since_best = 0;
    let mut negatives = 0;
    for it in 1..=50_000 {
        let mut rhs: Vec<f64> = (0..unknowns).map(|i| vol[i] * v[i].powf(p)).collect();
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs);
        let mut next = v.clone();
        for (i, x) in rhs.into_iter().enumerate() {
            if x < 0.0 {
                negatives += 1;
                next[i] = 0.0;
            } else {
                next[i] = x;
            }
        }
        normalise(&mut next);
        let sup = next.iter().fold(0.0f64, |a, x| a.max(*x));
        let change = next.iter().zip(&v).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())) / sup;
        v = next;
        let e = op.dirichlet_energy(&v);
        if change <= 1e-13 {
            let t_n = op.integral_pow(&v, q) / ((1.0 - m) * e);
            let profile = RadialField::new(grid.clone(), v)?;
            return Ok(MinimizerResult { grid, profile, t_n, iterations: it, negative_projections: negatives });
        }
        if e < best_energy * (1.0 - 1e-15) {
            best_energy = e;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= 50 && change > 1e-9 {
                return Err(Error::Stagnation { iterations: it });
            }
        }
    }
    Err(Error::Stagnation { iterations: 50_000 })
}

/// Discrete ‖·‖_{(m+1)/m} of a profile sampled on the minimizer's grid, using
/// the same lumped quadrature, so both routes are normalised identically.
pub fn minimizer_norm(p: &StationaryProfile, n: f64, spacing: f64) -> Result<f64> {
    let cells = (n / spacing).round() as usize;
    let grid = RadialGrid::uniform(p.dim, n, cells)?;
    let op = DiffusionOperator::new(&grid, OuterBoundary::DirichletZero)?;
    let q = (p.m + 1.0) / p.m;
    let v: Vec<f64> = grid.nodes().iter().map(|&r| p.eval(r).0).collect();
    Ok(op.integral_pow(&v, q).powf(1.0 / q))
}
