//! Explicit sub/supersolutions and their numerical verification.
//!
//! Each family is evaluated in closed form: the value, its time derivative
//! and the Laplacian of its m-th power (or, for the relative-error barriers,
//! the first and second radial derivatives). Stationary profiles enter only
//! through `eval` and their own equation −ΔV = cV^{1/m}.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::Trajectory;
use crate::geometry::critical_exponent;
use crate::stationary::{profile_for_extinction_time, unit_ground_state, StationaryProfile};

/// Normalised residuals above −NOISE count as having the required sign.
const NOISE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Family {
    UpperBasic,
    UpperSharp,
    LowerPre,
    LowerMain,
    #[serde(alias = "PSI")]
    PsiRelerr,
    #[serde(alias = "PHI")]
    PhiRelerr,
}

impl Family {
    fn allowed(self) -> &'static [&'static str] {
        match self {
            Family::UpperBasic => &["c0", "decay"],
            Family::UpperSharp => &["c0", "xi", "m_tilde", "t_star"],
            Family::LowerPre => &["mu0", "xi", "alpha", "t_star"],
            Family::LowerMain => &["mu0", "xi", "alpha", "beta", "t_eps", "t_star"],
            Family::PsiRelerr | Family::PhiRelerr => &["a", "b", "c", "tau0", "eps", "big_t", "r_hat"],
        }
    }

    /// Supersolutions are checked for residual ≥ 0, subsolutions for ≤ 0.
    pub fn is_upper(self) -> bool {
        !matches!(self, Family::LowerPre | Family::LowerMain)
    }

    pub fn default_pde(self) -> Pde {
        match self {
            Family::PsiRelerr => Pde::PsiEq,
            Family::PhiRelerr => Pde::PhiEq,
            _ => Pde::Fde,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeProfile {
    Linear,
    /// 1 − (1−τ)^{1/α}, α = 1/m − 1.
    HUpper,
    /// 1 − ½(1−τ)^{m/(1−m)} on the second half of (0, t*).
    HLower,
    HMain,
}

impl TimeProfile {
    /// Default choice for a family at exponent m.
    pub fn for_family(family: Family, m: f64) -> Self {
        match family {
            Family::UpperSharp if m > 0.5 => TimeProfile::HUpper,
            Family::LowerPre if m > 0.5 => TimeProfile::HLower,
            Family::LowerMain => TimeProfile::HMain,
            _ => TimeProfile::Linear,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSpec {
    pub family: Family,
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub time_profile: Option<TimeProfile>,
}

impl BarrierSpec {
    pub fn new(family: Family, params: &[(&str, f64)]) -> Self {
        Self {
            family,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            time_profile: None,
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn with_profile(mut self, tp: TimeProfile) -> Self {
        self.time_profile = Some(tp);
        self
    }

    fn get(&self, key: &str) -> Result<f64> {
        self.params
            .get(key)
            .copied()
            .ok_or_else(|| Error::BarrierConstraint(format!("{:?} needs parameter `{key}`", self.family)))
    }

    fn get_or(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }
}

fn constraint(msg: impl Into<String>) -> Error {
    Error::BarrierConstraint(msg.into())
}

/// One evaluation of a barrier.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sample {
    pub value: f64,
    pub dt: f64,
    /// Δ(B^m) for the parabolic families; ΔΨ for the relative-error ones.
    pub lap: f64,
    /// Ψ′ (relative-error families only).
    pub d1: f64,
    /// (kink function, its r-derivative) when a positive part is active nearby.
    pub kink: Option<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub enum Barrier {
    UpperBasic { c0: f64, a: f64 },
    UpperSharp { c0: f64, xi: f64, amp: f64, t_star: f64, h: TimeProfile, profile: Arc<StationaryProfile> },
    LowerPre { mu0: f64, xi: f64, alpha: f64, t_star: f64, h: TimeProfile },
    LowerMain { mu0: f64, xi: f64, alpha: f64, beta: f64, t_eps: f64, t_star: f64, amp: f64, profile: Arc<StationaryProfile> },
    Linear { upper_psi: bool, a: f64, b: f64, c: f64, tau0: f64, eps: f64, profile: Arc<StationaryProfile> },
    /// [B^m − ε]₊^{1/m} of a subsolution.
    Shifted { inner: Box<Barrier>, eps: f64 },
}

/// Time profile h on [0,1] and its derivative.
fn time_profile(h: TimeProfile, m: f64, s: f64) -> (f64, f64) {
    let s = s.clamp(0.0, 1.0);
    match h {
        TimeProfile::Linear | TimeProfile::HMain => (s, 1.0),
        TimeProfile::HUpper => {
            let a = 1.0 / m - 1.0;
            (1.0 - (1.0 - s).powf(1.0 / a), (1.0 - s).powf(1.0 / a - 1.0) / a)
        }
        TimeProfile::HLower => {
            let e = m / (1.0 - m);
            (1.0 - 0.5 * (1.0 - s).powf(e), 0.5 * e * (1.0 - s).powf(e - 1.0))
        }
    }
}

/// Δ e^{−γ(r−ξ)} / e^{−γ(r−ξ)}.
fn exp_lap(gamma: f64, k: f64, r: f64) -> f64 {
    gamma * gamma - k * gamma / r.tanh()
}

impl Barrier {
    /// Builds a barrier for dimension `dim` and exponent `m`, validating the
    /// family constraints and fetching the stationary profiles it needs.
    pub fn build(spec: &BarrierSpec, dim: usize, m: f64) -> Result<Self> {
        for key in spec.params.keys() {
            if !spec.family.allowed().contains(&key.as_str()) {
                return Err(constraint(format!("{:?} has no parameter `{key}`", spec.family)));
            }
        }
        let k = (dim - 1) as f64;
        let h = spec.time_profile.unwrap_or_else(|| TimeProfile::for_family(spec.family, m));
        let positive = |name: &str, v: f64| -> Result<f64> {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(constraint(format!("`{name}` must be positive, got {v}")))
            }
        };
        Ok(match spec.family {
            Family::UpperBasic => {
                let c0 = positive("c0", spec.get("c0")?)?;
                let decay = positive("decay", spec.get_or("decay", k / (2.0 * m)))?;
                Barrier::UpperBasic { c0, a: decay * m }
            }
            Family::UpperSharp => {
                let m_tilde = spec.get("m_tilde")?;
                let lo = 2.0 * m / (1.0 + m);
                if !(m_tilde > lo && m_tilde < 1.0) {
                    return Err(constraint(format!("m̃ = {m_tilde} outside ({lo:.6}, 1)")));
                }
                let profile = unit_ground_state(m_tilde, dim)?;
                let amp = profile.sandwich_constant(profile.tail_radius());
                Barrier::UpperSharp {
                    c0: positive("c0", spec.get("c0")?)?,
                    xi: positive("xi", spec.get("xi")?)?,
                    amp,
                    t_star: positive("t_star", spec.get("t_star")?)?,
                    h,
                    profile,
                }
            }
            Family::LowerPre => {
                let alpha = spec.get("alpha")?;
                if !(alpha > k) {
                    return Err(constraint(format!("α = {alpha} must exceed N−1 = {k}")));
                }
                Barrier::LowerPre {
                    mu0: positive("mu0", spec.get("mu0")?)?,
                    xi: positive("xi", spec.get("xi")?)?,
                    alpha,
                    t_star: positive("t_star", spec.get("t_star")?)?,
                    h,
                }
            }
            Family::LowerMain => {
                let alpha = spec.get("alpha")?;
                let beta = spec.get("beta")?;
                check_lower_main(alpha, beta, m, dim)?;
                let t_eps = spec.get("t_eps")?;
                let t_star = spec.get("t_star")?;
                if !(t_eps >= 0.0 && t_star > t_eps) {
                    return Err(constraint(format!("need 0 ≤ t_eps < t_star, got {t_eps}, {t_star}")));
                }
                let profile = unit_ground_state(m, dim)?;
                let amp = profile.sandwich_constant(profile.tail_radius());
                Barrier::LowerMain {
                    mu0: positive("mu0", spec.get("mu0")?)?,
                    xi: positive("xi", spec.get("xi")?)?,
                    alpha,
                    beta,
                    t_eps,
                    t_star,
                    amp,
                    profile,
                }
            }
            Family::PsiRelerr | Family::PhiRelerr => {
                let eps = spec.get_or("eps", 0.2);
                if !(eps > 0.0 && eps <= 0.2) {
                    return Err(constraint(format!("ε = {eps} outside (0, 1/5]")));
                }
                let big_t = positive("big_t", spec.get("big_t")?)?;
                Barrier::Linear {
                    upper_psi: spec.family == Family::PsiRelerr,
                    a: positive("a", spec.get("a")?)?,
                    b: positive("b", spec.get("b")?)?,
                    c: positive("c", spec.get("c")?)?,
                    tau0: spec.get_or("tau0", 0.0),
                    eps,
                    profile: Arc::new(profile_for_extinction_time(big_t, m, dim)?),
                }
            }
        })
    }

    /// Wraps a subsolution as [B^m − ε]₊^{1/m}.
    pub fn shifted(self, eps: f64) -> Self {
        Barrier::Shifted { inner: Box::new(self), eps }
    }

    pub fn value(&self, r: f64, t: f64, m: f64, dim: usize) -> f64 {
        self.sample(r, t, m, dim).value
    }

    /// Evaluates the barrier and the derivatives its residual needs.
    pub fn sample(&self, r: f64, t: f64, m: f64, dim: usize) -> Sample {
        let k = (dim - 1) as f64;
        match self {
            Barrier::UpperBasic { c0, a } => {
                let v = c0.powf(m) * (-a * r).exp();
                Sample { value: v.powf(1.0 / m), lap: v * exp_lap(*a, k, r), ..Default::default() }
            }
            Barrier::UpperSharp { c0, xi, amp, t_star, h, profile } => {
                let (f, fp) = time_profile(*h, m, t / t_star);
                let fp = fp / t_star;
                let vt = profile.eval(r).0;
                let lift = amp * (0.5 * k * xi).exp();
                let e = (-0.5 * k * r).exp();
                let s = lift * vt * f + e * (1.0 - f);
                let lap_vt = -profile.c() * vt.powf(1.0 / profile.m());
                Sample {
                    value: c0 * s.powf(1.0 / m),
                    dt: c0 / m * fp * (lift * vt - e) * s.powf(1.0 / m - 1.0),
                    lap: c0.powf(m) * (lift * f * lap_vt + (1.0 - f) * e * exp_lap(0.5 * k, k, r)),
                    ..Default::default()
                }
            }
            Barrier::LowerPre { mu0, xi, alpha, t_star, h } => {
                let (f, fp) = match h {
                    TimeProfile::HLower => {
                        let (f, fp) = time_profile(*h, m, 2.0 * t / t_star - 1.0);
                        (f, 2.0 * fp / t_star)
                    }
                    _ => (t / t_star, 1.0 / t_star),
                };
                let x = (-alpha * (r - xi)).exp();
                // Same as (1 + x)f − 1, without cancelling away x at large r.
                let q = x * f - (1.0 - f);
                let kink = Some((q, -alpha * x * f));
                if q <= 0.0 {
                    return Sample { kink, ..Default::default() };
                }
                Sample {
                    value: mu0 * q.powf(1.0 / m),
                    dt: mu0 / m * fp * (1.0 + x) * q.powf(1.0 / m - 1.0),
                    lap: mu0.powf(m) * f * x * exp_lap(*alpha, k, r),
                    kink,
                    ..Default::default()
                }
            }
            Barrier::LowerMain { mu0, xi, alpha, beta, t_eps, t_star, amp, profile } => {
                let s_t = ((t - t_eps) / (t_star - t_eps)).clamp(0.0, 1.0);
                let (f, fp) = (s_t, 1.0 / (t_star - t_eps));
                let (v, _) = profile.eval(r);
                let lift = (k * xi).exp() / amp;
                let eb = (-beta * (r - xi)).exp();
                let ea = (-alpha * (r - xi)).exp();
                let q = lift * v * f - eb * (1.0 - f);
                let (_, vp) = profile.eval(r);
                let kink = Some((q, (-beta * eb + lift * vp) * f + beta * eb));
                let active = q > 0.0;
                let s = q.max(0.0) + ea;
                let mut lap = ea * exp_lap(*alpha, k, r);
                let mut dt = 0.0;
                if active {
                    let lap_v = -profile.c() * v.powf(1.0 / profile.m());
                    lap += (f - 1.0) * eb * exp_lap(*beta, k, r) + f * lift * lap_v;
                    dt = mu0 / m * s.powf(1.0 / m - 1.0) * fp * (eb + lift * v);
                }
                Sample { value: mu0 * s.powf(1.0 / m), dt, lap: mu0.powf(m) * lap, kink, ..Default::default() }
            }
            Barrier::Linear { a, b, c, tau0, .. } => Sample {
                value: c - b / r - a * (t - tau0),
                dt: -a,
                d1: b / (r * r),
                lap: -b * (2.0 / r.powi(3) - k / (r.tanh() * r * r)),
                kink: None,
            },
            Barrier::Shifted { inner, eps } => {
                let s = inner.sample(r, t, m, dim);
                let pm = s.value.powf(m);
                let q = pm - eps;
                // d(B^m)/dr is not tracked; the band uses a unit slope scale.
                let kink = Some((q, pm.max(1e-300)));
                if q <= 0.0 || s.value <= 0.0 {
                    return Sample { kink, ..Default::default() };
                }
                let value = q.powf(1.0 / m);
                Sample { value, dt: (value / s.value).powf(1.0 - m) * s.dt, lap: s.lap, kink, ..s }
            }
        }
    }

    pub fn profile(&self) -> Option<&StationaryProfile> {
        match self {
            Barrier::UpperSharp { profile, .. } | Barrier::LowerMain { profile, .. } | Barrier::Linear { profile, .. } => {
                Some(profile)
            }
            Barrier::Shifted { inner, .. } => inner.profile(),
            _ => None,
        }
    }
}

/// The three inequalities constraining (α, β) for the main lower barrier.
pub fn check_lower_main(alpha: f64, beta: f64, m: f64, dim: usize) -> Result<()> {
    let k = (dim - 1) as f64;
    if !(alpha > k) {
        return Err(constraint(format!("α = {alpha} must exceed N−1 = {k}")));
    }
    if !(beta < k) {
        return Err(constraint(format!("β = {beta} must be below N−1 = {k}")));
    }
    let cap = beta + k * (1.0 - m) / m;
    if !(alpha <= cap) {
        return Err(constraint(format!("α = {alpha} exceeds β + (N−1)(1−m)/m = {cap}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Pde {
    Fde,
    /// w_τ = Δ(w^m) + w/((1−m)T); T from `RegionSpec::big_t`.
    Rescaled,
    PsiEq,
    PhiEq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// Rectangle (r_lo, r_hi) × (t_lo, t_hi) sampled on an nr × nt lattice
/// including the endpoints.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Region {
    pub r: (f64, f64),
    pub t: (f64, f64),
    pub nr: usize,
    pub nt: usize,
    /// Extinction time for the rescaled equation.
    #[serde(default)]
    pub big_t: Option<f64>,
}

impl Region {
    pub fn new(r: (f64, f64), t: (f64, f64), nr: usize, nt: usize) -> Self {
        Self { r, t, nr, nt, big_t: None }
    }

    pub fn refined(&self) -> Self {
        Self { nr: 2 * self.nr, nt: 2 * self.nt, ..*self }
    }

    fn dr(&self) -> f64 {
        (self.r.1 - self.r.0) / self.nr as f64
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub region: Region,
    /// Smallest residual in the checked direction (≥ 0 is good), normalised
    /// by the sum of the magnitudes of the terms.
    pub min_normalized: f64,
    pub min_residual: f64,
    pub worst: (f64, f64),
    pub sampled: usize,
    pub excluded: usize,
    pub kink_margin: f64,
    pub verdict: Verdict,
}

/// Signed residual in the "supersolution" orientation together with the
/// magnitude scale of its terms.
fn residual(b: &Barrier, s: &Sample, r: f64, pde: Pde, m: f64, big_t: Option<f64>) -> Result<(f64, f64)> {
    Ok(match pde {
        Pde::Fde => (s.dt - s.lap, s.dt.abs() + s.lap.abs()),
        Pde::Rescaled => {
            let t = big_t.ok_or_else(|| constraint("rescaled residual needs big_t"))?;
            let react = s.value / ((1.0 - m) * t);
            (s.dt - s.lap - react, s.dt.abs() + s.lap.abs() + react)
        }
        Pde::PsiEq | Pde::PhiEq => {
            let p = b.profile().ok_or_else(|| constraint("relative-error equations need a profile barrier"))?;
            let (v, vp) = p.eval(r);
            let kappa = p.c();
            let diff = v.powf(1.0 - 1.0 / m) * s.lap + 2.0 * vp * s.d1 / v.powf(1.0 / m);
            let (lhs, react) = if pde == Pde::PsiEq {
                let one = 1.0 - s.value;
                ((1.0 / m) * one.powf(1.0 / m - 1.0) * s.dt, kappa * (one - one.powf(1.0 / m)))
            } else {
                let one = 1.0 + s.value;
                ((1.0 / m) * one.powf(1.0 / m - 1.0) * s.dt, kappa * (one.powf(1.0 / m) - one))
            };
            (lhs - diff - react, lhs.abs() + diff.abs() + react.abs())
        }
    })
}

/// Samples the residual of `barrier` against `pde` on `region`. Upper
/// families PASS iff the residual is ≥ 0 everywhere sampled, lower families
/// iff ≤ 0; points within 2Δr of a positive-part front are excluded, as are
/// points outside the barrier's natural range (Ψ ∈ [0,1), Φ > −1).
pub fn verify_supersolution(
    barrier: &Barrier,
    upper: bool,
    pde: Pde,
    region: &Region,
    m: f64,
    dim: usize,
) -> Result<ResidualReport> {
    if !(region.r.0 > 0.0 && region.r.1 > region.r.0 && region.t.1 >= region.t.0 && region.nr > 0) {
        return Err(constraint(format!("bad region {:?}", region)));
    }
    if let Barrier::LowerPre { t_star, .. } = barrier {
        if region.t.0 < 0.5 * t_star - 1e-12 || region.t.1 > t_star + 1e-12 {
            return Err(constraint("LOWER_PRE lives on (t*/2, t*)"));
        }
    }
    let margin = 2.0 * region.dr();
    let sign = if upper { 1.0 } else { -1.0 };
    let nt = region.nt.max(1);
    // Per time row: (worst normalised, its raw residual, where, checked, skipped).
    type Row = (f64, f64, (f64, f64), usize, usize);
    let rows: Vec<Result<Row>> = (0..=nt)
        .into_par_iter()
        .map(|j| {
            let t = if region.nt == 0 { region.t.0 } else { region.t.0 + (region.t.1 - region.t.0) * j as f64 / nt as f64 };
            let mut best = (f64::INFINITY, f64::INFINITY, (f64::NAN, f64::NAN), 0usize, 0usize);
            for i in 0..=region.nr {
                let r = region.r.0 + region.dr() * i as f64;
                let s = barrier.sample(r, t, m, dim);
                if let Some((q, qr)) = s.kink {
                    if q.abs() < margin * qr.abs() {
                        best.4 += 1;
                        continue;
                    }
                }
                let in_range = match pde {
                    Pde::PsiEq => (0.0..1.0).contains(&s.value),
                    Pde::PhiEq => s.value > -1.0,
                    _ => true,
                };
                if !in_range {
                    best.4 += 1;
                    continue;
                }
                let (res, scale) = residual(barrier, &s, r, pde, m, region.big_t)?;
                if !res.is_finite() {
                    return Err(Error::NonFinite { context: format!("barrier residual at r={r}, t={t}") });
                }
                best.3 += 1;
                let signed = sign * res;
                let norm = if scale > 0.0 { signed / scale } else { 0.0 };
                if norm < best.0 {
                    best.0 = norm;
                    best.1 = signed;
                    best.2 = (r, t);
                }
            }
            Ok(best)
        })
        .collect();
    let mut out = (f64::INFINITY, f64::INFINITY, (f64::NAN, f64::NAN), 0usize, 0usize);
    for row in rows {
        let row = row?;
        if row.0 < out.0 {
            out.0 = row.0;
            out.1 = row.1;
            out.2 = row.2;
        }
        out.3 += row.3;
        out.4 += row.4;
    }
    if out.3 == 0 {
        return Err(Error::EmptyWindow);
    }
    Ok(ResidualReport {
        region: *region,
        min_normalized: out.0,
        min_residual: out.1,
        worst: out.2,
        sampled: out.3,
        excluded: out.4,
        kink_margin: margin,
        verdict: Verdict::from_bool(out.0 >= -NOISE),
    })
}

/// Region a family is meant to be verified on, for the given parameters:
/// r from ξ (or r̂) out to where the barrier is still representable.
pub fn default_region(spec: &BarrierSpec, m: f64, dim: usize, nr: usize, nt: usize) -> Result<Region> {
    let k = (dim - 1) as f64;
    let span = 30.0 / k;
    Ok(match spec.family {
        Family::UpperBasic => Region::new((0.1, 25.0 / k), (0.0, 1.0), nr, nt),
        Family::UpperSharp => {
            // Past ρ_c = (2/(N−1)) log(A l̃) the e^{−(N−1)r/2} term takes over
            // and the time derivative turns negative; sample well beyond it.
            let xi = spec.get("xi")?;
            let profile = unit_ground_state(spec.get("m_tilde")?, dim)?;
            let al = profile.sandwich_constant(profile.tail_radius()) * profile.tail_constant();
            let rho_c = 2.0 / k * al.max(1.0).ln();
            Region::new((xi, xi + rho_c + span), (0.0, spec.get("t_star")?), nr, nt)
        }
        Family::LowerPre => {
            let xi = spec.get("xi")?;
            let ts = spec.get("t_star")?;
            Region::new((xi, xi + span * m), (0.5 * ts, ts), nr, nt)
        }
        Family::LowerMain => {
            let xi = spec.get("xi")?;
            Region::new((xi, xi + span * m), (spec.get("t_eps")?, spec.get("t_star")?), nr, nt)
        }
        Family::PsiRelerr | Family::PhiRelerr => {
            let a = spec.get("a")?;
            let c = spec.get("c")?;
            let tau0 = spec.get_or("tau0", 0.0);
            // Ψ decreases at rate A; it has left [0,1) (or (−1,∞) for Φ
            // up to its r-dependence) once A(τ−τ0) > C + 1.
            let r_lo = spec.get_or("r_hat", 1.0);
            Region::new((r_lo, r_lo + 25.0 / k), (tau0, tau0 + (c + 1.0) / a), nr, nt)
        }
    })
}

/// Result of an upward ξ scan.
#[derive(Clone, Debug, Serialize)]
pub struct XiScan {
    pub xi: f64,
    pub report: ResidualReport,
    /// Measured sup of the time-derivative-to-diffusion ratio on the region
    /// at the returned ξ (the l / L functions of the construction).
    pub ratio_sup: f64,
    pub tried: usize,
}

/// Scans ξ upward over `scan` and returns the first value whose residual
/// check PASSes on the family's default region.
pub fn find_xi(spec: &BarrierSpec, m: f64, dim: usize, scan: &[f64], nr: usize, nt: usize) -> Result<XiScan> {
    if scan.windows(2).any(|w| w[1] <= w[0]) {
        return Err(constraint("ξ scan must be increasing"));
    }
    for (i, &xi) in scan.iter().enumerate() {
        let s = spec.clone().with("xi", xi);
        let b = Barrier::build(&s, dim, m)?;
        let region = default_region(&s, m, dim, nr, nt)?;
        let report = verify_supersolution(&b, spec.family.is_upper(), spec.family.default_pde(), &region, m, dim)?;
        if report.verdict.passed() {
            let ratio_sup = derivative_ratio_sup(&b, &region, m, dim);
            return Ok(XiScan { xi, report, ratio_sup, tried: i + 1 });
        }
    }
    Err(Error::ScanExhausted)
}

/// sup over the region of |∂_t B| / |Δ(B^m)| where the time derivative
/// opposes the required sign.
fn derivative_ratio_sup(b: &Barrier, region: &Region, m: f64, dim: usize) -> f64 {
    let mut sup: f64 = 0.0;
    for j in 0..=region.nt {
        let t = region.t.0 + (region.t.1 - region.t.0) * j as f64 / region.nt.max(1) as f64;
        for i in 0..=region.nr {
            let r = region.r.0 + region.dr() * i as f64;
            let s = b.sample(r, t, m, dim);
            if s.lap != 0.0 && s.dt != 0.0 {
                sup = sup.max((s.dt / s.lap).abs());
            }
        }
    }
    sup
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Above,
    Below,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub mode: Mode,
    /// Ordering on the parabolic boundary (first snapshot, inner radius).
    pub boundary: Verdict,
    pub interior: Verdict,
    /// Largest violation u − B (above) or B − u (below), relative to the scale.
    pub worst_violation: f64,
    pub worst_at: (f64, f64),
    pub checked: usize,
    pub verdict: Verdict,
}

/// Checks u ≤ B (Above) or u ≥ B (Below) on the snapshots of `traj` inside
/// `region`, with slack 1e−8 times the largest |u| there. The parabolic
/// boundary (first snapshot in the window and the inner radius) is judged
/// separately so a hypothesis failure is distinguishable from a comparison
/// failure.
pub fn verify_comparison(
    traj: &Trajectory,
    barrier: &dyn Fn(f64, f64) -> f64,
    mode: Mode,
    region: &Region,
) -> ComparisonReport {
    let nodes = traj.grid.nodes();
    let snaps: Vec<_> = traj.snapshots.iter().filter(|s| s.t >= region.t.0 && s.t <= region.t.1).collect();
    let idx: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i] >= region.r.0 && nodes[i] <= region.r.1).collect();
    let scale = snaps
        .iter()
        .flat_map(|s| idx.iter().map(move |&i| s.u.values()[i].abs()))
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let slack = 1e-8 * scale;
    let gap = |u: f64, b: f64| match mode {
        Mode::Above => u - b,
        Mode::Below => b - u,
    };
    let mut boundary_ok = true;
    let mut interior_ok = true;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_at = (f64::NAN, f64::NAN);
    let mut checked = 0;
    for (j, s) in snaps.iter().enumerate() {
        for (n, &i) in idx.iter().enumerate() {
            let r = nodes[i];
            let g = gap(s.u.values()[i], barrier(r, s.t));
            checked += 1;
            if g > worst {
                worst = g;
                worst_at = (r, s.t);
            }
            if g > slack {
                if j == 0 || n == 0 {
                    boundary_ok = false;
                } else {
                    interior_ok = false;
                }
            }
        }
    }
    ComparisonReport {
        mode,
        boundary: Verdict::from_bool(boundary_ok),
        interior: Verdict::from_bool(interior_ok),
        worst_violation: worst / scale,
        worst_at,
        checked,
        verdict: Verdict::from_bool(boundary_ok && interior_ok && checked > 0),
    }
}

/// K_ε = (N−1)[−(1+ε) + 2(1−ε)²].
pub fn k_eps(eps: f64, dim: usize) -> f64 {
    (dim - 1) as f64 * (-(1.0 + eps) + 2.0 * (1.0 - eps).powi(2))
}

/// Smallest r̄ ≥ 0 with B K_ε e^{(N−1)(1−ε)(1/m−1)r̄} ≥ the right-hand side
/// of the Ψ condition (`phi = false`) or the (1+C)-weighted Φ condition.
#[allow(clippy::too_many_arguments)]
pub fn admissible_rbar(a: f64, b: f64, c: f64, eps: f64, m: f64, dim: usize, big_t: f64, phi: bool) -> Result<f64> {
    let ke = k_eps(eps, dim);
    if !(ke > 0.0) {
        return Err(constraint(format!("K_ε = {ke} is not positive for ε = {eps}")));
    }
    let rhs = if phi {
        (1.0 + c).powf(1.0 / m - 1.0) * (a / m + 2.0 * (1.0 + c) / ((1.0 - m) * big_t))
    } else {
        a / m + 2.0 / ((1.0 - m) * big_t)
    };
    let rate = (dim - 1) as f64 * (1.0 - eps) * (1.0 / m - 1.0);
    Ok(((rhs / (b * ke)).ln() / rate).max(0.0))
}

/// Radius past which the estimates behind the relative-error barriers hold
/// for the measured profile: coth r ≤ 1+ε, V′ ≤ −(N−1)(1−ε)V, and
/// r²(V e^{(N−1)(1−ε)r})^{1/m−1} ≤ 1; never below 1.
pub fn relerr_rstar(profile: &StationaryProfile, eps: f64) -> f64 {
    let k = (profile.dim() - 1) as f64;
    let m = profile.m();
    let r0 = 0.5 * ((2.0 + eps) / eps).ln();
    let r_end = profile.tail_radius() + 20.0;
    let mut last_bad: f64 = 0.0;
    let n = 4000;
    for j in 0..=n {
        let r = r_end * j as f64 / n as f64;
        let (v, vp) = profile.eval(r);
        let slope_ok = vp <= -k * (1.0 - eps) * v;
        let decay_ok = r * r * (v * (k * (1.0 - eps) * r).exp()).powf(1.0 / m - 1.0) <= 1.0;
        if !(slope_ok && decay_ok) {
            last_bad = r + r_end / n as f64;
        }
    }
    r0.max(last_bad).max(1.0)
}

/// h′(τ)(x^α h^α + x^{α/2}(1−h)^α)/(x^{(α+1)/2} h + 1 − h) for α = 1/m − 1.
pub fn upper_time_ratio(x: f64, tau: f64, m: f64, profile: TimeProfile) -> f64 {
    let a = 1.0 / m - 1.0;
    let (h, hp) = time_profile(profile, m, tau);
    hp * (x.powf(a) * h.powf(a) + x.powf(0.5 * a) * (1.0 - h).powf(a)) / (x.powf(0.5 * (a + 1.0)) * h + 1.0 - h)
}

/// x^α σ^{−1}/(x^{(α+1)/2} σ^{−1/α} + 1) + 1.
pub fn ratio_rhs(x: f64, sigma: f64, alpha: f64) -> f64 {
    x.powf(alpha) / sigma / (x.powf(0.5 * (alpha + 1.0)) * sigma.powf(-1.0 / alpha) + 1.0) + 1.0
}

/// Maximum of `ratio_rhs` over σ ∈ (0, ∞): x^{α(1−α)/2} α^α (1−α)^{1−α} + 1.
pub fn ratio_max_closed_form(x: f64, alpha: f64) -> f64 {
    x.powf(0.5 * alpha * (1.0 - alpha)) * alpha.powf(alpha) * (1.0 - alpha).powf(1.0 - alpha) + 1.0
}

/// Convenience check: m ∈ (m_s, 1).
pub fn supercritical(m: f64, dim: usize) -> bool {
    m > critical_exponent(dim) && m < 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_profiles_hit_endpoints() {
        for tp in [TimeProfile::Linear, TimeProfile::HUpper] {
            assert_eq!(time_profile(tp, 0.7, 0.0).0, 0.0);
            assert!((time_profile(tp, 0.7, 1.0).0 - 1.0).abs() < 1e-15);
        }
        assert_eq!(time_profile(TimeProfile::HLower, 0.7, 0.0).0, 0.5);
        assert_eq!(time_profile(TimeProfile::HLower, 0.7, 1.0).0, 1.0);
        // h′ vanishes at the end for m > 1/2.
        assert!(time_profile(TimeProfile::HUpper, 0.7, 1.0).1.abs() < 1e-15);
        assert!(time_profile(TimeProfile::HLower, 0.7, 1.0).1.abs() < 1e-15);
    }

    #[test]
    fn k_eps_value() {
        assert!((k_eps(0.2, 3) - 0.16).abs() < 1e-14);
    }

    #[test]
    fn unknown_parameter_rejected() {
        let s = BarrierSpec::new(Family::UpperBasic, &[("c0", 1.0), ("xi", 2.0)]);
        assert!(Barrier::build(&s, 3, 0.5).is_err());
    }
}
