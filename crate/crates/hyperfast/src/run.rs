//! Artifact-producing runs: one function per mode, all funnelled through
//! [`run`], which writes the CSVs, `report.json` and `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::barriers::{
    admissible_rbar, default_region, relerr_rstar, verify_supersolution, Barrier, BarrierSpec, Family, ResidualReport,
    Verdict,
};
use crate::config::{BarrierCase, Datum, Mode, RunConfig};
use crate::diagnostics::{
    default_window_alpha, derivative_bound_check, derivative_ratio_tables, harnack_envelope, max_relative_increase,
    relative_error, rescaled_harnack, series_rows, shape_error, tail_window, DerivativeBoundReport,
    DiagnosticsReport, Envelope, RescaledSandwich, SeriesRow, WindowReport,
};
use crate::error::{Error, Result};
use crate::evolution::{
    bisect_extinction_time, bump_datum, estimate_extinction_time, evolve, evolve_rescaled, separable_solution,
    BisectionOptions, EvolutionConfig, ExtinctionEstimate, RescaledBisection, RescaledSchedule, Trajectory,
};
use crate::geometry::{RadialField, RadialGrid};
use crate::io::{sha256_hex, write_csv};
use crate::stationary::{coupling_for_extinction_time, find_ground_state, profile_for_extinction_time, StationaryProfile};

/// A run failure, tagged with the stage that produced it.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

type RunResult<T> = std::result::Result<T, StageError>;

/// A named PASS/FAIL verdict with a one-line explanation.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), verdict: Verdict::from_bool(ok), detail: detail.into() }
    }
}

/// Headline constants of a run; absent where the mode does not measure them.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Measured {
    pub t_est: Option<f64>,
    pub l: Option<f64>,
    pub c_v: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub window_m: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub version: &'static str,
    pub wall_clock_seconds: f64,
    pub verdicts: Vec<Check>,
    pub measured: Measured,
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StationarySummary {
    pub c: f64,
    pub amplitude: f64,
    pub l: f64,
    pub c_v: f64,
    pub c_v_integral: f64,
    pub residual: f64,
    pub extinction_time: f64,
    pub reliable_radius: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BarrierOutcome {
    pub spec: BarrierSpec,
    pub expect: Verdict,
    pub verdict: Verdict,
    /// Present unless the parameters were rejected at construction.
    pub report: Option<ResidualReport>,
    pub rejected: Option<String>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConvergenceRow {
    pub nodes: usize,
    pub h: f64,
    pub shape_error: f64,
    pub sup_relerr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub m: f64,
    pub passed: bool,
    pub measured: Measured,
}

/// Everything `report.json` holds.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunReport {
    pub mode: Option<Mode>,
    pub stationary: Option<StationarySummary>,
    pub diagnostics: Option<DiagnosticsReport>,
    pub extinction_fit: Option<ExtinctionEstimate>,
    pub bisection: Option<RescaledBisection>,
    pub rescaled_sandwich: Option<RescaledSandwich>,
    pub derivative_bounds: Vec<DerivativeBoundReport>,
    pub window: Option<WindowReport>,
    pub residual_reports: Vec<BarrierOutcome>,
    pub convergence: Vec<ConvergenceRow>,
    pub sweep: Vec<SweepRow>,
    pub checks: Vec<Check>,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub manifest: RunManifest,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.report.checks.iter().all(|c| c.verdict.passed())
    }

    /// 0 iff every configured verdict passed.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

/// Files written so far, with their digests.
struct Artifacts {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Artifacts {
    fn new(dir: &Path) -> RunResult<Self> {
        fs::create_dir_all(dir).map_err(Error::from).stage("output")?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> RunResult<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(Error::from).stage("output")?;
        }
        fs::write(&path, bytes).map_err(Error::from).stage("output")?;
        self.files.push(FileEntry { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    fn csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<f64>]) -> RunResult<()> {
        let mut buf = Vec::new();
        write_csv(&mut buf, header, rows).map_err(Error::from).stage("output")?;
        self.write(rel, &buf)
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> RunResult<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Io(e.to_string()))
            .stage("output")?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }
}

/// Executes the configured mode and writes its artifacts into
/// `cfg.output_dir`.
pub fn run(cfg: &RunConfig) -> RunResult<RunOutcome> {
    cfg.validate().stage("config")?;
    let start = Instant::now();
    let mut art = Artifacts::new(&cfg.output_dir)?;
    let mut report = RunReport { mode: Some(cfg.mode), ..Default::default() };
    let mut measured = Measured::default();
    match cfg.mode {
        Mode::Stationary => stationary(cfg, &mut art, &mut report, &mut measured)?,
        Mode::Evolve => physical(cfg, &mut art, &mut report, &mut measured, "")?,
        Mode::Rescaled => rescaled(cfg, &mut art, &mut report, &mut measured, "")?,
        Mode::Diagnose => {
            physical(cfg, &mut art, &mut report, &mut measured, "")?;
            let physical_diag = report.diagnostics.take();
            // The rescaled flow bisects for its own T when none is given: the
            // fit from the physical run is not accurate enough to keep it
            // neutral over 10T.
            rescaled(cfg, &mut art, &mut report, &mut measured, "rescaled_")?;
            // Keep the physical series and envelope; add the rescaled tables.
            if let (Some(mut p), Some(r)) = (physical_diag, report.diagnostics.take()) {
                p.derivative_ratios = r.derivative_ratios;
                p.window_bound = r.window_bound;
                report.diagnostics = Some(p);
            }
        }
        Mode::Barriers => barriers(cfg, &mut report)?,
        Mode::Sweep => sweep(cfg, &mut art, &mut report)?,
        Mode::Convergence => convergence(cfg, &mut art, &mut report, &mut measured)?,
    }
    art.json("report.json", &report)?;
    let manifest = RunManifest {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION"),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        verdicts: report.checks.clone(),
        measured,
        files: art.files.clone(),
    };
    art.json("manifest.json", &manifest)?;
    Ok(RunOutcome { report, manifest })
}

fn grid_of(cfg: &RunConfig) -> RunResult<Arc<RadialGrid>> {
    Ok(Arc::new(cfg.grid.build(cfg.dim).stage("grid")?))
}

fn evolution_config(cfg: &RunConfig, grid: Arc<RadialGrid>) -> EvolutionConfig {
    let mut e = EvolutionConfig::new(cfg.m, grid);
    e.dt_policy.rel_change_target = cfg.tolerances.rel_change;
    e.dt_policy.dt_max = cfg.tolerances.dt_max;
    e.newton.tol = cfg.tolerances.newton;
    e
}

/// The initial datum on `grid`.
pub fn build_datum(cfg: &RunConfig, grid: &Arc<RadialGrid>) -> Result<RadialField> {
    let datum = cfg.resolved_datum().ok_or(Error::Config { field: "datum".into(), reason: "missing".into() })?;
    let need_t = |t: Option<f64>| t.ok_or(Error::Config { field: "T".into(), reason: "missing".into() });
    match datum {
        Datum::Separable { big_t } => Ok(profile_for_extinction_time(need_t(big_t)?, cfg.m, cfg.dim)?.separable_datum(grid)),
        Datum::ScaledSeparable { factor, big_t } => {
            let p = profile_for_extinction_time(need_t(big_t)?, cfg.m, cfg.dim)?;
            Ok(p.separable_datum(grid).map(|x| factor * x))
        }
        Datum::Bump { center, width, amplitude } => bump_datum(grid, center, width, amplitude),
        Datum::File { path } => read_datum_file(&path, grid),
    }
}

fn read_datum_file(path: &Path, grid: &Arc<RadialGrid>) -> Result<RadialField> {
    let bad = |reason: String| Error::Config { field: "datum.path".into(), reason };
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let get = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| bad(format!("row {} has fewer than 2 columns", pts.len() + 1)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(e.to_string()))
        };
        pts.push((get(0)?, get(1)?));
    }
    if pts.len() < 2 || pts.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(bad("need at least two rows with increasing r".into()));
    }
    if pts[0].0 > 0.0 || pts[pts.len() - 1].0 < grid.radius() {
        return Err(bad(format!("r must cover [0, {}]", grid.radius())));
    }
    let vals = grid
        .nodes()
        .iter()
        .map(|&r| {
            let j = pts.partition_point(|p| p.0 < r).clamp(1, pts.len() - 1);
            let (a, b) = (pts[j - 1], pts[j]);
            a.1 + (b.1 - a.1) * (r - a.0) / (b.0 - a.0)
        })
        .collect();
    RadialField::new(grid.clone(), vals)
}

fn stationary(cfg: &RunConfig, art: &mut Artifacts, report: &mut RunReport, measured: &mut Measured) -> RunResult<()> {
    let c = match (cfg.big_t, cfg.c) {
        (Some(t), _) => coupling_for_extinction_time(t, cfg.m),
        (None, Some(c)) => c,
        (None, None) => 1.0,
    };
    let p = find_ground_state(c, cfg.m, cfg.dim, cfg.tolerances.ground_state).stage("ground_state")?;
    let grid = grid_of(cfg)?;
    write_profile(art, &p, &grid)?;
    let residual = p.residual(&grid);
    let cv = p.flux_constant();
    let values: Vec<f64> = grid.nodes().iter().map(|&r| p.eval(r).0).collect();
    let monotone = values.windows(2).all(|w| w[1] < w[0]) && values.iter().all(|v| *v > 0.0);
    report.checks.push(Check::new(
        "ground_state_residual",
        residual <= cfg.tolerances.residual,
        format!("residual {residual:.3e} (tolerance {:.1e})", cfg.tolerances.residual),
    ));
    report.checks.push(Check::new("profile_monotone", monotone, "V positive and strictly decreasing on the grid"));
    measured.l = Some(p.tail_constant());
    measured.c_v = Some(cv.from_limit);
    measured.t_est = Some(p.extinction_time());
    report.stationary = Some(StationarySummary {
        c,
        amplitude: p.amplitude(),
        l: p.tail_constant(),
        c_v: cv.from_limit,
        c_v_integral: cv.from_integral,
        residual,
        extinction_time: p.extinction_time(),
        reliable_radius: p.reliable_radius(),
    });
    Ok(())
}

fn write_profile(art: &mut Artifacts, p: &StationaryProfile, grid: &RadialGrid) -> RunResult<()> {
    let rows: Vec<Vec<f64>> = grid
        .nodes()
        .iter()
        .map(|&r| {
            let (v, vp) = p.eval(r);
            vec![r, v, vp]
        })
        .collect();
    art.csv("profile.csv", &["r", "V", "Vprime"], &rows)
}

fn timeseries_rows(rows: &[SeriesRow]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|s| vec![s.t, s.tau, s.mass, s.energy, s.ratio, s.lyapunov, s.relerr_sup, s.c1_running, s.c2_running])
        .collect()
}

const TIMESERIES_HEADER: [&str; 9] =
    ["t", "tau", "mass", "energy", "ratio", "lyapunov", "relerr_sup", "c1_running", "c2_running"];

/// Writes snapshots/<prefix>snap_###.csv; `to_u_w` maps a snapshot time and
/// value to (u, w).
fn write_snapshots(
    art: &mut Artifacts,
    prefix: &str,
    traj: &Trajectory,
    profile: &StationaryProfile,
    to_u_w: &dyn Fn(f64, f64) -> (f64, f64),
) -> RunResult<()> {
    let m = traj.m;
    let nodes = traj.grid.nodes();
    let vs: Vec<f64> = nodes.iter().map(|&r| profile.eval(r).0).collect();
    for (i, s) in traj.snapshots.iter().enumerate() {
        let rows: Vec<Vec<f64>> = nodes
            .iter()
            .zip(s.u.values())
            .zip(&vs)
            .map(|((&r, &x), &v)| {
                let (u, w) = to_u_w(s.t, x);
                vec![r, u, w, w.max(0.0).powf(m) / v]
            })
            .collect();
        art.csv(&format!("snapshots/{prefix}snap_{i:04}.csv"), &["r", "u", "w", "wm_over_V"], &rows)?;
    }
    Ok(())
}

fn linspace_outputs(t_end: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|j| t_end * j as f64 / n as f64).collect()
}

/// Plain evolution with envelope diagnostics.
fn physical(
    cfg: &RunConfig,
    art: &mut Artifacts,
    report: &mut RunReport,
    measured: &mut Measured,
    prefix: &str,
) -> RunResult<()> {
    let grid = grid_of(cfg)?;
    let u0 = build_datum(cfg, &grid).stage("datum")?;
    let ecfg = evolution_config(cfg, grid.clone());
    let known_t = match cfg.resolved_datum() {
        Some(Datum::Separable { big_t }) => big_t,
        _ => cfg.big_t,
    };
    // Without a known T, a first pass to extinction fixes the time window.
    let big_t = match known_t {
        Some(t) => t,
        None => {
            let probe = evolve(&u0, cfg.t_end.unwrap_or(1e6), &[], &ecfg).stage("evolve")?;
            let est = estimate_extinction_time(&probe).stage("extinction_fit")?;
            report.extinction_fit = Some(est);
            est.t_est
        }
    };
    let t_end = cfg.t_end.unwrap_or(0.95 * big_t);
    let traj = evolve(&u0, t_end, &linspace_outputs(t_end, cfg.snapshots), &ecfg).stage("evolve")?;
    if known_t.is_some() {
        report.extinction_fit = estimate_extinction_time(&traj).ok();
    }
    let profile = profile_for_extinction_time(big_t, cfg.m, cfg.dim).stage("ground_state")?;
    if prefix.is_empty() {
        write_profile(art, &profile, &grid)?;
    }
    let rows = series_rows(&traj, Some(&profile));
    art.csv(&format!("{prefix}timeseries.csv"), &TIMESERIES_HEADER, &timeseries_rows(&rows))?;
    let m = cfg.m;
    write_snapshots(art, prefix, &traj, &profile, &|t, u| {
        let g = (1.0 - t / big_t).max(0.0).powf(1.0 / (1.0 - m));
        (u, if g > 0.0 { u / g } else { f64::NAN })
    })?;

    let envelope = harnack_envelope(&traj, big_t, 0.25 * big_t, 0.95 * big_t).ok();
    match envelope {
        Some(e) => {
            report.checks.push(Check::new(
                "envelope_ordered",
                e.c1 > 0.0 && e.c1 <= e.c2 && e.c2.is_finite(),
                format!("c1 = {:.6e}, c2 = {:.6e}", e.c1, e.c2),
            ));
            measured.c1 = Some(e.c1);
            measured.c2 = Some(e.c2);
        }
        None => report.checks.push(Check::new("envelope_ordered", false, "no snapshots in [T/4, 0.95T]")),
    }
    for k in 0..=2 {
        if let Ok(b) = derivative_bound_check(&traj, big_t, 0.25 * big_t, 0.95 * big_t, k, (0.5 * grid.radius(), 0.5 * big_t)) {
            report.derivative_bounds.push(b);
        }
    }
    if let Some(Datum::Separable { .. }) = cfg.resolved_datum() {
        let last = traj.last();
        let exact = separable_solution(&profile, last.t, &grid).stage("separable")?;
        let err = last
            .u
            .values()
            .iter()
            .zip(exact.values())
            .filter(|(_, e)| **e > 0.0)
            .fold(0.0f64, |a, (u, e)| a.max((u / e - 1.0).abs()));
        report.checks.push(Check::new(
            "separable_exactness",
            err <= cfg.tolerances.separable,
            format!("sup |u/u_exact − 1| = {err:.3e} at t = {:.4}", last.t),
        ));
    }
    if let Some(est) = report.extinction_fit {
        measured.t_est = Some(est.t_est);
    }
    report.diagnostics = Some(DiagnosticsReport {
        series: rows,
        envelope,
        derivative_ratios: Vec::new(),
        window_bound: None,
        extinction_time: measured.t_est.or(Some(big_t)),
    });
    Ok(())
}

/// Rescaled flow with relative-error, derivative-ratio and window
/// diagnostics. T comes from the config or a bisection.
fn rescaled(
    cfg: &RunConfig,
    art: &mut Artifacts,
    report: &mut RunReport,
    measured: &mut Measured,
    prefix: &str,
) -> RunResult<()> {
    let grid = grid_of(cfg)?;
    let u0 = build_datum(cfg, &grid).stage("datum")?;
    let ecfg = evolution_config(cfg, grid.clone());
    // The flow is run with its own neutral T: the continuum T (or an
    // E-extrapolation) is off by O(h²), and the T-mode amplifies that by
    // e^{τ/T}, which is e^{10} over the default window.
    let big_t = match (cfg.rescaled_t(), cfg.refine_t) {
        (Some(t), false) => t,
        (known, _) => {
            let guess = match known {
                Some(t) => t,
                None => {
                    let probe = evolve(&u0, 1e6, &[], &ecfg).stage("evolve")?;
                    let est = estimate_extinction_time(&probe).stage("extinction_fit")?;
                    report.extinction_fit = Some(est);
                    est.t_est
                }
            };
            let spread = if known.is_some() { 0.01 } else { 0.1 };
            let b = bisect_extinction_time(&u0, (1.0 - spread) * guess, (1.0 + spread) * guess, &ecfg, &BisectionOptions::default())
                .stage("bisection")?;
            let t = b.t_est;
            report.bisection = Some(b);
            t
        }
    };
    let profile = profile_for_extinction_time(big_t, cfg.m, cfg.dim).stage("ground_state")?;
    let tau_end = cfg.tau_end * big_t;
    let traj = evolve_rescaled(&u0, tau_end, big_t, &linspace_outputs(tau_end, cfg.snapshots), &ecfg, &RescaledSchedule::default())
        .stage("rescaled")?;
    if prefix.is_empty() {
        write_profile(art, &profile, &grid)?;
    }
    let rows = series_rows(&traj, Some(&profile));
    art.csv(&format!("{prefix}timeseries.csv"), &TIMESERIES_HEADER, &timeseries_rows(&rows))?;
    let m = cfg.m;
    write_snapshots(art, prefix, &traj, &profile, &|tau, w| (w * (-tau / ((1.0 - m) * big_t)).exp(), w))?;

    let last = traj.last();
    let final_err = relative_error(&last.u, &profile).sup;
    report.checks.push(Check::new(
        "relerr_final",
        final_err < cfg.tolerances.relerr_final,
        format!("relerr_sup = {final_err:.3e} at τ = {:.4}", last.t),
    ));
    let lyap: Vec<f64> = traj.series.iter().map(|s| s.lyapunov).collect();
    let increase = max_relative_increase(&lyap);
    report.checks.push(Check::new(
        "lyapunov_nonincreasing",
        increase <= 1e-3,
        format!("largest relative increase {increase:.3e}"),
    ));
    let ratios = derivative_ratio_tables(&last.u, &profile, 2, tail_window(&grid)).unwrap_or_default();
    let r0 = (2.0 / 3.0 * grid.radius()).floor();
    let window = traj
        .snapshots
        .get(traj.snapshots.len() / 2)
        .map(|s| s.t)
        .and_then(|tau0| {
            let alpha = default_window_alpha(r0, cfg.dim).ok()?;
            crate::diagnostics::local_window(&traj, r0, tau0, alpha, 8).ok()
        });
    if let Some(w) = &window {
        measured.window_m = Some(w.sup_w);
    }
    report.rescaled_sandwich = rescaled_harnack(&traj, &profile).ok();
    measured.t_est = measured.t_est.or(Some(big_t));
    report.diagnostics = Some(DiagnosticsReport {
        series: rows,
        envelope: None::<Envelope>,
        derivative_ratios: ratios,
        window_bound: window.as_ref().map(|w| w.sup_w),
        extinction_time: Some(big_t),
    });
    report.window = window;
    Ok(())
}

/// Admissible instances of every family at (m, N) and, with `probes`, one
/// inadmissible probe per family that must FAIL. The probes violate the
/// sufficient conditions by a wide margin at 0.45 ≤ m ≤ 0.7; elsewhere a
/// probe may still happen to satisfy the inequality.
pub fn default_barrier_cases(m: f64, dim: usize, big_t: f64, probes: bool) -> Result<Vec<BarrierCase>> {
    let k = (dim - 1) as f64;
    let case = |spec: BarrierSpec, expect: Verdict| BarrierCase { spec, expect, nr: 800, nt: 200 };
    let m_tilde = if 2.0 * m / (1.0 + m) < 0.78 { 0.8 } else { 0.9 };
    // μ0^{1−m} ≈ 0.03 keeps the lower barriers' time derivatives well
    // inside the diffusion margin.
    let mu0 = 0.03f64.powf(1.0 / (1.0 - m));
    // α − β may not exceed s = (N−1)(1−m)/m; keep both half a unit from
    // N−1 where s allows.
    let s_gap = k * (1.0 - m) / m;
    let beta = k - (0.25 * s_gap).min(0.5);
    let alpha = (k + 0.5).min(beta + s_gap);
    let profile = profile_for_extinction_time(big_t, m, dim)?;
    let eps = 0.2;
    let rstar = relerr_rstar(&profile, eps);
    // C = 1 − c0/2 and C = c1 − 1/2 for a sandwich 1/2 ≤ w^m/V ≤ 3/2.
    let (c_psi, c_phi) = (0.75, 1.0);
    let r_psi = admissible_rbar(1.0, 1.0, c_psi, eps, m, dim, big_t, false)?.max(rstar);
    let r_phi = admissible_rbar(1.0, 1.0, c_phi, eps, m, dim, big_t, true)?.max(rstar);
    let linear = |fam: Family, c: f64, r_hat: f64| {
        BarrierSpec::new(fam, &[("a", 1.0), ("b", 1.0), ("c", c), ("eps", eps), ("big_t", big_t), ("r_hat", r_hat)])
    };
    let sharp = |c0: f64, xi: f64, t_star: f64| {
        BarrierSpec::new(Family::UpperSharp, &[("c0", c0), ("xi", xi), ("m_tilde", m_tilde), ("t_star", t_star)])
    };
    let main = |mu0: f64| {
        BarrierSpec::new(
            Family::LowerMain,
            &[("mu0", mu0), ("xi", 3.0), ("alpha", alpha), ("beta", beta), ("t_eps", 0.1), ("t_star", 1.0)],
        )
    };
    let pre = |mu0: f64| BarrierSpec::new(Family::LowerPre, &[("mu0", mu0), ("xi", 2.0), ("alpha", k + 0.5), ("t_star", 1.0)]);
    let cases = vec![
        case(BarrierSpec::new(Family::UpperBasic, &[("c0", 1.0)]), Verdict::Pass),
        // Decay 3(N−1)/m: e^{−3(N−1)r/2} in B^m is subharmonic.
        case(BarrierSpec::new(Family::UpperBasic, &[("c0", 1.0), ("decay", 3.0 * k / m)]), Verdict::Fail),
        case(sharp(10.0, 5.0, 1.0), Verdict::Pass),
        case(sharp(1e8, 0.5, 1e-2), Verdict::Fail),
        case(pre(mu0), Verdict::Pass),
        case(pre(100.0 * mu0.max(1e-3)), Verdict::Fail),
        case(main(mu0), Verdict::Pass),
        case(main(0.1f64.max(100.0 * mu0)), Verdict::Fail),
        case(linear(Family::PsiRelerr, c_psi, r_psi), Verdict::Pass),
        case(linear(Family::PsiRelerr, c_psi, 1.0), Verdict::Fail),
        case(linear(Family::PhiRelerr, c_phi, r_phi), Verdict::Pass),
        case(linear(Family::PhiRelerr, c_phi, 1.0), Verdict::Fail),
    ];
    Ok(cases.into_iter().filter(|c| probes || c.expect == Verdict::Pass).collect())
}

/// Builds and checks one case; constructor rejections count as FAIL.
pub fn check_barrier(case: &BarrierCase, m: f64, dim: usize) -> BarrierOutcome {
    let built = Barrier::build(&case.spec, dim, m).and_then(|b| {
        let region = default_region(&case.spec, m, dim, case.nr, case.nt)?;
        verify_supersolution(&b, case.spec.family.is_upper(), case.spec.family.default_pde(), &region, m, dim)
    });
    match built {
        Ok(report) => BarrierOutcome {
            spec: case.spec.clone(),
            expect: case.expect,
            verdict: report.verdict,
            report: Some(report),
            rejected: None,
        },
        Err(e) => BarrierOutcome {
            spec: case.spec.clone(),
            expect: case.expect,
            verdict: Verdict::Fail,
            report: None,
            rejected: Some(e.to_string()),
        },
    }
}

fn barriers(cfg: &RunConfig, report: &mut RunReport) -> RunResult<()> {
    let cases = if cfg.barriers.is_empty() {
        default_barrier_cases(cfg.m, cfg.dim, cfg.big_t.unwrap_or(2.0), cfg.barrier_probes).stage("barriers")?
    } else {
        cfg.barriers.clone()
    };
    for (i, case) in cases.iter().enumerate() {
        let out = check_barrier(case, cfg.m, cfg.dim);
        let detail = match (&out.report, &out.rejected) {
            (Some(r), _) => format!("min normalised residual {:.3e} at {:?}", r.min_normalized, r.worst),
            (None, Some(e)) => format!("rejected: {e}"),
            _ => String::new(),
        };
        report.checks.push(Check::new(
            format!("barrier_{i:02}_{:?}_expect_{:?}", case.spec.family, case.expect),
            out.verdict == case.expect,
            detail,
        ));
        report.residual_reports.push(out);
    }
    Ok(())
}

fn sweep(cfg: &RunConfig, art: &mut Artifacts, report: &mut RunReport) -> RunResult<()> {
    let spec = cfg.sweep.clone().ok_or(Error::Config { field: "sweep".into(), reason: "missing".into() }).stage("config")?;
    let points: Vec<RunResult<(f64, RunOutcome)>> = spec
        .m
        .par_iter()
        .map(|&m| {
            let mut sub = cfg.clone();
            sub.mode = spec.mode;
            sub.m = m;
            sub.sweep = None;
            sub.output_dir = cfg.output_dir.join(format!("m_{m}"));
            run(&sub).map(|o| (m, o))
        })
        .collect();
    let mut rows = Vec::new();
    for p in points {
        let (m, o) = p?;
        let bytes = fs::read(cfg.output_dir.join(format!("m_{m}/manifest.json"))).map_err(Error::from).stage("output")?;
        art.files.push(FileEntry { path: format!("m_{m}/manifest.json"), sha256: sha256_hex(&bytes), bytes: bytes.len() });
        report.checks.push(Check::new(
            format!("sweep_m_{m}"),
            o.passed(),
            format!("{} of {} checks passed", o.report.checks.iter().filter(|c| c.verdict.passed()).count(), o.report.checks.len()),
        ));
        rows.push(SweepRow { m, passed: o.passed(), measured: o.manifest.measured });
    }
    let nan = |x: Option<f64>| x.unwrap_or(f64::NAN);
    let table: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let s = &r.measured;
            vec![r.m, if r.passed { 1.0 } else { 0.0 }, nan(s.t_est), nan(s.l), nan(s.c_v), nan(s.c1), nan(s.c2), nan(s.window_m)]
        })
        .collect();
    art.csv("summary.csv", &["m", "passed", "t_est", "l", "C_V", "c1", "c2", "M"], &table)?;
    report.sweep = rows;
    Ok(())
}

/// Separable-datum refinement study: the amplitude-free shape error at
/// t = t_fraction·T should fall ≈ 4× per halving of Δr.
fn convergence(cfg: &RunConfig, art: &mut Artifacts, report: &mut RunReport, measured: &mut Measured) -> RunResult<()> {
    let big_t = cfg.rescaled_t().unwrap_or(2.0);
    let spec = cfg.convergence.clone().unwrap_or_default();
    let t_check = spec.t_fraction * big_t;
    let profile = profile_for_extinction_time(big_t, cfg.m, cfg.dim).stage("ground_state")?;
    let levels: Vec<usize> = (0..spec.levels).rev().map(|j| cfg.grid.nodes >> j).collect();
    let rows: Vec<RunResult<ConvergenceRow>> = levels
        .par_iter()
        .map(|&nodes| {
            let grid = Arc::new(cfg.grid.with_nodes(nodes).build(cfg.dim).stage("grid")?);
            let ecfg = evolution_config(cfg, grid.clone());
            let u0 = profile.separable_datum(&grid);
            let traj = evolve(&u0, t_check, &[t_check], &ecfg).stage("evolve")?;
            let exact = separable_solution(&profile, traj.last().t, &grid).stage("separable")?;
            let sup = traj
                .last()
                .u
                .values()
                .iter()
                .zip(exact.values())
                .filter(|(_, e)| **e > 0.0)
                .fold(0.0f64, |a, (u, e)| a.max((u / e - 1.0).abs()));
            Ok(ConvergenceRow { nodes, h: grid.max_spacing(), shape_error: shape_error(&traj.last().u, &exact), sup_relerr: sup })
        })
        .collect();
    let rows: Vec<ConvergenceRow> = rows.into_iter().collect::<RunResult<_>>()?;
    art.csv(
        "convergence.csv",
        &["nodes", "h", "shape_error", "sup_relerr"],
        &rows.iter().map(|r| vec![r.nodes as f64, r.h, r.shape_error, r.sup_relerr]).collect::<Vec<_>>(),
    )?;
    for w in rows.windows(2) {
        let ratio = w[0].shape_error / w[1].shape_error;
        report.checks.push(Check::new(
            format!("spatial_order_{}_{}", w[0].nodes, w[1].nodes),
            (ratio - 4.0).abs() <= 0.3 * 4.0,
            format!("shape error ratio {ratio:.3} (expected 4 ± 30%)"),
        ));
    }
    measured.t_est = Some(big_t);
    report.convergence = rows;
    Ok(())
}
