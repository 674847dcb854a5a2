//! Run configuration: a JSON document, validated up front.
//!
//! Unknown keys are rejected everywhere. Flags given on the command line are
//! merged into the same document before parsing, so there is one validation
//! path for both.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::barriers::{BarrierSpec, Verdict};
use crate::error::{Error, Result};
use crate::geometry::{RadialGrid, Stretching};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Stationary,
    Evolve,
    Rescaled,
    Diagnose,
    Barriers,
    Sweep,
    Convergence,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Stationary => "stationary",
            Mode::Evolve => "evolve",
            Mode::Rescaled => "rescaled",
            Mode::Diagnose => "diagnose",
            Mode::Barriers => "barriers",
            Mode::Sweep => "sweep",
            Mode::Convergence => "convergence",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "R", default = "default_radius")]
    pub radius: f64,
    /// Number of cells; the grid has `nodes + 1` points including r = 0.
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_stretching")]
    pub stretching: Stretching,
}

fn default_radius() -> f64 {
    15.0
}
fn default_nodes() -> usize {
    3000
}
fn default_stretching() -> Stretching {
    Stretching::Uniform
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { radius: default_radius(), nodes: default_nodes(), stretching: default_stretching() }
    }
}

impl GridSpec {
    pub fn build(&self, dim: usize) -> Result<RadialGrid> {
        match self.stretching {
            Stretching::Uniform => RadialGrid::uniform(dim, self.radius, self.nodes),
            Stretching::Geometric { ratio } => RadialGrid::geometric(dim, self.radius, self.nodes, ratio),
        }
    }

    pub fn with_nodes(&self, nodes: usize) -> Self {
        Self { nodes, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Datum {
    /// V^{1/m} for the profile with extinction time T.
    Separable {
        #[serde(rename = "T", default)]
        big_t: Option<f64>,
    },
    /// factor · V^{1/m}.
    ScaledSeparable {
        factor: f64,
        #[serde(rename = "T", default)]
        big_t: Option<f64>,
    },
    Bump { center: f64, width: f64, amplitude: f64 },
    /// Two-column CSV (r, u) with a header row, linearly interpolated.
    File { path: PathBuf },
}

/// A datum is either a bare name (`"separable"`, `"bump"`) taking its
/// parameters from defaults and the top-level `T`, or a full object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatumSpec {
    Name(DatumName),
    Full(Datum),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatumName {
    Separable,
    Bump,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative bracket width of the shooting bisection.
    pub ground_state: f64,
    /// Largest accepted residual of the computed ground state.
    pub residual: f64,
    /// Per-step relative change of ‖u‖_{m+1} (time-step control).
    pub rel_change: f64,
    pub dt_max: f64,
    pub newton: f64,
    /// Sup-relative error allowed against the exact separable solution.
    pub separable: f64,
    /// Final relative error the rescaled flow must reach.
    pub relerr_final: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ground_state: 1e-14,
            residual: 1e-6,
            rel_change: 2.5e-4,
            dt_max: 0.05,
            newton: 1e-11,
            separable: 0.01,
            relerr_final: 0.05,
        }
    }
}

/// One entry of a barrier check list.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierCase {
    pub spec: BarrierSpec,
    /// The verdict this case is expected to produce (inadmissible probes
    /// expect FAIL).
    #[serde(default = "expect_pass")]
    pub expect: Verdict,
    #[serde(default = "default_nr")]
    pub nr: usize,
    #[serde(default = "default_nt")]
    pub nt: usize,
}

fn expect_pass() -> Verdict {
    Verdict::Pass
}
fn default_nr() -> usize {
    800
}
fn default_nt() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub m: Vec<f64>,
    /// Mode run at every point (not `sweep` or `convergence`).
    #[serde(default = "sweep_base")]
    pub mode: Mode,
}

fn sweep_base() -> Mode {
    Mode::Stationary
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSpec {
    /// Grids with nodes/2^{levels−1}, …, nodes cells.
    pub levels: usize,
    /// Comparison time as a fraction of T.
    pub t_fraction: f64,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self { levels: 3, t_fraction: 0.25 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(rename = "N")]
    pub dim: usize,
    pub m: f64,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub datum: Option<DatumSpec>,
    /// Extinction time: fixes the separable datum and the rescaled flow.
    #[serde(rename = "T", default)]
    pub big_t: Option<f64>,
    /// Coupling c of −ΔV = cV^{1/m} in stationary mode (ignored if T is set).
    #[serde(default)]
    pub c: Option<f64>,
    /// End of the physical run (default 0.95T, or extinction if T unknown).
    #[serde(default)]
    pub t_end: Option<f64>,
    /// Rescaled runs bisect for the discrete flow's own T (bracketed around
    /// the given T if any); false runs the flow with T as given.
    #[serde(default = "yes")]
    pub refine_t: bool,
    /// End of the rescaled run in units of T.
    #[serde(default = "default_tau_end")]
    pub tau_end: f64,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Recorded in the manifest. Every current mode samples on fixed
    /// lattices, so no stage draws from it yet.
    #[serde(default)]
    pub seed: u64,
    /// Barrier cases; empty means the built-in admissible set.
    #[serde(default)]
    pub barriers: Vec<BarrierCase>,
    /// Add the built-in inadmissible probes (expected to FAIL).
    #[serde(default)]
    pub barrier_probes: bool,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub convergence: Option<ConvergenceSpec>,
}

fn yes() -> bool {
    true
}
fn default_tau_end() -> f64 {
    10.0
}
fn default_snapshots() -> usize {
    10
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn cfg_err(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config { field: field.into(), reason: reason.into() }
}

/// Parses and validates a JSON configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text)
        .map_err(|e| cfg_err(format!("line {}, column {}", e.line(), e.column()), e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// A config with every optional field at its default.
    pub fn new(mode: Mode, dim: usize, m: f64) -> Self {
        Self {
            mode,
            dim,
            m,
            grid: GridSpec::default(),
            datum: None,
            big_t: None,
            c: None,
            t_end: None,
            refine_t: true,
            tau_end: default_tau_end(),
            snapshots: default_snapshots(),
            tolerances: Tolerances::default(),
            output_dir: default_output(),
            seed: 0,
            barriers: Vec::new(),
            barrier_probes: false,
            sweep: None,
            convergence: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(cfg_err("N", format!("need N ≥ 2, got {}", self.dim)));
        }
        if !(self.m > 0.0 && self.m < 1.0) {
            return Err(cfg_err("m", format!("need 0 < m < 1, got {}", self.m)));
        }
        if !(self.grid.radius > 0.0 && self.grid.radius.is_finite()) {
            return Err(cfg_err("grid.R", "must be positive"));
        }
        if self.grid.nodes < 8 {
            return Err(cfg_err("grid.nodes", "need at least 8 cells"));
        }
        if let Stretching::Geometric { ratio } = self.grid.stretching {
            if !(ratio > 0.0) {
                return Err(cfg_err("grid.stretching.ratio", "must be positive"));
            }
        }
        for (name, v) in [("T", self.big_t), ("c", self.c), ("t_end", self.t_end)] {
            if matches!(v, Some(x) if !(x > 0.0 && x.is_finite())) {
                return Err(cfg_err(name, "must be positive and finite"));
            }
        }
        if !(self.tau_end > 0.0) {
            return Err(cfg_err("tau_end", "must be positive"));
        }
        if self.snapshots == 0 {
            return Err(cfg_err("snapshots", "need at least one snapshot"));
        }
        let tol = &self.tolerances;
        for (name, v) in [
            ("tolerances.ground_state", tol.ground_state),
            ("tolerances.residual", tol.residual),
            ("tolerances.rel_change", tol.rel_change),
            ("tolerances.dt_max", tol.dt_max),
            ("tolerances.newton", tol.newton),
            ("tolerances.separable", tol.separable),
            ("tolerances.relerr_final", tol.relerr_final),
        ] {
            if !(v > 0.0) {
                return Err(cfg_err(name, "must be positive"));
            }
        }
        if let Some(d) = &self.datum {
            self.check_datum(d)?;
        }
        match self.mode {
            Mode::Evolve | Mode::Rescaled | Mode::Diagnose if self.datum.is_none() => {
                Err(cfg_err("datum", format!("required in {} mode", self.mode.name())))
            }
            Mode::Sweep => {
                let s = self.sweep.as_ref().ok_or_else(|| cfg_err("sweep", "required in sweep mode"))?;
                if s.m.is_empty() {
                    return Err(cfg_err("sweep.m", "empty sweep"));
                }
                if let Some(bad) = s.m.iter().find(|m| !(**m > 0.0 && **m < 1.0)) {
                    return Err(cfg_err("sweep.m", format!("need 0 < m < 1, got {bad}")));
                }
                if matches!(s.mode, Mode::Sweep | Mode::Convergence) {
                    return Err(cfg_err("sweep.mode", "cannot nest sweep or convergence"));
                }
                if matches!(s.mode, Mode::Evolve | Mode::Rescaled | Mode::Diagnose) && self.datum.is_none() {
                    return Err(cfg_err("datum", format!("required by sweep.mode = {}", s.mode.name())));
                }
                Ok(())
            }
            Mode::Convergence => {
                if self.datum.is_some() && !self.datum_is_separable() {
                    return Err(cfg_err("datum", "convergence mode compares against the separable solution"));
                }
                let c = self.convergence.clone().unwrap_or_default();
                if c.levels < 2 {
                    return Err(cfg_err("convergence.levels", "need at least 2 levels"));
                }
                if !(c.t_fraction > 0.0 && c.t_fraction < 1.0) {
                    return Err(cfg_err("convergence.t_fraction", "must lie in (0, 1)"));
                }
                if self.grid.nodes >> (c.levels - 1) < 8 {
                    return Err(cfg_err("convergence.levels", "coarsest grid would have fewer than 8 cells"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn check_datum(&self, d: &DatumSpec) -> Result<()> {
        match d.resolve(self.big_t) {
            Datum::Separable { big_t } | Datum::ScaledSeparable { big_t, .. } if big_t.is_none() => {
                Err(cfg_err("T", "a separable datum needs T (top level or inside the datum)"))
            }
            Datum::ScaledSeparable { factor, .. } if !(factor > 0.0) => {
                Err(cfg_err("datum.factor", "must be positive"))
            }
            Datum::Bump { center, width, amplitude } if !(center >= 0.0 && width > 0.0 && amplitude > 0.0) => {
                Err(cfg_err("datum", "bump needs center ≥ 0, width > 0, amplitude > 0"))
            }
            _ => Ok(()),
        }
    }

    /// The datum with names expanded and T filled from the top level.
    pub fn resolved_datum(&self) -> Option<Datum> {
        self.datum.as_ref().map(|d| d.resolve(self.big_t))
    }

    fn datum_is_separable(&self) -> bool {
        matches!(self.resolved_datum(), Some(Datum::Separable { .. }))
    }

    /// T of the rescaled flow when it is known without a search: the
    /// configured T, else the T of an (unscaled) separable datum.
    pub fn rescaled_t(&self) -> Option<f64> {
        match (self.big_t, self.resolved_datum()) {
            (Some(t), _) => Some(t),
            (None, Some(Datum::Separable { big_t })) => big_t,
            _ => None,
        }
    }
}

impl DatumSpec {
    pub fn resolve(&self, big_t: Option<f64>) -> Datum {
        match self {
            DatumSpec::Name(DatumName::Separable) => Datum::Separable { big_t },
            DatumSpec::Name(DatumName::Bump) => Datum::Bump { center: 1.0, width: 1.0, amplitude: 1.0 },
            DatumSpec::Full(Datum::Separable { big_t: own }) => Datum::Separable { big_t: own.or(big_t) },
            DatumSpec::Full(Datum::ScaledSeparable { factor, big_t: own }) => {
                Datum::ScaledSeparable { factor: *factor, big_t: own.or(big_t) }
            }
            DatumSpec::Full(d) => d.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_stationary_config_gets_defaults() {
        let cfg = parse_config(r#"{"mode": "stationary", "N": 3, "m": 0.5}"#).unwrap();
        assert_eq!(cfg.grid, GridSpec::default());
        assert_eq!(cfg.tolerances, Tolerances::default());
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn out_of_range_m_names_the_field() {
        let err = parse_config(r#"{"mode": "stationary", "N": 3, "m": 1.2}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "m"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config(r#"{"mode": "stationary", "N": 3, "m": 0.5, "colour": 1}"#).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        let err = parse_config(r#"{"mode": "stationary", "N": 3, "m": 0.5, "grid": {"R": 5, "cells": 9}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("cells"), "{err}");
    }

    #[test]
    fn missing_required_fields() {
        assert!(parse_config(r#"{"mode": "stationary", "m": 0.5}"#).is_err());
        let err = parse_config(r#"{"mode": "evolve", "N": 3, "m": 0.5}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "datum"), "{err}");
        let err = parse_config(r#"{"mode": "evolve", "N": 3, "m": 0.5, "datum": "separable"}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "T"), "{err}");
    }

    #[test]
    fn datum_forms() {
        let cfg = parse_config(r#"{"mode": "evolve", "datum": "separable", "T": 2, "N": 3, "m": 0.5}"#).unwrap();
        assert_eq!(cfg.resolved_datum(), Some(Datum::Separable { big_t: Some(2.0) }));
        assert_eq!(cfg.rescaled_t(), Some(2.0));
        let cfg = parse_config(
            r#"{"mode": "evolve", "N": 3, "m": 0.5,
                "datum": {"kind": "bump", "center": 1, "width": 0.5, "amplitude": 2}}"#,
        )
        .unwrap();
        assert_eq!(cfg.resolved_datum(), Some(Datum::Bump { center: 1.0, width: 0.5, amplitude: 2.0 }));
        assert_eq!(cfg.rescaled_t(), None);
    }

    #[test]
    fn errors_carry_a_location() {
        let err = parse_config("{\n  \"mode\": \"stationary\",\n  \"N\": \"three\"\n}").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field.starts_with("line 3")), "{err}");
    }
}
