use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use hyperfast::config::{parse_config, Mode};
use hyperfast::run::run;

/// Radial fast diffusion on hyperbolic space.
#[derive(Parser)]
#[command(name = "hyperfast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ground state of −ΔV = cV^{1/m}.
    Stationary(Common),
    /// u_t = Δ(u^m) from a datum, with envelope diagnostics.
    Evolve(Common),
    /// The rescaled flow towards V^{1/m}.
    Rescaled(Common),
    /// Evolve and rescaled diagnostics together.
    Diagnose(Common),
    /// Residual checks of the explicit barriers.
    Barriers(Common),
    /// Repeat a mode over several m.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated exponents.
        #[arg(long = "sweep_m", value_delimiter = ',')]
        sweep_m: Vec<f64>,
        /// Mode run at each point.
        #[arg(long = "sweep_mode")]
        sweep_mode: Option<String>,
    },
    /// Spatial refinement study on the separable solution.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        levels: Option<usize>,
    },
}

/// Flags mirror the config keys; a flag overrides the same key in --config.
#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "N")]
    dim: Option<usize>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long = "T")]
    big_t: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long = "R")]
    radius: Option<f64>,
    #[arg(long)]
    nodes: Option<usize>,
    /// `separable` or `bump` (use --config for full datum objects).
    #[arg(long)]
    datum: Option<String>,
    #[arg(long = "t_end")]
    t_end: Option<f64>,
    #[arg(long = "tau_end")]
    tau_end: Option<f64>,
    #[arg(long)]
    snapshots: Option<usize>,
    #[arg(long = "output_dir")]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Include the inadmissible barrier probes.
    #[arg(long = "barrier_probes")]
    barrier_probes: bool,
    /// Run the rescaled flow with T as given instead of its bisected T.
    #[arg(long = "no_refine_t")]
    no_refine_t: bool,
}

impl Common {
    fn document(&self, mode: Mode) -> Result<Map<String, Value>, String> {
        let mut doc = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                match serde_json::from_str::<Value>(&text).map_err(|e| format!("{}: {e}", path.display()))? {
                    Value::Object(map) => map,
                    _ => return Err(format!("{}: expected a JSON object", path.display())),
                }
            }
            None => Map::new(),
        };
        doc.insert("mode".into(), serde_json::to_value(mode).unwrap());
        let mut set = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                doc.insert(key.into(), v);
            }
        };
        set("N", self.dim.map(|x| json!(x)));
        set("m", self.m.map(|x| json!(x)));
        set("T", self.big_t.map(|x| json!(x)));
        set("c", self.c.map(|x| json!(x)));
        set("datum", self.datum.as_ref().map(|x| json!(x)));
        set("t_end", self.t_end.map(|x| json!(x)));
        set("tau_end", self.tau_end.map(|x| json!(x)));
        set("snapshots", self.snapshots.map(|x| json!(x)));
        set("output_dir", self.output_dir.as_ref().map(|x| json!(x)));
        set("seed", self.seed.map(|x| json!(x)));
        set("barrier_probes", self.barrier_probes.then_some(json!(true)));
        set("refine_t", self.no_refine_t.then_some(json!(false)));
        if self.radius.is_some() || self.nodes.is_some() {
            let grid = doc.entry("grid").or_insert_with(|| json!({}));
            let Value::Object(g) = grid else { return Err("`grid` must be an object".into()) };
            if let Some(r) = self.radius {
                g.insert("R".into(), json!(r));
            }
            if let Some(n) = self.nodes {
                g.insert("nodes".into(), json!(n));
            }
        }
        Ok(doc)
    }
}

fn nested(doc: &mut Map<String, Value>, key: &str, field: &str, v: Value) -> Result<(), String> {
    let entry = doc.entry(key).or_insert_with(|| json!({}));
    let Value::Object(map) = entry else { return Err(format!("`{key}` must be an object")) };
    map.insert(field.into(), v);
    Ok(())
}

fn build_document(cmd: &Command) -> Result<Map<String, Value>, String> {
    match cmd {
        Command::Stationary(c) => c.document(Mode::Stationary),
        Command::Evolve(c) => c.document(Mode::Evolve),
        Command::Rescaled(c) => c.document(Mode::Rescaled),
        Command::Diagnose(c) => c.document(Mode::Diagnose),
        Command::Barriers(c) => c.document(Mode::Barriers),
        Command::Sweep { common, sweep_m, sweep_mode } => {
            let mut doc = common.document(Mode::Sweep)?;
            if !sweep_m.is_empty() {
                nested(&mut doc, "sweep", "m", json!(sweep_m))?;
                // the top-level m is unused by a sweep but still validated
                doc.entry("m").or_insert(json!(sweep_m[0]));
            }
            if let Some(mode) = sweep_mode {
                nested(&mut doc, "sweep", "mode", json!(mode))?;
            }
            Ok(doc)
        }
        Command::Convergence { common, levels } => {
            let mut doc = common.document(Mode::Convergence)?;
            if let Some(l) = levels {
                nested(&mut doc, "convergence", "levels", json!(l))?;
            }
            Ok(doc)
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("HYPERFAST_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("HYPERFAST_THREADS={v:?} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let cfg = match build_document(&cli.command)
        .and_then(|doc| parse_config(&Value::Object(doc).to_string()).map_err(|e| e.to_string()))
    {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(outcome) => {
            for c in &outcome.report.checks {
                println!("{:?} {}: {}", c.verdict, c.name, c.detail);
            }
            println!("artifacts in {}", cfg.output_dir.display());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
