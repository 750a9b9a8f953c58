//! Batch experiment runner: loads a JSON run configuration, generates the
//! city, plans every requested variant (concurrently, capped by the
//! `PLANNER_THREADS` environment variable), and writes trajectories, traces,
//! a metrics report, and optional SVG renders into an output directory.

use serde::{Deserialize, Serialize};
use skysweep::city::{generate_city, CityParams};
use skysweep::metrics::{report, FovParams, MetricsReport};
use skysweep::planner::{plan, PlanError, PlanResult, PlanStatus, PlannerSettings, Variant};
use skysweep::scenario::{Scenario, ScenarioParams, Trajectories};
use skysweep::solver::SolverSettings;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub mod svg;

/// Exit codes for the documented failure classes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PLANNING: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("planning failed for variant {variant}: {source}")]
    Planning {
        variant: Variant,
        #[source]
        source: PlanError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Planning { .. } => EXIT_PLANNING,
            RunError::Io { .. } => EXIT_IO,
        }
    }
}

/// One experiment: a city, a fleet scenario on it, solver and planner
/// settings, and the variants to compare. Unknown JSON fields are rejected
/// so config typos surface instead of silently using defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub city: CityParams,
    pub scenario: ScenarioParams,
    pub planner: PlannerSettings,
    pub solver: SolverSettings,
    pub fov: FovParams,
    pub variants: Vec<Variant>,
    pub output_dir: PathBuf,
    pub emit_svg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            city: CityParams::default(),
            scenario: ScenarioParams::default(),
            planner: PlannerSettings::default(),
            solver: SolverSettings::default(),
            fov: FovParams::default(),
            variants: Variant::ALL.to_vec(),
            output_dir: PathBuf::from("out"),
            emit_svg: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let cfg = |e: String| RunError::Config(e);
        self.city.validate().map_err(|e| cfg(e.to_string()))?;
        self.scenario.validate().map_err(|e| cfg(e.to_string()))?;
        self.planner.validate().map_err(|e| cfg(e.to_string()))?;
        self.solver.validate().map_err(|e| cfg(e.to_string()))?;
        self.fov.validate().map_err(|e| cfg(e.to_string()))?;
        if self.variants.is_empty() {
            return Err(cfg("variants must be non-empty".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(cfg("output_dir must be non-empty".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

/// What a completed run produced, for callers that embed the runner.
#[derive(Debug)]
pub struct RunSummary {
    pub results: Vec<PlanResult>,
    pub metrics: MetricsReport,
    pub all_converged: bool,
}

/// Executes the configured variants and writes every artifact. Returns the
/// in-memory results; `all_converged` decides the process exit status.
pub fn run(config: &RunConfig) -> Result<RunSummary, RunError> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;

    let city = generate_city(&config.city).map_err(|e| RunError::Config(e.to_string()))?;
    let scenario = Scenario::new(city, config.scenario.clone())
        .map_err(|e| RunError::Config(e.to_string()))?;
    write_text(
        &out.join("city.json"),
        &format!("{:#}\n", scenario.city.to_json()),
    )?;

    let outcomes = plan_variants(&scenario, config);

    // Flush artifacts for every variant that finished before reporting any
    // failure, then mark the run so batch drivers notice.
    let mut results = Vec::new();
    let mut failure: Option<RunError> = None;
    for (variant, outcome) in outcomes {
        match outcome {
            Ok(result) => {
                write_variant_files(out, &result)?;
                if config.emit_svg {
                    let doc = svg::render_svg(&scenario.city, &result.trajectories, &config.fov);
                    write_text(&out.join(format!("scene_{variant}.svg")), &doc)?;
                }
                results.push(result);
            }
            Err(source) if failure.is_none() => {
                failure = Some(RunError::Planning { variant, source });
            }
            Err(_) => {}
        }
    }
    if let Some(err) = failure {
        write_text(&out.join("FAILED"), &format!("{err}\n"))?;
        return Err(err);
    }

    let metrics =
        report(&results, &scenario, &config.fov).map_err(|e| RunError::Config(e.to_string()))?;
    let json =
        serde_json::to_string_pretty(&metrics).map_err(|e| RunError::Config(e.to_string()))?;
    write_text(&out.join("metrics.json"), &format!("{json}\n"))?;
    write_text(&out.join("metrics.txt"), &metrics.to_text())?;

    let stragglers: Vec<&PlanResult> = results
        .iter()
        .filter(|r| r.status != PlanStatus::Converged)
        .collect();
    if !stragglers.is_empty() {
        let mut msg = String::new();
        for r in &stragglers {
            msg.push_str(&format!("variant {}: max_iterations\n", r.variant));
        }
        write_text(&out.join("FAILED"), &msg)?;
    }

    Ok(RunSummary {
        all_converged: stragglers.is_empty(),
        results,
        metrics,
    })
}

/// Runs the variants in waves of at most `PLANNER_THREADS` concurrent
/// planner instances (default: all at once), preserving config order.
fn plan_variants(
    scenario: &Scenario,
    config: &RunConfig,
) -> Vec<(Variant, Result<PlanResult, PlanError>)> {
    let cap = std::env::var("PLANNER_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(config.variants.len().max(1));
    let mut outcomes = Vec::with_capacity(config.variants.len());
    for wave in config.variants.chunks(cap) {
        let mut wave_results: Vec<(Variant, Result<PlanResult, PlanError>)> = Vec::new();
        std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&variant| {
                    scope.spawn(move || {
                        (
                            variant,
                            plan(scenario, variant, &config.planner, &config.solver),
                        )
                    })
                })
                .collect();
            for h in handles {
                wave_results.push(h.join().expect("planner thread panicked"));
            }
        });
        outcomes.append(&mut wave_results);
    }
    outcomes
}

fn write_variant_files(out: &Path, result: &PlanResult) -> Result<(), RunError> {
    let name = result.variant.name();
    let trajs = serde_json::to_string_pretty(&result.trajectories)
        .map_err(|e| RunError::Config(e.to_string()))?;
    write_text(&out.join(format!("trajectories_{name}.json")), &trajs)?;
    write_text(
        &out.join(format!("trajectories_{name}.csv")),
        &trajectories_csv(&result.trajectories),
    )?;

    #[derive(Serialize)]
    struct TraceDoc<'a> {
        variant: Variant,
        status: PlanStatus,
        wall_time_s: f64,
        iterations: &'a [skysweep::planner::IterationRecord],
    }
    let trace = serde_json::to_string_pretty(&TraceDoc {
        variant: result.variant,
        status: result.status,
        wall_time_s: result.wall_time_s,
        iterations: &result.trace,
    })
    .map_err(|e| RunError::Config(e.to_string()))?;
    write_text(&out.join(format!("trace_{name}.json")), &trace)?;
    Ok(())
}

/// Flat waypoint table, one row per (drone, waypoint), trivially diffable.
pub fn trajectories_csv(trajs: &Trajectories) -> String {
    let mut out = String::from("drone,t,x_m,y_m,z_m\n");
    let (n, t_count) = trajs.dims();
    for k in 0..n {
        for t in 0..t_count {
            let [x, y, z] = trajs.at(k, t);
            out.push_str(&format!("{k},{t},{x},{y},{z}\n"));
        }
    }
    out
}

/// Strips wall-clock fields from a JSON payload so reruns of the same seeds
/// can be compared byte-for-byte.
pub fn canonicalize_json(text: &str) -> Result<String, serde_json::Error> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    strip_times(&mut value);
    serde_json::to_string_pretty(&value)
}

fn strip_times(value: &mut serde_json::Value) {
    const WALL_CLOCK_KEYS: [&str; 3] = ["calculation_time_s", "wall_time_s", "subproblem_time_s"];
    match value {
        serde_json::Value::Object(map) => {
            for key in WALL_CLOCK_KEYS {
                map.remove(key);
            }
            for (_, v) in map.iter_mut() {
                strip_times(v);
            }
        }
        serde_json::Value::Array(items) => {
            for v in items {
                strip_times(v);
            }
        }
        _ => {}
    }
}

fn io_err(path: &Path, source: std::io::Error) -> RunError {
    RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, content: &str) -> Result<(), RunError> {
    fs::write(path, content).map_err(|e| io_err(path, e))
}

pub use svg::render_svg;
