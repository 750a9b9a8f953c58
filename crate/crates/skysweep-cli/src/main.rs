use clap::Parser;
use skysweep::planner::Variant;
use skysweep_cli::{run, RunConfig, RunError, EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_PLANNING};
use std::path::PathBuf;
use std::process::ExitCode;

/// Plans drone coverage trajectories for a configured scenario and writes
/// trajectories, traces, metrics, and optional SVG renders.
#[derive(Parser)]
#[command(name = "plan", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides both the city seed and the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restricts the run to these variants (repeatable): enhanced,
    /// original_trsco, or no_trust_region.
    #[arg(long = "variant", value_parser = parse_variant)]
    variants: Vec<Variant>,
    /// Also writes scene_<variant>.svg renders.
    #[arg(long)]
    svg: bool,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(&cli) {
        Ok(all_converged) => {
            if all_converged {
                EXIT_OK
            } else {
                eprintln!("plan: not every variant converged (see FAILED marker)");
                EXIT_PLANNING
            }
        }
        Err(err) => {
            eprintln!("plan: {err}");
            err.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn execute(cli: &Cli) -> Result<bool, RunError> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| RunError::Io {
        path: cli.config.clone(),
        source: e,
    })?;
    let mut config = RunConfig::from_json(&text)?;
    if let Some(seed) = cli.seed {
        config.city.seed = seed;
        config.scenario.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if !cli.variants.is_empty() {
        config.variants = cli.variants.clone();
    }
    if cli.svg {
        config.emit_svg = true;
    }
    let summary = run(&config)?;
    println!("{}", summary.metrics.to_text());
    Ok(summary.all_converged)
}
