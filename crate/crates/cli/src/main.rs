use std::path::PathBuf;
use std::process::ExitCode;

use bsde_game_cli::config::parse_grid;
use bsde_game_cli::{convergence_study, run_scenario, CliError, Format, Overrides, ScenarioConfig};
use clap::Parser;

/// Buyer's superhedging price of an American option with default risk.
#[derive(Debug, Parser)]
#[command(name = "bsde-game", version)]
struct Args {
    /// Scenario file (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the number of time steps.
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    /// Control grid as a comma-separated list, e.g. -0.95,0,1.
    #[arg(long, value_name = "CSV-LIST", allow_hyphen_values = true)]
    nu_grid: Option<String>,
    #[arg(long, value_name = "X")]
    epsilon: Option<f64>,
    /// Path budget of the hedge check.
    #[arg(long, value_name = "N")]
    paths: Option<usize>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Also run the convergence study over the configured levels and grids.
    #[arg(long)]
    study: bool,
}

fn run(args: &Args) -> Result<i32, CliError> {
    let mut cfg = ScenarioConfig::load(&args.config)?;
    let overrides = Overrides {
        steps: args.steps,
        nu_grid: args.nu_grid.as_deref().map(parse_grid).transpose()?,
        epsilon: args.epsilon,
        paths: args.paths,
        seed: args.seed,
        out: args.out.clone(),
        format: args.format,
    };
    overrides.apply(&mut cfg)?;

    let outcome = run_scenario(&cfg)?;
    let s = &outcome.summary;
    println!("y0             {:.12}", s.y0);
    println!("lower value    {:.12}", s.lower_value);
    println!("gap            {:.3e}", s.interchange_gap);
    if let Some(h) = &s.hedge {
        println!("hedge          min slack {:.3e} over {} {} paths", h.min_slack, h.paths, h.mode);
        if let Some(w) = &h.warning {
            eprintln!("warning: {w}");
        }
    }
    for c in s.checks.iter().filter(|c| c.enabled) {
        println!("{:<14} {}", c.name, if c.passed { "pass" } else { "FAIL" });
    }
    let mut code = outcome.exit_code();

    if args.study {
        let study = convergence_study(&cfg)?;
        for r in &study.rows {
            println!("n = {:>4} grid {} y0 {:.12}", r.n_steps, r.grid, r.y0);
        }
        for w in &study.warnings {
            eprintln!("warning: {w}");
        }
        println!("{:<14} {}", "grid_monotone", if study.passed() { "pass" } else { "FAIL" });
        if !study.passed() {
            code = 1;
        }
    }
    Ok(code)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error [{}]: {e}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
