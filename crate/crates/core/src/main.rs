use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use partstab::config::{ConfigError, ConfigIssue, ExperimentConfig};
use partstab::runner::{execute, write_outputs, Command, Execution};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SIMULATION: u8 = 3;

#[derive(Parser)]
#[command(name = "partstab", version, about = "Partial stabilization of control-affine systems along reference curves")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the sampled closed loop and write the trajectory.
    Simulate(Common),
    /// Rank check, constant estimation, admissible-epsilon bounds and contraction check.
    Analyze(Common),
    /// Simulate from the configured initial conditions and certify tube stability.
    Certify(Common),
    /// Run every stage enabled in the configuration.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Directory for the report and CSV files.
    #[arg(long, short, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides `analysis.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Print nothing on success.
    #[arg(long, short)]
    quiet: bool,
}

fn config_failure(err: &ConfigError) -> ExitCode {
    let body = serde_json::json!({ "error": "config", "issues": err.issues });
    eprintln!("{}", serde_json::to_string_pretty(&body).expect("json"));
    ExitCode::from(EXIT_CONFIG)
}

fn summary(exec: &Execution) -> String {
    let r = &exec.report;
    let mut lines = vec![format!("{}: {:?}", r.command.as_str(), r.status)];
    if let Some(s) = &r.simulation {
        lines.push(format!(
            "  simulation: {} sampling instants, error {:.6} -> {:.6}",
            s.sampling_instants, s.initial_error, s.final_error
        ));
        if let Some(f) = &s.failure {
            lines.push(format!("  failure: {}", f.message));
        }
    }
    if let Some(rc) = &r.rank_check {
        lines.push(format!("  rank check: passed = {}, min singular value {:.6e}", rc.passed, rc.min_singular_value));
    }
    if let Some(b) = &r.bounds {
        match &b.result {
            Some(eb) => lines.push(format!(
                "  bounds: eps_bar = {:.6e}, operating epsilon certified = {}",
                eb.eps_bar, eb.operating_epsilon_certified
            )),
            None => lines.push(format!(
                "  bounds: alpha = {} infeasible, needs > {:.6}",
                b.alpha,
                b.min_alpha.unwrap_or(f64::NAN)
            )),
        }
    }
    if let Some(c) = &r.contraction {
        lines.push(format!("  contraction: {}/{} at epsilon = {}", c.passed, c.count, c.epsilon));
    }
    if let Some(c) = &r.certification {
        let rate = c.rate_fit.map_or("none".to_string(), |f| format!("{:.4} (R^2 {:.4})", f.lambda_hat, f.r_squared));
        lines.push(format!("  certification: floor {:.6} ({:?}), rate {rate}", c.floor, c.floor_source));
    }
    lines.join("\n")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Analyze(c) => (Command::Analyze, c),
        Cmd::Certify(c) => (Command::Certify, c),
        Cmd::Run(c) => (Command::Run, c),
    };

    let text = match fs::read_to_string(&common.config) {
        Ok(t) => t,
        Err(e) => {
            return config_failure(&ConfigError {
                issues: vec![ConfigIssue {
                    field: "<file>".into(),
                    message: format!("cannot read {}: {e}", common.config.display()),
                }],
            })
        }
    };
    let mut cfg = match ExperimentConfig::from_toml_str(&text) {
        Ok(c) => c,
        Err(e) => return config_failure(&e),
    };
    if let Some(seed) = common.seed {
        cfg.analysis.seed = seed;
    }
    let scenario = match cfg.build() {
        Ok(s) => s,
        Err(e) => return config_failure(&e),
    };

    let exec = match execute(&scenario, command) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_OTHER);
        }
    };
    if let Err(e) = write_outputs(&exec, &scenario, &common.out_dir) {
        eprintln!("error: cannot write outputs to {}: {e}", common.out_dir.display());
        return ExitCode::from(EXIT_OTHER);
    }
    if !exec.succeeded() {
        eprintln!("{}", summary(&exec));
        return ExitCode::from(EXIT_SIMULATION);
    }
    if !common.quiet {
        println!("{}", summary(&exec));
    }
    ExitCode::SUCCESS
}
