use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spde_lab_cli::{report, run, CliError, ExperimentConfig, Kind};

#[derive(Parser)]
#[command(name = "lab", version, about = "Run spde-lab experiments from TOML configs")]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge run manifests into per-table CSVs and SVG plots.
    Report {
        #[arg(long)]
        out: PathBuf,
        manifests: Vec<PathBuf>,
    },
    #[command(flatten)]
    Run(RunCommand),
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Evaluate the acceptance checks; exit 1 if any fails.
    #[arg(long)]
    check: bool,
}

#[derive(Subcommand)]
enum RunCommand {
    Krylov(RunArgs),
    Sqrtlaw(RunArgs),
    Hitting(RunArgs),
    Flow(RunArgs),
    Solve(RunArgs),
    Fk(RunArgs),
    Shells(RunArgs),
}

impl RunCommand {
    fn split(self) -> (Kind, RunArgs) {
        match self {
            RunCommand::Krylov(a) => (Kind::Krylov, a),
            RunCommand::Sqrtlaw(a) => (Kind::Sqrtlaw, a),
            RunCommand::Hitting(a) => (Kind::Hitting, a),
            RunCommand::Flow(a) => (Kind::Flow, a),
            RunCommand::Solve(a) => (Kind::Solve, a),
            RunCommand::Fk(a) => (Kind::Fk, a),
            RunCommand::Shells(a) => (Kind::Shells, a),
        }
    }
}

fn execute(cli: Cli) -> Result<u8, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Report { out, manifests } => {
            let s = report(&out, &manifests)?;
            println!("{} manifests, {} tables, {} errors", s.entries.len(), s.tables.len(), s.errors());
            Ok(0)
        }
        Command::Run(cmd) => {
            let (kind, args) = cmd.split();
            let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
            let config = ExperimentConfig::parse(kind, &text)?;
            let m = run(&config, args.seed, &args.out, args.check)?;
            for c in &m.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("wrote {} files to {}", m.outputs.len() + 1, args.out.display());
            Ok(if m.passed() { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
