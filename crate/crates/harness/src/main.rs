use clap::{Parser, Subcommand};
use lpvarpro::varpro::JacobianVariant;
use lpvarpro_harness::{preset, run_experiment, ExperimentConfig, HarnessError, Overrides, PRESETS};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lpvarpro", version, about = "Run lp variable projection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named preset or a configuration file.
    Solve {
        /// Preset name or path to a key=value configuration file.
        target: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Outer iteration limit.
        #[arg(long)]
        iters: Option<usize>,
        /// reduced, full or half.
        #[arg(long)]
        jacobian: Option<JacobianVariant>,
        #[arg(long)]
        p: Option<f64>,
        /// Signal length or image side.
        #[arg(long)]
        size: Option<usize>,
    },
    /// List the presets.
    Presets,
}

fn solve(target: &str, overrides: &Overrides) -> Result<(), HarnessError> {
    let mut config = if PRESETS.contains(&target) {
        preset(target)?
    } else if Path::new(target).is_file() {
        ExperimentConfig::load(Path::new(target))?
    } else {
        return Err(HarnessError::Config(format!(
            "'{target}' is neither a preset ({}) nor a configuration file",
            PRESETS.join(", ")
        )));
    };
    config.apply(overrides)?;
    for run in run_experiment(&config)? {
        println!(
            "{}: {} iterations ({}), y = {:?}, RRE(x) = {:.4}",
            run.out_dir.display(),
            run.iterations,
            run.stop,
            run.y,
            run.rre_x
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Presets => {
            for name in PRESETS {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Solve { target, out, seed, iters, jacobian, p, size } => {
            let overrides = Overrides { out, seed, iters, jacobian, p, size };
            match solve(&target, &overrides) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
