use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use layertomo_cli::config::MethodName;
use layertomo_cli::{commands, CliError, Context, LoadedConfig};

#[derive(Parser)]
#[command(name = "layertomo", version, about = "Layered atmospheric tomography experiments")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(short, long, global = true, default_value = "morfeo_like.cfg")]
    config: PathBuf,
    /// Output directory; overrides the configuration.
    #[arg(short, long, global = true, env = "LAYERTOMO_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Overlap map of one layer, the disjointness height and single-overlap balls.
    Overlap {
        /// Layer number, starting at 1 for the ground layer.
        #[arg(long)]
        layer: usize,
    },
    /// Simulate wavefront data of an atmosphere.
    Forward {
        /// Atmosphere written by an earlier run.
        #[arg(long, conflicts_with = "generate")]
        atmosphere: Option<PathBuf>,
        /// Generate the atmosphere from the configured turbulence (default).
        #[arg(long)]
        generate: bool,
    },
    /// Reconstruct the layers from a data file.
    Reconstruct {
        #[arg(long)]
        data: PathBuf,
        /// landweber, kaczmarz or tikhonov-cg; defaults to the configured method.
        #[arg(long)]
        method: Option<MethodName>,
        /// True atmosphere, for error and Strehl tables.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Build two atmospheres with identical data.
    Nullspace,
    /// Reconstruct generated atmospheres and their projections A*AΦ.
    ProjectExperiment,
    /// Summarize a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Report { run } = &cli.command {
        let (md, _) = commands::cmd_report(run)?;
        println!("{}", md.display());
        return Ok(());
    }
    let ctx = Context::new(LoadedConfig::from_file(&cli.config)?, cli.output_dir);
    match cli.command {
        Command::Overlap { layer } => {
            let out = commands::cmd_overlap(&ctx, layer)?;
            let h = out.disjoint_height.map_or("n/a".to_string(), |h| format!("{h:.1} m"));
            println!("layer {layer} at {:.1} m: h_disj {h}, {} balls", out.height, out.balls.len());
        }
        Command::Forward { atmosphere, .. } => {
            let out = commands::cmd_forward(&ctx, atmosphere.as_deref())?;
            println!("{} directions, noise {}", out.data.len(), if out.noisy { "on" } else { "off" });
        }
        Command::Reconstruct { data, method, truth } => {
            let out = commands::cmd_reconstruct(&ctx, &data, method, truth.as_deref())?;
            let h = &out.history;
            println!(
                "{}: {} iterations, relative residual {:.3e}, converged {}",
                h.method.name(),
                h.iterations,
                h.final_residual() / h.data_norm.max(f64::MIN_POSITIVE),
                h.converged
            );
        }
        Command::Nullspace => {
            let out = commands::cmd_nullspace(&ctx)?;
            println!(
                "relative data discrepancy {:.3e}, relative layer distance {:.4}",
                out.witness.relative_discrepancy, out.witness.relative_distance
            );
        }
        Command::ProjectExperiment => {
            let exp = commands::cmd_project_experiment(&ctx)?;
            println!("overlap  original   projected");
            for row in exp.table() {
                println!(
                    "{:>7}  {:>9.4}  {:>9.4}",
                    row.overlap,
                    row.original.unwrap_or(f64::NAN),
                    row.projected.unwrap_or(f64::NAN)
                );
            }
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
    println!("outputs in {}", ctx.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
