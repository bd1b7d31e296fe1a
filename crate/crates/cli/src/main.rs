use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use obstacle_lab::{demos, plot, run_one};

#[derive(Parser)]
#[command(name = "obstacle-lab", version, about = "Parabolic obstacle problem laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenario files (or `demo:NAME`) and write CSVs plus a manifest.
    Run {
        #[arg(required = true)]
        configs: Vec<String>,
        /// Output root; each scenario writes into a sub-directory.
        #[arg(long, env = "OBSTACLE_LAB_OUT", default_value = "obstacle-lab-out")]
        out: PathBuf,
        /// Scenarios run in parallel on this many threads.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// List the packaged demo scenarios.
    ListDemos,
    /// Convert a CSV written by `run` into gnuplot-ready columns.
    EmitPlotData {
        csv: PathBuf,
        /// profile, ladder, energy, field, gamma, exercise or smoothfit
        kind: String,
        /// Output file; default `<csv stem>.<kind>.dat`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match cli.command {
        Command::ListDemos => {
            for d in demos::DEMOS {
                println!("{:<24}{}", d.name, d.summary);
            }
            ExitCode::SUCCESS
        }
        Command::EmitPlotData { csv, kind, out } => match plot::emit(&csv, &kind, out.as_deref()) {
            Ok(path) => {
                println!("{}", path.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::Run { configs, out, jobs } => {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: cannot start worker pool: {e}");
                    return ExitCode::from(2);
                }
            };
            let results: Vec<_> = pool.install(|| configs.par_iter().map(|c| (c, run_one(c, &out))).collect());
            let mut code = 0;
            for (spec, r) in results {
                match r {
                    Ok(o) => println!("{spec}: ok -> {}", o.dir.display()),
                    Err(e) => {
                        eprintln!("{spec}: error: {e}");
                        code = code.max(e.exit_code());
                    }
                }
            }
            ExitCode::from(code as u8)
        }
    }
}
