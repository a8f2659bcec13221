use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use edo_cli::commands::{self, CmdResult, Failure};
use edo_cli::RunOptions;

#[derive(Parser)]
#[command(
    name = "edo",
    version,
    about = "Evolutionary dataset optimisation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its archive.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Archive root; overrides the config and EDO_ROOT.
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fitness worker threads; 0 uses every core, 1 is serial.
        #[arg(long)]
        workers: Option<usize>,
        /// Validate the config and print it fully resolved.
        #[arg(long)]
        dry_run: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Per-epoch progression table as CSV.
    Summarise {
        #[arg(long, env = "EDO_ROOT")]
        root: PathBuf,
        /// Keep only epochs that are multiples of this.
        #[arg(long)]
        interval: Option<usize>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the best, median and worst individuals of an epoch.
    Representatives {
        #[arg(long, env = "EDO_ROOT")]
        root: PathBuf,
        /// Defaults to the last archived epoch.
        #[arg(long)]
        epoch: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every point of every individual, as (epoch, individual, x, y) rows.
    Coverage {
        #[arg(long, env = "EDO_ROOT")]
        root: PathBuf,
        #[arg(long)]
        interval: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> CmdResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p)
                .with_context(|| format!("creating {}", p.display()))
                .map_err(Failure::Runtime)?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn dispatch(command: Command) -> CmdResult<()> {
    match command {
        Command::Run {
            config,
            root,
            seed,
            workers,
            dry_run,
            quiet,
        } => {
            let cfg = commands::load_config(&config)?;
            let opts = RunOptions {
                root,
                seed,
                workers,
                dry_run,
                quiet,
            };
            commands::cmd_run(&cfg, &opts, &mut io::stdout().lock()).map(|_| ())
        }
        Command::Summarise {
            root,
            interval,
            out,
        } => {
            let mut w = output(out.as_deref())?;
            commands::cmd_summarise(&root, interval, &mut w)?;
            w.flush().map_err(|e| Failure::Runtime(e.into()))
        }
        Command::Representatives { root, epoch, out } => {
            commands::cmd_representatives(&root, epoch, &out).map(|_| ())
        }
        Command::Coverage {
            root,
            interval,
            out,
        } => {
            let mut w = output(out.as_deref())?;
            commands::cmd_coverage(&root, interval, &mut w)?;
            w.flush().map_err(|e| Failure::Runtime(e.into()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
