use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slcmask::commands::{cmd_ablate, cmd_eval, cmd_rf, cmd_synth, cmd_tile, cmd_train, resolve_config};
use slcmask::{CliError, CliResult, RunConfig};
use slcmask_core::slc::FusedLayers;

/// Instance segmentation of ships with a sequence local context module.
///
/// Any configuration key can be overridden as `--key=value`, e.g.
/// `--slc.enabled=false`; overrides take precedence over `--config`, which
/// takes precedence over the built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "slcmask", version)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from the reduced desk-scale preset instead of the full defaults.
    #[arg(long, global = true)]
    desk: bool,
    /// Worker threads for generation, inference and ablation rows.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic ship corpus.
    Synth { out: PathBuf },
    /// Cut tiles around object centres (`x y` per line).
    Tile {
        image: PathBuf,
        centers: PathBuf,
        out: PathBuf,
        /// Annotations of `image` to remap into the tiles.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Train on a corpus' train split.
    Train { corpus: PathBuf, out: PathBuf },
    /// Evaluate a checkpoint on a corpus' test split.
    Eval {
        corpus: PathBuf,
        checkpoint: PathBuf,
        /// Directory for report.csv and report.txt (defaults to the checkpoint's).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every variant of an ablation grid.
    Ablate {
        corpus: PathBuf,
        out: PathBuf,
        /// Grid file, one variant per line; defaults to the built-in grid.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Print analytic and measured receptive fields of the context layers.
    Rf {
        r1: usize,
        r2: usize,
        #[arg(long, default_value = "1,2,3")]
        fused: String,
    },
    /// Print the fully resolved configuration.
    Config,
}

/// Splits `--key=value` configuration overrides from the remaining args.
/// Dotted keys are always treated as overrides so that a misspelt key is
/// reported as an unknown configuration key.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let (mut rest, mut overrides) = (Vec::new(), Vec::new());
    for a in args {
        let key = a.strip_prefix("--").and_then(|s| s.split_once('=')).map(|(k, _)| k);
        match key {
            Some(k) if k.contains('.') || RunConfig::KEYS.contains(&k) => overrides.push(a),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

fn run(cli: Cli, overrides: &[String]) -> CliResult<()> {
    let cfg = resolve_config(cli.desk, cli.config.as_ref(), overrides)?;
    match cli.command {
        Command::Synth { out } => print!("{}", cmd_synth(&cfg, &out, cli.workers)?),
        Command::Tile { image, centers, out, annotations } => {
            let n = cmd_tile(&cfg, &image, &centers, annotations.as_deref(), &out, |w| eprintln!("warning: {w}"))?;
            println!("wrote {n} tiles to {}", out.display());
        }
        Command::Train { corpus, out } => {
            let outcome = cmd_train(&cfg, &corpus, &out, |line| println!("{line}"))?;
            if let Some(r) = outcome.log.convergence_ratio() {
                println!("final/initial loss: {r:.3}");
            }
        }
        Command::Eval { corpus, checkpoint, out } => {
            let out = out.unwrap_or_else(|| if checkpoint.is_dir() { checkpoint.clone() } else { checkpoint.parent().map(PathBuf::from).unwrap_or_default() });
            let (_, table) = cmd_eval(&cfg, &corpus, &checkpoint, &out, cli.workers)?;
            print!("{table}");
        }
        Command::Ablate { corpus, out, grid } => {
            let (_, table) = cmd_ablate(&cfg, &corpus, grid.as_deref(), &out, cli.workers)?;
            print!("{table}");
        }
        Command::Rf { r1, r2, fused } => {
            let fused: FusedLayers = fused.parse().map_err(|e| CliError::Usage(format!("--fused: {e}")))?;
            let (_, table) = cmd_rf(r1, r2, fused)?;
            print!("{table}");
        }
        Command::Config => print!("{}", cfg.render()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
