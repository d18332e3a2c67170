use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use transct::cli::{self, RunConfig};
use transct::model::Variant;
use transct::Error;

/// Low-dose CT denoising: simulate data, train, denoise, evaluate.
#[derive(Parser)]
#[command(name = "transct", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `section.key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// full, no_transformer or no_dual_path.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a paired low/normal-dose dataset.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split an image into low- and high-frequency parts.
    Decompose {
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on a simulated dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Denoise an image file, a directory of images or a dataset.
    Denoise {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        input: Option<PathBuf>,
        output: Option<PathBuf>,
    },
    /// Score outputs against references.
    Eval {
        outputs: Option<PathBuf>,
        references: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every variant and feed-forward width briefly and compare.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn need(arg: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> transct::Result<PathBuf> {
    arg.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("missing {what} (pass it on the command line or set it in --config)")))
}

fn run(cli: Cli) -> transct::Result<()> {
    cli::init_threads()?;
    let c = &cli.common;
    let cfg: RunConfig = cli::resolve_config(c.config.as_deref(), c.seed, c.variant)?;
    let p = &cfg.paths;
    match cli.command {
        Command::Simulate { out } => {
            let out = need(out, &p.out, "output directory (--out)")?;
            let m = cli::cmd_simulate(&cfg, &out, c.force)?;
            println!("wrote {} pairs of {}x{} to {}", m.n_pairs, m.config.size, m.config.size, out.display());
        }
        Command::Decompose { input, out } => {
            let input = need(input, &p.input, "input tensor")?;
            let out = need(out, &p.out, "output directory (--out)")?;
            cli::cmd_decompose(&cfg, &input, &out)?;
            println!("wrote low.tct and high.tct to {}", out.display());
        }
        Command::Train { data, out, resume } => {
            let data = need(data, &p.data, "dataset directory (--data)")?;
            let out = need(out, &p.out, "output directory (--out)")?;
            let history = cli::cmd_train(&cfg, &data, &out, resume, c.force)?;
            if let Some(r) = history.rows.last() {
                println!("epoch {} train_mse {:.6e}", r.epoch, r.train_mse);
            }
        }
        Command::Denoise { checkpoint, input, output } => {
            let checkpoint = need(checkpoint, &p.checkpoint, "checkpoint (--checkpoint)")?;
            let input = need(input, &p.input, "input")?;
            let output = need(output, &p.out, "output")?;
            let n = cli::cmd_denoise(&cfg, &checkpoint, &input, &output)?;
            println!("denoised {n} image(s) into {}", output.display());
        }
        Command::Eval { outputs, references, out } => {
            let outputs = need(outputs, &p.input, "outputs")?;
            let references = need(references, &p.references, "references")?;
            let report = cli::cmd_eval(&outputs, &references, out.or_else(|| p.out.clone()).as_deref())?;
            print!("{}", report.to_table("output"));
        }
        Command::Ablate { data, out } => {
            let data = need(data, &p.data, "dataset directory (--data)")?;
            let out = need(out, &p.out, "output directory (--out)")?;
            cli::cmd_ablate(&cfg, &data, &out)?;
            print!("{}", std::fs::read_to_string(out.join("summary.txt")).unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::TrainingAborted { .. } => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
