use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "spjfnet", version, about = "Wavelet/Fourier dark-image enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Enhance a PNG file or every PNG in a directory.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// PSNR/SSIM on a paired test set.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "eval.csv")]
        csv: PathBuf,
    },
    /// Run the self-check suite.
    Verify {
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one model per toggle set and tabulate the results.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated toggles to switch off; repeat for more rows.
        #[arg(long)]
        disable: Vec<String>,
        /// Append the core-component rows D to J.
        #[arg(long)]
        core: bool,
    },
}

fn run(cli: Cli) -> spjfnet::Result<bool> {
    match cli.command {
        Command::Train { config, iters, seed } => {
            let out = spjfnet_cli::cmd_train(&config, iters, seed)?;
            let r = &out.report;
            if let (Some(e), Some(p)) = (r.last_eval(), r.input_psnr) {
                println!("eval PSNR {:.3} dB (input {p:.3} dB), SSIM {:.4}", e.psnr, e.ssim);
            }
            println!("{} steps in {:.1}s, outputs in {}", r.steps.len(), r.seconds, out.output.display());
        }
        Command::Infer { ckpt, input, output } => {
            for p in spjfnet_cli::cmd_infer(&ckpt, &input, &output)? {
                println!("{}", p.display());
            }
        }
        Command::Eval { ckpt, data, csv } => {
            let rows = spjfnet_cli::cmd_eval(&ckpt, &data, &csv)?;
            print!("{}", spjfnet_cli::eval_csv(&rows));
        }
        Command::Verify { report, seed } => {
            let r = spjfnet_cli::cmd_verify(report.as_deref(), seed)?;
            print!("{}", r.to_text());
            return Ok(r.failures().is_empty());
        }
        Command::Ablate { config, disable, core } => {
            let (table, path) = spjfnet_cli::cmd_ablate(&config, &disable, core)?;
            print!("{}", table.to_csv());
            println!("written to {}", path.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
