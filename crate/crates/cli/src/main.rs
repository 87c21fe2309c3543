use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use condensegraph::runtime::ExecMode;
use condensegraph_cli::config::ExperimentConfig;
use condensegraph_cli::experiments::{gen_data, run_ablation, run_single, run_sweep, SweepRow};
use condensegraph_cli::CliError;

#[derive(Parser)]
#[command(name = "condensegraph", version, about = "Distributed GNN training with condensed boundary features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write report.json and metrics.csv.
    Run(Common),
    /// One run per ratio in the config's `sweep` list, plus sweep.csv.
    Sweep(Common),
    /// Feedback on/off × every condenser, plus ablation.csv.
    Ablate(Common),
    /// Write the configured SBM graph as edge-list files.
    GenData(Common),
    /// Parse and check a config, then print it in normalised form.
    ValidateConfig(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config file (flat key = value).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker execution mode; overrides `mode` in the config.
    #[arg(long)]
    mode: Option<ExecMode>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        if let Some(seed) = self.seed {
            config.train.seed = seed;
        }
        if let Some(mode) = self.mode {
            config.train.mode = mode;
        }
        Ok(config)
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("-".to_string(), |v| format!("{v:.4}"))
}

fn print_rows(rows: &[SweepRow]) {
    println!("{:>8} {:>10} {:>8} {:>10} {:>10}", "r", "condenser", "feedback", "test_acc", "bytes");
    for row in rows {
        println!(
            "{:>8} {:>10} {:>8} {:>10} {:>10}",
            row.r.map_or("none".to_string(), |r| r.to_string()),
            row.condensation,
            row.feedback,
            fmt_opt(row.final_test_acc),
            fmt_opt(row.bytes_ratio)
        );
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(c) => {
            let config = c.load()?;
            let report = run_single(&config, &config.out)?;
            println!(
                "{} epochs, final loss {:.4}, test acc {}, bytes ratio {} -> {}",
                report.epochs.len(),
                report.final_epoch().map_or(f64::NAN, |e| e.loss),
                fmt_opt(report.final_test_acc()),
                fmt_opt(report.bytes_ratio()),
                config.out.display()
            );
        }
        Command::Sweep(c) => {
            let config = c.load()?;
            print_rows(&run_sweep(&config, &config.out)?);
        }
        Command::Ablate(c) => {
            let config = c.load()?;
            print_rows(&run_ablation(&config, &config.out)?);
        }
        Command::GenData(c) => {
            let config = c.load()?;
            let files = gen_data(&config, &config.out)?;
            println!("wrote {}", files.edges.parent().unwrap_or(&config.out).display());
        }
        Command::ValidateConfig(c) => {
            let config = c.load()?;
            config.build_graph()?;
            print!("{}", config.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
