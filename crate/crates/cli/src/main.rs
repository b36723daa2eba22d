use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use biopay_cli::commands::{
    balances_csv, cmd_replay, cmd_replay_counts, cmd_statement, parse_counts, read_ledger, write_payments,
    ReplayOptions,
};
use biopay_cli::config::RunConfig;
use biopay_cli::eval::run_eval;
use biopay_cli::pipeline::open_ledger;
use biopay_cli::reports;
use biopay_cli::serve::{serve, termination};
use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "biopay", version, about = "Camera-trap detections to guardian payments")]
struct Cli {
    /// TOML configuration; BIOPAY_* variables override it.
    #[arg(long, global = true, env = "BIOPAY_CONFIG")]
    config: Option<PathBuf>,
    /// Ledger journal; overrides ledger.journal.
    #[arg(long, global = true)]
    journal: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the SMTP and HTTP gateways until SIGTERM or ctrl-c.
    Serve,
    /// Run a JSON-lines trace through detection and payout.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        /// Trace-time speed-up; 0 replays without pauses.
        #[arg(long, default_value_t = 0.0)]
        speed: f64,
        #[arg(long)]
        checkpoint_every: Option<u64>,
        /// Also write payments.csv here.
        #[arg(long)]
        reports: Option<PathBuf>,
    },
    /// Score predictions against VOC ground truth and write reports.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
    /// Inspect the ledger.
    Ledger {
        #[command(subcommand)]
        command: LedgerCommand,
    },
}

#[derive(Subcommand)]
enum LedgerCommand {
    Balances,
    Statement {
        #[arg(long)]
        account: String,
        #[arg(long)]
        from: Option<DateTime<Utc>>,
        #[arg(long)]
        to: Option<DateTime<Utc>>,
    },
    /// Payment table for a species histogram (CSV or JSON).
    ReplayCounts {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Serve => {
            let runtime = tokio::runtime::Runtime::new()?;
            let stats = runtime.block_on(serve(
                config,
                cli.journal,
                |b| {
                    println!("listening http={} smtp={}", b.http, b.smtp);
                    let _ = std::io::stdout().flush();
                },
                termination(),
            ))?;
            tracing::info!(?stats, "stopped");
        }
        Command::Replay { trace, speed, checkpoint_every, reports } => {
            let file = File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
            let (ledger, _) = open_ledger(&config, cli.journal.as_deref())?;
            let options = ReplayOptions { speed, checkpoint_every };
            let summary = cmd_replay(&config, Arc::new(ledger), BufReader::new(file), &options, &mut |_| {})?;
            if let Some(dir) = reports {
                write_payments(&dir, &summary.payments)?;
            }
            stdout.write_all(summary.render().as_bytes())?;
        }
        Command::Eval { pred, gt, folds, per_class, seed, out } => {
            config.folds.folds = folds.unwrap_or(config.folds.folds);
            config.folds.per_class = per_class.unwrap_or(config.folds.per_class);
            config.folds.seed = seed.unwrap_or(config.folds.seed);
            config.validate()?;
            let outcome = run_eval(&config, &pred, &gt, &out)?;
            let avg = outcome.average.overall();
            writeln!(
                stdout,
                "{} images, mAP {:.4}, average accuracy {:.4}, F1 {:.4}",
                outcome.metadata.images, outcome.metadata.map.map, avg.accuracy, avg.f1
            )?;
            for f in &outcome.files {
                writeln!(stdout, "wrote {}", out.join(f).display())?;
            }
        }
        Command::Ledger { command } => match command {
            LedgerCommand::Balances => {
                let state = read_ledger(&config, cli.journal.as_deref())?;
                stdout.write_all(balances_csv(&state.accounts_in_open_order()).as_bytes())?;
            }
            LedgerCommand::Statement { account, from, to } => {
                let state = read_ledger(&config, cli.journal.as_deref())?;
                stdout.write_all(cmd_statement(&state, &account, from, to)?.as_bytes())?;
            }
            LedgerCommand::ReplayCounts { counts, out } => {
                let text = std::fs::read_to_string(&counts).with_context(|| format!("reading {}", counts.display()))?;
                let csv = cmd_replay_counts(&config, &parse_counts(&text)?)?.to_csv();
                if let Some(path) = out {
                    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(std::path::Path::new("."));
                    let name = path.file_name().context("--out needs a file name")?.to_string_lossy();
                    reports::write(dir, &name, &csv)?;
                }
                stdout.write_all(csv.as_bytes())?;
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
