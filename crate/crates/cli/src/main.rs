use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cannula_core::harness::{read_records, replay_log, run_batch, write_outputs, BatchReport, EventLog, Mode, Scenario};
use cannula_core::service::{Pacing, Server, ServerConfig};

#[derive(Parser)]
#[command(name = "cannula", version, about = "Retinal vein cannulation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of trials and write records, report and tables.
    Run(RunArgs),
    /// Re-run a logged trial and compare it tick by tick.
    Replay(ReplayArgs),
    /// Rebuild the report and tables from a records file.
    Report(ReportArgs),
    /// Serve live sessions over WebSocket.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Auto,
    Manual,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Auto => vec![Mode::Autonomous],
            ModeArg::Manual => vec![Mode::ScriptedManual],
            ModeArg::Both => vec![Mode::Autonomous, Mode::ScriptedManual],
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Skip per-trial event logs.
    #[arg(long)]
    no_logs: bool,
    /// Also dump every rendered frame as PNG under <out>/frames.
    #[arg(long)]
    frames: bool,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    /// Write the replayed frames as PNG into this directory.
    #[arg(long)]
    frames: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    records: PathBuf,
    /// Write report.json, tableI.csv and tableII.csv here instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, conflicts_with = "fast")]
    realtime: bool,
    #[arg(long)]
    fast: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    max_sessions: usize,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Report(a) => cmd_report(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    if a.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let scenario = load_scenario(&a.scenario)?;
    let log_dir = (!a.no_logs || a.frames).then(|| a.out.join("logs"));
    let report = run_batch(&scenario, a.trials, &a.mode.modes(), a.seed, log_dir.as_deref())?;
    let written = write_outputs(&report, &a.out)?;

    if a.frames {
        let logs = log_dir.as_deref().expect("logs are kept when dumping frames");
        for entry in sorted_logs(logs)? {
            let log = EventLog::read(&entry)?;
            let stem = entry.file_stem().and_then(|s| s.to_str()).unwrap_or("trial");
            replay_log(&log, None, Some(&a.out.join("frames").join(stem)))?;
        }
    }

    for p in &written {
        println!("wrote {}", p.display());
    }
    emit(&report.table_i_csv());
    emit(&report.table_ii_csv());
    Ok(ExitCode::SUCCESS)
}

/// Print to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn sorted_logs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
        .collect();
    v.sort();
    Ok(v)
}

fn cmd_replay(a: ReplayArgs) -> Result<ExitCode> {
    let log = EventLog::read(&a.log)?;
    let r = replay_log(&log, None, a.frames.as_deref())?;
    println!("ticks: {}", r.ticks);
    println!("divergent ticks: {}", r.divergent_ticks);
    if let Some(t) = r.first_divergence {
        println!("first divergence at tick {t}");
    }
    println!("original: {:?}, replayed: {:?}", r.original.outcome_class, r.replayed.outcome_class);
    if r.identical {
        println!("replay identical");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("replay differs");
        Ok(ExitCode::from(1))
    }
}

fn cmd_report(a: ReportArgs) -> Result<ExitCode> {
    let records = read_records(&a.records)?;
    if records.is_empty() {
        bail!("{} has no records", a.records.display());
    }
    let name = a.records.file_stem().and_then(|s| s.to_str()).unwrap_or("records");
    let report = BatchReport::from_records(name, "unknown", a.seed, records);
    match a.out {
        Some(dir) => {
            std::fs::create_dir_all(&dir)?;
            for (file, body) in
                [("report.json", report.to_json()), ("tableI.csv", report.table_i_csv()), ("tableII.csv", report.table_ii_csv())]
            {
                let p = dir.join(file);
                std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
                println!("wrote {}", p.display());
            }
        }
        None => {
            emit(&report.table_i_csv());
            emit(&report.table_ii_csv());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(a: ServeArgs) -> Result<ExitCode> {
    let scenario = load_scenario(&a.scenario)?;
    let mut cfg = ServerConfig::new(scenario, a.seed);
    cfg.pacing = if a.fast { Pacing::Fast } else { Pacing::Realtime };
    cfg.max_sessions = a.max_sessions;
    let server = Server::bind(cfg, &format!("{}:{}", a.host, a.port))?;
    println!("listening on ws://{}/", server.local_addr()?);
    server.run()?;
    Ok(ExitCode::SUCCESS)
}
