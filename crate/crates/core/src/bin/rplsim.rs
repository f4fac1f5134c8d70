use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rplsim::engine::{
    analyze_runs, emit_report, replay_metric_study_with, run, ReplayParams, ReportFormat,
    ScenarioConfig,
};
use rplsim::topology::{self, generate_synthetic, SynthParams};
use rplsim::{Metric, NodeId};

#[derive(Parser)]
#[command(
    name = "rplsim",
    version,
    about = "RPL downward-routing reliability simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Both => ReportFormat::Both,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report.
    Simulate {
        /// Key-value scenario file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `seed` from the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        format: Format,
    },
    /// Replay a link trace (or a synthetic topology) under several metrics.
    Replay {
        #[arg(
            long,
            conflicts_with = "synthetic",
            required_unless_present = "synthetic"
        )]
        trace: Option<PathBuf>,
        /// Generate an N-node synthetic topology instead of reading a trace.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Placement seed for --synthetic.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "etx,etxn:2,lr")]
        metrics: Vec<String>,
        #[arg(long, default_value_t = 8)]
        retries: u32,
        #[arg(long)]
        hysteresis: Option<f64>,
        #[arg(long, default_value_t = topology::DEFAULT_WINDOW_MS)]
        window_ms: u64,
        #[arg(long, default_value_t = 0)]
        root: u16,
        /// Write `replay.json` here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate every report.json under a directory.
    Analyze {
        #[arg(long)]
        runs: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            out,
            format,
        } => {
            let mut cfg = match config {
                Some(p) => ScenarioConfig::from_file(&p)?,
                None => ScenarioConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = run(&cfg)?;
            let written = emit_report(&report, format.into(), &out)?;
            println!(
                "sent {} delivered {} lost {} loss_rate {:e}{}",
                report.packets_sent,
                report.delivered,
                report.total_losses(),
                report.loss_rate,
                if report.saturated { " (saturated)" } else { "" }
            );
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        Command::Replay {
            trace,
            synthetic,
            seed,
            metrics,
            retries,
            hysteresis,
            window_ms,
            root,
            out,
        } => {
            let topo = match (trace, synthetic) {
                (Some(path), _) => topology::load_trace(&path, window_ms, NodeId(root))?,
                (None, Some(n)) => generate_synthetic(n, seed, &SynthParams::default())?,
                (None, None) => unreachable!("clap requires one of --trace/--synthetic"),
            };
            let metrics = metrics
                .iter()
                .map(|m| m.parse::<Metric>())
                .collect::<Result<Vec<_>, _>>()?;
            let params = ReplayParams {
                retries_r: retries,
                hysteresis,
                ..ReplayParams::default()
            };
            let studies = replay_metric_study_with(&topo, &metrics, &params);
            let summary: BTreeMap<String, _> = studies
                .iter()
                .map(|s| (s.metric.to_string(), s.summary()))
                .collect();
            let json = serde_json::to_string_pretty(&summary)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    let p = dir.join("replay.json");
                    std::fs::write(&p, json)?;
                    println!("wrote {}", p.display());
                }
                None => println!("{json}"),
            }
        }
        Command::Analyze { runs } => {
            let agg = analyze_runs(&runs)?;
            println!("{}", serde_json::to_string_pretty(&agg)?);
        }
    }
    Ok(())
}
