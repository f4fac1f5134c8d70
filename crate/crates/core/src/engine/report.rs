use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::EngineError;
use crate::mac::LossCause;
use crate::routing::{write_consistency_csv, ConsistencySnapshot};
use crate::topology::NodeId;

/// 95% upper bound on the loss rate after `losses` in `n_sent` trials: the
/// rule of three when nothing was lost, the observed rate otherwise.
pub fn rule_of_three(n_sent: u64, losses: u64) -> Result<f64, EngineError> {
    if n_sent == 0 {
        return Err(EngineError::InvalidArgument(
            "n_sent must be at least 1".into(),
        ));
    }
    if losses > n_sent {
        return Err(EngineError::InvalidArgument(
            "more losses than packets".into(),
        ));
    }
    if losses == 0 {
        Ok(3.0 / n_sent as f64)
    } else {
        Ok(losses as f64 / n_sent as f64)
    }
}

/// Summary of a sample. All fields are 0 for an empty sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub min: f64,
    pub p10: f64,
    pub median: f64,
    pub mean: f64,
    pub p90: f64,
    pub max: f64,
}

impl Distribution {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Distribution::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        // nearest-rank on the sorted sample, median averaging the middle pair
        let q = |p: f64| s[((p * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)];
        let mid = s.len() / 2;
        let median = if s.len().is_multiple_of(2) {
            (s[mid - 1] + s[mid]) / 2.0
        } else {
            s[mid]
        };
        Distribution {
            count: s.len(),
            min: s[0],
            p10: q(0.1),
            median,
            mean: s.iter().sum::<f64>() / s.len() as f64,
            p90: q(0.9),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopOutcome {
    Forwarded,
    Lost(LossCause),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopRecord {
    pub node: NodeId,
    pub next_hop: Option<NodeId>,
    pub outcome: HopOutcome,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Delivered,
    Lost(LossCause),
}

/// Everything that happened to one application packet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketJourney {
    pub packet_id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub send_time_ms: u64,
    pub hops: Vec<HopRecord>,
    pub terminal: Terminal,
    pub latency_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlStats {
    pub beacons: u64,
    pub probes: u64,
    pub immediate_probes: u64,
    pub registrations: u64,
    pub registrations_lost: u64,
    pub deregistrations: u64,
    pub rejected_updates: u64,
    pub table_full: u64,
    /// Nodes left without an acceptable parent.
    pub detachments: u64,
    pub expired_routes: u64,
    /// Control frames dropped as duplicates although they were not.
    pub control_spurious_duplicates: u64,
    /// Retransmitted copies that passed duplicate detection.
    pub undetected_duplicates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub node_count: usize,
    pub packets_sent: u64,
    pub delivered: u64,
    pub losses: BTreeMap<LossCause, u64>,
    pub loss_rate: f64,
    /// Rule-of-three bound when no packet was lost.
    pub loss_rate_upper_bound_95: Option<f64>,
    /// True PRR of each node's link to its parent, sampled at snapshots.
    pub link_prr_up: Distribution,
    pub link_prr_down: Distribution,
    pub hop_count: Distribution,
    /// Deepest node in the final parent tree.
    pub radius: usize,
    pub latency_ms: Distribution,
    pub parent_switches: u64,
    pub switches_per_node_hour: f64,
    /// Age of each node's estimate of its preferred parent, sampled at
    /// snapshots.
    pub parent_staleness_ms: Distribution,
    /// Share of those samples where the parent's estimate was no longer
    /// fresh.
    pub stale_parent_fraction: f64,
    pub srh_bytes: Distribution,
    pub saturated: bool,
    pub max_mean_queue_depth: f64,
    pub control: ControlStats,
    pub consistency: Vec<ConsistencySnapshot>,
    #[serde(skip)]
    pub journeys: Vec<PacketJourney>,
}

impl RunReport {
    pub fn total_losses(&self) -> u64 {
        self.losses.values().sum()
    }

    pub fn to_json(&self) -> Result<String, EngineError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn cause_rows(&self) -> Vec<(LossCause, u64, f64)> {
        LossCause::ALL
            .iter()
            .map(|&c| {
                let n = self.losses.get(&c).copied().unwrap_or(0);
                let rate = if self.packets_sent == 0 {
                    0.0
                } else {
                    n as f64 / self.packets_sent as f64
                };
                (c, n, rate)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Both,
}

/// Write `report.json` and/or `causes.csv` plus `consistency.csv`, and
/// `journeys.csv` when the scenario asks for it. Returns the written paths.
pub fn emit_report(
    report: &RunReport,
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, EngineError> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        let p = out_dir.join("report.json");
        fs::write(&p, report.to_json()?)?;
        written.push(p);
    }
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        let p = out_dir.join("causes.csv");
        let mut w = BufWriter::new(File::create(&p)?);
        writeln!(w, "cause,count,rate")?;
        for (c, n, rate) in report.cause_rows() {
            writeln!(w, "{c},{n},{rate}")?;
        }
        w.flush()?;
        written.push(p);

        let p = out_dir.join("consistency.csv");
        let mut w = BufWriter::new(File::create(&p)?);
        write_consistency_csv(&mut w, &report.consistency)?;
        w.flush()?;
        written.push(p);

        if report.config.journeys {
            let p = out_dir.join("journeys.csv");
            let mut w = BufWriter::new(File::create(&p)?);
            write_journeys_csv(&mut w, &report.journeys)?;
            w.flush()?;
            written.push(p);
        }
    }
    Ok(written)
}

fn write_journeys_csv<W: Write>(w: &mut W, journeys: &[PacketJourney]) -> std::io::Result<()> {
    writeln!(
        w,
        "packet_id,src,dst,send_time_ms,hops,terminal,latency_ms,path"
    )?;
    for j in journeys {
        let terminal = match j.terminal {
            Terminal::Delivered => "delivered".to_string(),
            Terminal::Lost(c) => c.to_string(),
        };
        let path: Vec<String> = j
            .hops
            .iter()
            .map(|h| format!("{}:{}", h.node, h.attempts))
            .collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            j.packet_id,
            j.src,
            j.dst,
            j.send_time_ms,
            j.hops.len(),
            terminal,
            j.latency_ms.map(|l| l.to_string()).unwrap_or_default(),
            path.join(">")
        )?;
    }
    Ok(())
}

/// Totals over a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub packets_sent: u64,
    pub delivered: u64,
    pub losses: BTreeMap<LossCause, u64>,
    pub loss_rate: f64,
    pub loss_rate_upper_bound_95: Option<f64>,
    pub saturated_runs: usize,
}

fn find_reports(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_reports(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "report.json") {
            out.push(p);
        }
    }
    Ok(())
}

/// Merge every `report.json` found under `dir`.
pub fn analyze_runs(dir: &Path) -> Result<Aggregate, EngineError> {
    let mut paths = Vec::new();
    find_reports(dir, &mut paths)?;
    if paths.is_empty() {
        return Err(EngineError::InvalidArgument(format!(
            "no report.json under {}",
            dir.display()
        )));
    }
    let mut agg = Aggregate {
        runs: 0,
        packets_sent: 0,
        delivered: 0,
        losses: LossCause::ALL.iter().map(|&c| (c, 0)).collect(),
        loss_rate: 0.0,
        loss_rate_upper_bound_95: None,
        saturated_runs: 0,
    };
    for p in paths {
        let r: RunReport = serde_json::from_str(&fs::read_to_string(&p)?)?;
        agg.runs += 1;
        agg.packets_sent += r.packets_sent;
        agg.delivered += r.delivered;
        for (c, n) in r.losses {
            *agg.losses.entry(c).or_default() += n;
        }
        agg.saturated_runs += usize::from(r.saturated);
    }
    let lost: u64 = agg.losses.values().sum();
    if agg.packets_sent > 0 {
        agg.loss_rate = lost as f64 / agg.packets_sent as f64;
        if lost == 0 {
            agg.loss_rate_upper_bound_95 = Some(rule_of_three(agg.packets_sent, 0)?);
        }
    }
    Ok(agg)
}
