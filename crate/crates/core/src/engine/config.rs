//! Scenario configuration: a flat `key = value` file.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::estimator::EstimatorConfig;
use crate::mac::MacConfig;
use crate::metric::Metric;
use crate::routing::{Mode, DEFAULT_TABLE_CAPACITY};
use crate::topology::{self, NodeId, SynthParams, Topology};

/// Largest link ETX still acceptable for a parent. Just under the default
/// failure penalty, so only links that keep failing are dropped.
pub const DEFAULT_MAX_LINK_ETX: f64 = 11.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Root sends to uniformly random nodes.
    Downward,
    /// A fraction of nodes send to uniformly random other nodes.
    AnyToAny,
}

impl FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "downward" => Ok(Pattern::Downward),
            "any_to_any" => Ok(Pattern::AnyToAny),
            other => Err(format!("unknown traffic pattern `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologySource {
    Synthetic {
        node_count: usize,
        params: SynthParams,
    },
    Trace {
        path: PathBuf,
        window_ms: u64,
        root: NodeId,
    },
}

impl TopologySource {
    /// Build the topology. Synthetic placement uses `seed`.
    pub fn load(&self, seed: u64) -> Result<Topology, EngineError> {
        match self {
            TopologySource::Synthetic { node_count, params } => {
                Ok(topology::generate_synthetic(*node_count, seed, params)?)
            }
            TopologySource::Trace {
                path,
                window_ms,
                root,
            } => Ok(topology::load_trace(path, *window_ms, *root)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficConfig {
    pub pattern: Pattern,
    /// Packets per second generated by the root (downward pattern).
    pub rate_hz: f64,
    pub payload_bytes: usize,
    pub any_to_any_interval_ms: u64,
    pub any_to_any_source_fraction: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            pattern: Pattern::Downward,
            rate_hz: 4.0,
            payload_bytes: 32,
            any_to_any_interval_ms: 20_000,
            any_to_any_source_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub metric: Metric,
    pub probing: bool,
    pub retries_r: u32,
    /// Retries for probe frames.
    pub probe_retries: u32,
    /// Minimum rank improvement before switching parent. `None` picks a
    /// per-metric default.
    pub hysteresis: Option<f64>,
    pub traffic: TrafficConfig,
    pub duration_s: u64,
    pub warmup_s: u64,
    pub seed: u64,
    /// Seed for synthetic placement; the run seed when absent.
    pub topology_seed: Option<u64>,
    pub topology: TopologySource,
    pub mac: MacConfig,
    pub estimator: EstimatorConfig,
    pub beacon_period_ms: u64,
    pub dao_period_ms: u64,
    pub snapshot_period_ms: u64,
    /// Downward routes not refreshed within this time are dropped. 0 keeps
    /// them forever.
    pub route_lifetime_ms: u64,
    pub table_capacity: usize,
    /// Model ACK loss on the reverse link.
    pub ack_loss: bool,
    pub prefix_shared: bool,
    pub heterogeneous_addresses: bool,
    /// Saturation bound on the configured traffic rate.
    pub max_rate_hz: f64,
    pub hop_limit: usize,
    /// Neighbors whose link ETX estimate exceeds this are not acceptable
    /// parents.
    pub max_link_etx: f64,
    pub journeys: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mode: Mode::NonStoring,
            metric: Metric::Etxn { exponent_n: 2.0 },
            probing: true,
            retries_r: 8,
            probe_retries: 8,
            hysteresis: None,
            traffic: TrafficConfig::default(),
            duration_s: 3600,
            warmup_s: 300,
            seed: 1,
            topology_seed: None,
            topology: TopologySource::Synthetic {
                node_count: 50,
                params: SynthParams::default(),
            },
            mac: MacConfig::default(),
            estimator: EstimatorConfig {
                capacity: 32,
                ..EstimatorConfig::default()
            },
            beacon_period_ms: 4_000,
            dao_period_ms: 60_000,
            snapshot_period_ms: 10_000,
            route_lifetime_ms: 300_000,
            table_capacity: DEFAULT_TABLE_CAPACITY,
            ack_loss: true,
            prefix_shared: true,
            heterogeneous_addresses: false,
            max_rate_hz: 20.0,
            hop_limit: 64,
            max_link_etx: DEFAULT_MAX_LINK_ETX,
            journeys: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T, EngineError> {
    value.parse().map_err(|_| EngineError::Config {
        line,
        msg: format!("bad value `{value}` for `{key}`"),
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool, EngineError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(EngineError::Config {
            line,
            msg: format!("bad boolean `{value}` for `{key}`"),
        }),
    }
}

impl ScenarioConfig {
    /// Per-metric hysteresis when none is configured.
    pub fn effective_hysteresis(&self) -> f64 {
        self.hysteresis
            .unwrap_or_else(|| default_hysteresis(&self.metric))
    }

    pub fn duration_ms(&self) -> u64 {
        self.duration_s * 1000
    }

    pub fn warmup_ms(&self) -> u64 {
        self.warmup_s * 1000
    }

    /// MAC settings with the scenario's retry budget applied.
    pub fn mac_config(&self) -> MacConfig {
        MacConfig {
            retries_r: self.retries_r,
            ..self.mac
        }
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            retries_r: self.retries_r,
            ..self.estimator
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.to_string()));
        if self.warmup_s >= self.duration_s {
            return bad("warmup_s must be below duration_s");
        }
        if !(self.traffic.rate_hz > 0.0) || self.traffic.rate_hz > self.max_rate_hz {
            return bad("rate_hz must be positive and at most max_rate_hz");
        }
        if self.beacon_period_ms == 0
            || self.dao_period_ms == 0
            || self.snapshot_period_ms == 0
            || self.estimator.probe_period_ms == 0
            || self.traffic.any_to_any_interval_ms == 0
        {
            return bad("periods must be positive");
        }
        if self.mac.queue_capacity == 0 || self.table_capacity == 0 || self.hop_limit == 0 {
            return bad("capacities must be positive");
        }
        if !(self.max_link_etx >= 1.0) {
            return bad("max_link_etx must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.traffic.any_to_any_source_fraction) {
            return bad("any_to_any_source_fraction must be in [0, 1]");
        }
        if !(self.estimator.alpha > 0.0 && self.estimator.alpha <= 1.0) {
            return bad("alpha must be in (0, 1]");
        }
        self.metric
            .validate()
            .map_err(|e| EngineError::InvalidConfig(e.to_string()))
    }

    /// Parse the flat key-value format. Relative trace paths resolve against
    /// `base_dir`.
    pub fn parse_str(text: &str, base_dir: &Path) -> Result<Self, EngineError> {
        let mut c = ScenarioConfig::default();
        let mut synth = SynthParams::default();
        let mut nodes = 50usize;
        let mut trace: Option<PathBuf> = None;
        let mut trace_window = topology::DEFAULT_WINDOW_MS;
        let mut trace_root = NodeId(0);
        let mut exponent: Option<f64> = None;

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(EngineError::Config {
                    line,
                    msg: format!("expected `key = value`, got `{content}`"),
                });
            };
            let (key, v) = (key.trim(), value.trim());
            match key {
                "mode" => c.mode = parse(key, v, line)?,
                "metric" => c.metric = parse(key, v, line)?,
                "exponent_n" => exponent = Some(parse(key, v, line)?),
                "probing" => c.probing = parse_bool(key, v, line)?,
                "retries_r" => c.retries_r = parse(key, v, line)?,
                "probe_retries" => c.probe_retries = parse(key, v, line)?,
                "dup_mode" => c.mac.dup_mode = parse(key, v, line)?,
                "hysteresis" => c.hysteresis = Some(parse(key, v, line)?),
                "pattern" => c.traffic.pattern = parse(key, v, line)?,
                "rate_hz" => c.traffic.rate_hz = parse(key, v, line)?,
                "payload_bytes" => c.traffic.payload_bytes = parse(key, v, line)?,
                "any_to_any_interval_ms" => c.traffic.any_to_any_interval_ms = parse(key, v, line)?,
                "any_to_any_source_fraction" => {
                    c.traffic.any_to_any_source_fraction = parse(key, v, line)?
                }
                "duration_s" => c.duration_s = parse(key, v, line)?,
                "warmup_s" => c.warmup_s = parse(key, v, line)?,
                "seed" => c.seed = parse(key, v, line)?,
                "topology_seed" => c.topology_seed = Some(parse(key, v, line)?),
                "topology" => {
                    trace = match v {
                        "synthetic" => None,
                        path => Some(base_dir.join(path)),
                    }
                }
                "nodes" => nodes = parse(key, v, line)?,
                "range_m" => synth.range_m = parse(key, v, line)?,
                "mean_degree" => synth.mean_degree = parse(key, v, line)?,
                "asymmetry_sigma" => synth.asymmetry_sigma = parse(key, v, line)?,
                "connectivity_floor" => synth.connectivity_floor = parse(key, v, line)?,
                "synth_max_retries" => synth.max_retries = parse(key, v, line)?,
                "synth_windows" => synth.windows = parse(key, v, line)?,
                "synth_window_ms" => synth.window_ms = parse(key, v, line)?,
                "temporal_sigma" => synth.temporal_sigma = parse(key, v, line)?,
                "trace_window_ms" => trace_window = parse(key, v, line)?,
                "trace_root" => trace_root = NodeId(parse(key, v, line)?),
                "queue_capacity" => c.mac.queue_capacity = parse(key, v, line)?,
                "seq_lifetime_ms" => c.mac.seq_lifetime_ms = parse(key, v, line)?,
                "per_attempt_delay_ms" => c.mac.per_attempt_delay_ms = parse(key, v, line)?,
                "naive_ring_size" => c.mac.naive_ring_size = parse(key, v, line)?,
                "alpha" => c.estimator.alpha = parse(key, v, line)?,
                "freshness_max" => c.estimator.freshness_max = parse(key, v, line)?,
                "freshness_half_life_ms" => {
                    c.estimator.freshness_half_life_ms = parse(key, v, line)?
                }
                "freshness_threshold" => c.estimator.freshness_threshold = parse(key, v, line)?,
                "probe_period_ms" => c.estimator.probe_period_ms = parse(key, v, line)?,
                "neighbor_capacity" => c.estimator.capacity = parse(key, v, line)?,
                "beacon_period_ms" => c.beacon_period_ms = parse(key, v, line)?,
                "dao_period_ms" => c.dao_period_ms = parse(key, v, line)?,
                "snapshot_period_ms" => c.snapshot_period_ms = parse(key, v, line)?,
                "route_lifetime_ms" => c.route_lifetime_ms = parse(key, v, line)?,
                "table_capacity" => c.table_capacity = parse(key, v, line)?,
                "ack_loss" => c.ack_loss = parse_bool(key, v, line)?,
                "prefix_shared" => c.prefix_shared = parse_bool(key, v, line)?,
                "heterogeneous_addresses" => c.heterogeneous_addresses = parse_bool(key, v, line)?,
                "max_rate_hz" => c.max_rate_hz = parse(key, v, line)?,
                "hop_limit" => c.hop_limit = parse(key, v, line)?,
                "max_link_etx" => c.max_link_etx = parse(key, v, line)?,
                "journeys" => c.journeys = parse_bool(key, v, line)?,
                _ => {
                    return Err(EngineError::Config {
                        line,
                        msg: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        if let Some(n) = exponent {
            if !matches!(c.metric, Metric::Etxn { .. }) {
                return Err(EngineError::InvalidConfig(
                    "exponent_n requires metric = etxn".into(),
                ));
            }
            c.metric = Metric::Etxn { exponent_n: n };
        }
        c.topology = match trace {
            Some(path) => TopologySource::Trace {
                path,
                window_ms: trace_window,
                root: trace_root,
            },
            None => TopologySource::Synthetic {
                node_count: nodes,
                params: synth,
            },
        };
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self, EngineError> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse_str(&text, base)
    }
}

/// Half an ETX step near perfect links, expressed in each metric's units.
pub fn default_hysteresis(metric: &Metric) -> f64 {
    match *metric {
        Metric::Etx => 0.5,
        Metric::Etxn { exponent_n } => 0.5 * exponent_n,
        Metric::Lr { .. } => 1e-4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::DupMode;

    #[test]
    fn parses_keys_and_comments() {
        let text = "# scenario\nmode = storing\nmetric = etxn\nexponent_n = 3 # cubic\n\
                    dup_mode = naive\nrate_hz = 2\nduration_s = 900\nnodes = 20\nprobing = off\n";
        let c = ScenarioConfig::parse_str(text, Path::new(".")).unwrap();
        assert_eq!(c.mode, Mode::Storing);
        assert_eq!(c.metric, Metric::Etxn { exponent_n: 3.0 });
        assert_eq!(c.mac.dup_mode, DupMode::Naive);
        assert!(!c.probing);
        assert_eq!(
            c.topology,
            TopologySource::Synthetic {
                node_count: 20,
                params: SynthParams::default()
            }
        );
    }

    #[test]
    fn trace_path_is_relative_to_config() {
        let c =
            ScenarioConfig::parse_str("topology = t.trace\ntrace_root = 3\n", Path::new("/x/y"))
                .unwrap();
        assert_eq!(
            c.topology,
            TopologySource::Trace {
                path: PathBuf::from("/x/y/t.trace"),
                window_ms: 60_000,
                root: NodeId(3)
            }
        );
    }

    #[test]
    fn rejects_bad_input() {
        let err = |t: &str| ScenarioConfig::parse_str(t, Path::new(".")).unwrap_err();
        assert!(matches!(
            err("bogus = 1"),
            EngineError::Config { line: 1, .. }
        ));
        assert!(matches!(
            err("\nmode storing"),
            EngineError::Config { line: 2, .. }
        ));
        assert!(matches!(err("rate_hz = x"), EngineError::Config { .. }));
        assert!(matches!(
            err("warmup_s = 600\nduration_s = 600"),
            EngineError::InvalidConfig(_)
        ));
        assert!(matches!(err("rate_hz = 50"), EngineError::InvalidConfig(_)));
        assert!(matches!(
            err("metric = lr\nexponent_n = 2"),
            EngineError::InvalidConfig(_)
        ));
    }
}
