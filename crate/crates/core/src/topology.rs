//! Ground-truth network: nodes and directional, time-varying link qualities.
//!
//! A [`Topology`] is built once, either by replaying a broadcast trace
//! ([`load_trace`]) or by [`generate_synthetic`], and is read-only afterwards.
//! Each ordered node pair carries its own PRR series, so link asymmetry is
//! represented directly rather than derived.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded;

/// Default replay window, one broadcast round per minute.
pub const DEFAULT_WINDOW_MS: u64 = 60_000;

/// RSSI assumed for links whose trace lines carry none.
pub const DEFAULT_RSSI_DBM: i32 = -75;

/// Dense node identifier in `[0, node_count)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u16);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u16> for NodeId {
    fn from(v: u16) -> Self {
        NodeId(v)
    }
}

/// Receive/transmit counts behind a trace-derived PRR sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCounts {
    pub rx: u32,
    pub tx: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrrSample {
    pub time_ms: u64,
    pub prr: f64,
    /// Present when the sample was measured from a trace window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<WindowCounts>,
}

/// One direction of a radio link. The PRR is a right-continuous step
/// function over `prr_series`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalLink {
    pub src: NodeId,
    pub dst: NodeId,
    pub prr_series: Vec<PrrSample>,
    pub rssi_dbm: Option<i32>,
}

impl DirectionalLink {
    /// Step-function lookup. Queries before the first sample return the
    /// first sample.
    pub fn prr_at(&self, time_ms: u64) -> f64 {
        let idx = self.prr_series.partition_point(|s| s.time_ms <= time_ms);
        match idx {
            0 => self.prr_series.first().map_or(0.0, |s| s.prr),
            i => self.prr_series[i - 1].prr,
        }
    }

    pub fn rssi_or_default(&self) -> i32 {
        self.rssi_dbm.unwrap_or(DEFAULT_RSSI_DBM)
    }

    fn check(&self) -> Result<(), TopologyError> {
        if self.src == self.dst {
            return Err(TopologyError::SelfLink(self.src));
        }
        for w in self.prr_series.windows(2) {
            if w[1].time_ms <= w[0].time_ms {
                return Err(TopologyError::NonMonotonicSeries(self.src, self.dst));
            }
        }
        if let Some(s) = self
            .prr_series
            .iter()
            .find(|s| !(0.0..=1.0).contains(&s.prr))
        {
            return Err(TopologyError::PrrOutOfRange(self.src, self.dst, s.prr));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("node count must be at least 2, got {0}")]
    TooFewNodes(usize),
    #[error("root {0} is not a node of the topology")]
    UnknownRoot(NodeId),
    #[error("link {0}->{0} is a self loop")]
    SelfLink(NodeId),
    #[error("link {0}->{1} references an unknown node")]
    UnknownNode(NodeId, NodeId),
    #[error("link {0}->{1}: sample times must be strictly increasing")]
    NonMonotonicSeries(NodeId, NodeId),
    #[error("link {0}->{1}: prr {2} outside [0, 1]")]
    PrrOutOfRange(NodeId, NodeId, f64),
    #[error("invalid synthetic parameter: {0}")]
    InvalidParam(&'static str),
    #[error("no connected topology after {0} attempts")]
    Disconnected(u32),
}

/// The ground-truth network. Absent links have PRR 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    node_count: usize,
    root: NodeId,
    links: BTreeMap<(NodeId, NodeId), DirectionalLink>,
    /// Synthetic node placement; empty for trace-derived topologies.
    #[serde(default)]
    positions: Vec<(f64, f64)>,
}

impl Topology {
    pub fn new(
        node_count: usize,
        root: NodeId,
        links: impl IntoIterator<Item = DirectionalLink>,
    ) -> Result<Self, TopologyError> {
        if node_count < 1 {
            return Err(TopologyError::TooFewNodes(node_count));
        }
        if root.index() >= node_count {
            return Err(TopologyError::UnknownRoot(root));
        }
        let mut map = BTreeMap::new();
        for link in links {
            link.check()?;
            if link.src.index() >= node_count || link.dst.index() >= node_count {
                return Err(TopologyError::UnknownNode(link.src, link.dst));
            }
            map.insert((link.src, link.dst), link);
        }
        Ok(Topology {
            node_count,
            root,
            links: map,
            positions: Vec::new(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.node_count).map(|i| NodeId(i as u16))
    }

    pub fn link(&self, src: NodeId, dst: NodeId) -> Option<&DirectionalLink> {
        self.links.get(&(src, dst))
    }

    pub fn links(&self) -> impl Iterator<Item = &DirectionalLink> {
        self.links.values()
    }

    /// Outgoing links of `src`, ordered by destination id.
    pub fn links_from(&self, src: NodeId) -> impl Iterator<Item = &DirectionalLink> {
        self.links
            .range((src, NodeId(0))..=(src, NodeId(u16::MAX)))
            .map(|(_, l)| l)
    }

    pub fn prr_at(&self, src: NodeId, dst: NodeId, time_ms: u64) -> f64 {
        self.link(src, dst).map_or(0.0, |l| l.prr_at(time_ms))
    }

    /// Sorted, de-duplicated start times of every sample in the topology.
    pub fn sample_times(&self) -> Vec<u64> {
        let set: BTreeSet<u64> = self
            .links
            .values()
            .flat_map(|l| l.prr_series.iter().map(|s| s.time_ms))
            .collect();
        set.into_iter().collect()
    }

    /// Synthetic node placement, empty for trace-derived topologies.
    pub fn positions(&self) -> &[(f64, f64)] {
        &self.positions
    }

    /// Serialize into the line-oriented trace format.
    ///
    /// Samples carrying window counts are written exactly; other samples are
    /// quantized to `synthetic_tx` transmissions per window. Transmissions of
    /// one window are spaced 1 ms apart, so per-window TX counts must stay
    /// below the window length.
    pub fn write_trace<W: Write>(&self, mut out: W, synthetic_tx: u32) -> io::Result<()> {
        // (window time, sender) -> (tx count, [(receiver, rx, rssi)])
        type Round = (u32, Vec<(NodeId, u32, Option<i32>)>);
        let mut rounds: BTreeMap<(u64, NodeId), Round> = BTreeMap::new();
        for link in self.links.values() {
            for s in &link.prr_series {
                let c = s.counts.unwrap_or_else(|| WindowCounts {
                    rx: (s.prr * synthetic_tx as f64).round() as u32,
                    tx: synthetic_tx,
                });
                let e = rounds
                    .entry((s.time_ms, link.src))
                    .or_insert((0, Vec::new()));
                e.0 = e.0.max(c.tx);
                e.1.push((link.dst, c.rx, link.rssi_dbm));
            }
        }
        writeln!(out, "# nodes {} root {}", self.node_count, self.root)?;
        // silent nodes still need one TX so the node count survives a reload
        for node in self.nodes() {
            if self.links_from(node).next().is_none() {
                writeln!(out, "TX 0 {node} 0")?;
            }
        }
        for ((t, sender), (tx, receivers)) in &rounds {
            for seq in 0..*tx {
                let at = t + seq as u64;
                writeln!(out, "TX {at} {sender} {seq}")?;
                for (rcv, rx, rssi) in receivers {
                    if seq < *rx {
                        match rssi {
                            Some(r) => writeln!(out, "RX {at} {sender} {rcv} {seq} {r}")?,
                            None => writeln!(out, "RX {at} {sender} {rcv} {seq}")?,
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEventKind {
    Tx,
    Rx { receiver: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub time_ms: u64,
    pub kind: TraceEventKind,
    pub sender: NodeId,
    pub seqno: u64,
    pub rssi_dbm: Option<i32>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: RX from {sender} seq {seqno} at {time_ms} ms has no matching TX")]
    UnmatchedRx {
        line: usize,
        sender: NodeId,
        seqno: u64,
        time_ms: u64,
    },
    #[error("window length must be positive")]
    ZeroWindow,
    #[error("trace contains no events")]
    Empty,
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_field<T: std::str::FromStr>(
    tok: Option<&str>,
    what: &str,
    line: usize,
) -> Result<T, TraceError> {
    let tok = tok.ok_or_else(|| TraceError::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| TraceError::Parse {
        line,
        msg: format!("invalid {what} `{tok}`"),
    })
}

/// Parse trace text into events, with 1-based line numbers.
pub fn parse_trace(text: &str) -> Result<Vec<(usize, TraceEvent)>, TraceError> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut toks = trimmed.split_whitespace();
        let kind = toks.next().unwrap_or_default();
        let event = match kind {
            "TX" => {
                let time_ms = parse_field(toks.next(), "time", line)?;
                let sender = NodeId(parse_field(toks.next(), "sender id", line)?);
                let seqno = parse_field(toks.next(), "seqno", line)?;
                TraceEvent {
                    time_ms,
                    kind: TraceEventKind::Tx,
                    sender,
                    seqno,
                    rssi_dbm: None,
                }
            }
            "RX" => {
                let time_ms = parse_field(toks.next(), "time", line)?;
                let sender = NodeId(parse_field(toks.next(), "sender id", line)?);
                let receiver = NodeId(parse_field(toks.next(), "receiver id", line)?);
                let seqno = parse_field(toks.next(), "seqno", line)?;
                let rssi_dbm = match toks.next() {
                    Some(t) => Some(parse_field(Some(t), "rssi", line)?),
                    None => None,
                };
                TraceEvent {
                    time_ms,
                    kind: TraceEventKind::Rx { receiver },
                    sender,
                    seqno,
                    rssi_dbm,
                }
            }
            other => {
                return Err(TraceError::Parse {
                    line,
                    msg: format!("unknown record type `{other}`"),
                })
            }
        };
        if toks.next().is_some() {
            return Err(TraceError::Parse {
                line,
                msg: "trailing tokens".into(),
            });
        }
        events.push((line, event));
    }
    Ok(events)
}

/// Build a topology from trace events, one PRR sample per sender window.
pub fn topology_from_events(
    events: &[(usize, TraceEvent)],
    window_ms: u64,
    root: NodeId,
) -> Result<Topology, TraceError> {
    if window_ms == 0 {
        return Err(TraceError::ZeroWindow);
    }
    if events.is_empty() {
        return Err(TraceError::Empty);
    }
    let mut tx_set = BTreeSet::new();
    // (sender, window) -> tx count
    let mut tx_count: BTreeMap<(NodeId, u64), u32> = BTreeMap::new();
    let mut max_id = root.0;
    for (_, e) in events {
        max_id = max_id.max(e.sender.0);
        if let TraceEventKind::Tx = e.kind {
            tx_set.insert((e.sender, e.time_ms, e.seqno));
            *tx_count
                .entry((e.sender, e.time_ms / window_ms))
                .or_default() += 1;
        }
    }
    // (sender, receiver) -> window -> rx count; plus rssi accumulators
    let mut rx_count: BTreeMap<(NodeId, NodeId), BTreeMap<u64, u32>> = BTreeMap::new();
    let mut rssi_acc: BTreeMap<(NodeId, NodeId), (i64, i64)> = BTreeMap::new();
    for &(line, e) in events {
        if let TraceEventKind::Rx { receiver } = e.kind {
            if !tx_set.contains(&(e.sender, e.time_ms, e.seqno)) {
                return Err(TraceError::UnmatchedRx {
                    line,
                    sender: e.sender,
                    seqno: e.seqno,
                    time_ms: e.time_ms,
                });
            }
            if receiver == e.sender {
                return Err(TraceError::Parse {
                    line,
                    msg: "receiver equals sender".into(),
                });
            }
            max_id = max_id.max(receiver.0);
            *rx_count
                .entry((e.sender, receiver))
                .or_default()
                .entry(e.time_ms / window_ms)
                .or_default() += 1;
            if let Some(r) = e.rssi_dbm {
                let acc = rssi_acc.entry((e.sender, receiver)).or_default();
                acc.0 += r as i64;
                acc.1 += 1;
            }
        }
    }
    let mut links = Vec::new();
    for (&(sender, receiver), per_window) in &rx_count {
        let prr_series = tx_count
            .range((sender, 0)..=(sender, u64::MAX))
            .map(|(&(_, w), &tx)| {
                let rx = per_window.get(&w).copied().unwrap_or(0);
                PrrSample {
                    time_ms: w * window_ms,
                    prr: rx as f64 / tx as f64,
                    counts: Some(WindowCounts { rx, tx }),
                }
            })
            .collect();
        let rssi_dbm = rssi_acc
            .get(&(sender, receiver))
            .map(|&(sum, n)| (sum as f64 / n as f64).round() as i32);
        links.push(DirectionalLink {
            src: sender,
            dst: receiver,
            prr_series,
            rssi_dbm,
        });
    }
    Ok(Topology::new(max_id as usize + 1, root, links)?)
}

/// Load a trace file and derive windowed PRR series for every ordered pair
/// that was ever received.
pub fn load_trace(path: &Path, window_ms: u64, root: NodeId) -> Result<Topology, TraceError> {
    let text = fs::read_to_string(path)?;
    let events = parse_trace(&text)?;
    topology_from_events(&events, window_ms, root)
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Radio range: base PRR reaches 0 at this distance.
    pub range_m: f64,
    /// Target mean neighbor count, used to size the deployment square.
    pub mean_degree: f64,
    /// Std-dev of the independent per-direction Gaussian perturbation.
    pub asymmetry_sigma: f64,
    /// Both directions must reach this PRR for an edge to count towards
    /// connectivity.
    pub connectivity_floor: f64,
    pub max_retries: u32,
    /// Number of PRR samples per link; 1 gives a static topology.
    pub windows: u32,
    pub window_ms: u64,
    /// Per-window Gaussian jitter around each direction's static PRR.
    pub temporal_sigma: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            range_m: 30.0,
            mean_degree: 12.0,
            asymmetry_sigma: 0.15,
            connectivity_floor: 0.3,
            max_retries: 200,
            windows: 1,
            window_ms: DEFAULT_WINDOW_MS,
            temporal_sigma: 0.0,
        }
    }
}

/// Base PRR for a link of length `d`: `clamp(1 - (d / range)^2, 0, 1)`.
pub fn prr_from_distance(d: f64, range: f64) -> f64 {
    (1.0 - (d / range).powi(2)).clamp(0.0, 1.0)
}

/// RSSI reported for synthetic links, monotone in the base PRR.
fn synthetic_rssi(base_prr: f64) -> i32 {
    (-90.0 + 30.0 * base_prr).round() as i32
}

/// Node 0 is the root, placed at the center of the square; the remaining
/// nodes are placed uniformly. Retries with fresh placements until the
/// graph is connected at `connectivity_floor`.
pub fn generate_synthetic(
    node_count: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<Topology, TopologyError> {
    if node_count < 2 {
        return Err(TopologyError::TooFewNodes(node_count));
    }
    if node_count > u16::MAX as usize {
        return Err(TopologyError::InvalidParam("node_count exceeds 65535"));
    }
    if !(params.asymmetry_sigma >= 0.0) || !(params.temporal_sigma >= 0.0) {
        return Err(TopologyError::InvalidParam("sigma must be non-negative"));
    }
    if !(params.range_m > 0.0) || !(params.mean_degree > 0.0) || params.windows == 0 {
        return Err(TopologyError::InvalidParam(
            "range, mean_degree and windows must be positive",
        ));
    }
    if params.windows > 1 && params.window_ms == 0 {
        return Err(TopologyError::InvalidParam("window_ms must be positive"));
    }
    let mut rng = seeded(seed);
    let side =
        params.range_m * (node_count as f64 * std::f64::consts::PI / params.mean_degree).sqrt();
    let asym = Normal::new(0.0, params.asymmetry_sigma).expect("finite sigma");
    let temporal = Normal::new(0.0, params.temporal_sigma).expect("finite sigma");

    for _ in 0..params.max_retries.max(1) {
        let mut positions = Vec::with_capacity(node_count);
        positions.push((side / 2.0, side / 2.0));
        for _ in 1..node_count {
            positions.push((rng.random::<f64>() * side, rng.random::<f64>() * side));
        }
        let mut links = Vec::new();
        let mut adjacency = vec![Vec::new(); node_count];
        for a in 0..node_count {
            for b in (a + 1)..node_count {
                let (xa, ya) = positions[a];
                let (xb, yb) = positions[b];
                let base = prr_from_distance((xa - xb).hypot(ya - yb), params.range_m);
                if base <= 0.0 {
                    continue;
                }
                let ab = (base + asym.sample(&mut rng)).clamp(0.0, 1.0);
                let ba = (base + asym.sample(&mut rng)).clamp(0.0, 1.0);
                if ab.min(ba) >= params.connectivity_floor {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
                for (src, dst, level) in [(a, b, ab), (b, a, ba)] {
                    let prr_series: Vec<PrrSample> = (0..params.windows)
                        .map(|w| {
                            let prr = if params.temporal_sigma > 0.0 && w > 0 {
                                (level + temporal.sample(&mut rng)).clamp(0.0, 1.0)
                            } else {
                                level
                            };
                            PrrSample {
                                time_ms: w as u64 * params.window_ms,
                                prr,
                                counts: None,
                            }
                        })
                        .collect();
                    if prr_series.iter().all(|s| s.prr == 0.0) {
                        continue;
                    }
                    links.push(DirectionalLink {
                        src: NodeId(src as u16),
                        dst: NodeId(dst as u16),
                        prr_series,
                        rssi_dbm: Some(synthetic_rssi(base)),
                    });
                }
            }
        }
        if is_connected(&adjacency, 0) {
            let mut topo = Topology::new(node_count, NodeId(0), links)?;
            topo.positions = positions;
            return Ok(topo);
        }
    }
    Err(TopologyError::Disconnected(params.max_retries.max(1)))
}

fn is_connected(adjacency: &[Vec<usize>], start: usize) -> bool {
    let mut seen = vec![false; adjacency.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(n) = stack.pop() {
        for &m in &adjacency[n] {
            if !seen[m] {
                seen[m] = true;
                stack.push(m);
            }
        }
    }
    seen.iter().all(|&s| s)
}
