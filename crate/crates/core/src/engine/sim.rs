use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::seq::index::sample;
use rand::Rng;

use super::config::{Pattern, ScenarioConfig};
use super::report::{
    rule_of_three, ControlStats, Distribution, HopOutcome, HopRecord, PacketJourney, RunReport,
    Terminal,
};
use super::EngineError;
use crate::estimator::NeighborTable;
use crate::mac::{
    transmit_acked, AckedTx, DupMode, DupState, DupVerdict, LossCause, MacConfig, MacQueue,
    SeqCounter,
};
use crate::metric::{select_parent_ranked, Candidate};
use crate::rng::{self, SimRng};
use crate::routing::{
    header_size, snapshot_consistency, storing_deregister, storing_lookup, storing_register,
    AddressBook, ConsistencySnapshot, Lookup, Mode, RootTopologyView, RoutingState, StoringTable,
    UpdateVerdict,
};
use crate::topology::{NodeId, Topology};

const SATURATION_WINDOW_MS: u64 = 60_000;
const SATURATION_FILL: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Beacon(NodeId),
    /// Immediate infinite-rank advertisement on detaching.
    Poison(NodeId),
    Probe(NodeId),
    Dao(NodeId),
    Generate(NodeId),
    TxDone(NodeId),
    Snapshot,
    Housekeeping,
}

#[derive(Debug, PartialEq, Eq)]
struct Scheduled {
    time: u64,
    seq: u64,
    event: Event,
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (time, insertion order)
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    packet: usize,
    next_hop: NodeId,
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    frame: Frame,
    seqno: u8,
    outcome: AckedTx,
}

struct Node {
    table: NeighborTable,
    rank: Option<f64>,
    parent: Option<NodeId>,
    /// Detached after having joined: beacons advertise an infinite rank.
    poisoning: bool,
    seq: SeqCounter,
    dup: DupState,
    queue: MacQueue<Frame>,
    in_flight: Option<InFlight>,
    rng: SimRng,
    depth_area: u128,
    depth_since: u64,
}

struct Packet {
    id: u64,
    src: NodeId,
    dst: NodeId,
    created_ms: u64,
    counted: bool,
    hops: Vec<HopRecord>,
    route: Option<Vec<NodeId>>,
    route_pos: usize,
    came_from_below: bool,
    terminal: Option<Terminal>,
    latency_ms: Option<u64>,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    topo: &'a Topology,
    mac: MacConfig,
    probe_mac: MacConfig,
    hysteresis: f64,
    now: u64,
    seq: u64,
    heap: BinaryHeap<Scheduled>,
    nodes: Vec<Node>,
    tables: Vec<StoringTable>,
    view: RootTopologyView,
    view_refreshed: Vec<Option<u64>>,
    addresses: AddressBook,
    traffic_rng: SimRng,
    packets: Vec<Packet>,
    warmup_ms: u64,
    end_ms: u64,
    control: ControlStats,
    switches: u64,
    saturated: bool,
    max_mean_depth: f64,
    snapshots: Vec<ConsistencySnapshot>,
    prr_up: Vec<f64>,
    prr_down: Vec<f64>,
    staleness: Vec<f64>,
    parent_samples: u64,
    stale_parent_samples: u64,
    srh_bytes: Vec<f64>,
}

/// Run the scenario, building its topology first.
pub fn run(config: &ScenarioConfig) -> Result<RunReport, EngineError> {
    config.validate()?;
    let topo = config
        .topology
        .load(config.topology_seed.unwrap_or(config.seed))?;
    run_with_topology(config, &topo)
}

/// Run the scenario over an explicit topology.
pub fn run_with_topology(
    config: &ScenarioConfig,
    topo: &Topology,
) -> Result<RunReport, EngineError> {
    config.validate()?;
    let mut sim = Sim::new(config, topo);
    sim.bootstrap();
    while let Some(s) = sim.heap.pop() {
        sim.now = s.time;
        sim.handle(s.event);
    }
    Ok(sim.finish())
}

fn jittered(period: u64, rng: &mut SimRng) -> u64 {
    let lo = period as f64 * 0.9;
    let hi = period as f64 * 1.1;
    (rng.random_range(lo..=hi).round() as u64).max(1)
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig, topo: &'a Topology) -> Self {
        let mac = cfg.mac_config();
        let probe_mac = MacConfig {
            retries_r: cfg.probe_retries,
            ..mac
        };
        let est = cfg.estimator_config();
        let nodes = topo
            .nodes()
            .map(|id| Node {
                table: NeighborTable::new(id, est),
                rank: None,
                parent: None,
                poisoning: false,
                seq: SeqCounter::default(),
                dup: DupState::new(&mac),
                queue: MacQueue::new(mac.queue_capacity),
                in_flight: None,
                rng: rng::stream(cfg.seed, id.0 as u64 + 1),
                depth_area: 0,
                depth_since: 0,
            })
            .collect();
        let n = topo.node_count();
        let addresses = if cfg.heterogeneous_addresses {
            AddressBook::heterogeneous(n, topo.root(), cfg.seed)
        } else {
            AddressBook::homogeneous(n, topo.root())
        };
        Sim {
            cfg,
            topo,
            mac,
            probe_mac,
            hysteresis: cfg.effective_hysteresis(),
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            nodes,
            tables: topo
                .nodes()
                .map(|id| StoringTable::new(id, cfg.table_capacity))
                .collect(),
            view: RootTopologyView::new(topo.root()),
            view_refreshed: vec![None; n],
            addresses,
            traffic_rng: rng::stream(cfg.seed, 0),
            packets: Vec::new(),
            warmup_ms: cfg.warmup_ms(),
            end_ms: cfg.duration_ms(),
            control: ControlStats::default(),
            switches: 0,
            saturated: false,
            max_mean_depth: 0.0,
            snapshots: Vec::new(),
            prr_up: Vec::new(),
            prr_down: Vec::new(),
            staleness: Vec::new(),
            parent_samples: 0,
            stale_parent_samples: 0,
            srh_bytes: Vec::new(),
        }
    }

    fn schedule(&mut self, time: u64, event: Event) {
        self.seq += 1;
        self.heap.push(Scheduled {
            time,
            seq: self.seq,
            event,
        });
    }

    /// Schedule a periodic event unless it would fall past the end of the run.
    fn reschedule(&mut self, node: NodeId, period: u64, event: Event) {
        let dt = jittered(period, &mut self.nodes[node.index()].rng);
        if self.now + dt < self.end_ms {
            self.schedule(self.now + dt, event);
        }
    }

    fn root(&self) -> NodeId {
        self.topo.root()
    }

    fn bootstrap(&mut self) {
        let root = self.root();
        self.nodes[root.index()].rank = Some(self.cfg.metric.root_rank());
        let cfg = self.cfg;
        for id in self.topo.nodes() {
            let r = &mut self.nodes[id.index()].rng;
            let b = r.random_range(0..cfg.beacon_period_ms);
            let p = r.random_range(0..cfg.estimator.probe_period_ms);
            let d = r.random_range(0..cfg.dao_period_ms);
            self.schedule(b, Event::Beacon(id));
            if id != root {
                self.schedule(p, Event::Probe(id));
                self.schedule(d, Event::Dao(id));
            }
        }
        match cfg.traffic.pattern {
            Pattern::Downward => {
                let first = self.traffic_rng.random_range(0..self.interval_ms());
                self.schedule(first, Event::Generate(root));
            }
            Pattern::AnyToAny => {
                let n = self.topo.node_count();
                let k = ((n as f64 * cfg.traffic.any_to_any_source_fraction).round() as usize)
                    .clamp(1, n);
                let mut sources: Vec<usize> = sample(&mut self.traffic_rng, n, k).into_vec();
                sources.sort_unstable();
                for s in sources {
                    let first = self
                        .traffic_rng
                        .random_range(0..cfg.traffic.any_to_any_interval_ms);
                    self.schedule(first, Event::Generate(NodeId(s as u16)));
                }
            }
        }
        self.schedule(cfg.snapshot_period_ms, Event::Snapshot);
        self.schedule(SATURATION_WINDOW_MS, Event::Housekeeping);
    }

    fn interval_ms(&self) -> u64 {
        ((1000.0 / self.cfg.traffic.rate_hz).round() as u64).max(1)
    }

    fn counting(&self) -> bool {
        self.now >= self.warmup_ms
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Beacon(n) => {
                self.advertise(n);
                self.reschedule(n, self.cfg.beacon_period_ms, Event::Beacon(n));
            }
            Event::Poison(n) => self.advertise(n),
            Event::Probe(n) => self.probe(n),
            Event::Dao(n) => {
                if self.nodes[n.index()].parent.is_some() {
                    self.dao(n, None);
                }
                self.reschedule(n, self.cfg.dao_period_ms, Event::Dao(n));
            }
            Event::Generate(n) => self.generate(n),
            Event::TxDone(n) => self.tx_done(n),
            Event::Snapshot => self.snapshot(),
            Event::Housekeeping => self.housekeeping(),
        }
    }

    // ---------------------------------------------------------------------
    // control plane
    // ---------------------------------------------------------------------

    /// Broadcast `x`'s rank, or an infinite rank while detached.
    fn advertise(&mut self, x: NodeId) {
        let cfg = self.cfg;
        let node = &mut self.nodes[x.index()];
        let advertised = match node.rank {
            Some(r) => Some(Some(r)),
            None if node.poisoning => Some(None),
            None => None,
        };
        if let Some(rank) = advertised {
            self.control.beacons += 1;
            let seqno = (cfg.mac.dup_mode == DupMode::Naive)
                .then(|| self.nodes[x.index()].seq.next_seqno());
            let now = self.now;
            let heard: Vec<(NodeId, i32)> = self
                .topo
                .links_from(x)
                .filter_map(|l| {
                    let p = l.prr_at(now);
                    let rng = &mut self.nodes[x.index()].rng;
                    (p > 0.0 && rng.random_bool(p.min(1.0))).then(|| (l.dst, l.rssi_or_default()))
                })
                .collect();
            for (y, rssi) in heard {
                let node = &mut self.nodes[y.index()];
                if node.dup.check_duplicate(x, seqno, true, now) == DupVerdict::DropDuplicate {
                    self.control.control_spurious_duplicates += 1;
                    continue;
                }
                if node.table.insert_seeded(x, rssi, now).is_err() {
                    continue;
                }
                node.table.set_advertised_rank(x, rank);
                self.reselect(y, true);
            }
        }
    }

    fn probe(&mut self, x: NodeId) {
        if self.cfg.probing {
            let coin = self.nodes[x.index()].rng.random_bool(0.5);
            let metric = self.cfg.metric;
            let now = self.now;
            if let Some(t) = self.nodes[x.index()]
                .table
                .select_probe_target(now, coin, &metric)
            {
                self.control.probes += 1;
                self.control_unicast(x, t, true);
                self.reselect(x, false);
            }
        }
        self.reschedule(x, self.cfg.estimator.probe_period_ms, Event::Probe(x));
    }

    /// Instantaneous unicast control frame. Returns whether `to` accepted it.
    fn control_unicast(&mut self, from: NodeId, to: NodeId, is_probe: bool) -> bool {
        let now = self.now;
        let (data_prr, ack_prr) = self.link_pair(from, to);
        let mac = if is_probe { self.probe_mac } else { self.mac };
        let node = &mut self.nodes[from.index()];
        let seqno = node.seq.next_seqno();
        let out = transmit_acked(data_prr, ack_prr, &mac, &mut node.rng);
        let _ = node
            .table
            .update_on_tx(to, out.sender.attempts_used, out.sender.delivered, now);
        self.receive_copies(from, to, seqno, &out) == Some(true)
    }

    fn link_pair(&self, from: NodeId, to: NodeId) -> (f64, f64) {
        let d = self.topo.prr_at(from, to, self.now);
        let a = if self.cfg.ack_loss {
            self.topo.prr_at(to, from, self.now)
        } else {
            1.0
        };
        (d, a)
    }

    /// Run every received copy through `to`'s duplicate filter. `None` if
    /// nothing arrived; otherwise whether the first copy was accepted.
    fn receive_copies(
        &mut self,
        from: NodeId,
        to: NodeId,
        seqno: u8,
        out: &AckedTx,
    ) -> Option<bool> {
        out.first_rx_attempt?;
        let now = self.now;
        let dup = &mut self.nodes[to.index()].dup;
        let first = dup.check_duplicate(from, Some(seqno), false, now) == DupVerdict::Accept;
        for _ in 1..out.rx_copies {
            if dup.check_duplicate(from, Some(seqno), false, now) == DupVerdict::Accept {
                self.control.undetected_duplicates += 1;
            }
        }
        Some(first)
    }

    /// Whether `y` lies on the parent chain of `x` (or is `x`).
    fn is_ancestor(&self, y: NodeId, x: NodeId) -> bool {
        let mut cur = Some(x);
        for _ in 0..=self.nodes.len() {
            match cur {
                Some(c) if c == y => return true,
                Some(c) => cur = self.nodes[c.index()].parent,
                None => return false,
            }
        }
        false
    }

    /// Parent candidates of `y`, leaving out its own sub-DODAG.
    fn candidates(&self, y: NodeId) -> Vec<Candidate> {
        self.nodes[y.index()]
            .table
            .entries()
            .filter(|e| e.etx_estimate <= self.cfg.max_link_etx)
            .filter(|e| !self.is_ancestor(y, e.neighbor))
            .filter_map(|e| {
                Some(Candidate {
                    id: e.neighbor,
                    advertised_rank: e.advertised_rank?,
                    link_etx: e.etx_estimate,
                })
            })
            .collect()
    }

    fn reselect(&mut self, y: NodeId, allow_probe: bool) {
        if y == self.root() {
            return;
        }
        let metric = self.cfg.metric;
        let current = self.nodes[y.index()].parent;
        let h = self.hysteresis;
        let Some((mut best, mut rank)) =
            select_parent_ranked(&self.candidates(y), current, &metric, h)
        else {
            self.detach(y);
            return;
        };
        if Some(best) != current && allow_probe && self.cfg.probing {
            let stale = self.nodes[y.index()]
                .table
                .schedule_immediate_probe(best, self.now)
                .unwrap_or(false);
            if stale {
                self.control.immediate_probes += 1;
                self.control_unicast(y, best, true);
                match select_parent_ranked(&self.candidates(y), current, &metric, h) {
                    Some(r) => (best, rank) = r,
                    None => {
                        self.detach(y);
                        return;
                    }
                }
            }
        }
        if Some(best) != current {
            self.switch_parent(y, best);
        }
        let node = &mut self.nodes[y.index()];
        node.rank = Some(rank);
        node.table.refresh_potential_parents(rank);
    }

    /// No acceptable parent left: leave the DODAG and poison the old rank.
    fn detach(&mut self, y: NodeId) {
        let node = &mut self.nodes[y.index()];
        if node.parent.is_none() {
            return;
        }
        node.parent = None;
        node.rank = None;
        node.poisoning = true;
        let _ = node.table.set_preferred_parent(None);
        self.control.detachments += 1;
        self.schedule(self.now, Event::Poison(y));
    }

    fn switch_parent(&mut self, y: NodeId, new_parent: NodeId) {
        let old_path = self.nodes[y.index()].parent.map(|_| self.path_up(y));
        let node = &mut self.nodes[y.index()];
        node.parent = Some(new_parent);
        node.poisoning = false;
        let _ = node.table.set_preferred_parent(Some(new_parent));
        if self.counting() {
            self.switches += 1;
        }
        self.dao(y, old_path);
    }

    /// `from` and its ancestors up to the root or the first gap or loop.
    fn path_up(&self, from: NodeId) -> Vec<NodeId> {
        let root = self.root();
        let mut path = vec![from];
        let mut cur = from;
        while cur != root && path.len() <= self.cfg.hop_limit {
            match self.nodes[cur.index()].parent {
                Some(p) if !path.contains(&p) => {
                    path.push(p);
                    cur = p;
                }
                _ => break,
            }
        }
        path
    }

    /// Hop-by-hop delivery along `path`, stopping at the first loss.
    fn deliver_along(&mut self, path: &[NodeId]) -> Vec<bool> {
        let mut out = Vec::with_capacity(path.len().saturating_sub(1));
        let mut alive = true;
        for w in path.windows(2) {
            alive = alive && self.control_unicast(w[0], w[1], false);
            out.push(alive);
        }
        out
    }

    /// Registration from `y`. `old_path` is set right after a parent switch.
    fn dao(&mut self, y: NodeId, old_path: Option<Vec<NodeId>>) {
        let root = self.root();
        let path = self.path_up(y);
        self.control.registrations += 1;
        match self.cfg.mode {
            Mode::Storing => {
                let mut dests = vec![y];
                if old_path.is_some() {
                    dests.extend(self.tables[y.index()].destinations());
                }
                let delivery = self.deliver_along(&path);
                if delivery.last() != Some(&true) {
                    self.control.registrations_lost += 1;
                }
                for &d in &dests {
                    if let Ok(out) =
                        storing_register(&mut self.tables, &path, d, &delivery, self.now)
                    {
                        self.control.table_full += out.table_full.len() as u64;
                    }
                }
                if let Some(old) = old_path.filter(|p| p.len() > 1) {
                    self.control.deregistrations += 1;
                    let delivery = self.deliver_along(&old);
                    for &d in &dests {
                        let _ = storing_deregister(&mut self.tables, &old, d, &delivery);
                    }
                }
            }
            Mode::NonStoring => {
                if path.last() != Some(&root) {
                    self.control.registrations_lost += 1;
                    return;
                }
                let delivery = self.deliver_along(&path);
                if delivery.last() != Some(&true) {
                    self.control.registrations_lost += 1;
                    return;
                }
                let parent = path[1];
                match self.view.nonstoring_update(y, parent) {
                    Ok(UpdateVerdict::Accepted) => self.view_refreshed[y.index()] = Some(self.now),
                    _ => self.control.rejected_updates += 1,
                }
            }
        }
    }

    // ---------------------------------------------------------------------
    // data plane
    // ---------------------------------------------------------------------

    fn generate(&mut self, src: NodeId) {
        let n = self.topo.node_count() as u16;
        let root = self.root();
        let (dst, period) = match self.cfg.traffic.pattern {
            Pattern::Downward => {
                let mut d = NodeId(self.traffic_rng.random_range(0..n - 1));
                if d >= root {
                    d = NodeId(d.0 + 1);
                }
                (d, self.interval_ms())
            }
            Pattern::AnyToAny => {
                let mut d = NodeId(self.traffic_rng.random_range(0..n - 1));
                if d >= src {
                    d = NodeId(d.0 + 1);
                }
                (d, self.cfg.traffic.any_to_any_interval_ms)
            }
        };
        let id = self.packets.len();
        self.packets.push(Packet {
            id: id as u64,
            src,
            dst,
            created_ms: self.now,
            counted: self.counting(),
            hops: Vec::new(),
            route: None,
            route_pos: 0,
            came_from_below: true,
            terminal: None,
            latency_ms: None,
        });
        self.arrive(id, src);
        let dt = jittered(period, &mut self.traffic_rng);
        if self.now + dt < self.end_ms {
            self.schedule(self.now + dt, Event::Generate(src));
        }
    }

    fn lose(
        &mut self,
        pkt: usize,
        node: NodeId,
        next_hop: Option<NodeId>,
        attempts: u32,
        cause: LossCause,
    ) {
        let p = &mut self.packets[pkt];
        p.hops.push(HopRecord {
            node,
            next_hop,
            outcome: HopOutcome::Lost(cause),
            attempts,
        });
        p.terminal = Some(Terminal::Lost(cause));
    }

    fn next_hop(&mut self, pkt: usize, x: NodeId) -> Option<NodeId> {
        let root = self.root();
        let parent = self.nodes[x.index()].parent;
        let dst = self.packets[pkt].dst;
        match self.cfg.mode {
            Mode::NonStoring => {
                let p = &mut self.packets[pkt];
                if let Some(route) = &p.route {
                    let next = route.get(p.route_pos).copied();
                    p.route_pos += 1;
                    return next;
                }
                if x != root {
                    return parent;
                }
                let hops = self.view.route_hops(dst).ok()?;
                let bytes = header_size(&hops, &self.addresses, self.cfg.prefix_shared);
                let p = &mut self.packets[pkt];
                if let (Ok(b), true) = (bytes, p.counted) {
                    self.srh_bytes.push(b as f64);
                }
                let next = hops.first().copied();
                p.route = Some(hops);
                p.route_pos = 1;
                next
            }
            Mode::Storing => {
                let from_below = self.packets[pkt].came_from_below;
                match storing_lookup(&self.tables[x.index()], dst, from_below, parent.is_some()) {
                    Lookup::NextHop(n) => {
                        self.packets[pkt].came_from_below = false;
                        Some(n)
                    }
                    Lookup::Up => parent,
                    Lookup::NoRoute => None,
                }
            }
        }
    }

    fn arrive(&mut self, pkt: usize, x: NodeId) {
        let p = &self.packets[pkt];
        if x == p.dst {
            let latency = self.now - p.created_ms;
            let p = &mut self.packets[pkt];
            p.terminal = Some(Terminal::Delivered);
            p.latency_ms = Some(latency);
            return;
        }
        if p.hops.len() >= self.cfg.hop_limit {
            self.lose(pkt, x, None, 0, LossCause::NoRoute);
            return;
        }
        let Some(next_hop) = self.next_hop(pkt, x) else {
            self.lose(pkt, x, None, 0, LossCause::NoRoute);
            return;
        };
        self.account_depth(x);
        let frame = Frame {
            packet: pkt,
            next_hop,
        };
        if self.nodes[x.index()].queue.enqueue(frame).is_err() {
            self.lose(pkt, x, Some(next_hop), 0, LossCause::QueueOverflow);
            return;
        }
        self.try_start(x);
    }

    fn account_depth(&mut self, x: NodeId) {
        let now = self.now;
        let node = &mut self.nodes[x.index()];
        node.depth_area += node.queue.len() as u128 * (now - node.depth_since) as u128;
        node.depth_since = now;
    }

    fn try_start(&mut self, x: NodeId) {
        let node = &self.nodes[x.index()];
        if node.in_flight.is_some() {
            return;
        }
        let Some(&frame) = node.queue.front() else {
            return;
        };
        let (d, a) = self.link_pair(x, frame.next_hop);
        let mac = self.mac;
        let node = &mut self.nodes[x.index()];
        let seqno = node.seq.next_seqno();
        let outcome = transmit_acked(d, a, &mac, &mut node.rng);
        node.in_flight = Some(InFlight {
            frame,
            seqno,
            outcome,
        });
        let busy = outcome.sender.attempts_used as u64 * mac.per_attempt_delay_ms;
        self.schedule(self.now + busy, Event::TxDone(x));
    }

    fn tx_done(&mut self, x: NodeId) {
        self.account_depth(x);
        let now = self.now;
        let node = &mut self.nodes[x.index()];
        let Some(fl) = node.in_flight.take() else {
            return;
        };
        node.queue.dequeue();
        let Frame { packet, next_hop } = fl.frame;
        let s = fl.outcome.sender;
        let _ = node
            .table
            .update_on_tx(next_hop, s.attempts_used, s.delivered, now);
        let attempts = fl.outcome.first_rx_attempt.unwrap_or(s.attempts_used);
        match self.receive_copies(x, next_hop, fl.seqno, &fl.outcome) {
            None => self.lose(
                packet,
                x,
                Some(next_hop),
                s.attempts_used,
                LossCause::MacDrop,
            ),
            Some(false) => self.lose(
                packet,
                x,
                Some(next_hop),
                attempts,
                LossCause::SpuriousDuplicate,
            ),
            Some(true) => {
                self.packets[packet].hops.push(HopRecord {
                    node: x,
                    next_hop: Some(next_hop),
                    outcome: HopOutcome::Forwarded,
                    attempts,
                });
                self.arrive(packet, next_hop);
            }
        }
        self.try_start(x);
    }

    // ---------------------------------------------------------------------
    // measurement
    // ---------------------------------------------------------------------

    fn snapshot(&mut self) {
        let parents: Vec<Option<NodeId>> = self.nodes.iter().map(|n| n.parent).collect();
        let state = match self.cfg.mode {
            Mode::Storing => RoutingState::Storing(&self.tables),
            Mode::NonStoring => RoutingState::NonStoring(&self.view),
        };
        self.snapshots
            .push(snapshot_consistency(state, self.topo, &parents, self.now));
        if self.counting() {
            for (i, node) in self.nodes.iter().enumerate() {
                let Some(p) = node.parent else { continue };
                let id = NodeId(i as u16);
                self.prr_up.push(self.topo.prr_at(id, p, self.now));
                self.prr_down.push(self.topo.prr_at(p, id, self.now));
                let last = node
                    .table
                    .get(p)
                    .and_then(|e| e.last_update_ms)
                    .unwrap_or(0);
                self.staleness.push((self.now - last) as f64);
                self.parent_samples += 1;
                if !node.table.is_fresh(p, self.now) {
                    self.stale_parent_samples += 1;
                }
            }
        }
        if self.now + self.cfg.snapshot_period_ms < self.end_ms {
            self.schedule(self.now + self.cfg.snapshot_period_ms, Event::Snapshot);
        }
    }

    fn housekeeping(&mut self) {
        let cap = self.cfg.mac.queue_capacity as f64;
        for i in 0..self.nodes.len() {
            self.account_depth(NodeId(i as u16));
            let node = &mut self.nodes[i];
            let mean = node.depth_area as f64 / SATURATION_WINDOW_MS as f64;
            node.depth_area = 0;
            self.max_mean_depth = self.max_mean_depth.max(mean);
            if mean > SATURATION_FILL * cap {
                self.saturated = true;
            }
        }
        let lifetime = self.cfg.route_lifetime_ms;
        if lifetime > 0 {
            match self.cfg.mode {
                Mode::Storing => {
                    for t in &mut self.tables {
                        self.control.expired_routes += t.expire(self.now, lifetime) as u64;
                    }
                }
                Mode::NonStoring => {
                    for (i, at) in self.view_refreshed.iter_mut().enumerate() {
                        if at.is_some_and(|t| self.now - t > lifetime) {
                            self.view.remove(NodeId(i as u16));
                            *at = None;
                            self.control.expired_routes += 1;
                        }
                    }
                }
            }
        }
        if self.now + SATURATION_WINDOW_MS < self.end_ms {
            self.schedule(self.now + SATURATION_WINDOW_MS, Event::Housekeeping);
        }
    }

    fn radius(&self) -> usize {
        let root = self.root();
        self.topo
            .nodes()
            .map(|n| {
                let p = self.path_up(n);
                if p.last() == Some(&root) {
                    p.len() - 1
                } else {
                    0
                }
            })
            .max()
            .unwrap_or(0)
    }

    fn finish(self) -> RunReport {
        let mut losses: BTreeMap<LossCause, u64> = LossCause::ALL.iter().map(|&c| (c, 0)).collect();
        let mut sent = 0u64;
        let mut delivered = 0u64;
        let mut hops = Vec::new();
        let mut latency = Vec::new();
        let mut journeys = Vec::new();
        for p in self.packets.iter().filter(|p| p.counted) {
            sent += 1;
            let terminal = p.terminal.expect("every packet terminates");
            match terminal {
                Terminal::Delivered => {
                    delivered += 1;
                    hops.push(p.hops.len() as f64);
                    latency.push(p.latency_ms.unwrap_or(0) as f64);
                }
                Terminal::Lost(c) => *losses.entry(c).or_default() += 1,
            }
            if self.cfg.journeys {
                journeys.push(PacketJourney {
                    packet_id: p.id,
                    src: p.src,
                    dst: p.dst,
                    send_time_ms: p.created_ms,
                    hops: p.hops.clone(),
                    terminal,
                    latency_ms: p.latency_ms,
                });
            }
        }
        let lost: u64 = losses.values().sum();
        let measured_h = (self.end_ms - self.warmup_ms) as f64 / 3_600_000.0;
        let non_root = self.topo.node_count().saturating_sub(1).max(1) as f64;
        RunReport {
            config: self.cfg.clone(),
            node_count: self.topo.node_count(),
            packets_sent: sent,
            delivered,
            loss_rate: if sent > 0 {
                lost as f64 / sent as f64
            } else {
                0.0
            },
            loss_rate_upper_bound_95: if lost == 0 {
                rule_of_three(sent, 0).ok()
            } else {
                None
            },
            losses,
            link_prr_up: Distribution::from_samples(&self.prr_up),
            link_prr_down: Distribution::from_samples(&self.prr_down),
            hop_count: Distribution::from_samples(&hops),
            radius: self.radius(),
            latency_ms: Distribution::from_samples(&latency),
            parent_switches: self.switches,
            switches_per_node_hour: self.switches as f64 / non_root / measured_h,
            parent_staleness_ms: Distribution::from_samples(&self.staleness),
            stale_parent_fraction: if self.parent_samples == 0 {
                0.0
            } else {
                self.stale_parent_samples as f64 / self.parent_samples as f64
            },
            srh_bytes: Distribution::from_samples(&self.srh_bytes),
            saturated: self.saturated,
            max_mean_queue_depth: self.max_mean_depth,
            control: self.control,
            consistency: self.snapshots,
            journeys,
        }
    }
}
