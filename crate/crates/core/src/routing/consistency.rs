use std::collections::BTreeSet;
use std::io::{self, Write};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nonstoring::{RootTopologyView, UpdateVerdict};
use super::storing::{storing_deregister, storing_register, StoringTable, DEFAULT_TABLE_CAPACITY};
use super::{Mode, RoutingError};
use crate::rng;
use crate::topology::{NodeId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeStatus {
    Reachable,
    Outdated,
    Unreachable,
}

impl NodeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeStatus::Reachable => "REACHABLE",
            NodeStatus::Outdated => "OUTDATED",
            NodeStatus::Unreachable => "UNREACHABLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencySnapshot {
    pub time_ms: u64,
    /// Indexed by node id.
    pub statuses: Vec<NodeStatus>,
}

impl ConsistencySnapshot {
    pub fn count(&self, status: NodeStatus) -> usize {
        self.statuses.iter().filter(|&&s| s == status).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum RoutingState<'a> {
    Storing(&'a [StoringTable]),
    NonStoring(&'a RootTopologyView),
}

fn true_chain(root: NodeId, parents: &[Option<NodeId>], dest: NodeId) -> Option<Vec<NodeId>> {
    // root first, dest last
    let mut chain = vec![dest];
    let mut seen = BTreeSet::from([dest]);
    let mut cur = dest;
    while cur != root {
        cur = (*parents.get(cur.index())?)?;
        if !seen.insert(cur) {
            return None;
        }
        chain.push(cur);
    }
    chain.reverse();
    Some(chain)
}

fn storing_status(
    tables: &[StoringTable],
    topology: &Topology,
    chain: &[NodeId],
    dest: NodeId,
    time_ms: u64,
) -> NodeStatus {
    let root = chain[0];
    let mut seen = BTreeSet::from([root]);
    let mut cur = root;
    while cur != dest {
        let Some(next) = tables.get(cur.index()).and_then(|t| t.next_hop(dest)) else {
            return NodeStatus::Unreachable;
        };
        if topology.prr_at(cur, next, time_ms) <= 0.0 || !seen.insert(next) {
            return NodeStatus::Unreachable;
        }
        cur = next;
    }
    // every true ancestor must point at the true child, and nobody else may
    // hold a route for dest
    let expected: Vec<(NodeId, NodeId)> = chain.windows(2).map(|w| (w[0], w[1])).collect();
    let on_chain: BTreeSet<NodeId> = expected.iter().map(|&(a, _)| a).collect();
    let chain_ok = expected
        .iter()
        .all(|&(a, c)| tables.get(a.index()).and_then(|t| t.next_hop(dest)) == Some(c));
    let no_strays = tables
        .iter()
        .filter(|t| !on_chain.contains(&t.owner()))
        .all(|t| t.next_hop(dest).is_none());
    if chain_ok && no_strays {
        NodeStatus::Reachable
    } else {
        NodeStatus::Outdated
    }
}

fn nonstoring_status(
    view: &RootTopologyView,
    topology: &Topology,
    chain: &[NodeId],
    dest: NodeId,
    time_ms: u64,
) -> NodeStatus {
    let Ok(hops) = view.route_hops(dest) else {
        return NodeStatus::Unreachable;
    };
    let mut prev = view.root();
    for &h in &hops {
        if topology.prr_at(prev, h, time_ms) <= 0.0 {
            return NodeStatus::Unreachable;
        }
        prev = h;
    }
    if hops[..] == chain[1..] {
        NodeStatus::Reachable
    } else {
        NodeStatus::Outdated
    }
}

/// Classify every node by walking, loss-free, from the root over the routing
/// state. `true_parents[i]` is node `i`'s current preferred parent.
pub fn snapshot_consistency(
    state: RoutingState<'_>,
    topology: &Topology,
    true_parents: &[Option<NodeId>],
    time_ms: u64,
) -> ConsistencySnapshot {
    let root = topology.root();
    let statuses = topology
        .nodes()
        .map(|dest| {
            if dest == root {
                return NodeStatus::Reachable;
            }
            let Some(chain) = true_chain(root, true_parents, dest) else {
                return NodeStatus::Unreachable;
            };
            match state {
                RoutingState::Storing(tables) => {
                    storing_status(tables, topology, &chain, dest, time_ms)
                }
                RoutingState::NonStoring(view) => {
                    nonstoring_status(view, topology, &chain, dest, time_ms)
                }
            }
        })
        .collect();
    ConsistencySnapshot { time_ms, statuses }
}

/// `time_ms,node_id,status` rows for every snapshot.
pub fn write_consistency_csv<W: Write>(
    mut out: W,
    snapshots: &[ConsistencySnapshot],
) -> io::Result<()> {
    writeln!(out, "time_ms,node_id,status")?;
    for s in snapshots {
        for (i, st) in s.statuses.iter().enumerate() {
            writeln!(out, "{},{},{}", s.time_ms, i, st.as_str())?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchStudyParams {
    pub switches: usize,
    /// Per-hop loss probability of registration messages.
    pub registration_loss: f64,
    pub seed: u64,
    pub table_capacity: usize,
}

impl Default for SwitchStudyParams {
    fn default() -> Self {
        SwitchStudyParams {
            switches: 1000,
            registration_loss: 0.1,
            seed: 1,
            table_capacity: DEFAULT_TABLE_CAPACITY,
        }
    }
}

/// Result of a random parent-switch sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchStudy {
    pub mode: Mode,
    pub snapshots: Vec<ConsistencySnapshot>,
    pub rejected_updates: usize,
    /// Snapshots holding at least one node in the given state.
    pub outdated_snapshots: usize,
    pub unreachable_snapshots: usize,
    /// True parent relation was acyclic after every switch.
    pub tree_acyclic: bool,
    /// Root view was acyclic after every accepted update.
    pub view_acyclic: bool,
}

fn bidirectional(topology: &Topology, a: NodeId, b: NodeId) -> bool {
    topology.prr_at(a, b, 0) > 0.0 && topology.prr_at(b, a, 0) > 0.0
}

fn bfs_tree(topology: &Topology) -> Vec<Option<NodeId>> {
    let n = topology.node_count();
    let root = topology.root();
    let mut parents = vec![None; n];
    let mut seen = vec![false; n];
    seen[root.index()] = true;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(x) = queue.pop_front() {
        for link in topology.links_from(x) {
            let y = link.dst;
            if !seen[y.index()] && bidirectional(topology, x, y) {
                seen[y.index()] = true;
                parents[y.index()] = Some(x);
                queue.push_back(y);
            }
        }
    }
    parents
}

fn path_to_root(parents: &[Option<NodeId>], from: NodeId, root: NodeId) -> Vec<NodeId> {
    let mut path = vec![from];
    let mut cur = from;
    while cur != root {
        match parents[cur.index()] {
            Some(p) => {
                path.push(p);
                cur = p;
            }
            None => break,
        }
    }
    path
}

fn is_descendant(parents: &[Option<NodeId>], node: NodeId, of: NodeId) -> bool {
    let mut cur = Some(node);
    let mut steps = 0;
    while let Some(x) = cur {
        if x == of {
            return true;
        }
        steps += 1;
        if steps > parents.len() {
            return false;
        }
        cur = parents[x.index()];
    }
    false
}

/// Start from a converged BFS tree over bidirectional links, then perform
/// random parent switches to non-descendant neighbors. Registrations travel
/// the new path hop by hop (storing) or end to end (non-storing), each hop
/// lost with `registration_loss`. A snapshot follows every switch.
pub fn switch_study(
    topology: &Topology,
    mode: Mode,
    params: &SwitchStudyParams,
) -> Result<SwitchStudy, RoutingError> {
    let root = topology.root();
    let n = topology.node_count();
    let mut parents = bfs_tree(topology);
    let mut r = rng::seeded(params.seed);
    let mut tables: Vec<StoringTable> = topology
        .nodes()
        .map(|id| StoringTable::new(id, params.table_capacity))
        .collect();
    let mut view = RootTopologyView::new(root);

    for id in topology.nodes().filter(|&id| id != root) {
        let path = path_to_root(&parents, id, root);
        if *path.last().unwrap() != root {
            continue;
        }
        let ok = vec![true; path.len() - 1];
        storing_register(&mut tables, &path, id, &ok, 0)?;
        view.nonstoring_update(id, parents[id.index()].unwrap())?;
    }

    let movable: Vec<NodeId> = topology
        .nodes()
        .filter(|&id| id != root && parents[id.index()].is_some())
        .collect();
    let mut study = SwitchStudy {
        mode,
        snapshots: Vec::with_capacity(params.switches),
        rejected_updates: 0,
        outdated_snapshots: 0,
        unreachable_snapshots: 0,
        tree_acyclic: true,
        view_acyclic: true,
    };
    let loss = params.registration_loss.clamp(0.0, 1.0);
    let mut t = 0u64;
    let mut done = 0;
    let mut attempts = 0;
    while done < params.switches && attempts < params.switches * 100 && !movable.is_empty() {
        attempts += 1;
        let &node = movable.choose(&mut r).unwrap();
        let old_parent = parents[node.index()];
        let candidates: Vec<NodeId> = topology
            .links_from(node)
            .map(|l| l.dst)
            .filter(|&p| {
                Some(p) != old_parent
                    && bidirectional(topology, node, p)
                    && !is_descendant(&parents, p, node)
            })
            .collect();
        let Some(&new_parent) = candidates.choose(&mut r) else {
            continue;
        };
        done += 1;
        t += 1_000;
        let old_path = path_to_root(&parents, node, root);
        parents[node.index()] = Some(new_parent);
        let new_path = path_to_root(&parents, node, root);
        study.tree_acyclic &= *new_path.last().unwrap() == root && new_path.len() <= n;

        match mode {
            Mode::Storing => {
                let mut dests: Vec<NodeId> = tables[node.index()].destinations().collect();
                dests.push(node);
                let reg: Vec<bool> = (1..new_path.len()).map(|_| !r.random_bool(loss)).collect();
                for &d in &dests {
                    storing_register(&mut tables, &new_path, d, &reg, t)?;
                }
                let dereg: Vec<bool> = (1..old_path.len()).map(|_| !r.random_bool(loss)).collect();
                for &d in &dests {
                    storing_deregister(&mut tables, &old_path, d, &dereg)?;
                }
            }
            Mode::NonStoring => {
                let arrived = (1..new_path.len()).all(|_| !r.random_bool(loss));
                if arrived {
                    if view.nonstoring_update(node, new_parent)? == UpdateVerdict::Rejected {
                        study.rejected_updates += 1;
                    }
                    study.view_acyclic &= view.is_acyclic();
                }
            }
        }

        let state = match mode {
            Mode::Storing => RoutingState::Storing(&tables),
            Mode::NonStoring => RoutingState::NonStoring(&view),
        };
        let snap = snapshot_consistency(state, topology, &parents, t);
        study.outdated_snapshots += usize::from(snap.count(NodeStatus::Outdated) > 0);
        study.unreachable_snapshots += usize::from(snap.count(NodeStatus::Unreachable) > 0);
        study.snapshots.push(snap);
    }
    Ok(study)
}
