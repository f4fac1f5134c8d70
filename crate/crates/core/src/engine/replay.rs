use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::default_hysteresis;
use super::report::Distribution;
use crate::estimator::EstimatorConfig;
use crate::metric::{path_delivery, select_parent_ranked, Candidate, Metric};
use crate::topology::{NodeId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayParams {
    pub retries_r: u32,
    /// `None` picks the per-metric default.
    pub hysteresis: Option<f64>,
    pub alpha: f64,
}

impl Default for ReplayParams {
    fn default() -> Self {
        ReplayParams {
            retries_r: 8,
            hysteresis: None,
            alpha: EstimatorConfig::default().alpha,
        }
    }
}

/// Per-metric outcome of a trace replay. Path and link samples are taken
/// per node per window; switch counts are per node over the whole trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStudy {
    pub metric: Metric,
    pub up_pdr: Vec<f64>,
    pub down_pdr: Vec<f64>,
    pub up_link_prr: Vec<f64>,
    pub down_link_prr: Vec<f64>,
    pub hops: Vec<f64>,
    pub switches: Vec<f64>,
    /// Node-windows without a route to the root.
    pub detached: usize,
}

impl MetricStudy {
    pub fn summary(&self) -> BTreeMap<&'static str, Distribution> {
        BTreeMap::from([
            ("up_pdr", Distribution::from_samples(&self.up_pdr)),
            ("down_pdr", Distribution::from_samples(&self.down_pdr)),
            ("up_link_prr", Distribution::from_samples(&self.up_link_prr)),
            (
                "down_link_prr",
                Distribution::from_samples(&self.down_link_prr),
            ),
            ("hops", Distribution::from_samples(&self.hops)),
            ("switches", Distribution::from_samples(&self.switches)),
        ])
    }
}

pub fn replay_metric_study(topology: &Topology, metrics: &[Metric], r: u32) -> Vec<MetricStudy> {
    let params = ReplayParams {
        retries_r: r,
        ..ReplayParams::default()
    };
    replay_metric_study_with(topology, metrics, &params)
}

fn is_descendant(parents: &[Option<NodeId>], node: NodeId, of: NodeId) -> bool {
    let mut cur = Some(node);
    for _ in 0..=parents.len() {
        match cur {
            Some(x) if x == of => return true,
            Some(x) => cur = parents[x.index()],
            None => return false,
        }
    }
    true
}

/// Replays the trace window by window: link estimates move by one EWMA step
/// towards each window's `1/PRR`, then every node recomputes its rank and
/// parent until the tree is stable. The first window converges without
/// hysteresis.
pub fn replay_metric_study_with(
    topology: &Topology,
    metrics: &[Metric],
    params: &ReplayParams,
) -> Vec<MetricStudy> {
    metrics
        .iter()
        .map(|m| replay_one(topology, m, params))
        .collect()
}

fn replay_one(topo: &Topology, metric: &Metric, params: &ReplayParams) -> MetricStudy {
    let n = topo.node_count();
    let root = topo.root();
    let r = params.retries_r;
    let penalty = EstimatorConfig {
        retries_r: r,
        ..EstimatorConfig::default()
    }
    .failure_penalty();
    let hysteresis = params
        .hysteresis
        .unwrap_or_else(|| default_hysteresis(metric));
    let mut times = topo.sample_times();
    if times.is_empty() {
        times.push(0);
    }

    let mut estimate: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    let mut parents: Vec<Option<NodeId>> = vec![None; n];
    let mut ranks: Vec<Option<f64>> = vec![None; n];
    ranks[root.index()] = Some(metric.root_rank());
    let mut switches = vec![0u64; n];
    let mut study = MetricStudy {
        metric: *metric,
        up_pdr: Vec::new(),
        down_pdr: Vec::new(),
        up_link_prr: Vec::new(),
        down_link_prr: Vec::new(),
        hops: Vec::new(),
        switches: Vec::new(),
        detached: 0,
    };

    for (w, &t) in times.iter().enumerate() {
        for link in topo.links() {
            let prr = link.prr_at(t);
            let sample = if prr > 0.0 {
                (1.0 / prr).min(penalty)
            } else {
                penalty
            };
            estimate
                .entry((link.src, link.dst))
                .and_modify(|e| *e = params.alpha * sample + (1.0 - params.alpha) * *e)
                .or_insert(sample);
        }
        let h = if w == 0 { 0.0 } else { hysteresis };
        let before = parents.clone();
        for _ in 0..=n {
            let mut changed = false;
            for x in topo.nodes().filter(|&x| x != root) {
                let cands: Vec<Candidate> = topo
                    .links_from(x)
                    .filter(|l| {
                        // the child must hear the parent's advertisements
                        l.prr_at(t) > 0.0 && topo.prr_at(l.dst, x, t) > 0.0
                    })
                    .filter(|l| !is_descendant(&parents, l.dst, x))
                    .filter_map(|l| {
                        Some(Candidate {
                            id: l.dst,
                            advertised_rank: ranks[l.dst.index()]?,
                            link_etx: estimate[&(x, l.dst)],
                        })
                    })
                    .collect();
                let cur = parents[x.index()].filter(|p| cands.iter().any(|c| c.id == *p));
                let (p, rank) = match select_parent_ranked(&cands, cur, metric, h) {
                    Some((p, rank)) => (Some(p), Some(rank)),
                    None => (None, None),
                };
                if p != parents[x.index()] || rank != ranks[x.index()] {
                    changed = true;
                    parents[x.index()] = p;
                    ranks[x.index()] = rank;
                }
            }
            if !changed {
                break;
            }
        }
        if w > 0 {
            for x in 0..n {
                if before[x].is_some() && parents[x] != before[x] {
                    switches[x] += 1;
                }
            }
        }

        for x in topo.nodes().filter(|&x| x != root) {
            let Some(p) = parents[x.index()] else {
                study.detached += 1;
                continue;
            };
            let (mut up, mut down) = (Vec::new(), Vec::new());
            let mut cur = x;
            while cur != root {
                let Some(par) = parents[cur.index()] else {
                    break;
                };
                up.push(topo.prr_at(cur, par, t));
                down.push(topo.prr_at(par, cur, t));
                cur = par;
                if up.len() > n {
                    break;
                }
            }
            if cur != root {
                study.detached += 1;
                continue;
            }
            study.up_pdr.push(path_delivery(&up, r));
            study.down_pdr.push(path_delivery(&down, r));
            study.up_link_prr.push(topo.prr_at(x, p, t));
            study.down_link_prr.push(topo.prr_at(p, x, t));
            study.hops.push(up.len() as f64);
        }
    }
    study.switches = topo
        .nodes()
        .filter(|&x| x != root)
        .map(|x| switches[x.index()] as f64)
        .collect();
    study
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::hop_success;
    use crate::topology::{DirectionalLink, PrrSample};

    fn link(a: u16, b: u16, prr: f64) -> DirectionalLink {
        DirectionalLink {
            src: NodeId(a),
            dst: NodeId(b),
            prr_series: vec![PrrSample {
                time_ms: 0,
                prr,
                counts: None,
            }],
            rssi_dbm: None,
        }
    }

    #[test]
    fn star_has_one_hop_and_analytic_pdr() {
        let prrs = [0.9, 0.5, 0.7];
        let mut links = Vec::new();
        for (i, &p) in prrs.iter().enumerate() {
            let leaf = i as u16 + 1;
            links.push(link(leaf, 0, p));
            links.push(link(0, leaf, p / 2.0));
        }
        let topo = Topology::new(4, NodeId(0), links).unwrap();
        for s in replay_metric_study(&topo, &[Metric::Etx, Metric::Lr { retries_r: 8 }], 8) {
            assert_eq!(s.hops, vec![1.0; 3]);
            for (i, &p) in prrs.iter().enumerate() {
                assert_eq!(s.up_pdr[i], hop_success(p, 8));
                assert_eq!(s.down_pdr[i], hop_success(p / 2.0, 8));
            }
            assert_eq!(s.detached, 0);
        }
    }

    #[test]
    fn lr_takes_the_reliable_detour() {
        // 2 reaches the root directly over a fair link or via 1 over good ones;
        // ETX counts 1.67 vs 2.1 transmissions, LR sees 2.6e-4 vs ~4e-12 loss
        let topo = Topology::new(
            3,
            NodeId(0),
            vec![
                link(1, 0, 0.95),
                link(0, 1, 0.95),
                link(2, 1, 0.95),
                link(1, 2, 0.95),
                link(2, 0, 0.6),
                link(0, 2, 0.6),
            ],
        )
        .unwrap();
        let s = replay_metric_study(&topo, &[Metric::Etx, Metric::Lr { retries_r: 8 }], 8);
        assert_eq!(s[0].hops, vec![1.0, 1.0]);
        assert_eq!(s[1].hops, vec![1.0, 2.0]);
        assert!(s[1].up_pdr[1] > s[0].up_pdr[1]);
    }
}
