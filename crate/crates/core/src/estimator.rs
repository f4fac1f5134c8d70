//! Per-node neighbor table: EWMA link estimates, an exponentially decaying
//! freshness counter, RSSI-seeded first guesses and probe-target selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::Metric;
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// EWMA weight of a new transmission sample.
    pub alpha: f64,
    pub freshness_max: f64,
    pub freshness_half_life_ms: u64,
    /// An entry is fresh iff its freshness is at least this value.
    pub freshness_threshold: f64,
    /// MAC retries, used to derive the failed-delivery penalty.
    pub retries_r: u32,
    pub probe_period_ms: u64,
    pub capacity: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            alpha: 0.15,
            freshness_max: 16.0,
            freshness_half_life_ms: 4 * 60_000,
            freshness_threshold: 2.0,
            retries_r: 8,
            probe_period_ms: 60_000,
            capacity: 16,
        }
    }
}

impl EstimatorConfig {
    /// ETX sample recorded for a transmission that exhausted all retries.
    pub fn failure_penalty(&self) -> f64 {
        (1.5 * (1.0 + self.retries_r as f64)).min(12.0)
    }
}

/// Initial PRR guess from the RSSI of the first packet heard.
pub fn rssi_to_prr(rssi_dbm: i32) -> f64 {
    let rssi = rssi_dbm.clamp(-100, 0) as f64;
    ((rssi + 90.0) / 30.0).clamp(0.25, 1.0)
}

/// Initial ETX estimate, `1 / rssi_to_prr(rssi)`.
pub fn seed_from_rssi(rssi_dbm: i32) -> f64 {
    1.0 / rssi_to_prr(rssi_dbm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub neighbor: NodeId,
    pub etx_estimate: f64,
    /// Freshness as of `freshness_at_ms`.
    pub freshness: f64,
    pub freshness_at_ms: u64,
    /// Time of the last transmission-based update; `None` for entries that
    /// only carry an RSSI seed.
    pub last_update_ms: Option<u64>,
    pub is_potential_parent: bool,
    pub advertised_rank: Option<f64>,
    pub tx_updates: u64,
}

impl NeighborEntry {
    fn decayed(&self, now_ms: u64, half_life_ms: u64) -> f64 {
        let dt = now_ms.saturating_sub(self.freshness_at_ms) as f64;
        self.freshness * (-dt / half_life_ms as f64).exp2()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("neighbor {0} is not in the table")]
    UnknownNeighbor(NodeId),
    #[error("table full and no entry can be evicted")]
    TableFull,
    #[error("attempt count must be at least 1")]
    ZeroAttempts,
}

/// Result of [`NeighborTable::update_on_tx`].
#[derive(Debug, Clone, PartialEq)]
pub struct TxUpdate {
    pub entry: NeighborEntry,
    /// Entry removed to make room for a previously unknown neighbor.
    pub evicted: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborTable {
    owner: NodeId,
    entries: BTreeMap<NodeId, NeighborEntry>,
    preferred_parent: Option<NodeId>,
    config: EstimatorConfig,
}

impl NeighborTable {
    pub fn new(owner: NodeId, config: EstimatorConfig) -> Self {
        NeighborTable {
            owner,
            entries: BTreeMap::new(),
            preferred_parent: None,
            config: EstimatorConfig {
                capacity: config.capacity.max(1),
                ..config
            },
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, neighbor: NodeId) -> Option<&NeighborEntry> {
        self.entries.get(&neighbor)
    }

    pub fn entries(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.entries.values()
    }

    pub fn preferred_parent(&self) -> Option<NodeId> {
        self.preferred_parent
    }

    pub fn set_preferred_parent(&mut self, parent: Option<NodeId>) -> Result<(), EstimatorError> {
        if let Some(p) = parent {
            if !self.entries.contains_key(&p) {
                return Err(EstimatorError::UnknownNeighbor(p));
            }
        }
        self.preferred_parent = parent;
        Ok(())
    }

    pub fn freshness_at(&self, neighbor: NodeId, now_ms: u64) -> Option<f64> {
        self.entries
            .get(&neighbor)
            .map(|e| e.decayed(now_ms, self.config.freshness_half_life_ms))
    }

    pub fn is_fresh(&self, neighbor: NodeId, now_ms: u64) -> bool {
        self.freshness_at(neighbor, now_ms)
            .is_some_and(|f| f >= self.config.freshness_threshold)
    }

    /// Insert a neighbor heard for the first time with an RSSI-derived
    /// estimate. Existing entries are left untouched.
    pub fn insert_seeded(
        &mut self,
        neighbor: NodeId,
        rssi_dbm: i32,
        now_ms: u64,
    ) -> Result<Option<NodeId>, EstimatorError> {
        if self.entries.contains_key(&neighbor) {
            return Ok(None);
        }
        let evicted = self.make_room(now_ms)?;
        self.entries.insert(
            neighbor,
            NeighborEntry {
                neighbor,
                etx_estimate: seed_from_rssi(rssi_dbm),
                freshness: 0.0,
                freshness_at_ms: now_ms,
                last_update_ms: None,
                is_potential_parent: false,
                advertised_rank: None,
                tx_updates: 0,
            },
        );
        Ok(evicted)
    }

    /// Evicts the non-parent entry with the lowest freshness when full.
    fn make_room(&mut self, now_ms: u64) -> Result<Option<NodeId>, EstimatorError> {
        if self.entries.len() < self.config.capacity {
            return Ok(None);
        }
        let half_life = self.config.freshness_half_life_ms;
        let victim = self
            .entries
            .values()
            .filter(|e| Some(e.neighbor) != self.preferred_parent)
            .min_by(|a, b| {
                a.decayed(now_ms, half_life)
                    .total_cmp(&b.decayed(now_ms, half_life))
                    .then(a.last_update_ms.cmp(&b.last_update_ms))
                    .then(a.neighbor.cmp(&b.neighbor))
            })
            .map(|e| e.neighbor)
            .ok_or(EstimatorError::TableFull)?;
        self.entries.remove(&victim);
        Ok(Some(victim))
    }

    /// Fold one unicast transmission outcome into the estimate of `neighbor`.
    ///
    /// The sample is the attempt count on success and the failure penalty
    /// otherwise. A neighbor without an entry starts from the sample itself.
    pub fn update_on_tx(
        &mut self,
        neighbor: NodeId,
        attempts: u32,
        delivered: bool,
        now_ms: u64,
    ) -> Result<TxUpdate, EstimatorError> {
        if attempts == 0 {
            return Err(EstimatorError::ZeroAttempts);
        }
        let sample = if delivered {
            attempts as f64
        } else {
            self.config.failure_penalty()
        };
        let mut evicted = None;
        let known = self.entries.contains_key(&neighbor);
        if !known {
            evicted = self.make_room(now_ms)?;
            self.entries.insert(
                neighbor,
                NeighborEntry {
                    neighbor,
                    etx_estimate: sample,
                    freshness: 0.0,
                    freshness_at_ms: now_ms,
                    last_update_ms: None,
                    is_potential_parent: false,
                    advertised_rank: None,
                    tx_updates: 0,
                },
            );
        }
        let alpha = self.config.alpha;
        let f_max = self.config.freshness_max;
        let entry = self.entries.get_mut(&neighbor).expect("inserted above");
        if known {
            entry.etx_estimate = alpha * sample + (1.0 - alpha) * entry.etx_estimate;
        }
        entry.freshness = f_max;
        entry.freshness_at_ms = now_ms;
        entry.last_update_ms = Some(now_ms);
        entry.tx_updates += 1;
        Ok(TxUpdate {
            entry: entry.clone(),
            evicted,
        })
    }

    /// Apply exponential decay to every entry's freshness up to `now_ms`.
    pub fn decay_freshness(&mut self, now_ms: u64) {
        let half_life = self.config.freshness_half_life_ms;
        for e in self.entries.values_mut() {
            if now_ms > e.freshness_at_ms {
                e.freshness = e.decayed(now_ms, half_life);
                e.freshness_at_ms = now_ms;
            }
        }
    }

    pub fn set_advertised_rank(&mut self, neighbor: NodeId, rank: Option<f64>) {
        if let Some(e) = self.entries.get_mut(&neighbor) {
            e.advertised_rank = rank;
        }
    }

    /// Flag entries whose advertised rank is below `own_rank` as potential
    /// parents.
    pub fn refresh_potential_parents(&mut self, own_rank: f64) {
        for e in self.entries.values_mut() {
            e.is_potential_parent = e.advertised_rank.is_some_and(|r| r < own_rank);
        }
    }

    /// Pick the neighbor to probe next.
    ///
    /// The preferred parent wins if it is stale. Otherwise `coin == false`
    /// picks the stale potential parent with the lowest would-be rank, and
    /// `coin == true` (or no such candidate) picks the least-recently
    /// updated entry.
    pub fn select_probe_target(
        &mut self,
        now_ms: u64,
        coin: bool,
        metric: &Metric,
    ) -> Option<NodeId> {
        self.decay_freshness(now_ms);
        if self.entries.is_empty() {
            return None;
        }
        let thresh = self.config.freshness_threshold;
        if let Some(p) = self.preferred_parent {
            if self.entries.get(&p).is_some_and(|e| e.freshness < thresh) {
                return Some(p);
            }
        }
        if !coin {
            let best = self
                .entries
                .values()
                .filter(|e| e.is_potential_parent && e.freshness < thresh)
                .filter_map(|e| {
                    let rank = metric.rank_via_etx(e.advertised_rank?, e.etx_estimate)?;
                    Some((rank, e.neighbor))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some((_, id)) = best {
                return Some(id);
            }
        }
        self.entries
            .values()
            .min_by(|a, b| {
                a.last_update_ms
                    .cmp(&b.last_update_ms)
                    .then(a.neighbor.cmp(&b.neighbor))
            })
            .map(|e| e.neighbor)
    }

    /// Whether switching to `new_parent` should be preceded by a probe.
    pub fn schedule_immediate_probe(
        &self,
        new_parent: NodeId,
        now_ms: u64,
    ) -> Result<bool, EstimatorError> {
        let f = self
            .freshness_at(new_parent, now_ms)
            .ok_or(EstimatorError::UnknownNeighbor(new_parent))?;
        Ok(f < self.config.freshness_threshold)
    }
}
