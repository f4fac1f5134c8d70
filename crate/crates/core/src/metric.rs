//! Gradient metrics (ETX, ETX^N, LR), parent selection, and closed-form
//! end-to-end delivery over a path.
//!
//! All ranks are plain `f64` values; a [`RankValue`] ties one to the
//! [`Metric`] that produced it so that ranks from different metrics are never
//! compared by accident.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Metric {
    /// Classic ETX: link cost `1/PRR`.
    Etx,
    /// ETX^N: link cost `(1/PRR)^N`.
    Etxn { exponent_n: f64 },
    /// Estimated end-to-end loss rate with `retries_r` MAC retries per hop.
    Lr { retries_r: u32 },
}

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("link with PRR {0} is unusable")]
    UnusableLink(f64),
    #[error("rank computed under {0} cannot extend a rank of {1}")]
    MetricMismatch(Metric, Metric),
    #[error("parent loss rate {0} outside [0, 1]")]
    InvalidLossRate(f64),
    #[error("invalid metric: {0}")]
    InvalidMetric(String),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Etx => write!(f, "etx"),
            Metric::Etxn { exponent_n } => write!(f, "etxn:{exponent_n}"),
            Metric::Lr { retries_r } => write!(f, "lr:{retries_r}"),
        }
    }
}

impl FromStr for Metric {
    type Err = RankError;

    /// Accepts `etx`, `etxn:<n>`, `etx<n>` (e.g. `etx2`), `lr` and `lr:<r>`.
    /// A bare `etxn` squares, a bare `lr` uses 8 retries.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RankError::InvalidMetric(s.to_string());
        let s = s.trim().to_ascii_lowercase();
        let metric = match s.as_str() {
            "etx" => Metric::Etx,
            "etxn" => Metric::Etxn { exponent_n: 2.0 },
            "lr" => Metric::Lr { retries_r: 8 },
            _ => {
                if let Some(n) = s.strip_prefix("etxn:").or_else(|| s.strip_prefix("etx")) {
                    Metric::Etxn {
                        exponent_n: n.parse().map_err(|_| bad())?,
                    }
                } else if let Some(r) = s.strip_prefix("lr:") {
                    Metric::Lr {
                        retries_r: r.parse().map_err(|_| bad())?,
                    }
                } else {
                    return Err(bad());
                }
            }
        };
        metric.validate().map_err(|_| bad())?;
        Ok(metric)
    }
}

impl Metric {
    pub fn validate(&self) -> Result<(), RankError> {
        match *self {
            Metric::Etxn { exponent_n } if !(exponent_n >= 1.0) || !exponent_n.is_finite() => Err(
                RankError::InvalidMetric(format!("exponent {exponent_n} must be >= 1")),
            ),
            _ => Ok(()),
        }
    }

    pub fn root_rank(&self) -> f64 {
        match self {
            Metric::Lr { .. } => 0.0,
            _ => 1.0,
        }
    }

    /// Rank through a parent advertising `parent_rank`, over a link whose
    /// expected transmission count is `link_etx`. `None` if the link is
    /// unusable.
    pub fn rank_via_etx(&self, parent_rank: f64, link_etx: f64) -> Option<f64> {
        if !(link_etx >= 1.0) || !link_etx.is_finite() {
            return None;
        }
        Some(match *self {
            Metric::Etx => parent_rank + link_etx,
            Metric::Etxn { exponent_n } => parent_rank + etx_power(link_etx, exponent_n),
            Metric::Lr { retries_r } => lr_step(parent_rank, 1.0 / link_etx, retries_r),
        })
    }

    /// Rank through a parent over a link of known PRR.
    pub fn rank_via_prr(&self, parent_rank: f64, prr: f64) -> Option<f64> {
        if !(prr > 0.0) {
            return None;
        }
        match *self {
            Metric::Lr { retries_r } => Some(lr_step(parent_rank, prr.min(1.0), retries_r)),
            _ => self.rank_via_etx(parent_rank, 1.0 / prr.min(1.0)),
        }
    }
}

fn etx_power(etx: f64, n: f64) -> f64 {
    if n == 1.0 {
        etx
    } else {
        etx.powf(n)
    }
}

fn lr_step(parent_lr: f64, prr: f64, r: u32) -> f64 {
    1.0 - (1.0 - parent_lr) * hop_success(prr, r)
}

/// Probability that at least one of `1 + r` attempts succeeds.
pub fn hop_success(prr: f64, r: u32) -> f64 {
    1.0 - (1.0 - prr).powi(r as i32 + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankValue {
    pub value: f64,
    pub metric: Metric,
}

impl RankValue {
    pub fn root(metric: Metric) -> Self {
        RankValue {
            value: metric.root_rank(),
            metric,
        }
    }

    /// Ordering under a shared metric; `None` across metrics.
    pub fn compare(&self, other: &RankValue) -> Option<Ordering> {
        (self.metric == other.metric).then(|| self.value.total_cmp(&other.value))
    }
}

/// Classic ETX rank: parent rank plus `1/prr`.
pub fn rank_etx(parent: RankValue, prr: f64) -> Result<RankValue, RankError> {
    if parent.metric != Metric::Etx {
        return Err(RankError::MetricMismatch(Metric::Etx, parent.metric));
    }
    if !(prr > 0.0 && prr <= 1.0) {
        return Err(RankError::UnusableLink(prr));
    }
    Ok(RankValue {
        value: parent.value + 1.0 / prr,
        metric: Metric::Etx,
    })
}

/// ETX^N rank: parent rank plus `(1/prr)^n`. `n = 1` is classic ETX.
pub fn rank_etxn(parent: RankValue, prr: f64, n: f64) -> Result<RankValue, RankError> {
    let metric = if n == 1.0 {
        Metric::Etx
    } else {
        Metric::Etxn { exponent_n: n }
    };
    metric.validate()?;
    if parent.metric != metric {
        return Err(RankError::MetricMismatch(metric, parent.metric));
    }
    if !(prr > 0.0 && prr <= 1.0) {
        return Err(RankError::UnusableLink(prr));
    }
    Ok(RankValue {
        value: parent.value + etx_power(1.0 / prr, n),
        metric,
    })
}

/// LR rank: `1 - (1 - LR(parent)) * (1 - (1 - prr)^(1 + r))`.
pub fn rank_lr(parent: RankValue, prr: f64, r: u32) -> Result<RankValue, RankError> {
    let metric = Metric::Lr { retries_r: r };
    if parent.metric != metric {
        return Err(RankError::MetricMismatch(metric, parent.metric));
    }
    if !(0.0..=1.0).contains(&parent.value) {
        return Err(RankError::InvalidLossRate(parent.value));
    }
    if !(0.0..=1.0).contains(&prr) {
        return Err(RankError::UnusableLink(prr));
    }
    Ok(RankValue {
        value: lr_step(parent.value, prr, r),
        metric,
    })
}

/// End-to-end delivery ratio over `prrs` (child-to-root order is
/// irrelevant) with `r` retries per hop.
pub fn path_delivery(prrs: &[f64], r: u32) -> f64 {
    prrs.iter()
        .map(|&p| hop_success(p.clamp(0.0, 1.0), r))
        .product()
}

/// Same as [`path_delivery`], evaluated on parent-to-child PRRs.
pub fn path_delivery_down(down_prrs: &[f64], r: u32) -> f64 {
    path_delivery(down_prrs, r)
}

/// A neighbor offered to parent selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: NodeId,
    pub advertised_rank: f64,
    /// Local estimate of the expected transmission count towards `id`.
    pub link_etx: f64,
}

impl Candidate {
    pub fn from_prr(id: NodeId, advertised_rank: f64, prr: f64) -> Self {
        Candidate {
            id,
            advertised_rank,
            link_etx: if prr > 0.0 {
                1.0 / prr.min(1.0)
            } else {
                f64::INFINITY
            },
        }
    }
}

/// Would-be rank through the best candidate, or through `current` when the
/// best does not beat it by more than `hysteresis`.
///
/// Candidates advertising a rank at or above the node's current rank are
/// ignored (loop guard); the current parent is exempt. Ties go to the lowest
/// node id.
pub fn select_parent(
    candidates: &[Candidate],
    current: Option<NodeId>,
    metric: &Metric,
    hysteresis: f64,
) -> Option<NodeId> {
    select_parent_ranked(candidates, current, metric, hysteresis).map(|(id, _)| id)
}

/// [`select_parent`], also returning the resulting rank.
pub fn select_parent_ranked(
    candidates: &[Candidate],
    current: Option<NodeId>,
    metric: &Metric,
    hysteresis: f64,
) -> Option<(NodeId, f64)> {
    let usable = candidates.iter().filter_map(|c| {
        if !c.advertised_rank.is_finite() {
            return None;
        }
        metric
            .rank_via_etx(c.advertised_rank, c.link_etx)
            .map(|rank| (c, rank))
    });
    let mut current_rank = f64::INFINITY;
    if let Some(cur) = current {
        if let Some((_, rank)) = usable.clone().find(|(c, _)| c.id == cur) {
            current_rank = rank;
        }
    }
    let best = usable
        .filter(|(c, _)| Some(c.id) == current || c.advertised_rank < current_rank)
        .min_by(|(a, ra), (b, rb)| ra.total_cmp(rb).then(a.id.cmp(&b.id)))?;
    match current {
        Some(cur) if current_rank.is_finite() && best.0.id != cur => {
            if best.1 < current_rank - hysteresis {
                Some((best.0.id, best.1))
            } else {
                Some((cur, current_rank))
            }
        }
        _ => Some((best.0.id, best.1)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const E: f64 = 1e-12;

    fn etx2() -> Metric {
        Metric::Etxn { exponent_n: 2.0 }
    }

    #[test]
    fn etxn_link_cost_examples() {
        let root = RankValue::root(etx2());
        let lossy = rank_etxn(root, 0.5, 2.0).unwrap();
        assert_eq!(lossy.value - root.value, 4.0);
        let one = rank_etxn(root, 1.0, 2.0).unwrap();
        assert_eq!(one.value, 2.0);
        let two = rank_etxn(one, 1.0, 2.0).unwrap();
        assert_eq!(two.value - root.value, 2.0);
        assert_eq!(lossy.value, 5.0);
        assert_eq!(two.value, 3.0);
        assert_eq!(two.compare(&lossy), Some(Ordering::Less));
    }

    #[test]
    fn etxn_perfect_link_from_root_any_exponent() {
        for n in [1.0, 1.5, 2.0, 3.0, 7.25] {
            let root = rank_etxn(RankValue::root(Metric::Etxn { exponent_n: n }), 1.0, n);
            let root = match root {
                Ok(r) => r,
                Err(RankError::MetricMismatch(..)) => {
                    rank_etxn(RankValue::root(Metric::Etx), 1.0, n).unwrap()
                }
                Err(e) => panic!("{e}"),
            };
            assert_eq!(root.value, 2.0);
        }
    }

    #[test]
    fn etxn_dead_link_is_unusable() {
        assert_eq!(
            rank_etxn(RankValue::root(etx2()), 0.0, 2.0),
            Err(RankError::UnusableLink(0.0))
        );
        assert!(etx2().rank_via_prr(1.0, 0.0).is_none());
    }

    #[test]
    fn etxn_exponent_one_is_classic_etx_exhaustive() {
        for rank in 1..=10 {
            for p in 1..=10 {
                let prr = p as f64 / 10.0;
                let parent = RankValue {
                    value: rank as f64,
                    metric: Metric::Etx,
                };
                let a = rank_etxn(parent, prr, 1.0).unwrap();
                let b = rank_etx(parent, prr).unwrap();
                assert_eq!(a.value.to_bits(), b.value.to_bits());
            }
        }
    }

    #[test]
    fn lr_examples() {
        let m = Metric::Lr { retries_r: 1 };
        let root = RankValue::root(m);
        let one = rank_lr(root, 0.5, 1).unwrap();
        assert!((one.value - 0.25).abs() < E);
        let two = rank_lr(one, 0.5, 1).unwrap();
        assert!((two.value - 0.4375).abs() < E);
        let same = rank_lr(one, 1.0, 1).unwrap();
        assert_eq!(same.value, one.value);
        for r in [0, 3, 8] {
            let dead = rank_lr(RankValue::root(Metric::Lr { retries_r: r }), 0.0, r).unwrap();
            assert_eq!(dead.value, 1.0);
        }
        assert_eq!(
            rank_lr(
                RankValue {
                    value: 1.5,
                    metric: m
                },
                0.5,
                1
            ),
            Err(RankError::InvalidLossRate(1.5))
        );
    }

    #[test]
    fn ranks_do_not_mix_metrics() {
        let etx_root = RankValue::root(Metric::Etx);
        assert!(matches!(
            rank_lr(etx_root, 0.5, 1),
            Err(RankError::MetricMismatch(..))
        ));
        assert_eq!(etx_root.compare(&RankValue::root(etx2())), None);
    }

    #[test]
    fn path_delivery_examples() {
        assert_eq!(path_delivery(&[1.0, 1.0], 0), 1.0);
        assert_eq!(path_delivery(&[1.0, 1.0], 8), 1.0);
        assert_eq!(path_delivery(&[0.5], 1), 0.75);
        assert_eq!(path_delivery(&[0.5, 0.5], 1), 0.5625);
        assert_eq!(path_delivery(&[], 8), 1.0);
    }

    #[test]
    fn downward_path_is_worse_on_asymmetric_links() {
        let up = path_delivery(&[0.9, 0.9], 0);
        let down = path_delivery_down(&[0.3, 0.9], 0);
        assert!((up - 0.81).abs() < E);
        assert!((down - 0.27).abs() < E);
        assert!(down < up);
        assert_eq!(
            path_delivery_down(&[0.7, 0.4], 3),
            path_delivery(&[0.7, 0.4], 3)
        );
        assert_eq!(path_delivery_down(&[], 3), 1.0);
    }

    #[test]
    fn metric_parsing() {
        assert_eq!("etx".parse::<Metric>().unwrap(), Metric::Etx);
        assert_eq!("ETXN:2".parse::<Metric>().unwrap(), etx2());
        assert_eq!(
            "etx1.5".parse::<Metric>().unwrap(),
            Metric::Etxn { exponent_n: 1.5 }
        );
        assert_eq!("lr".parse::<Metric>().unwrap(), Metric::Lr { retries_r: 8 });
        assert_eq!(
            "lr:3".parse::<Metric>().unwrap(),
            Metric::Lr { retries_r: 3 }
        );
        assert!("etxn:0.5".parse::<Metric>().is_err());
        assert!("hops".parse::<Metric>().is_err());
        for m in [Metric::Etx, etx2(), Metric::Lr { retries_r: 4 }] {
            assert_eq!(m.to_string().parse::<Metric>().unwrap(), m);
        }
    }

    fn cand(id: u16, rank: f64, etx: f64) -> Candidate {
        Candidate {
            id: NodeId(id),
            advertised_rank: rank,
            link_etx: etx,
        }
    }

    #[test]
    fn select_single_candidate() {
        let c = [cand(3, 1.0, 1.5)];
        assert_eq!(select_parent(&c, None, &Metric::Etx, 0.5), Some(NodeId(3)));
        assert_eq!(select_parent(&[], None, &Metric::Etx, 0.5), None);
    }

    #[test]
    fn select_keeps_current_within_hysteresis() {
        // current: 4.0 + 1.0 = 5.0, alternative 3.8 + 1.0 = 4.8
        let c = [cand(1, 4.0, 1.0), cand(2, 3.8, 1.0)];
        assert_eq!(
            select_parent(&c, Some(NodeId(1)), &Metric::Etx, 0.5),
            Some(NodeId(1))
        );
        assert_eq!(
            select_parent(&c, Some(NodeId(1)), &Metric::Etx, 0.1),
            Some(NodeId(2))
        );
    }

    #[test]
    fn select_switches_when_current_link_dies() {
        let c = [
            Candidate::from_prr(NodeId(1), 2.0, 0.0),
            Candidate::from_prr(NodeId(2), 6.0, 0.5),
        ];
        assert_eq!(
            select_parent(&c, Some(NodeId(1)), &Metric::Etx, 0.5),
            Some(NodeId(2))
        );
    }

    #[test]
    fn select_loop_guard_and_tie_break() {
        // current rank via 1 is 3.0; node 5 advertises 3.0 so it is ignored
        let c = [cand(1, 2.0, 1.0), cand(5, 3.0, 1.0)];
        assert_eq!(
            select_parent(&c, Some(NodeId(1)), &Metric::Etx, 0.0),
            Some(NodeId(1))
        );
        let tie = [cand(9, 2.0, 1.0), cand(4, 2.0, 1.0)];
        assert_eq!(
            select_parent(&tie, None, &Metric::Etx, 0.0),
            Some(NodeId(4))
        );
    }

    #[test]
    fn lr_selection_prefers_reliable_two_hop() {
        let m = Metric::Lr { retries_r: 1 };
        let one_hop_lossy = Candidate::from_prr(NodeId(1), 0.0, 0.5);
        let via_relay = Candidate::from_prr(NodeId(2), 0.01, 1.0);
        assert_eq!(
            select_parent(&[one_hop_lossy, via_relay], None, &m, 0.0),
            Some(NodeId(2))
        );
    }
}
