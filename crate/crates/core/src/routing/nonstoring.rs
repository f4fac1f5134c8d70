use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::header::SourceRouteHeader;
use super::RoutingError;
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateVerdict {
    Accepted,
    Rejected,
}

/// The root's belief of every node's parent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootTopologyView {
    root: NodeId,
    parent_of: BTreeMap<NodeId, NodeId>,
    version: u64,
}

impl RootTopologyView {
    pub fn new(root: NodeId) -> Self {
        RootTopologyView {
            root,
            parent_of: BTreeMap::new(),
            version: 0,
        }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn parent_of(&self, node: NodeId) -> Option<NodeId> {
        self.parent_of.get(&node).copied()
    }

    pub fn parents(&self) -> &BTreeMap<NodeId, NodeId> {
        &self.parent_of
    }

    /// Whether `a` is `b` or lies above `b` in the view.
    fn is_ancestor_or_self(&self, a: NodeId, b: NodeId) -> bool {
        let mut cur = Some(b);
        while let Some(x) = cur {
            if x == a {
                return true;
            }
            cur = self.parent_of(x);
        }
        false
    }

    /// Record `child → new_parent` unless that would close a loop. The
    /// version moves only when the stored parent changes.
    pub fn nonstoring_update(
        &mut self,
        child: NodeId,
        new_parent: NodeId,
    ) -> Result<UpdateVerdict, RoutingError> {
        if child == self.root {
            return Err(RoutingError::RootUpdate);
        }
        if new_parent == child || self.is_ancestor_or_self(child, new_parent) {
            return Ok(UpdateVerdict::Rejected);
        }
        if self.parent_of.insert(child, new_parent) != Some(new_parent) {
            self.version += 1;
        }
        Ok(UpdateVerdict::Accepted)
    }

    /// Forget a node entirely (e.g. when its registration times out).
    pub fn remove(&mut self, node: NodeId) {
        if self.parent_of.remove(&node).is_some() {
            self.version += 1;
        }
    }

    /// Hops from the first node below the root down to `dest`.
    pub fn route_hops(&self, dest: NodeId) -> Result<Vec<NodeId>, RoutingError> {
        let mut hops = Vec::new();
        let mut seen = BTreeSet::new();
        let mut cur = dest;
        while cur != self.root {
            if !seen.insert(cur) {
                return Err(RoutingError::NoRoute(dest));
            }
            hops.push(cur);
            cur = self.parent_of(cur).ok_or(RoutingError::NoRoute(dest))?;
        }
        hops.reverse();
        Ok(hops)
    }

    pub fn compute_source_route(
        &self,
        dest: NodeId,
        addresses: &super::AddressBook,
        prefix_shared: bool,
    ) -> Result<SourceRouteHeader, RoutingError> {
        let hops = self.route_hops(dest)?;
        let byte_size = super::header_size(&hops, addresses, prefix_shared)?;
        Ok(SourceRouteHeader { hops, byte_size })
    }

    /// Full cycle check over the whole relation.
    pub fn is_acyclic(&self) -> bool {
        self.parent_of.keys().all(|&n| {
            let mut seen = BTreeSet::new();
            let mut cur = Some(n);
            while let Some(x) = cur {
                if !seen.insert(x) {
                    return false;
                }
                cur = self.parent_of(x);
            }
            true
        })
    }
}
