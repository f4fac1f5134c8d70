use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RoutingError;
use crate::topology::NodeId;

pub const DEFAULT_TABLE_CAPACITY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub next_hop: NodeId,
    pub installed_at_ms: u64,
}

/// One node's downward routes in storing mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoringTable {
    owner: NodeId,
    routes: BTreeMap<NodeId, RouteEntry>,
    capacity: usize,
}

impl StoringTable {
    pub fn new(owner: NodeId, capacity: usize) -> Self {
        StoringTable {
            owner,
            routes: BTreeMap::new(),
            capacity,
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    pub fn next_hop(&self, dest: NodeId) -> Option<NodeId> {
        self.routes.get(&dest).map(|e| e.next_hop)
    }

    pub fn entry(&self, dest: NodeId) -> Option<&RouteEntry> {
        self.routes.get(&dest)
    }

    pub fn destinations(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.routes.keys().copied()
    }

    /// Install or refresh `dest → next_hop`. Refreshing an existing
    /// destination never fails.
    pub fn install(
        &mut self,
        dest: NodeId,
        next_hop: NodeId,
        now_ms: u64,
    ) -> Result<(), RoutingError> {
        if !self.routes.contains_key(&dest) && self.routes.len() >= self.capacity {
            return Err(RoutingError::TableFull(self.owner));
        }
        self.routes.insert(
            dest,
            RouteEntry {
                next_hop,
                installed_at_ms: now_ms,
            },
        );
        Ok(())
    }

    /// Remove `dest` if it currently points at `via`.
    pub fn remove_via(&mut self, dest: NodeId, via: NodeId) -> bool {
        if self.next_hop(dest) == Some(via) {
            self.routes.remove(&dest);
            true
        } else {
            false
        }
    }

    /// Drop routes not refreshed within `lifetime_ms`. Returns how many went.
    pub fn expire(&mut self, now_ms: u64, lifetime_ms: u64) -> usize {
        let before = self.routes.len();
        self.routes
            .retain(|_, e| now_ms.saturating_sub(e.installed_at_ms) <= lifetime_ms);
        before - self.routes.len()
    }
}

/// Nodes touched by one registration or de-registration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegisterOutcome {
    /// Nodes whose table changed.
    pub updated: Vec<NodeId>,
    /// Nodes that received the message but had no room.
    pub table_full: Vec<NodeId>,
    /// Hops the message made before it stopped.
    pub hops_travelled: usize,
}

fn check_len(path: &[NodeId], delivery: &[bool]) -> Result<(), RoutingError> {
    let hops = path.len().saturating_sub(1);
    if delivery.len() != hops {
        return Err(RoutingError::DeliveryLength {
            hops,
            got: delivery.len(),
        });
    }
    Ok(())
}

fn table_mut(tables: &mut [StoringTable], id: NodeId) -> Result<&mut StoringTable, RoutingError> {
    tables
        .get_mut(id.index())
        .ok_or(RoutingError::UnknownNode(id))
}

/// Propagate a registration for `dest` up `path` (sender first, root last).
/// `delivery[i]` says whether the hop `path[i] → path[i+1]` got through.
/// Every receiver installs `dest` via the node it heard the message from.
pub fn storing_register(
    tables: &mut [StoringTable],
    path: &[NodeId],
    dest: NodeId,
    delivery: &[bool],
    now_ms: u64,
) -> Result<RegisterOutcome, RoutingError> {
    check_len(path, delivery)?;
    let mut out = RegisterOutcome::default();
    for (hop, ok) in path.windows(2).zip(delivery) {
        if !ok {
            break;
        }
        out.hops_travelled += 1;
        let (child, ancestor) = (hop[0], hop[1]);
        match table_mut(tables, ancestor)?.install(dest, child, now_ms) {
            Ok(()) => out.updated.push(ancestor),
            Err(RoutingError::TableFull(n)) => out.table_full.push(n),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Propagate a de-registration for `dest` up the old `path`. Each receiver
/// drops the route only if it still points at the sender; the message stops
/// at the first node where it does not, since that node already learned the
/// new route.
pub fn storing_deregister(
    tables: &mut [StoringTable],
    path: &[NodeId],
    dest: NodeId,
    delivery: &[bool],
) -> Result<RegisterOutcome, RoutingError> {
    check_len(path, delivery)?;
    let mut out = RegisterOutcome::default();
    for (hop, ok) in path.windows(2).zip(delivery) {
        if !ok {
            break;
        }
        out.hops_travelled += 1;
        let (child, ancestor) = (hop[0], hop[1]);
        if !table_mut(tables, ancestor)?.remove_via(dest, child) {
            break;
        }
        out.updated.push(ancestor);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    NextHop(NodeId),
    /// Forward to the preferred parent.
    Up,
    NoRoute,
}

/// Forwarding decision for a downward packet. A packet that came from above
/// and finds no entry is not sent back up, as the parent would return it.
pub fn storing_lookup(
    table: &StoringTable,
    dest: NodeId,
    came_from_below: bool,
    has_parent: bool,
) -> Lookup {
    match table.next_hop(dest) {
        Some(n) => Lookup::NextHop(n),
        None if has_parent && came_from_below => Lookup::Up,
        None => Lookup::NoRoute,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tables(n: u16) -> Vec<StoringTable> {
        (0..n)
            .map(|i| StoringTable::new(NodeId(i), DEFAULT_TABLE_CAPACITY))
            .collect()
    }

    fn ids(v: &[u16]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn full_delivery_installs_at_every_ancestor() {
        let mut t = tables(4);
        let path = ids(&[3, 2, 1, 0]);
        let out = storing_register(&mut t, &path, NodeId(3), &[true; 3], 0).unwrap();
        assert_eq!(out.updated, ids(&[2, 1, 0]));
        assert_eq!(t[2].next_hop(NodeId(3)), Some(NodeId(3)));
        assert_eq!(t[1].next_hop(NodeId(3)), Some(NodeId(2)));
        assert_eq!(t[0].next_hop(NodeId(3)), Some(NodeId(1)));
    }

    #[test]
    fn first_hop_loss_installs_nothing() {
        let mut t = tables(4);
        let path = ids(&[3, 2, 1, 0]);
        let out = storing_register(&mut t, &path, NodeId(3), &[false, true, true], 0).unwrap();
        assert!(out.updated.is_empty());
        assert!(t.iter().all(StoringTable::is_empty));
    }

    #[test]
    fn mid_path_loss_truncates() {
        let mut t = tables(4);
        let path = ids(&[3, 2, 1, 0]);
        let out = storing_register(&mut t, &path, NodeId(3), &[true, false, true], 0).unwrap();
        assert_eq!(out.updated, ids(&[2]));
        assert!(t[0].is_empty());
    }

    #[test]
    fn delivery_length_checked() {
        let mut t = tables(3);
        assert_eq!(
            storing_register(&mut t, &ids(&[2, 1, 0]), NodeId(2), &[true], 0),
            Err(RoutingError::DeliveryLength { hops: 2, got: 1 })
        );
    }

    #[test]
    fn full_table_counted_and_skipped() {
        let mut t: Vec<StoringTable> = (0..3).map(|i| StoringTable::new(NodeId(i), 1)).collect();
        t[1].install(NodeId(9), NodeId(2), 0).unwrap();
        let out = storing_register(&mut t, &ids(&[2, 1, 0]), NodeId(2), &[true, true], 0).unwrap();
        assert_eq!(out.table_full, ids(&[1]));
        assert_eq!(out.updated, ids(&[0]));
        assert_eq!(t[1].len(), 1);
    }

    #[test]
    fn deregister_only_removes_matching_routes() {
        let mut t = tables(4);
        storing_register(&mut t, &ids(&[3, 2, 1, 0]), NodeId(3), &[true; 3], 0).unwrap();
        // 3 moves under 1 directly: register new path, then de-register old
        storing_register(&mut t, &ids(&[3, 1, 0]), NodeId(3), &[true; 2], 1).unwrap();
        let out = storing_deregister(&mut t, &ids(&[3, 2, 1, 0]), NodeId(3), &[true; 3]).unwrap();
        assert_eq!(out.updated, ids(&[2]));
        assert_eq!(t[2].next_hop(NodeId(3)), None);
        assert_eq!(t[1].next_hop(NodeId(3)), Some(NodeId(3)));
        assert_eq!(t[0].next_hop(NodeId(3)), Some(NodeId(1)));
    }

    #[test]
    fn lost_deregistration_leaves_stale_route() {
        let mut t = tables(4);
        storing_register(&mut t, &ids(&[3, 2, 1, 0]), NodeId(3), &[true; 3], 0).unwrap();
        storing_deregister(&mut t, &ids(&[3, 2, 1, 0]), NodeId(3), &[false, true, true]).unwrap();
        assert_eq!(t[2].next_hop(NodeId(3)), Some(NodeId(3)));
    }

    #[test]
    fn lookup_rules() {
        let mut t = StoringTable::new(NodeId(1), 4);
        t.install(NodeId(5), NodeId(4), 0).unwrap();
        assert_eq!(
            storing_lookup(&t, NodeId(5), false, true),
            Lookup::NextHop(NodeId(4))
        );
        assert_eq!(storing_lookup(&t, NodeId(6), true, true), Lookup::Up);
        assert_eq!(storing_lookup(&t, NodeId(6), false, true), Lookup::NoRoute);
        let root = StoringTable::new(NodeId(0), 4);
        assert_eq!(
            storing_lookup(&root, NodeId(6), true, false),
            Lookup::NoRoute
        );
    }

    #[test]
    fn routes_expire() {
        let mut t = StoringTable::new(NodeId(0), 4);
        t.install(NodeId(1), NodeId(1), 0).unwrap();
        t.install(NodeId(2), NodeId(1), 500).unwrap();
        assert_eq!(t.expire(1_200, 1_000), 1);
        assert_eq!(t.destinations().collect::<Vec<_>>(), ids(&[2]));
    }
}
