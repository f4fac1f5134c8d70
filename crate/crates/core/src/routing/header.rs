use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RoutingError;
use crate::rng;
use crate::topology::NodeId;

/// Fixed part of a source routing header.
pub const SRH_FIXED_BYTES: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRouteHeader {
    pub hops: Vec<NodeId>,
    pub byte_size: usize,
}

/// 8-byte interface identifiers of every node. The shared 8-byte network
/// prefix is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressBook {
    root: NodeId,
    addrs: Vec<[u8; 8]>,
}

const FIXED_IID: [u8; 6] = [0x02, 0x12, 0x4b, 0x00, 0x06, 0x0d];

impl AddressBook {
    pub fn from_addresses(root: NodeId, addrs: Vec<[u8; 8]>) -> Self {
        AddressBook { root, addrs }
    }

    /// Six common bytes followed by the node id, little-endian.
    pub fn homogeneous(node_count: usize, root: NodeId) -> Self {
        let addrs = (0..node_count)
            .map(|i| {
                let mut a = [0u8; 8];
                a[..6].copy_from_slice(&FIXED_IID);
                a[6..].copy_from_slice(&(i as u16).to_le_bytes());
                a
            })
            .collect();
        AddressBook { root, addrs }
    }

    /// Random leading bytes per node, so that paths rarely share any.
    pub fn heterogeneous(node_count: usize, root: NodeId, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let addrs = (0..node_count)
            .map(|i| {
                let mut a = [0u8; 8];
                r.fill(&mut a[..6]);
                a[6..].copy_from_slice(&(i as u16).to_le_bytes());
                a
            })
            .collect();
        AddressBook { root, addrs }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn get(&self, id: NodeId) -> Option<&[u8; 8]> {
        self.addrs.get(id.index())
    }
}

/// Header bytes for source-routing along `hops`. Bytes that lead every hop
/// address and the root's address are elided. With `prefix_shared == false`
/// each hop also carries its 8-byte prefix.
pub fn header_size(
    hops: &[NodeId],
    addresses: &AddressBook,
    prefix_shared: bool,
) -> Result<usize, RoutingError> {
    if hops.is_empty() {
        return Ok(0);
    }
    let root = addresses
        .get(addresses.root)
        .ok_or(RoutingError::MissingAddress(addresses.root))?;
    let mut common = 8;
    for &h in hops {
        let a = addresses.get(h).ok_or(RoutingError::MissingAddress(h))?;
        let run = a.iter().zip(root).take_while(|(x, y)| x == y).count();
        common = common.min(run);
    }
    let per_hop = 8 - common + if prefix_shared { 0 } else { 8 };
    Ok(SRH_FIXED_BYTES + hops.len() * per_hop)
}
