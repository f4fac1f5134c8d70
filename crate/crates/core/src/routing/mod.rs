//! Downward routing state for both RPL modes.
//!
//! Storing mode keeps a table per node that lossy registrations maintain.
//! Non-storing mode keeps the root's view of every node's parent and
//! source-routes from it.

mod consistency;
mod header;
mod nonstoring;
mod storing;

pub use consistency::{
    snapshot_consistency, switch_study, write_consistency_csv, ConsistencySnapshot, NodeStatus,
    RoutingState, SwitchStudy, SwitchStudyParams,
};
pub use header::{header_size, AddressBook, SourceRouteHeader, SRH_FIXED_BYTES};
pub use nonstoring::{RootTopologyView, UpdateVerdict};
pub use storing::{
    storing_deregister, storing_lookup, storing_register, Lookup, RegisterOutcome, RouteEntry,
    StoringTable, DEFAULT_TABLE_CAPACITY,
};

use thiserror::Error;

use crate::topology::NodeId;

/// Which downward routing mode a network runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Storing,
    NonStoring,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s
            .trim()
            .to_ascii_lowercase()
            .replace(['-', '_'], "")
            .as_str()
        {
            "storing" => Ok(Mode::Storing),
            "nonstoring" => Ok(Mode::NonStoring),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Storing => "storing",
            Mode::NonStoring => "nonstoring",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RoutingError {
    #[error("routing table of node {0} is full")]
    TableFull(NodeId),
    #[error("the root has no parent to update")]
    RootUpdate,
    #[error("path of {hops} hops needs {hops} delivery outcomes, got {got}")]
    DeliveryLength { hops: usize, got: usize },
    #[error("no address for node {0}")]
    MissingAddress(NodeId),
    #[error("node {0} outside the routing state")]
    UnknownNode(NodeId),
    #[error("no route to node {0}")]
    NoRoute(NodeId),
}
