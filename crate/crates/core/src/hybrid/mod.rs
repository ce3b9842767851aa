//! Clusters, micro/macro boundary interfaces and representation conversion.

mod cluster;
mod config;
mod layout;
mod partition;

pub use cluster::{CellSpan, Cluster, ClusterId, ClusterState, Interface, MacroState, ParkedVehicle, PendingRelease};
pub use config::{ClusterSpec, HybridConfig, Representation};
pub use layout::{layout_clusters, macro_allowed, ClusterLayout, LayoutError, OFFSET_EPS};
pub use partition::{ClusterSet, Coupling};

use thiserror::Error;

use crate::macroscopic::MacroError;
use crate::network::RouteError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HybridError {
    #[error("unknown cluster {0}")]
    UnknownCluster(ClusterId),
    #[error("cluster {cluster} is not {}", expected.as_str())]
    WrongRepresentation { cluster: ClusterId, expected: Representation },
    #[error("cluster {cluster} holds {vehicles} vehicles, more than its jam capacity {capacity:.1}")]
    OverCapacity { cluster: ClusterId, vehicles: usize, capacity: f64 },
    #[error("splitting cluster {cluster} at {at} leaves a part shorter than the minimum length")]
    TooSmall { cluster: ClusterId, at: f64 },
    #[error("split point {at} is not a cell boundary of cluster {cluster}")]
    NotAligned { cluster: ClusterId, at: f64 },
    #[error("clusters {0} and {1} are not adjacent")]
    NotAdjacent(ClusterId, ClusterId),
    #[error("clusters {0} and {1} use different representations")]
    RepresentationMismatch(ClusterId, ClusterId),
    #[error("cluster {0} touches an input point, a sink or the end of its corridor and must stay micro")]
    MacroNotAllowed(ClusterId),
    #[error("merging {0} would cover a whole ring in flow form")]
    WholeRing(ClusterId),
    #[error(transparent)]
    Flow(#[from] MacroError),
    #[error(transparent)]
    Route(#[from] RouteError),
}
