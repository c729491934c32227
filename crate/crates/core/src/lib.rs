//! Cluster-based replica placement and load balancing for peer-to-peer
//! content distribution, plus a deterministic discrete-event simulator that
//! compares the system with and without load balancing.
//!
//! The crate is organised bottom-up:
//!
//! - [`topology`]: peers, access links and the router full mesh.
//! - [`clustering`]: node weights, the strong/weak partition, clusters and leaders.
//! - [`placement`]: query registration, content classification, replica placement and routing.
//! - [`balancing`]: replica cleanup, availability replication, intra- and inter-cluster balancing.
//! - [`simkernel`]: the event loop, workload generation, churn and metrics.
//! - [`config`] and [`experiment`]: scenario files, sweeps, comparison tables and state dumps.

pub mod balancing;
pub mod clustering;
pub mod config;
pub mod error;
pub mod experiment;
pub mod placement;
pub mod simkernel;
pub mod topology;

mod ids;
pub mod rng;

pub use error::{Error, Result};
pub use ids::{ClusterId, ContentId, PeerId};
