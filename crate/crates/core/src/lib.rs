//! Model-driven container allocation for latency-sensitive serverless
//! functions on a small edge cluster.
//!
//! * [`queuing`] sizes a function's container pool from its arrival rate and
//!   waiting-time objective.
//! * [`fairshare`] divides the cluster among functions when their combined
//!   demand does not fit.
//! * [`reclamation`] takes capacity back by terminating or deflating
//!   containers.
//! * [`allocator`] turns per-epoch rate estimates into cluster actions.
//! * [`simulator`] replays workloads against the controller, and
//!   [`oracle`] checks the queuing formulas by Monte-Carlo simulation.

pub mod allocator;
pub mod cluster;
pub mod error;
pub mod fairshare;
pub mod oracle;
pub mod queuing;
pub mod reclamation;
pub mod scenario;
pub mod simulator;
pub mod workload;

pub use allocator::{AllocatorConfig, EpochPlan, FunctionPlan, FunctionSpec, ReclaimMode, SloKind};
pub use cluster::{Action, ClusterState, ContainerId, ContainerState, Node, NodeId};
pub use error::{Error, Result};
pub use queuing::{HeterogeneousModel, HomogeneousModel, WaitTarget};
pub use reclamation::{DegradationCurve, ServiceDistribution, ServiceProfile};
pub use scenario::Scenario;
pub use simulator::{SimMetrics, Summary};
pub use workload::{InvocationTrace, RateEstimator, WorkloadSpec};
