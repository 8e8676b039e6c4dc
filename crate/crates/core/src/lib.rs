//! Deterministic federated-learning simulation.
//!
//! A run partitions a synthetic dataset over `N` clients, then for each
//! round samples `M` of them, lets each run its local optimizer from the
//! current global model, and aggregates the results on the server. Eight
//! client/server optimizer pairs are available (see [`algorithms`]).
//!
//! Every random draw comes from a stream keyed by `(seed, round, client)`,
//! so a run's output does not depend on the number of worker threads.

pub mod algorithms;
pub mod data;
pub mod engine;
pub mod error;
pub mod exec;
pub mod harness;
pub mod model;
pub mod params;
pub mod rng;

pub use algorithms::{ClientPayload, ClientResult, HParam, HyperParams, Method};
pub use data::{DataSpec, LabeledDataset, PartitionPlan, Skew};
pub use engine::{run_round, run_training, ClientState, RoundMetrics, RunConfig, ServerState, Simulation};
pub use error::{FedError, Result};
pub use exec::Executor;
pub use model::{Activation, Batch, ModelSpec};
pub use params::{Layout, ParamVector};
