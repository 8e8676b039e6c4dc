//! The federated round engine.
//!
//! Each round the server samples `M` of `N` clients, every sampled client
//! runs the configured client optimizer from the current global model on its
//! own shard, and the server folds the results in ascending client id.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    client_update, server_update, Aggregation, ClientPayload, ClientResult, HyperParams, LocalTask, Method,
};
use crate::data::{partition, DataSpec, LabeledDataset, PartitionPlan, Skew};
use crate::error::{FedError, Result};
use crate::exec::Executor;
use crate::model::{init_params, top1_accuracy, Activation, ModelSpec};
use crate::params::ParamVector;
use crate::rng::{derive_stream, Stream, INIT_CHANNEL, PARTITION_CHANNEL, SERVER_CHANNEL};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_clients: usize,
    pub sample_size: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    /// Per-client local epoch counts overriding `local_epochs`.
    pub local_epochs_override: BTreeMap<usize, usize>,
    pub batch_size: usize,
    pub client_lr: f64,
    pub method: Method,
    pub hparams: HyperParams,
    pub partition: Skew,
    pub seed: u64,
    pub eval_every: usize,
    pub model: ModelSpec,
    pub data: DataSpec,
    /// Weight client models by shard size when aggregating.
    pub weighted_aggregation: bool,
}

impl Default for RunConfig {
    /// 100 clients, 10 sampled per round, single-class clients.
    fn default() -> Self {
        RunConfig {
            n_clients: 100,
            sample_size: 10,
            rounds: 100,
            local_epochs: 2,
            local_epochs_override: BTreeMap::new(),
            batch_size: 32,
            client_lr: 0.05,
            method: Method::FedAvg,
            hparams: HyperParams::default(),
            partition: Skew::Dirichlet(0.0),
            seed: 0,
            eval_every: 1,
            model: ModelSpec::Mlp {
                input_dim: 32,
                hidden_dim: 32,
                num_classes: 10,
                activation: Activation::Relu,
            },
            data: DataSpec::default(),
            weighted_aggregation: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(FedError::config(m));
        if self.sample_size == 0 || self.sample_size > self.n_clients {
            return fail("need 1 <= sample_size <= n_clients");
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1");
        }
        if self.local_epochs == 0 || self.local_epochs_override.values().any(|&e| e == 0) {
            return fail("local_epochs must be at least 1");
        }
        if let Some(&id) = self.local_epochs_override.keys().find(|&&id| id >= self.n_clients) {
            return Err(FedError::config(format!("local epoch override for unknown client {id}")));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !self.client_lr.is_finite() || self.client_lr <= 0.0 {
            return fail("client_lr must be a positive finite value");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be at least 1");
        }
        self.hparams.validate()?;
        self.model.validate()?;
        if let Skew::Dirichlet(alpha) = self.partition {
            if alpha.is_nan() || alpha < 0.0 {
                return fail("dirichlet alpha must be >= 0");
            }
        }
        Ok(())
    }

    pub fn epochs_for(&self, client: usize) -> usize {
        self.local_epochs_override
            .get(&client)
            .copied()
            .unwrap_or(self.local_epochs)
    }
}

/// Global model plus whichever server-side state the method keeps.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    /// Number of completed rounds.
    pub round: usize,
    pub global: ParamVector,
    /// FedCM momentum Δ.
    pub momentum: Option<ParamVector>,
    /// FedGamma global control variate.
    pub control: Option<ParamVector>,
    /// FedSMOO global perturbation.
    pub perturb: Option<ParamVector>,
}

impl ServerState {
    pub fn new(method: Method, global: ParamVector) -> Self {
        let zero = || Some(ParamVector::zeros(global.layout().clone()));
        ServerState {
            round: 0,
            momentum: if method == Method::FedCm { zero() } else { None },
            control: if method == Method::FedGamma { zero() } else { None },
            perturb: if method == Method::FedSmoo { zero() } else { None },
            global,
        }
    }

    /// Names of server method-state fields holding anything but zeros.
    pub fn mutated_fields(&self) -> Vec<&'static str> {
        [
            ("momentum", &self.momentum),
            ("control", &self.control),
            ("perturb", &self.perturb),
        ]
        .into_iter()
        .filter(|(_, v)| v.as_ref().is_some_and(|v| !v.is_zero()))
        .map(|(name, _)| name)
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub client_id: usize,
    pub payload: ClientPayload,
}

/// One record of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub sampled: Vec<usize>,
    #[serde(rename = "loss")]
    pub mean_train_loss: f64,
    #[serde(rename = "top1")]
    pub test_top1: Option<f64>,
    #[serde(rename = "dt")]
    pub wall_time_seconds: f64,
    /// Gradient evaluations spent by all sampled clients this round.
    pub grad_evals: u64,
    #[serde(rename = "upd_norm")]
    pub update_norm: f64,
}

impl RoundMetrics {
    /// The record with its wall-clock field zeroed, for determinism checks.
    pub fn without_timing(&self) -> RoundMetrics {
        RoundMetrics {
            wall_time_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Uniform sample of `m` distinct ids below `n`, ascending.
pub fn sample_clients(n: usize, m: usize, rng: &mut Stream) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(FedError::config(format!("cannot sample {m} of {n} clients")));
    }
    let mut ids = index::sample(rng, n, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

fn diverged(cfg: &RunConfig, round: usize) -> FedError {
    FedError::Diverged {
        method: cfg.method.name().to_string(),
        round,
        completed: Vec::new(),
    }
}

/// One communication round. Only the sampled clients' entries in `states`
/// change, and only if the whole round succeeds. The returned metrics carry
/// no test accuracy; [`Simulation`] fills it in.
pub fn run_round(
    server: &ServerState,
    states: &mut [ClientState],
    plan: &PartitionPlan,
    train: &LabeledDataset,
    cfg: &RunConfig,
    exec: &Executor,
) -> Result<(ServerState, RoundMetrics)> {
    let started = Instant::now();
    let round = server.round;
    if states.len() != cfg.n_clients || plan.n_clients() != cfg.n_clients {
        return Err(FedError::config("client states and partition must cover n_clients"));
    }
    let sampled = sample_clients(
        cfg.n_clients,
        cfg.sample_size,
        &mut derive_stream(cfg.seed, round as u64, SERVER_CHANNEL),
    )?;

    let outcomes = exec.map(&sampled, |&id| {
        let task = LocalTask {
            method: cfg.method,
            hp: &cfg.hparams,
            spec: &cfg.model,
            data: train,
            shard: plan.shard(id),
            server,
            client_id: id,
            lr: cfg.client_lr,
            epochs: cfg.epochs_for(id),
            batch_size: cfg.batch_size,
        };
        let mut rng = derive_stream(cfg.seed, round as u64, id as i64);
        client_update(&task, &states[id].payload, &mut rng)
    });

    let mut results: Vec<ClientResult> = Vec::with_capacity(sampled.len());
    let mut payloads = Vec::with_capacity(sampled.len());
    for outcome in outcomes {
        match outcome {
            Ok((result, payload)) => {
                results.push(result);
                payloads.push(payload);
            }
            Err(FedError::Numerical { .. }) => return Err(diverged(cfg, round)),
            Err(e) => return Err(e),
        }
    }

    let mut next = server.clone();
    server_update(
        cfg.method,
        &cfg.hparams,
        &results,
        &mut next,
        Aggregation {
            lr: cfg.client_lr,
            n_clients: cfg.n_clients,
            weighted: cfg.weighted_aggregation,
        },
    )?;
    let extras_finite = [&next.momentum, &next.control, &next.perturb]
        .into_iter()
        .flatten()
        .all(ParamVector::is_finite);
    if !next.global.is_finite() || !extras_finite {
        return Err(diverged(cfg, round));
    }
    next.round += 1;

    for (&id, payload) in sampled.iter().zip(payloads) {
        states[id].payload = payload;
    }
    let mean_train_loss = results.iter().map(|r| r.mean_loss).sum::<f64>() / results.len() as f64;
    if !mean_train_loss.is_finite() {
        return Err(diverged(cfg, round));
    }
    let metrics = RoundMetrics {
        round,
        sampled,
        mean_train_loss,
        test_top1: None,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        grad_evals: results.iter().map(|r| r.grad_evals).sum(),
        update_norm: next.global.sub(&server.global).norm(),
    };
    Ok((next, metrics))
}

/// A run in progress: partition, server state and every client's state.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub cfg: RunConfig,
    pub plan: PartitionPlan,
    pub server: ServerState,
    pub states: Vec<ClientState>,
}

impl Simulation {
    /// Validates `cfg`, partitions `train` and draws the initial model.
    pub fn new(cfg: RunConfig, train: &LabeledDataset) -> Result<Self> {
        cfg.validate()?;
        let plan = partition(
            train,
            cfg.n_clients,
            cfg.partition,
            &mut derive_stream(cfg.seed, 0, PARTITION_CHANNEL),
        )?;
        let global = init_params(&cfg.model, &mut derive_stream(cfg.seed, 0, INIT_CHANNEL))?;
        Ok(Self::with_parts(cfg, plan, global))
    }

    /// Starts from an explicit plan and initial model.
    pub fn with_parts(cfg: RunConfig, plan: PartitionPlan, global: ParamVector) -> Self {
        let states = (0..cfg.n_clients)
            .map(|client_id| ClientState {
                client_id,
                payload: ClientPayload::initial(cfg.method, &global),
            })
            .collect();
        let server = ServerState::new(cfg.method, global);
        Simulation {
            cfg,
            plan,
            server,
            states,
        }
    }

    pub fn should_evaluate(&self, round: usize) -> bool {
        self.cfg.model.is_classifier() && (round.is_multiple_of(self.cfg.eval_every) || round + 1 == self.cfg.rounds)
    }

    /// Runs one round and evaluates on `test` when scheduled.
    pub fn step(&mut self, train: &LabeledDataset, test: &LabeledDataset, exec: &Executor) -> Result<RoundMetrics> {
        let (next, mut metrics) = run_round(&self.server, &mut self.states, &self.plan, train, &self.cfg, exec)?;
        self.server = next;
        if self.should_evaluate(metrics.round) {
            metrics.test_top1 = Some(top1_accuracy(&self.cfg.model, &self.server.global, test)?);
        }
        Ok(metrics)
    }

    /// Runs the remaining rounds. A divergence error carries the metrics of
    /// the rounds completed before it.
    pub fn run(&mut self, train: &LabeledDataset, test: &LabeledDataset, exec: &Executor) -> Result<Vec<RoundMetrics>> {
        let mut history = Vec::with_capacity(self.cfg.rounds);
        while self.server.round < self.cfg.rounds {
            match self.step(train, test, exec) {
                Ok(m) => history.push(m),
                Err(FedError::Diverged { method, round, .. }) => {
                    return Err(FedError::Diverged {
                        method,
                        round,
                        completed: history,
                    })
                }
                Err(e) => return Err(e),
            }
        }
        Ok(history)
    }
}

/// Trains for `cfg.rounds` rounds from scratch and returns every round's
/// metrics.
pub fn run_training(
    cfg: &RunConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
    exec: &Executor,
) -> Result<Vec<RoundMetrics>> {
    Simulation::new(cfg.clone(), train)?.run(train, test, exec)
}
