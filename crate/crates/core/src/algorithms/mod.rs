//! Client and server optimizers for the eight supported methods.
//!
//! | method   | client update            | server update              |
//! |----------|--------------------------|----------------------------|
//! | fedavg   | local SGD                | mean                       |
//! | fedprox  | SGD + proximal pull      | mean                       |
//! | feddyn   | SGD + dual correction    | mean                       |
//! | fedcm    | SGD blended with Δ       | mean, refresh momentum Δ   |
//! | fedsam   | SAM                      | mean                       |
//! | fedgamma | SAM + control variates   | mean, refresh control c    |
//! | fedspeed | SAM + prox + dual        | mean                       |
//! | fedsmoo  | SAM with corrected ŝ     | mean, refresh perturb s    |

mod client;
mod server;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::engine::ServerState;
use crate::error::{FedError, Result};
use crate::model::{loss_and_grad, Batch, ModelSpec};
use crate::params::ParamVector;
use crate::rng::Stream;

pub use client::client_update;
pub use server::{Aggregation, server_fedcm, server_fedgamma, server_fedsmoo, server_mean, server_update};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    FedAvg,
    FedProx,
    FedDyn,
    FedCm,
    FedSam,
    FedGamma,
    FedSpeed,
    FedSmoo,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::FedAvg,
        Method::FedProx,
        Method::FedDyn,
        Method::FedCm,
        Method::FedSam,
        Method::FedGamma,
        Method::FedSpeed,
        Method::FedSmoo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
            Method::FedDyn => "feddyn",
            Method::FedCm => "fedcm",
            Method::FedSam => "fedsam",
            Method::FedGamma => "fedgamma",
            Method::FedSpeed => "fedspeed",
            Method::FedSmoo => "fedsmoo",
        }
    }

    /// Hyperparameters this method reads.
    pub fn hparams(self) -> &'static [HParam] {
        use HParam::*;
        match self {
            Method::FedAvg => &[],
            Method::FedProx => &[Lambda],
            Method::FedDyn => &[Beta],
            Method::FedCm => &[Mu],
            Method::FedSam | Method::FedGamma => &[Rho, SamGuard],
            Method::FedSpeed => &[Rho, Gamma, SamGuard],
            Method::FedSmoo => &[Rho, Beta, SamGuard],
        }
    }

    /// Whether each local step evaluates a second, perturbed gradient.
    pub fn uses_sam(self) -> bool {
        matches!(self, Method::FedSam | Method::FedGamma | Method::FedSpeed | Method::FedSmoo)
    }

    /// Whether the server does anything beyond averaging.
    pub fn has_server_state(self) -> bool {
        matches!(self, Method::FedCm | Method::FedGamma | Method::FedSmoo)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = FedError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| FedError::config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HParam {
    /// FedProx proximal coefficient.
    Lambda,
    /// FedDyn / FedSMOO dual step.
    Beta,
    /// FedCM gradient weight.
    Mu,
    /// SAM radius.
    Rho,
    /// FedSpeed proximal weight.
    Gamma,
    /// Guard added to gradient norms before normalizing.
    SamGuard,
}

impl HParam {
    pub const ALL: [HParam; 6] = [
        HParam::Lambda,
        HParam::Beta,
        HParam::Mu,
        HParam::Rho,
        HParam::Gamma,
        HParam::SamGuard,
    ];

    pub fn key(self) -> &'static str {
        match self {
            HParam::Lambda => "lambda",
            HParam::Beta => "beta",
            HParam::Mu => "mu",
            HParam::Rho => "rho",
            HParam::Gamma => "gamma",
            HParam::SamGuard => "sam_guard",
        }
    }

    pub fn from_key(key: &str) -> Option<HParam> {
        HParam::ALL.into_iter().find(|h| h.key() == key)
    }

    fn check(self, value: f64) -> Result<()> {
        let ok = value.is_finite()
            && match self {
                HParam::Mu => (0.0..=1.0).contains(&value),
                HParam::SamGuard => value > 0.0,
                _ => value >= 0.0,
            };
        if ok {
            Ok(())
        } else {
            let range = match self {
                HParam::Mu => "[0, 1]",
                HParam::SamGuard => "> 0",
                _ => ">= 0",
            };
            Err(FedError::config(format!("{} = {value} is outside {range}", self.key())))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub lambda: f64,
    pub beta: f64,
    pub mu: f64,
    pub rho: f64,
    pub gamma: f64,
    pub sam_guard: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda: 0.01,
            beta: 0.01,
            mu: 0.1,
            rho: 0.01,
            gamma: 0.1,
            sam_guard: 1e-12,
        }
    }
}

impl HyperParams {
    /// Defaults overridden by `settings`; rejects keys the method does not use
    /// and out-of-range values.
    pub fn for_method(method: Method, settings: &[(HParam, f64)]) -> Result<Self> {
        let mut hp = HyperParams::default();
        for &(key, value) in settings {
            hp.set(method, key, value)?;
        }
        Ok(hp)
    }

    pub fn set(&mut self, method: Method, key: HParam, value: f64) -> Result<()> {
        if !method.hparams().contains(&key) {
            return Err(FedError::config(format!("{} is not a hyperparameter of {method}", key.key())));
        }
        key.check(value)?;
        *self.slot(key) = value;
        Ok(())
    }

    pub fn get(&self, key: HParam) -> f64 {
        match key {
            HParam::Lambda => self.lambda,
            HParam::Beta => self.beta,
            HParam::Mu => self.mu,
            HParam::Rho => self.rho,
            HParam::Gamma => self.gamma,
            HParam::SamGuard => self.sam_guard,
        }
    }

    fn slot(&mut self, key: HParam) -> &mut f64 {
        match key {
            HParam::Lambda => &mut self.lambda,
            HParam::Beta => &mut self.beta,
            HParam::Mu => &mut self.mu,
            HParam::Rho => &mut self.rho,
            HParam::Gamma => &mut self.gamma,
            HParam::SamGuard => &mut self.sam_guard,
        }
    }

    pub fn validate(&self) -> Result<()> {
        HParam::ALL.into_iter().try_for_each(|k| k.check(self.get(k)))
    }
}

/// Per-client persistent state. Vectors share the global model's layout and
/// start at zero.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientPayload {
    Empty,
    /// FedDyn dual `h`.
    Dyn { h: ParamVector },
    /// FedGamma local control variate.
    Gamma { control: ParamVector },
    /// FedSpeed dual `ĝ`.
    Speed { dual: ParamVector },
    /// FedSMOO duals for the model (`h`) and the perturbation (`u`).
    Smoo { h: ParamVector, u: ParamVector },
}

impl ClientPayload {
    pub fn initial(method: Method, like: &ParamVector) -> Self {
        let zero = || ParamVector::zeros(like.layout().clone());
        match method {
            Method::FedAvg | Method::FedProx | Method::FedCm | Method::FedSam => ClientPayload::Empty,
            Method::FedDyn => ClientPayload::Dyn { h: zero() },
            Method::FedGamma => ClientPayload::Gamma { control: zero() },
            Method::FedSpeed => ClientPayload::Speed { dual: zero() },
            Method::FedSmoo => ClientPayload::Smoo { h: zero(), u: zero() },
        }
    }
}

/// What one sampled client hands back to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientResult {
    pub client_id: usize,
    pub final_params: ParamVector,
    /// Local steps taken: epochs × ceil(shard / batch).
    pub steps: usize,
    /// FedGamma: change of the local control variate. FedSMOO: last corrected
    /// perturbation.
    pub aux: Option<ParamVector>,
    pub mean_loss: f64,
    pub grad_evals: u64,
    /// Largest L2 norm of any perturbation applied this round.
    pub max_perturbation: f64,
    pub shard_size: usize,
}

/// Everything a client needs for one round of local work.
#[derive(Debug, Clone, Copy)]
pub struct LocalTask<'a> {
    pub method: Method,
    pub hp: &'a HyperParams,
    pub spec: &'a ModelSpec,
    pub data: &'a LabeledDataset,
    pub shard: &'a [usize],
    pub server: &'a ServerState,
    pub client_id: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl LocalTask<'_> {
    pub fn global(&self) -> &ParamVector {
        &self.server.global
    }
}

#[derive(Debug, Default)]
struct StepStats {
    grad_evals: u64,
    loss_sum: f64,
    max_perturbation: f64,
}

struct LocalRun {
    params: ParamVector,
    steps: usize,
    stats: StepStats,
}

impl StepStats {
    fn grad(&mut self, task: &LocalTask, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        self.grad_evals += 1;
        loss_and_grad(task.spec, params, batch)
    }

    /// Gradient at `params` plus the loss there, recorded as the step loss.
    fn base_grad(&mut self, task: &LocalTask, params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        let (loss, grad) = self.grad(task, params, batch)?;
        self.loss_sum += loss;
        Ok(grad)
    }

    /// Scales `direction` to length `rho` (guarded by `sam_guard`) and returns
    /// the gradient at `params + perturbation` together with the perturbation.
    fn perturbed_grad(
        &mut self,
        task: &LocalTask,
        params: &ParamVector,
        batch: &Batch,
        direction: &ParamVector,
    ) -> Result<(ParamVector, ParamVector)> {
        let mut perturbation = direction.clone();
        perturbation.scale(task.hp.rho / (direction.norm() + task.hp.sam_guard));
        self.max_perturbation = self.max_perturbation.max(perturbation.norm());
        let mut shifted = params.clone();
        shifted.add_assign(&perturbation);
        let (_, grad) = self.grad(task, &shifted, batch)?;
        Ok((grad, perturbation))
    }
}

/// Runs `epochs` passes of shuffled minibatch steps `θ ← θ − lr·d` where `d`
/// comes from `direction`. The final partial batch is kept.
fn local_sgd<F>(task: &LocalTask, rng: &mut Stream, mut direction: F) -> Result<LocalRun>
where
    F: FnMut(&ParamVector, &Batch, &mut StepStats) -> Result<ParamVector>,
{
    if task.shard.is_empty() {
        return Err(FedError::config(format!("client {} has an empty shard", task.client_id)));
    }
    if task.batch_size == 0 {
        return Err(FedError::config("batch size must be positive"));
    }
    let mut params = task.global().clone();
    let mut stats = StepStats::default();
    let mut steps = 0;
    let mut order = task.shard.to_vec();
    for _ in 0..task.epochs {
        order.shuffle(rng);
        for rows in order.chunks(task.batch_size) {
            let batch = Batch::new(task.data, rows.to_vec())?;
            let d = direction(&params, &batch, &mut stats)?;
            if let Some(block) = d.first_non_finite_block() {
                return Err(FedError::Numerical { block: block.to_string() });
            }
            params.axpy(-task.lr, &d);
            steps += 1;
        }
    }
    if let Some(block) = params.first_non_finite_block() {
        return Err(FedError::Numerical { block: block.to_string() });
    }
    Ok(LocalRun { params, steps, stats })
}

impl LocalRun {
    fn into_result(self, task: &LocalTask, aux: Option<ParamVector>) -> ClientResult {
        ClientResult {
            client_id: task.client_id,
            final_params: self.params,
            steps: self.steps,
            aux,
            mean_loss: if self.steps == 0 {
                0.0
            } else {
                self.stats.loss_sum / self.steps as f64
            },
            grad_evals: self.stats.grad_evals,
            max_perturbation: self.stats.max_perturbation,
            shard_size: task.shard.len(),
        }
    }
}
