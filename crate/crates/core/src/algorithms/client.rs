use super::{local_sgd, ClientPayload, ClientResult, LocalTask, Method};
use crate::error::{FedError, Result};
use crate::params::ParamVector;
use crate::rng::Stream;

/// Runs the configured client optimizer. Returns the result for the server
/// and the client's new persistent state.
pub fn client_update(task: &LocalTask, payload: &ClientPayload, rng: &mut Stream) -> Result<(ClientResult, ClientPayload)> {
    match (task.method, payload) {
        (Method::FedAvg, ClientPayload::Empty) => Ok((client_fedavg(task, rng)?, ClientPayload::Empty)),
        (Method::FedProx, ClientPayload::Empty) => Ok((client_fedprox(task, rng)?, ClientPayload::Empty)),
        (Method::FedCm, ClientPayload::Empty) => Ok((client_fedcm(task, rng)?, ClientPayload::Empty)),
        (Method::FedSam, ClientPayload::Empty) => Ok((client_fedsam(task, rng)?, ClientPayload::Empty)),
        (Method::FedDyn, ClientPayload::Dyn { h }) => {
            let (result, h) = client_feddyn(task, h, rng)?;
            Ok((result, ClientPayload::Dyn { h }))
        }
        (Method::FedGamma, ClientPayload::Gamma { control }) => {
            let (result, control) = client_fedgamma(task, control, rng)?;
            Ok((result, ClientPayload::Gamma { control }))
        }
        (Method::FedSpeed, ClientPayload::Speed { dual }) => {
            let (result, dual) = client_fedspeed(task, dual, rng)?;
            Ok((result, ClientPayload::Speed { dual }))
        }
        (Method::FedSmoo, ClientPayload::Smoo { h, u }) => {
            let (result, h, u) = client_fedsmoo(task, h, u, rng)?;
            Ok((result, ClientPayload::Smoo { h, u }))
        }
        (method, _) => Err(FedError::config(format!(
            "client {} state does not belong to {method}",
            task.client_id
        ))),
    }
}

fn server_field<'a>(field: &'a Option<ParamVector>, what: &str) -> Result<&'a ParamVector> {
    field
        .as_ref()
        .ok_or_else(|| FedError::config(format!("server state lacks {what}")))
}

/// Plain local SGD: `d = g(θ)`.
pub fn client_fedavg(task: &LocalTask, rng: &mut Stream) -> Result<ClientResult> {
    let run = local_sgd(task, rng, |theta, batch, stats| stats.base_grad(task, theta, batch))?;
    Ok(run.into_result(task, None))
}

/// `d = g(θ) + λ(θ − θ_r)`.
pub fn client_fedprox(task: &LocalTask, rng: &mut Stream) -> Result<ClientResult> {
    let lambda = task.hp.lambda;
    let run = local_sgd(task, rng, |theta, batch, stats| {
        let mut d = stats.base_grad(task, theta, batch)?;
        d.axpy(lambda, &theta.sub(task.global()));
        Ok(d)
    })?;
    Ok(run.into_result(task, None))
}

/// `d = g(θ) − h + β(θ − θ_r)`, then `h ← h − β(θ_final − θ_r)`.
pub fn client_feddyn(task: &LocalTask, h: &ParamVector, rng: &mut Stream) -> Result<(ClientResult, ParamVector)> {
    let beta = task.hp.beta;
    let run = local_sgd(task, rng, |theta, batch, stats| {
        let mut d = stats.base_grad(task, theta, batch)?;
        d.sub_assign(h);
        d.axpy(beta, &theta.sub(task.global()));
        Ok(d)
    })?;
    let mut h = h.clone();
    h.axpy(-beta, &run.params.sub(task.global()));
    Ok((run.into_result(task, None), h))
}

/// `d = μ·g(θ) + (1 − μ)·Δ_r` with the server momentum Δ_r.
pub fn client_fedcm(task: &LocalTask, rng: &mut Stream) -> Result<ClientResult> {
    let mu = task.hp.mu;
    let momentum = server_field(&task.server.momentum, "FedCM momentum")?;
    let run = local_sgd(task, rng, |theta, batch, stats| {
        let mut d = stats.base_grad(task, theta, batch)?;
        d.scale(mu);
        d.axpy(1.0 - mu, momentum);
        Ok(d)
    })?;
    Ok(run.into_result(task, None))
}

/// Gradient at `θ + ρ·g/(|g| + ξ)`.
pub fn client_fedsam(task: &LocalTask, rng: &mut Stream) -> Result<ClientResult> {
    let run = local_sgd(task, rng, |theta, batch, stats| {
        let g = stats.base_grad(task, theta, batch)?;
        let (d, _) = stats.perturbed_grad(task, theta, batch, &g)?;
        Ok(d)
    })?;
    Ok(run.into_result(task, None))
}

/// `d = sam_grad(θ) − c_m + c`; afterwards
/// `c_m' = c_m − c + (θ_r − θ_final)/(lr·τ_m)` and `aux = c_m' − c_m`.
pub fn client_fedgamma(
    task: &LocalTask,
    control: &ParamVector,
    rng: &mut Stream,
) -> Result<(ClientResult, ParamVector)> {
    let global_control = server_field(&task.server.control, "FedGamma control variate")?;
    let run = local_sgd(task, rng, |theta, batch, stats| {
        let g = stats.base_grad(task, theta, batch)?;
        let (mut d, _) = stats.perturbed_grad(task, theta, batch, &g)?;
        d.sub_assign(control);
        d.add_assign(global_control);
        Ok(d)
    })?;
    let mut next = control.clone();
    next.sub_assign(global_control);
    let scale = task.lr * run.steps as f64;
    if scale > 0.0 {
        next.axpy(1.0 / scale, &task.global().sub(&run.params));
    }
    let aux = next.sub(control);
    Ok((run.into_result(task, Some(aux)), next))
}

/// `d = sam_grad(θ) − ĝ + γ(θ − θ_r)`, then `ĝ ← ĝ − γ(θ_final − θ_r)`.
pub fn client_fedspeed(task: &LocalTask, dual: &ParamVector, rng: &mut Stream) -> Result<(ClientResult, ParamVector)> {
    let gamma = task.hp.gamma;
    let run = local_sgd(task, rng, |theta, batch, stats| {
        let g = stats.base_grad(task, theta, batch)?;
        let (mut d, _) = stats.perturbed_grad(task, theta, batch, &g)?;
        d.sub_assign(dual);
        d.axpy(gamma, &theta.sub(task.global()));
        Ok(d)
    })?;
    let mut dual = dual.clone();
    dual.axpy(-gamma, &run.params.sub(task.global()));
    Ok((run.into_result(task, None), dual))
}

/// Perturbation direction `g − u + s`; `d = g(θ + ŝ) − h + β(θ − θ_r)`.
/// Afterwards `h ← h − β(θ_final − θ_r)`, `u ← u + (ŝ_last − s)`, and the last
/// perturbation goes to the server as `aux`.
pub fn client_fedsmoo(
    task: &LocalTask,
    h: &ParamVector,
    u: &ParamVector,
    rng: &mut Stream,
) -> Result<(ClientResult, ParamVector, ParamVector)> {
    let beta = task.hp.beta;
    let perturb = server_field(&task.server.perturb, "FedSMOO perturbation")?;
    let mut last = ParamVector::zeros(h.layout().clone());
    let run = local_sgd(task, rng, |theta, batch, stats| {
        let mut direction = stats.base_grad(task, theta, batch)?;
        direction.sub_assign(u);
        direction.add_assign(perturb);
        let (mut d, applied) = stats.perturbed_grad(task, theta, batch, &direction)?;
        last = applied;
        d.sub_assign(h);
        d.axpy(beta, &theta.sub(task.global()));
        Ok(d)
    })?;
    let mut h = h.clone();
    h.axpy(-beta, &run.params.sub(task.global()));
    let mut u = u.clone();
    u.add_assign(&last.sub(perturb));
    Ok((run.into_result(task, Some(last)), h, u))
}
