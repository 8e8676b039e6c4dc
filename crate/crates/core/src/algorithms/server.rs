use super::{ClientResult, HyperParams, Method};
use crate::engine::ServerState;
use crate::error::{FedError, Result};
use crate::params::ParamVector;

/// Aggregation settings shared by every server optimizer.
#[derive(Debug, Clone, Copy)]
pub struct Aggregation {
    pub lr: f64,
    pub n_clients: usize,
    /// Weight client models by shard size instead of uniformly.
    pub weighted: bool,
}

/// Mean of the returned models, folded in slice order (callers pass results
/// sorted by client id).
pub fn server_mean(results: &[ClientResult], weighted: bool) -> Result<ParamVector> {
    let models: Vec<&ParamVector> = results.iter().map(|r| &r.final_params).collect();
    if weighted {
        let weights: Vec<f64> = results.iter().map(|r| r.shard_size as f64).collect();
        ParamVector::weighted_mean(&models, &weights)
    } else {
        ParamVector::mean(&models)
    }
}

/// Updates `server.global` and the method's server-side state from the
/// round's results. Does not advance the round counter.
pub fn server_update(
    method: Method,
    hp: &HyperParams,
    results: &[ClientResult],
    server: &mut ServerState,
    agg: Aggregation,
) -> Result<()> {
    let next = server_mean(results, agg.weighted)?;
    match method {
        Method::FedCm => {
            let momentum = server.momentum.as_mut().ok_or_else(missing)?;
            server_fedcm(results, &server.global, &next, momentum, agg.lr);
        }
        Method::FedGamma => {
            let control = server.control.as_mut().ok_or_else(missing)?;
            server_fedgamma(results, control, agg.n_clients)?;
        }
        Method::FedSmoo => {
            let perturb = server.perturb.as_mut().ok_or_else(missing)?;
            *perturb = server_fedsmoo(results, hp.rho, hp.sam_guard)?;
        }
        _ => {}
    }
    server.global = next;
    Ok(())
}

fn missing() -> FedError {
    FedError::config("server state does not match the configured method")
}

/// `Δ ← (θ_r − θ_{r+1}) / (lr · τ̄)` with `τ̄` the mean local step count.
/// Leaves Δ untouched when no step was taken.
pub fn server_fedcm(
    results: &[ClientResult],
    previous: &ParamVector,
    next: &ParamVector,
    momentum: &mut ParamVector,
    lr: f64,
) {
    let mean_steps = results.iter().map(|r| r.steps as f64).sum::<f64>() / results.len() as f64;
    let scale = lr * mean_steps;
    if scale > 0.0 {
        let mut delta = previous.sub(next);
        delta.scale(1.0 / scale);
        *momentum = delta;
    }
}

/// `c ← c + (1/N) Σ aux` over the participants, in slice order.
pub fn server_fedgamma(results: &[ClientResult], control: &mut ParamVector, n_clients: usize) -> Result<()> {
    for r in results {
        let aux = r
            .aux
            .as_ref()
            .ok_or_else(|| FedError::config("FedGamma result without a control-variate delta"))?;
        control.axpy(1.0 / n_clients as f64, aux);
    }
    Ok(())
}

/// `s' = ρ·m / (|m| + ξ)` where `m` is the mean returned perturbation.
pub fn server_fedsmoo(results: &[ClientResult], rho: f64, guard: f64) -> Result<ParamVector> {
    let perturbations = results
        .iter()
        .map(|r| {
            r.aux
                .as_ref()
                .ok_or_else(|| FedError::config("FedSMOO result without a perturbation"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = ParamVector::mean(&perturbations)?;
    let norm = mean.norm();
    mean.scale(rho / (norm + guard));
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(id: usize, params: Vec<f64>, steps: usize, aux: Option<Vec<f64>>) -> ClientResult {
        ClientResult {
            client_id: id,
            final_params: ParamVector::flat(params),
            steps,
            aux: aux.map(ParamVector::flat),
            mean_loss: 0.0,
            grad_evals: steps as u64,
            max_perturbation: 0.0,
            shard_size: steps,
        }
    }

    #[test]
    fn mean_of_two_clients() {
        let rs = [result(0, vec![0.0, 2.0], 1, None), result(1, vec![4.0, 6.0], 1, None)];
        assert_eq!(server_mean(&rs, false).unwrap().values(), &[2.0, 4.0]);
    }

    #[test]
    fn weighted_mean_uses_shard_sizes() {
        let rs = [result(0, vec![0.0], 1, None), result(1, vec![4.0], 3, None)];
        assert_eq!(server_mean(&rs, true).unwrap().values(), &[3.0]);
    }

    #[test]
    fn fedcm_momentum_telescopes() {
        // one client, constant gradient g over tau steps:
        // theta_next = theta - lr*tau*(mu g + (1-mu) delta)
        let (g, mu, lr, tau, delta) = (0.7, 0.3, 0.05, 4usize, 0.2);
        let step = mu * g + (1.0 - mu) * delta;
        let next = 1.0 - lr * tau as f64 * step;
        let rs = [result(0, vec![next], tau, None)];
        let mut momentum = ParamVector::flat(vec![delta]);
        server_fedcm(&rs, &ParamVector::flat(vec![1.0]), &ParamVector::flat(vec![next]), &mut momentum, lr);
        assert!((momentum.values()[0] - step).abs() < 1e-12);
    }

    #[test]
    fn fedcm_zero_lr_keeps_momentum() {
        let rs = [result(0, vec![1.0], 3, None)];
        let mut momentum = ParamVector::flat(vec![0.5]);
        server_fedcm(&rs, &ParamVector::flat(vec![1.0]), &ParamVector::flat(vec![1.0]), &mut momentum, 0.0);
        assert_eq!(momentum.values(), &[0.5]);
    }

    #[test]
    fn fedgamma_accumulates_over_population() {
        let rs = [result(0, vec![0.0], 1, Some(vec![0.6]))];
        let mut c = ParamVector::flat(vec![0.0]);
        server_fedgamma(&rs, &mut c, 3).unwrap();
        assert!((c.values()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn fedsmoo_perturbation_is_bounded() {
        let rs = [
            result(0, vec![0.0, 0.0], 1, Some(vec![3.0, 4.0])),
            result(1, vec![0.0, 0.0], 1, Some(vec![3.0, 4.0])),
        ];
        let s = server_fedsmoo(&rs, 0.1, 1e-12).unwrap();
        assert!(s.norm() <= 0.1);
        assert!((s.values()[0] - 0.06).abs() < 1e-12);
    }
}
