#![allow(dead_code)]

use fedsim::{Activation, DataSpec, HParam, HyperParams, Method, ModelSpec, RunConfig, Skew};

/// Small blobs problem: 10 classes in 32 dimensions, `per_class` samples each.
pub fn small_data(per_class: usize) -> DataSpec {
    DataSpec {
        per_class,
        ..DataSpec::default()
    }
}

pub fn mlp() -> ModelSpec {
    ModelSpec::Mlp {
        input_dim: 32,
        hidden_dim: 16,
        num_classes: 10,
        activation: Activation::Relu,
    }
}

pub fn config(method: Method, settings: &[(HParam, f64)], n: usize, m: usize, rounds: usize) -> RunConfig {
    RunConfig {
        n_clients: n,
        sample_size: m,
        rounds,
        method,
        hparams: HyperParams::for_method(method, settings).expect("legal settings"),
        partition: Skew::Dirichlet(0.5),
        seed: 7,
        model: mlp(),
        data: small_data(120),
        ..RunConfig::default()
    }
}

/// Metrics JSONL with the wall-time field removed from every record.
pub fn strip_timing(jsonl: &str) -> String {
    jsonl
        .lines()
        .map(|line| {
            let mut v: serde_json::Value = serde_json::from_str(line).expect("metrics line");
            v.as_object_mut().expect("record").remove("dt");
            v.to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}
