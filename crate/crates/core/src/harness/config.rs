//! Flat `key = value` configuration documents.
//!
//! ```text
//! method = fedprox
//! rounds = 100
//! lambda = 0.01
//! partition = dirichlet(0)
//!
//! [model]
//! kind = mlp
//! hidden_dim = 32
//!
//! [data]
//! spread = 0.6
//! ```
//!
//! A document with a `[sweep]` section describes a sweep instead of a single
//! run; its grid lives under `[grid]` as `method.param = v1, v2, ...`.

use std::collections::{BTreeMap, HashMap};

use crate::algorithms::{HParam, HyperParams, Method};
use crate::data::Skew;
use crate::engine::RunConfig;
use crate::error::{FedError, Result};
use crate::model::{Activation, ModelSpec};

const RUN_REQUIRED: [&str; 2] = ["method", "rounds"];
const SWEEP_REQUIRED: [&str; 2] = ["rounds", "sweep.methods"];

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedConfig {
    Run(RunConfig),
    Sweep(SweepSpec),
}

/// Cross product of methods × grid values × partitions × seeds over a base
/// configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub methods: Vec<Method>,
    /// Values to try per method and hyperparameter. Methods without an entry
    /// run once with default hyperparameters.
    pub grid: BTreeMap<Method, BTreeMap<HParam, Vec<f64>>>,
    pub partitions: Vec<Skew>,
    pub seeds: Vec<u64>,
}

#[derive(Debug)]
struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Document {
    entries: BTreeMap<String, Entry>,
}

fn parse_error(line: usize, key: &str, message: impl Into<String>) -> FedError {
    FedError::Parse {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

impl Document {
    fn parse(text: &str) -> Result<Self> {
        let mut section = String::new();
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| parse_error(line_no, line, "unterminated section header"))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_error(line_no, line, "expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(parse_error(line_no, "", "empty key"));
            }
            let path = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            let entry = Entry {
                value: value.trim().to_string(),
                line: line_no,
                used: false,
            };
            if let Some(prev) = entries.insert(path.clone(), entry) {
                return Err(parse_error(line_no, &path, format!("duplicate key (first set on line {})", prev.line)));
            }
        }
        Ok(Document { entries })
    }

    fn is_sweep(&self) -> bool {
        self.entries.keys().any(|k| k.starts_with("sweep."))
    }

    fn require(&self, keys: &[&str]) -> Result<()> {
        let missing: Vec<&str> = keys.iter().copied().filter(|k| !self.entries.contains_key(*k)).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(parse_error(
                0,
                &missing.join(", "),
                format!("missing required keys: {}", missing.join(", ")),
            ))
        }
    }

    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn get<T>(&mut self, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((value, line)) => parse(&value)
                .map(Some)
                .ok_or_else(|| parse_error(line, key, format!("invalid value `{value}`"))),
        }
    }

    fn set<T>(&mut self, key: &str, slot: &mut T, parse: impl Fn(&str) -> Option<T>) -> Result<()> {
        if let Some(v) = self.get(key, parse)? {
            *slot = v;
        }
        Ok(())
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    /// Keys under `prefix.` that have not been consumed yet.
    fn keys_under(&self, prefix: &str) -> Vec<String> {
        self.entries
            .keys()
            .filter(|k| k.starts_with(prefix) && k[prefix.len()..].starts_with('.'))
            .cloned()
            .collect()
    }

    fn reject_unused(&self) -> Result<()> {
        match self.entries.iter().find(|(_, e)| !e.used) {
            Some((key, e)) => Err(parse_error(e.line, key, "unknown key")),
            None => Ok(()),
        }
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Option<T> {
    s.parse().ok()
}

fn parse_real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    let items: Option<Vec<T>> = s.split(',').map(|t| item(t.trim())).collect();
    items.filter(|v| !v.is_empty())
}

/// `iid`, `dirichlet(0.3)` or `dirichlet:0.3`.
pub fn parse_partition(s: &str) -> Option<Skew> {
    let s = s.trim().to_ascii_lowercase();
    if s == "iid" {
        return Some(Skew::Iid);
    }
    let alpha = s
        .strip_prefix("dirichlet(")
        .and_then(|r| r.strip_suffix(')'))
        .or_else(|| s.strip_prefix("dirichlet:"))?;
    parse_real(alpha.trim()).filter(|a| *a >= 0.0).map(Skew::Dirichlet)
}

fn parse_overrides(s: &str) -> Option<BTreeMap<usize, usize>> {
    if s.is_empty() {
        return Some(BTreeMap::new());
    }
    s.split(',')
        .map(|pair| {
            let (id, epochs) = pair.trim().split_once(':')?;
            Some((id.trim().parse().ok()?, epochs.trim().parse().ok()?))
        })
        .collect()
}

/// Reads everything except `method` and the hyperparameters into `cfg`.
fn read_common(doc: &mut Document, cfg: &mut RunConfig) -> Result<()> {
    doc.set("rounds", &mut cfg.rounds, parse_num)?;
    doc.set("n_clients", &mut cfg.n_clients, parse_num)?;
    doc.set("sample_size", &mut cfg.sample_size, parse_num)?;
    doc.set("local_epochs", &mut cfg.local_epochs, parse_num)?;
    doc.set("local_epochs_override", &mut cfg.local_epochs_override, parse_overrides)?;
    doc.set("batch_size", &mut cfg.batch_size, parse_num)?;
    doc.set("client_lr", &mut cfg.client_lr, parse_real)?;
    doc.set("seed", &mut cfg.seed, parse_num)?;
    doc.set("eval_every", &mut cfg.eval_every, parse_num)?;
    doc.set("partition", &mut cfg.partition, parse_partition)?;
    doc.set("weighted_aggregation", &mut cfg.weighted_aggregation, parse_bool)?;

    let data = &mut cfg.data;
    doc.set("data.num_classes", &mut data.num_classes, parse_num)?;
    doc.set("data.dim", &mut data.dim, parse_num)?;
    doc.set("data.per_class", &mut data.per_class, parse_num)?;
    doc.set("data.spread", &mut data.spread, parse_real)?;
    doc.set("data.test_fraction", &mut data.test_fraction, parse_real)?;

    let kind_line = doc.line_of("model.kind");
    let kind = doc.get("model.kind", |s| Some(s.to_ascii_lowercase()))?;
    let hidden = doc.get("model.hidden_dim", parse_num::<usize>)?;
    let activation = doc.get("model.activation", |s| match s {
        "relu" => Some(Activation::Relu),
        "tanh" => Some(Activation::Tanh),
        _ => None,
    })?;
    let target = doc.get("model.probe_target", |s| parse_list(s, parse_real))?;
    let (input_dim, num_classes) = (cfg.data.dim, cfg.data.num_classes);
    let (default_hidden, default_activation) = match &cfg.model {
        ModelSpec::Mlp {
            hidden_dim, activation, ..
        } => (*hidden_dim, *activation),
        _ => (32, Activation::Relu),
    };
    cfg.model = match kind.as_deref().unwrap_or("mlp") {
        "linear" => ModelSpec::Linear { input_dim, num_classes },
        "mlp" => ModelSpec::Mlp {
            input_dim,
            hidden_dim: hidden.unwrap_or(default_hidden),
            num_classes,
            activation: activation.unwrap_or(default_activation),
        },
        "quadratic_probe" => ModelSpec::QuadraticProbe {
            target: target.ok_or_else(|| {
                parse_error(kind_line, "model.probe_target", "quadratic_probe needs probe_target")
            })?,
        },
        other => return Err(parse_error(kind_line, "model.kind", format!("unknown model kind `{other}`"))),
    };
    Ok(())
}

fn check(cfg: &RunConfig) -> Result<()> {
    cfg.validate().map_err(|e| match e {
        FedError::Config(msg) => parse_error(0, "config", msg),
        other => other,
    })
}

fn read_hparams(doc: &mut Document, method: Method) -> Result<HyperParams> {
    let mut hp = HyperParams::default();
    for key in HParam::ALL {
        let name = key.key();
        let line = doc.line_of(name);
        if let Some(value) = doc.get(name, parse_real)? {
            hp.set(method, key, value).map_err(|e| parse_error(line, name, e.to_string()))?;
        }
    }
    Ok(hp)
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut doc = Document::parse(text)?;
    doc.require(&RUN_REQUIRED)?;
    let line = doc.line_of("method");
    let method: Method = doc
        .get("method", |s| s.parse().ok())?
        .ok_or_else(|| parse_error(line, "method", "missing"))?;
    let mut cfg = RunConfig {
        method,
        ..RunConfig::default()
    };
    read_common(&mut doc, &mut cfg)?;
    cfg.hparams = read_hparams(&mut doc, method)?;
    doc.reject_unused()?;
    check(&cfg)?;
    Ok(cfg)
}

pub fn parse_sweep_spec(text: &str) -> Result<SweepSpec> {
    let mut doc = Document::parse(text)?;
    doc.require(&SWEEP_REQUIRED)?;
    for key in HParam::ALL.map(HParam::key).into_iter().chain(["method"]) {
        if doc.entries.contains_key(key) {
            return Err(parse_error(
                doc.line_of(key),
                key,
                "not allowed at top level of a sweep; list methods under [sweep] and values under [grid]",
            ));
        }
    }
    let mut base = RunConfig::default();
    read_common(&mut doc, &mut base)?;

    let methods = doc
        .get("sweep.methods", |s| parse_list(s, |m| m.parse::<Method>().ok()))?
        .unwrap_or_default();
    let partitions = doc
        .get("sweep.partitions", |s| parse_list(s, parse_partition))?
        .unwrap_or_else(|| vec![base.partition]);
    let seeds = doc
        .get("sweep.seeds", |s| parse_list(s, parse_num::<u64>))?
        .unwrap_or_else(|| vec![base.seed]);

    let mut grid: BTreeMap<Method, BTreeMap<HParam, Vec<f64>>> = BTreeMap::new();
    for path in doc.keys_under("grid") {
        let line = doc.line_of(&path);
        let rest = &path["grid.".len()..];
        let (method, param) = rest
            .split_once('.')
            .ok_or_else(|| parse_error(line, &path, "grid keys look like grid.<method>.<param>"))?;
        let method: Method = method.parse().map_err(|e: FedError| parse_error(line, &path, e.to_string()))?;
        if !methods.contains(&method) {
            return Err(parse_error(line, &path, format!("{method} is not in sweep.methods")));
        }
        let param = HParam::from_key(param)
            .filter(|p| method.hparams().contains(p))
            .ok_or_else(|| parse_error(line, &path, format!("`{param}` is not a hyperparameter of {method}")))?;
        let values = doc
            .get(&path, |s| parse_list(s, parse_real))?
            .expect("key exists");
        for &v in &values {
            HyperParams::for_method(method, &[(param, v)]).map_err(|e| parse_error(line, &path, e.to_string()))?;
        }
        grid.entry(method).or_default().insert(param, values);
    }

    doc.reject_unused()?;
    let mut seen = HashMap::new();
    for m in &methods {
        if seen.insert(*m, ()).is_some() {
            return Err(parse_error(doc.line_of("sweep.methods"), "sweep.methods", format!("{m} listed twice")));
        }
    }
    let mut probe = base.clone();
    for &partition in &partitions {
        probe.partition = partition;
        check(&probe)?;
    }
    Ok(SweepSpec {
        base,
        methods,
        grid,
        partitions,
        seeds,
    })
}

/// A run config, or a sweep if the document has a `[sweep]` section.
pub fn parse_config(text: &str) -> Result<ParsedConfig> {
    let doc = Document::parse(text)?;
    if doc.is_sweep() {
        parse_sweep_spec(text).map(ParsedConfig::Sweep)
    } else {
        parse_run_config(text).map(ParsedConfig::Run)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_err(text: &str) -> (usize, String, String) {
        match parse_config(text) {
            Err(FedError::Parse { line, key, message }) => (line, key, message),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn fedprox_with_lambda() {
        let cfg = parse_run_config("method = fedprox\nrounds = 5\nlambda = 0.01\n").unwrap();
        assert_eq!(cfg.method, Method::FedProx);
        assert_eq!(cfg.hparams.lambda, 0.01);
        assert_eq!(cfg.rounds, 5);
        assert_eq!(cfg.n_clients, 100);
        assert_eq!(cfg.sample_size, 10);
    }

    #[test]
    fn rho_is_illegal_for_fedavg() {
        let (line, key, message) = parse_err("method = fedavg\nrounds = 5\nrho = 0.1\n");
        assert_eq!((line, key.as_str()), (3, "rho"));
        assert!(message.contains("fedavg"), "{message}");
    }

    #[test]
    fn empty_document_lists_required_keys() {
        let (_, key, message) = parse_err("");
        assert!(key.contains("method") && key.contains("rounds"));
        assert!(message.contains("method"));
    }

    #[test]
    fn unknown_key_reports_path_and_line() {
        let (line, key, _) = parse_err("method = fedavg\nrounds = 5\n[model]\nkind = mlp\ndepth = 3\n");
        assert_eq!((line, key.as_str()), (5, "model.depth"));
    }

    #[test]
    fn out_of_range_values() {
        let (line, key, _) = parse_err("method = fedcm\nrounds = 5\nmu = 1.5\n");
        assert_eq!((line, key.as_str()), (3, "mu"));
        let (line, key, _) = parse_err("method = fedavg\nrounds = 5\npartition = dirichlet(-1)\n");
        assert_eq!((line, key.as_str()), (3, "partition"));
        assert!(parse_run_config("method = fedavg\nrounds = 5\nsample_size = 200\n").is_err());
        assert!(parse_run_config("method = fedavg\nrounds = 5\nclient_lr = 0\n").is_err());
    }

    #[test]
    fn sections_and_model_kinds() {
        let text = "method = fedsam\nrounds = 3\nrho = 0.1\npartition = iid\nseed = 9\n\
                    [data]\nnum_classes = 3\ndim = 5\n[model]\nkind = linear\n";
        let cfg = parse_run_config(text).unwrap();
        assert_eq!(cfg.model, ModelSpec::Linear { input_dim: 5, num_classes: 3 });
        assert_eq!(cfg.partition, Skew::Iid);
        assert_eq!(cfg.hparams.rho, 0.1);
        let probe = parse_run_config("method = fedavg\nrounds = 1\n[model]\nkind = quadratic_probe\nprobe_target = 1, 2\n")
            .unwrap();
        assert_eq!(probe.model, ModelSpec::QuadraticProbe { target: vec![1.0, 2.0] });
    }

    #[test]
    fn duplicate_key_rejected() {
        let (line, key, _) = parse_err("method = fedavg\nrounds = 5\nrounds = 6\n");
        assert_eq!((line, key.as_str()), (3, "rounds"));
    }

    #[test]
    fn partition_forms() {
        assert_eq!(parse_partition("iid"), Some(Skew::Iid));
        assert_eq!(parse_partition("dirichlet(0.3)"), Some(Skew::Dirichlet(0.3)));
        assert_eq!(parse_partition("dirichlet:0"), Some(Skew::Dirichlet(0.0)));
        assert_eq!(parse_partition("label"), None);
    }

    #[test]
    fn overrides_parse() {
        let cfg = parse_run_config("method = fedavg\nrounds = 1\nlocal_epochs_override = 3:5, 7:1\n").unwrap();
        assert_eq!(cfg.epochs_for(3), 5);
        assert_eq!(cfg.epochs_for(7), 1);
        assert_eq!(cfg.epochs_for(0), 2);
    }

    #[test]
    fn sweep_document() {
        let text = "rounds = 10\n[sweep]\nmethods = fedavg, fedprox, fedsam\npartitions = iid, dirichlet(0)\n\
                    seeds = 1, 2, 3\n[grid]\nfedprox.lambda = 0.1, 0.01, 0.001\nfedsam.rho = 0.1, 0.01\n";
        let ParsedConfig::Sweep(spec) = parse_config(text).unwrap() else { panic!() };
        assert_eq!(spec.methods, vec![Method::FedAvg, Method::FedProx, Method::FedSam]);
        assert_eq!(spec.partitions, vec![Skew::Iid, Skew::Dirichlet(0.0)]);
        assert_eq!(spec.seeds, vec![1, 2, 3]);
        assert_eq!(spec.grid[&Method::FedProx][&HParam::Lambda], vec![0.1, 0.01, 0.001]);
        assert_eq!(spec.base.rounds, 10);
    }

    #[test]
    fn sweep_grid_must_be_legal() {
        let (line, key, _) = parse_err("rounds = 10\n[sweep]\nmethods = fedavg\n[grid]\nfedavg.rho = 0.1\n");
        assert_eq!((line, key.as_str()), (5, "grid.fedavg.rho"));
        let (_, key, _) = parse_err("rounds = 10\n[sweep]\nmethods = fedavg\n[grid]\nfedprox.lambda = 0.1\n");
        assert_eq!(key, "grid.fedprox.lambda");
        let (_, key, _) = parse_err("rounds = 10\nrho = 0.1\n[sweep]\nmethods = fedsam\n");
        assert_eq!(key, "rho");
    }
}
