//! Synthetic datasets, train/test splitting and client partitioning.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{FedError, Result};
use crate::rng::Stream;

/// Distance of every class center from the origin in [`gen_blobs`].
pub const BLOB_RADIUS: f64 = 4.0;

/// Row-major feature matrix with one integer label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(FedError::config("feature dimension must be positive"));
        }
        if features.len() != dim * labels.len() {
            return Err(FedError::config(format!(
                "{} feature values for {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        let mut seen = vec![false; num_classes];
        for &label in &labels {
            if label >= num_classes {
                return Err(FedError::config(format!(
                    "label {label} out of range for {num_classes} classes"
                )));
            }
            seen[label] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(FedError::config(format!("class {missing} has no samples")));
        }
        Ok(LabeledDataset {
            features,
            dim,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows `indices` in the given order. Classes absent from the subset are
    /// allowed here, unlike [`LabeledDataset::new`].
    fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            features,
            dim: self.dim,
            labels,
            num_classes: self.num_classes,
        }
    }

    /// Writes the text table format: a `dim,num_classes,count` header, then
    /// one comma-separated row per sample with the label last.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{},{},{}", self.dim, self.num_classes, self.len())?;
        for i in 0..self.len() {
            for v in self.row(i) {
                write!(out, "{v},")?;
            }
            writeln!(out, "{}", self.labels[i])?;
        }
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let bad = |line: usize, msg: &str| FedError::Parse {
            line,
            key: "dataset".into(),
            message: msg.into(),
        };
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))??;
        let head: Vec<usize> = header
            .split(',')
            .map(|t| t.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(1, "header must be dim,num_classes,count"))?;
        let [dim, num_classes, count] = head[..] else {
            return Err(bad(1, "header must be dim,num_classes,count"));
        };
        let mut features = Vec::with_capacity(dim * count);
        let mut labels = Vec::with_capacity(count);
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(bad(n + 2, "wrong number of fields"));
            }
            for f in &fields[..dim] {
                features.push(f.trim().parse().map_err(|_| bad(n + 2, "bad feature value"))?);
            }
            labels.push(fields[dim].trim().parse().map_err(|_| bad(n + 2, "bad label"))?);
        }
        if labels.len() != count {
            return Err(bad(1, "row count does not match header"));
        }
        LabeledDataset::new(features, dim, labels, num_classes)
    }
}

/// Recipe for the synthetic blob dataset a run trains and tests on.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Samples generated per class before the train/test split.
    pub per_class: usize,
    pub spread: f64,
    pub test_fraction: f64,
}

impl Default for DataSpec {
    /// 10 classes in 32 dimensions; 2000 train and 400 test samples per class.
    fn default() -> Self {
        DataSpec {
            num_classes: 10,
            dim: 32,
            per_class: 2400,
            spread: 0.6,
            test_fraction: 1.0 / 6.0,
        }
    }
}

impl DataSpec {
    /// Generates the blobs and splits them, drawing from the run's data and
    /// split channels.
    pub fn build(&self, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        use crate::rng::{derive_stream, DATA_CHANNEL, SPLIT_CHANNEL};
        let all = gen_blobs(
            self.num_classes,
            self.dim,
            self.per_class,
            self.spread,
            &mut derive_stream(seed, 0, DATA_CHANNEL),
        )?;
        split_train_test(&all, self.test_fraction, &mut derive_stream(seed, 0, SPLIT_CHANNEL))
    }
}

/// Unit direction of class `k`'s center. Uses the standard basis while there
/// are enough axes, otherwise fixed pseudo-random directions.
fn class_direction(k: usize, num_classes: usize, dim: usize) -> Vec<f64> {
    if num_classes <= dim {
        let mut d = vec![0.0; dim];
        d[k] = 1.0;
        return d;
    }
    let mut rng = crate::rng::derive_stream(0x0b10_b5ee_d000_0000, k as u64, 0);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Gaussian blobs: `per_class` samples around each class center, labels in
/// class-major order.
pub fn gen_blobs(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    rng: &mut Stream,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(FedError::config("gen_blobs needs at least 2 classes"));
    }
    if dim == 0 || per_class == 0 {
        return Err(FedError::config("gen_blobs needs dim >= 1 and per_class >= 1"));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(FedError::config("spread must be a finite value >= 0"));
    }
    let mut features = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for k in 0..num_classes {
        let center: Vec<f64> = class_direction(k, num_classes, dim)
            .into_iter()
            .map(|x| x * BLOB_RADIUS)
            .collect();
        for _ in 0..per_class {
            for c in &center {
                let noise: f64 = rng.sample(StandardNormal);
                features.push(c + spread * noise);
            }
            labels.push(k);
        }
    }
    LabeledDataset::new(features, dim, labels, num_classes)
}

/// Stratified split into `(train_indices, test_indices)`, each ascending.
/// Every class sends `max(1, floor(test_fraction * count))` samples to test.
pub fn split_indices(
    data: &LabeledDataset,
    test_fraction: f64,
    rng: &mut Stream,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(FedError::config("test_fraction must lie in (0, 1)"));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, mut members) in class_members(data).into_iter().enumerate() {
        // the epsilon keeps fractions like 1/6 from flooring one short
        let n_test = ((test_fraction * members.len() as f64 + 1e-9).floor() as usize).max(1);
        if n_test >= members.len() {
            return Err(FedError::config(format!(
                "class {k} has {} samples, too few to hold out a test sample",
                members.len()
            )));
        }
        members.shuffle(rng);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_train_test(
    data: &LabeledDataset,
    test_fraction: f64,
    rng: &mut Stream,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = split_indices(data, test_fraction, rng)?;
    Ok((data.subset(&train), data.subset(&test)))
}

fn class_members(data: &LabeledDataset) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); data.num_classes()];
    for (i, &l) in data.labels().iter().enumerate() {
        members[l].push(i);
    }
    members
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Skew {
    Iid,
    Dirichlet(f64),
}

impl std::fmt::Display for Skew {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Skew::Iid => write!(f, "iid"),
            Skew::Dirichlet(alpha) => write!(f, "dirichlet({alpha})"),
        }
    }
}

/// Client id -> ascending sample indices into the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
    pub alpha_used: Skew,
}

impl PartitionPlan {
    pub fn n_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn shard(&self, client: usize) -> &[usize] {
        &self.assignments[client]
    }

    /// Per-client class histograms.
    pub fn class_histograms(&self, data: &LabeledDataset) -> Vec<Vec<usize>> {
        self.assignments
            .iter()
            .map(|rows| {
                let mut h = vec![0; data.num_classes()];
                for &i in rows {
                    h[data.label(i)] += 1;
                }
                h
            })
            .collect()
    }

    /// Mean Shannon entropy (nats) of the per-client label distributions.
    pub fn mean_label_entropy(&self, data: &LabeledDataset) -> f64 {
        let hists = self.class_histograms(data);
        let total: f64 = hists
            .iter()
            .map(|h| {
                let n: usize = h.iter().sum();
                h.iter()
                    .filter(|&&c| c > 0)
                    .map(|&c| {
                        let p = c as f64 / n as f64;
                        -p * p.ln()
                    })
                    .sum::<f64>()
            })
            .sum();
        total / hists.len() as f64
    }
}

fn check_client_count(data: &LabeledDataset, n_clients: usize) -> Result<()> {
    if n_clients == 0 {
        return Err(FedError::config("need at least one client"));
    }
    if n_clients > data.len() {
        return Err(FedError::config(format!(
            "{n_clients} clients but only {} samples",
            data.len()
        )));
    }
    Ok(())
}

/// Contiguous chunk sizes for `total` items over `parts`; the remainder goes
/// one-per-part starting from part 0.
fn chunk_sizes(total: usize, parts: usize) -> impl Iterator<Item = usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(move |i| base + usize::from(i < extra))
}

pub fn partition_iid(data: &LabeledDataset, n_clients: usize, rng: &mut Stream) -> Result<PartitionPlan> {
    check_client_count(data, n_clients)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut assignments = Vec::with_capacity(n_clients);
    let mut start = 0;
    for size in chunk_sizes(order.len(), n_clients) {
        let mut shard = order[start..start + size].to_vec();
        shard.sort_unstable();
        assignments.push(shard);
        start += size;
    }
    Ok(PartitionPlan {
        assignments,
        alpha_used: Skew::Iid,
    })
}

/// Label-skew partition. Each class is split across clients by an
/// independent `Dirichlet(alpha)` draw; `alpha = 0` gives every client a
/// single class, with clients assigned to classes round-robin.
pub fn partition_dirichlet(
    data: &LabeledDataset,
    n_clients: usize,
    alpha: f64,
    rng: &mut Stream,
) -> Result<PartitionPlan> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(FedError::config(format!("dirichlet alpha must be finite and >= 0, got {alpha}")));
    }
    check_client_count(data, n_clients)?;
    let k = data.num_classes();
    let mut assignments = vec![Vec::new(); n_clients];

    if alpha == 0.0 {
        if n_clients < k {
            return Err(FedError::config(format!(
                "alpha = 0 needs at least one client per class ({n_clients} clients, {k} classes)"
            )));
        }
        for (class, mut members) in class_members(data).into_iter().enumerate() {
            members.shuffle(rng);
            let owners: Vec<usize> = (class..n_clients).step_by(k).collect();
            let mut start = 0;
            for (owner, size) in owners.iter().zip(chunk_sizes(members.len(), owners.len())) {
                assignments[*owner].extend_from_slice(&members[start..start + size]);
                start += size;
            }
        }
    } else {
        let gamma = Gamma::new(alpha, 1.0)
            .map_err(|e| FedError::config(format!("dirichlet alpha {alpha}: {e}")))?;
        for mut members in class_members(data) {
            members.shuffle(rng);
            let draws: Vec<f64> = (0..n_clients).map(|_| gamma.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            let n = members.len();
            if !total.is_finite() || total <= 0.0 {
                // every gamma draw underflowed: the whole class lands on one client
                let owner = rng.random_range(0..n_clients);
                assignments[owner].extend_from_slice(&members);
                continue;
            }
            let mut cumulative = 0.0;
            let mut start = 0;
            for (client, draw) in draws.iter().enumerate() {
                cumulative += draw / total;
                let end = if client + 1 == n_clients {
                    n
                } else {
                    ((cumulative * n as f64).round() as usize).clamp(start, n)
                };
                assignments[client].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
    }

    repair_empty_clients(&mut assignments);
    for shard in &mut assignments {
        shard.sort_unstable();
    }
    Ok(PartitionPlan {
        assignments,
        alpha_used: Skew::Dirichlet(alpha),
    })
}

/// Each empty client, in ascending id order, takes one sample from the
/// currently largest client (lowest id on ties).
fn repair_empty_clients(assignments: &mut [Vec<usize>]) {
    for client in 0..assignments.len() {
        if !assignments[client].is_empty() {
            continue;
        }
        let donor = (0..assignments.len())
            .max_by(|&a, &b| assignments[a].len().cmp(&assignments[b].len()).then(b.cmp(&a)))
            .expect("at least one client");
        let moved = assignments[donor].pop().expect("donor holds at least two samples");
        assignments[client].push(moved);
    }
}

pub fn partition(data: &LabeledDataset, n_clients: usize, skew: Skew, rng: &mut Stream) -> Result<PartitionPlan> {
    match skew {
        Skew::Iid => partition_iid(data, n_clients, rng),
        Skew::Dirichlet(alpha) => partition_dirichlet(data, n_clients, alpha, rng),
    }
}
