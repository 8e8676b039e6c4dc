//! Small differentiable classifiers over flat parameter vectors.
//!
//! Gradients are derived by hand for each model kind and checked against
//! central finite differences in the tests.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{FedError, Result};
use crate::params::{Layout, ParamVector};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    /// Softmax regression.
    Linear { input_dim: usize, num_classes: usize },
    /// One hidden layer followed by a softmax output layer.
    Mlp {
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        activation: Activation,
    },
    /// `0.5 * |theta - target|^2`, independent of the data. Lets optimizer
    /// tests check steps against closed-form values.
    QuadraticProbe { target: Vec<f64> },
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Linear { input_dim, num_classes } => {
                if *input_dim == 0 || *num_classes < 2 {
                    return Err(FedError::config("linear model needs input_dim >= 1 and num_classes >= 2"));
                }
            }
            ModelSpec::Mlp {
                input_dim,
                hidden_dim,
                num_classes,
                ..
            } => {
                if *input_dim == 0 || *hidden_dim == 0 || *num_classes < 2 {
                    return Err(FedError::config(
                        "mlp needs input_dim >= 1, hidden_dim >= 1 and num_classes >= 2",
                    ));
                }
            }
            ModelSpec::QuadraticProbe { target } => {
                if target.is_empty() {
                    return Err(FedError::config("quadratic probe needs a non-empty target"));
                }
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        match self {
            ModelSpec::Linear { input_dim, num_classes } => {
                Layout::new([("w", vec![*num_classes, *input_dim]), ("b", vec![*num_classes])])
            }
            ModelSpec::Mlp {
                input_dim,
                hidden_dim,
                num_classes,
                ..
            } => Layout::new([
                ("w1", vec![*hidden_dim, *input_dim]),
                ("b1", vec![*hidden_dim]),
                ("w2", vec![*num_classes, *hidden_dim]),
                ("b2", vec![*num_classes]),
            ]),
            ModelSpec::QuadraticProbe { target } => Layout::new([("theta", vec![target.len()])]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().size()
    }

    pub fn input_dim(&self) -> Option<usize> {
        match self {
            ModelSpec::Linear { input_dim, .. } | ModelSpec::Mlp { input_dim, .. } => Some(*input_dim),
            ModelSpec::QuadraticProbe { .. } => None,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self {
            ModelSpec::Linear { num_classes, .. } | ModelSpec::Mlp { num_classes, .. } => Some(*num_classes),
            ModelSpec::QuadraticProbe { .. } => None,
        }
    }

    pub fn is_classifier(&self) -> bool {
        !matches!(self, ModelSpec::QuadraticProbe { .. })
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.layout().as_ref() != &self.layout() {
            return Err(FedError::LayoutMismatch);
        }
        Ok(())
    }

    fn check_data(&self, data: &LabeledDataset) -> Result<()> {
        if let (Some(dim), Some(classes)) = (self.input_dim(), self.num_classes()) {
            if data.dim() != dim || data.num_classes() > classes {
                return Err(FedError::config(format!(
                    "data ({} features, {} classes) does not fit the model ({dim} inputs, {classes} classes)",
                    data.dim(),
                    data.num_classes()
                )));
            }
        }
        Ok(())
    }
}

/// Rows of a dataset selected for one loss evaluation.
///
/// Row indices are kept in ascending order so reductions over the batch run
/// in canonical dataset order regardless of how the batch was assembled.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    data: &'a LabeledDataset,
    rows: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn new(data: &'a LabeledDataset, mut rows: Vec<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(FedError::config("batch must not be empty"));
        }
        if rows.iter().any(|&r| r >= data.len()) {
            return Err(FedError::config("batch row out of range"));
        }
        rows.sort_unstable();
        Ok(Batch { data, rows })
    }

    pub fn all(data: &'a LabeledDataset) -> Result<Self> {
        Self::new(data, (0..data.len()).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn data(&self) -> &LabeledDataset {
        self.data
    }
}

/// Draws initial parameters: weights uniform in `±1/sqrt(fan_in)`, biases
/// zero, probe parameters zero.
pub fn init_params(spec: &ModelSpec, rng: &mut Stream) -> Result<ParamVector> {
    spec.validate()?;
    let layout = Arc::new(spec.layout());
    let mut params = ParamVector::zeros(layout.clone());
    if !spec.is_classifier() {
        return Ok(params);
    }
    for block in layout.blocks() {
        if block.dims.len() != 2 {
            continue;
        }
        let bound = 1.0 / (block.dims[1] as f64).sqrt();
        for v in &mut params.values_mut()[block.range()] {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

#[inline]
fn matvec(weights: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, (row, b)) in out.iter_mut().zip(weights.chunks_exact(cols).zip(bias)) {
        *o = b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
    }
}

/// Turns logits into probabilities in place; returns `-log p[label]`.
#[inline]
fn softmax_xent(logits: &mut [f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted_label = logits[label] - max;
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    let log_sum = sum.ln();
    let loss = log_sum - shifted_label;
    for z in logits.iter_mut() {
        *z /= sum;
    }
    loss
}

/// Index of the largest logit; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

struct Scratch {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
    hidden_grad: Vec<f64>,
}

impl Scratch {
    fn new(hidden: usize, classes: usize) -> Self {
        Scratch {
            hidden_pre: vec![0.0; hidden],
            hidden: vec![0.0; hidden],
            logits: vec![0.0; classes],
            hidden_grad: vec![0.0; hidden],
        }
    }
}

/// Mean cross-entropy (or the probe loss) and its exact gradient.
pub fn loss_and_grad(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
    spec.check_params(params)?;
    spec.check_data(batch.data())?;
    let mut grad = ParamVector::zeros(params.layout().clone());
    let loss = match spec {
        ModelSpec::QuadraticProbe { target } => {
            let mut loss = 0.0;
            for ((g, &p), &a) in grad.values_mut().iter_mut().zip(params.values()).zip(target) {
                *g = p - a;
                loss += 0.5 * (p - a) * (p - a);
            }
            loss
        }
        ModelSpec::Linear { input_dim, num_classes } => {
            let (w, b) = params.values().split_at(input_dim * num_classes);
            let mut logits = vec![0.0; *num_classes];
            let mut total = 0.0;
            let g = grad.values_mut();
            for &r in batch.rows() {
                let x = batch.data().row(r);
                let y = batch.data().label(r);
                matvec(w, b, x, &mut logits);
                total += softmax_xent(&mut logits, y);
                logits[y] -= 1.0;
                let (gw, gb) = g.split_at_mut(input_dim * num_classes);
                for (c, &dz) in logits.iter().enumerate() {
                    for (gwi, xi) in gw[c * input_dim..(c + 1) * input_dim].iter_mut().zip(x) {
                        *gwi += dz * xi;
                    }
                    gb[c] += dz;
                }
            }
            grad.scale(1.0 / batch.len() as f64);
            total / batch.len() as f64
        }
        ModelSpec::Mlp {
            input_dim,
            hidden_dim,
            num_classes,
            activation,
        } => {
            let (d, h, c) = (*input_dim, *hidden_dim, *num_classes);
            let v = params.values();
            let (w1, rest) = v.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let mut s = Scratch::new(h, c);
            let mut total = 0.0;
            let g = grad.values_mut();
            for &r in batch.rows() {
                let x = batch.data().row(r);
                let y = batch.data().label(r);
                matvec(w1, b1, x, &mut s.hidden_pre);
                for (a, &z) in s.hidden.iter_mut().zip(&s.hidden_pre) {
                    *a = activation.apply(z);
                }
                matvec(w2, b2, &s.hidden, &mut s.logits);
                total += softmax_xent(&mut s.logits, y);
                s.logits[y] -= 1.0;

                let (gw1, rest) = g.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                s.hidden_grad.iter_mut().for_each(|v| *v = 0.0);
                for (k, &dz) in s.logits.iter().enumerate() {
                    let w2_row = &w2[k * h..(k + 1) * h];
                    for j in 0..h {
                        gw2[k * h + j] += dz * s.hidden[j];
                        s.hidden_grad[j] += w2_row[j] * dz;
                    }
                    gb2[k] += dz;
                }
                for j in 0..h {
                    let dh = s.hidden_grad[j] * activation.derivative(s.hidden_pre[j], s.hidden[j]);
                    for (gwi, xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *gwi += dh * xi;
                    }
                    gb1[j] += dh;
                }
            }
            grad.scale(1.0 / batch.len() as f64);
            total / batch.len() as f64
        }
    };
    if let Some(block) = grad.first_non_finite_block() {
        return Err(FedError::Numerical { block: block.to_string() });
    }
    if !loss.is_finite() {
        return Err(FedError::Numerical { block: "loss".into() });
    }
    Ok((loss, grad))
}

/// Loss only; same value as [`loss_and_grad`] without the backward pass.
pub fn loss(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    spec.check_params(params)?;
    spec.check_data(batch.data())?;
    let value = match spec {
        ModelSpec::QuadraticProbe { target } => params
            .values()
            .iter()
            .zip(target)
            .map(|(p, a)| 0.5 * (p - a) * (p - a))
            .sum(),
        _ => {
            let mut logits = vec![0.0; spec.num_classes().unwrap_or(0)];
            let mut total = 0.0;
            for &r in batch.rows() {
                forward(spec, params.values(), batch.data().row(r), &mut logits);
                total += softmax_xent(&mut logits, batch.data().label(r));
            }
            total / batch.len() as f64
        }
    };
    if !value.is_finite() {
        return Err(FedError::Numerical { block: "loss".into() });
    }
    Ok(value)
}

fn forward(spec: &ModelSpec, v: &[f64], x: &[f64], logits: &mut [f64]) {
    match spec {
        ModelSpec::Linear { input_dim, num_classes } => {
            let (w, b) = v.split_at(input_dim * num_classes);
            matvec(w, b, x, logits);
        }
        ModelSpec::Mlp {
            input_dim,
            hidden_dim,
            num_classes,
            activation,
        } => {
            let (d, h, c) = (*input_dim, *hidden_dim, *num_classes);
            let (w1, rest) = v.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let mut hidden = vec![0.0; h];
            matvec(w1, b1, x, &mut hidden);
            hidden.iter_mut().for_each(|a| *a = activation.apply(*a));
            matvec(w2, b2, &hidden, logits);
        }
        ModelSpec::QuadraticProbe { .. } => unreachable!("probe has no logits"),
    }
}

/// Predicted class of one feature row.
pub fn predict(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> Result<usize> {
    let classes = spec
        .num_classes()
        .ok_or_else(|| FedError::Unsupported("prediction with a quadratic probe".into()))?;
    spec.check_params(params)?;
    let mut logits = vec![0.0; classes];
    forward(spec, params.values(), x, &mut logits);
    Ok(argmax(&logits))
}

/// Fraction of rows whose highest logit (lowest index on ties) is the label.
pub fn top1_accuracy(spec: &ModelSpec, params: &ParamVector, data: &LabeledDataset) -> Result<f64> {
    let classes = spec
        .num_classes()
        .ok_or_else(|| FedError::Unsupported("top-1 accuracy of a quadratic probe".into()))?;
    spec.check_params(params)?;
    spec.check_data(data)?;
    if data.is_empty() {
        return Err(FedError::config("accuracy on an empty dataset"));
    }
    let mut logits = vec![0.0; classes];
    let correct = (0..data.len())
        .filter(|&i| {
            forward(spec, params.values(), data.row(i), &mut logits);
            argmax(&logits) == data.label(i)
        })
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Central-difference gradient, one coordinate at a time.
pub fn finite_diff_grad(spec: &ModelSpec, params: &ParamVector, batch: &Batch, epsilon: f64) -> Result<ParamVector> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(FedError::config("finite-difference epsilon must be positive"));
    }
    let mut probe = params.clone();
    let mut grad = ParamVector::zeros(params.layout().clone());
    for i in 0..params.len() {
        let original = params.values()[i];
        probe.values_mut()[i] = original + epsilon;
        let plus = loss(spec, &probe, batch)?;
        probe.values_mut()[i] = original - epsilon;
        let minus = loss(spec, &probe, batch)?;
        probe.values_mut()[i] = original;
        grad.values_mut()[i] = (plus - minus) / (2.0 * epsilon);
    }
    Ok(grad)
}

/// `max|a - b| / max(max|a|, max|b|)`, the gradient-check error measure.
pub fn relative_error(a: &ParamVector, b: &ParamVector) -> f64 {
    let diff = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a
        .values()
        .iter()
        .chain(b.values())
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;

    use super::*;
    use crate::data::gen_blobs;
    use crate::rng::derive_stream;

    fn dummy() -> LabeledDataset {
        LabeledDataset::new(vec![0.0, 1.0], 1, vec![0, 1], 2).unwrap()
    }

    fn probe(target: Vec<f64>) -> ModelSpec {
        ModelSpec::QuadraticProbe { target }
    }

    fn mlp(input: usize, hidden: usize, classes: usize, activation: Activation) -> ModelSpec {
        ModelSpec::Mlp {
            input_dim: input,
            hidden_dim: hidden,
            num_classes: classes,
            activation,
        }
    }

    #[test]
    fn probe_init_is_zero() {
        let p = init_params(&probe(vec![1.0, 2.0, 3.0]), &mut derive_stream(0, 0, 0)).unwrap();
        assert_eq!(p.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn linear_param_count() {
        let spec = ModelSpec::Linear { input_dim: 4, num_classes: 3 };
        assert_eq!(spec.param_count(), 15);
        let p = init_params(&spec, &mut derive_stream(0, 0, 0)).unwrap();
        assert_eq!(p.len(), 15);
        assert!(p.block("b").unwrap().iter().all(|&b| b == 0.0));
        assert!(p.block("w").unwrap().iter().all(|w| w.abs() <= 0.5));
    }

    #[test]
    fn init_is_deterministic() {
        let spec = mlp(5, 4, 3, Activation::Relu);
        let a = init_params(&spec, &mut derive_stream(3, 0, -2)).unwrap();
        let b = init_params(&spec, &mut derive_stream(3, 0, -2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut rng = derive_stream(0, 0, 0);
        assert!(init_params(&ModelSpec::Linear { input_dim: 0, num_classes: 3 }, &mut rng).is_err());
        assert!(init_params(&ModelSpec::Linear { input_dim: 2, num_classes: 1 }, &mut rng).is_err());
        assert!(init_params(&mlp(2, 0, 3, Activation::Tanh), &mut rng).is_err());
        assert!(init_params(&probe(vec![]), &mut rng).is_err());
    }

    #[test]
    fn zero_linear_loss_is_log_classes() {
        let spec = ModelSpec::Linear { input_dim: 3, num_classes: 10 };
        let data = gen_blobs(10, 3, 2, 1.0, &mut derive_stream(0, 0, 0)).unwrap();
        let params = ParamVector::zeros(Arc::new(spec.layout()));
        let (loss, _) = loss_and_grad(&spec, &params, &Batch::all(&data).unwrap()).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - std::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn probe_loss_and_grad() {
        let data = dummy();
        let spec = probe(vec![0.0, 0.0]);
        let params = ParamVector::from_values(Arc::new(spec.layout()), vec![1.0, 2.0]).unwrap();
        let (loss, grad) = loss_and_grad(&spec, &params, &Batch::all(&data).unwrap()).unwrap();
        assert_eq!(loss, 2.5);
        assert_eq!(grad.values(), &[1.0, 2.0]);
    }

    #[test]
    fn probe_finite_difference() {
        let data = dummy();
        let spec = probe(vec![1.0]);
        let params = ParamVector::from_values(Arc::new(spec.layout()), vec![3.0]).unwrap();
        let fd = finite_diff_grad(&spec, &params, &Batch::all(&data).unwrap(), 1e-4).unwrap();
        assert!((fd.values()[0] - 2.0).abs() < 1e-8);
        assert!(finite_diff_grad(&spec, &params, &Batch::all(&data).unwrap(), 0.0).is_err());
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        for activation in [Activation::Relu, Activation::Tanh] {
            let spec = mlp(5, 4, 3, activation);
            for seed in 0..10 {
                let mut rng = derive_stream(seed, 0, 0);
                let data = gen_blobs(3, 5, 4, 1.0, &mut rng).unwrap();
                let params = init_params(&spec, &mut rng).unwrap();
                let batch = Batch::all(&data).unwrap();
                let (_, grad) = loss_and_grad(&spec, &params, &batch).unwrap();
                let fd = finite_diff_grad(&spec, &params, &batch, 1e-5).unwrap();
                assert!(relative_error(&grad, &fd) < 1e-5, "seed {seed}");
            }
        }
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let spec = ModelSpec::Linear { input_dim: 6, num_classes: 4 };
        for seed in 0..10 {
            let mut rng = derive_stream(seed, 1, 0);
            let data = gen_blobs(4, 6, 3, 2.0, &mut rng).unwrap();
            let params = init_params(&spec, &mut rng).unwrap();
            let batch = Batch::all(&data).unwrap();
            let (_, grad) = loss_and_grad(&spec, &params, &batch).unwrap();
            let fd = finite_diff_grad(&spec, &params, &batch, 1e-5).unwrap();
            assert!(relative_error(&grad, &fd) < 1e-5);
        }
    }

    #[test]
    fn row_order_does_not_matter() {
        let spec = mlp(4, 6, 3, Activation::Tanh);
        let mut rng = derive_stream(5, 0, 0);
        let data = gen_blobs(3, 4, 10, 1.0, &mut rng).unwrap();
        let params = init_params(&spec, &mut rng).unwrap();
        let rows: Vec<usize> = (0..data.len()).collect();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng);
        let a = loss_and_grad(&spec, &params, &Batch::new(&data, rows).unwrap()).unwrap();
        let b = loss_and_grad(&spec, &params, &Batch::new(&data, shuffled).unwrap()).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn duplicated_rows_keep_the_mean() {
        let spec = ModelSpec::Linear { input_dim: 4, num_classes: 3 };
        let mut rng = derive_stream(6, 0, 0);
        let data = gen_blobs(3, 4, 5, 1.0, &mut rng).unwrap();
        let params = init_params(&spec, &mut rng).unwrap();
        let single = loss_and_grad(&spec, &params, &Batch::new(&data, vec![3]).unwrap()).unwrap();
        let twice = loss_and_grad(&spec, &params, &Batch::new(&data, vec![3, 3]).unwrap()).unwrap();
        assert_eq!(single.1, twice.1);

        let rows: Vec<usize> = (0..data.len()).collect();
        let doubled: Vec<usize> = rows.iter().chain(&rows).copied().collect();
        let a = loss_and_grad(&spec, &params, &Batch::new(&data, rows).unwrap()).unwrap();
        let b = loss_and_grad(&spec, &params, &Batch::new(&data, doubled).unwrap()).unwrap();
        assert!((a.0 - b.0).abs() < 1e-12);
        assert!(relative_error(&a.1, &b.1) < 1e-12);
    }

    #[test]
    fn huge_weights_stay_finite() {
        let spec = ModelSpec::Linear { input_dim: 2, num_classes: 2 };
        let data = LabeledDataset::new(vec![1.0, 1.0, -1.0, -1.0], 2, vec![0, 1], 2).unwrap();
        let params = ParamVector::from_values(Arc::new(spec.layout()), vec![1e200, 1e200, -1e200, -1e200, 0.0, 0.0])
            .unwrap();
        let (loss, _) = loss_and_grad(&spec, &params, &Batch::all(&data).unwrap()).unwrap();
        assert!(loss.is_finite());
    }

    #[test]
    fn non_finite_params_name_the_block() {
        let spec = ModelSpec::Linear { input_dim: 1, num_classes: 2 };
        let params = ParamVector::from_values(Arc::new(spec.layout()), vec![f64::NAN, 0.0, 0.0, 0.0]).unwrap();
        let err = loss_and_grad(&spec, &params, &Batch::all(&dummy()).unwrap()).unwrap_err();
        assert!(matches!(err, FedError::Numerical { ref block } if block == "w"), "{err}");
    }

    #[test]
    fn zero_params_predict_class_zero() {
        let spec = ModelSpec::Linear { input_dim: 3, num_classes: 4 };
        let data = gen_blobs(4, 3, 5, 1.0, &mut derive_stream(1, 0, 0)).unwrap();
        let params = ParamVector::zeros(Arc::new(spec.layout()));
        assert_eq!(top1_accuracy(&spec, &params, &data).unwrap(), 0.25);
    }

    #[test]
    fn single_correct_sample() {
        let spec = ModelSpec::Linear { input_dim: 1, num_classes: 2 };
        let data = LabeledDataset::new(vec![1.0, -1.0], 1, vec![1, 0], 2).unwrap();
        let params = ParamVector::from_values(Arc::new(spec.layout()), vec![-1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(top1_accuracy(&spec, &params, &data).unwrap(), 1.0);
    }

    #[test]
    fn probe_has_no_accuracy() {
        let spec = probe(vec![0.0]);
        let params = ParamVector::zeros(Arc::new(spec.layout()));
        assert!(matches!(
            top1_accuracy(&spec, &params, &dummy()),
            Err(FedError::Unsupported(_))
        ));
    }

    #[test]
    fn mismatched_data_rejected() {
        let spec = ModelSpec::Linear { input_dim: 3, num_classes: 2 };
        let params = ParamVector::zeros(Arc::new(spec.layout()));
        assert!(loss_and_grad(&spec, &params, &Batch::all(&dummy()).unwrap()).is_err());
        let wrong = ParamVector::flat(vec![0.0; 8]);
        let data = gen_blobs(2, 3, 2, 1.0, &mut derive_stream(1, 0, 0)).unwrap();
        assert!(loss_and_grad(&spec, &wrong, &Batch::all(&data).unwrap()).is_err());
    }
}
