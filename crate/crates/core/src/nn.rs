//! A small ReLU MLP featurizer with a linear classifier head, exact
//! backpropagation, and SGD / Adam updates.
//!
//! Featurizer blocks come in `(fc{i}.weight [in, out], fc{i}.bias [out])`
//! pairs; the classifier is `(head.weight [in, classes], head.bias [classes])`.
//! Dropout sits on the featurizer output, right before the head.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::param_store::{Checkpoint, Lineage, ParamBlock};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(
                "at least one hidden layer with positive width is required".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Forward-pass mode. Training applies inverted dropout with a seeded mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    Train { dropout: f64, seed: u64 },
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn he_uniform(rng: &mut seed::Rng, fan_in: usize, len: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Fresh He-uniform classifier head with zero bias.
pub fn init_head(in_dim: usize, num_classes: usize, seed: u64) -> Vec<ParamBlock> {
    let mut rng = seed::stream(seed, "head-init", 0);
    vec![
        ParamBlock {
            name: "head.weight".into(),
            shape: vec![in_dim, num_classes],
            values: he_uniform(&mut rng, in_dim, in_dim * num_classes),
        },
        ParamBlock::zeros("head.bias", vec![num_classes]),
    ]
}

/// He-uniform weights, zero biases, lineage rooted at `scratch`.
pub fn init_params(spec: &NetSpec, seed: u64) -> Result<Checkpoint> {
    spec.validate()?;
    let mut rng = seed::stream(seed, "init", 0);
    let mut featurizer = Vec::new();
    let mut fan_in = spec.input_dim;
    for (i, &width) in spec.hidden.iter().enumerate() {
        featurizer.push(ParamBlock {
            name: format!("fc{i}.weight"),
            shape: vec![fan_in, width],
            values: he_uniform(&mut rng, fan_in, fan_in * width),
        });
        featurizer.push(ParamBlock::zeros(format!("fc{i}.bias"), vec![width]));
        fan_in = width;
    }
    let classifier = vec![
        ParamBlock {
            name: "head.weight".into(),
            shape: vec![fan_in, spec.num_classes],
            values: he_uniform(&mut rng, fan_in, fan_in * spec.num_classes),
        },
        ParamBlock::zeros("head.bias", vec![spec.num_classes]),
    ];
    Checkpoint::new(featurizer, classifier, Lineage::new("scratch"), 0)
}

struct Layer<'a> {
    weight: &'a [f64],
    bias: &'a [f64],
    fan_in: usize,
    fan_out: usize,
}

fn layer_pair<'a>(w: &'a ParamBlock, b: &'a ParamBlock) -> Result<Layer<'a>> {
    if w.shape.len() != 2 || b.shape.len() != 1 || b.shape[0] != w.shape[1] {
        return Err(Error::Shape(format!(
            "blocks `{}` {:?} / `{}` {:?} do not form a dense layer",
            w.name, w.shape, b.name, b.shape
        )));
    }
    Ok(Layer {
        weight: &w.values,
        bias: &b.values,
        fan_in: w.shape[0],
        fan_out: w.shape[1],
    })
}

fn featurizer_layers(blocks: &[ParamBlock]) -> Result<Vec<Layer<'_>>> {
    if !blocks.len().is_multiple_of(2) {
        return Err(Error::Shape("featurizer must hold (weight, bias) pairs".into()));
    }
    let layers: Vec<_> = blocks
        .chunks_exact(2)
        .map(|p| layer_pair(&p[0], &p[1]))
        .collect::<Result<_>>()?;
    for pair in layers.windows(2) {
        if pair[0].fan_out != pair[1].fan_in {
            return Err(Error::Dimension {
                expected: pair[0].fan_out,
                got: pair[1].fan_in,
            });
        }
    }
    Ok(layers)
}

fn head_layer(blocks: &[ParamBlock]) -> Result<Layer<'_>> {
    match blocks {
        [w, b] => layer_pair(w, b),
        _ => Err(Error::Shape("classifier must be one (weight, bias) pair".into())),
    }
}

/// Input dimension expected by a featurizer (or by the head if the
/// featurizer is empty).
pub fn input_dim(ckpt: &Checkpoint) -> Result<usize> {
    match ckpt.featurizer.first() {
        Some(w) => Ok(w.shape[0]),
        None => Ok(head_layer(&ckpt.classifier)?.fan_in),
    }
}

/// Width of the representation the featurizer hands to the classifier.
pub fn feature_dim(featurizer: &[ParamBlock], input_dim: usize) -> Result<usize> {
    Ok(featurizer_layers(featurizer)?.last().map_or(input_dim, |l| l.fan_out))
}

pub fn num_classes(ckpt: &Checkpoint) -> Result<usize> {
    Ok(head_layer(&ckpt.classifier)?.fan_out)
}

fn dense(input: &[f64], rows: usize, layer: &Layer<'_>) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * layer.fan_out);
    for r in 0..rows {
        out.extend_from_slice(layer.bias);
        let z = &mut out[r * layer.fan_out..];
        let x = &input[r * layer.fan_in..(r + 1) * layer.fan_in];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let w = &layer.weight[i * layer.fan_out..(i + 1) * layer.fan_out];
            for (zj, wj) in z.iter_mut().zip(w) {
                *zj += xi * wj;
            }
        }
    }
    out
}

/// Intermediate values kept for backprop.
struct Trace {
    /// Pre-activations of each featurizer layer.
    pre: Vec<Vec<f64>>,
    /// Inputs to each featurizer layer (index 0 is the raw batch).
    inputs: Vec<Vec<f64>>,
    /// Featurizer output after dropout (head input).
    head_in: Vec<f64>,
    /// Inverted-dropout multipliers (empty when dropout is inactive).
    mask: Vec<f64>,
    logits: Vec<f64>,
}

fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = seed::stream(seed, "dropout", 0);
    let scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
        .collect()
}

fn run_forward(params: &Checkpoint, x: &[f64], rows: usize, mode: Mode) -> Result<Trace> {
    let feats = featurizer_layers(&params.featurizer)?;
    let head = head_layer(&params.classifier)?;
    let in_dim = feats.first().map_or(head.fan_in, |l| l.fan_in);
    if x.len() != rows * in_dim {
        return Err(Error::Dimension {
            expected: in_dim,
            got: x.len().checked_div(rows).unwrap_or(0),
        });
    }
    let out_dim = feats.last().map_or(in_dim, |l| l.fan_out);
    if out_dim != head.fan_in {
        return Err(Error::Dimension {
            expected: head.fan_in,
            got: out_dim,
        });
    }

    let mut inputs = vec![x.to_vec()];
    let mut pre = Vec::with_capacity(feats.len());
    for layer in &feats {
        let z = dense(inputs.last().unwrap(), rows, layer);
        let a = z.iter().map(|&v| v.max(0.0)).collect();
        pre.push(z);
        inputs.push(a);
    }
    let mut head_in = inputs.pop().unwrap();
    let mask = match mode {
        Mode::Train { dropout, seed } if dropout > 0.0 => {
            let mask = dropout_mask(head_in.len(), dropout, seed);
            for (h, m) in head_in.iter_mut().zip(&mask) {
                *h *= m;
            }
            mask
        }
        _ => Vec::new(),
    };
    let logits = dense(&head_in, rows, &head);
    Ok(Trace {
        pre,
        inputs,
        head_in,
        mask,
        logits,
    })
}

/// Logits for every row of `batch`.
pub fn forward(params: &Checkpoint, batch: &Dataset, mode: Mode) -> Result<Matrix> {
    let classes = head_layer(&params.classifier)?.fan_out;
    let trace = run_forward(params, &batch.features, batch.len(), mode)?;
    Ok(Matrix {
        rows: batch.len(),
        cols: classes,
        data: trace.logits,
    })
}

/// Featurizer output (eval mode) for every row of `batch`.
pub fn features(featurizer: &[ParamBlock], batch: &Dataset) -> Result<Matrix> {
    let layers = featurizer_layers(featurizer)?;
    let mut x = batch.features.clone();
    let mut width = batch.dim;
    for layer in &layers {
        if layer.fan_in != width {
            return Err(Error::Dimension {
                expected: layer.fan_in,
                got: width,
            });
        }
        x = dense(&x, batch.len(), layer);
        x.iter_mut().for_each(|v| *v = v.max(0.0));
        width = layer.fan_out;
    }
    Ok(Matrix {
        rows: batch.len(),
        cols: width,
        data: x,
    })
}

/// Numerically stable row softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut data = Vec::with_capacity(logits.data.len());
    for r in 0..logits.rows {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        data.extend(exps.into_iter().map(|e| e / sum));
    }
    Matrix {
        rows: logits.rows,
        cols: logits.cols,
        data,
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Gradients shaped like the parameter blocks of a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub featurizer: Vec<Vec<f64>>,
    pub classifier: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(params: &Checkpoint) -> Self {
        Self {
            featurizer: params.featurizer.iter().map(|b| vec![0.0; b.len()]).collect(),
            classifier: params.classifier.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn zero_featurizer(&mut self) {
        self.featurizer.iter_mut().for_each(|g| g.fill(0.0));
    }

    fn all(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.featurizer.iter().chain(self.classifier.iter())
    }
}

fn check_labels(batch: &Dataset, classes: usize) -> Result<()> {
    match batch.labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

/// Accumulates `dW = X^T dZ`, `db = sum dZ`, and optionally returns `dX = dZ W^T`.
fn dense_backward(
    input: &[f64],
    dz: &[f64],
    rows: usize,
    layer: &Layer<'_>,
    gw: &mut [f64],
    gb: &mut [f64],
    want_dx: bool,
) -> Vec<f64> {
    let (fi, fo) = (layer.fan_in, layer.fan_out);
    let mut dx = if want_dx { vec![0.0; rows * fi] } else { Vec::new() };
    for r in 0..rows {
        let dzr = &dz[r * fo..(r + 1) * fo];
        for (g, d) in gb.iter_mut().zip(dzr) {
            *g += d;
        }
        let xr = &input[r * fi..(r + 1) * fi];
        for i in 0..fi {
            let w = &layer.weight[i * fo..(i + 1) * fo];
            let gwi = &mut gw[i * fo..(i + 1) * fo];
            let xi = xr[i];
            let mut acc = 0.0;
            for j in 0..fo {
                gwi[j] += xi * dzr[j];
                acc += dzr[j] * w[j];
            }
            if want_dx {
                dx[r * fi + i] = acc;
            }
        }
    }
    dx
}

/// Mean cross-entropy plus `(weight_decay / 2) * ||theta||^2`, and its exact gradient.
pub fn loss_and_grad(params: &Checkpoint, batch: &Dataset, weight_decay: f64, mode: Mode) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let feats = featurizer_layers(&params.featurizer)?;
    let head = head_layer(&params.classifier)?;
    check_labels(batch, head.fan_out)?;
    let rows = batch.len();
    let trace = run_forward(params, &batch.features, rows, mode)?;
    let classes = head.fan_out;

    let mut loss = 0.0;
    let mut dlogits = vec![0.0; rows * classes];
    for r in 0..rows {
        let z = &trace.logits[r * classes..(r + 1) * classes];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        let y = batch.labels[r];
        loss += log_norm - z[y];
        for c in 0..classes {
            let p = (z[c] - log_norm).exp();
            dlogits[r * classes + c] = (p - if c == y { 1.0 } else { 0.0 }) / rows as f64;
        }
    }
    loss /= rows as f64;

    let mut grads = Grads::zeros_like(params);
    let (gw, gb) = grads.classifier.split_at_mut(1);
    let mut delta = dense_backward(
        &trace.head_in,
        &dlogits,
        rows,
        &head,
        &mut gw[0],
        &mut gb[0],
        !feats.is_empty(),
    );
    if !trace.mask.is_empty() {
        for (d, m) in delta.iter_mut().zip(&trace.mask) {
            *d *= m;
        }
    }
    for (l, layer) in feats.iter().enumerate().rev() {
        for (d, z) in delta.iter_mut().zip(&trace.pre[l]) {
            if *z <= 0.0 {
                *d = 0.0;
            }
        }
        let (gw, gb) = grads.featurizer[2 * l..2 * l + 2].split_at_mut(1);
        delta = dense_backward(&trace.inputs[l], &delta, rows, layer, &mut gw[0], &mut gb[0], l > 0);
    }

    if weight_decay != 0.0 {
        loss += 0.5 * weight_decay * params.sq_norm();
        for (g, b) in grads
            .featurizer
            .iter_mut()
            .chain(grads.classifier.iter_mut())
            .zip(params.blocks())
        {
            for (gi, v) in g.iter_mut().zip(&b.values) {
                *gi += weight_decay * v;
            }
        }
    }
    Ok((loss, grads))
}

/// Eval-mode predicted labels.
pub fn predict(params: &Checkpoint, data: &Dataset) -> Result<Vec<usize>> {
    let logits = forward(params, data, Mode::Eval)?;
    Ok((0..logits.rows).map(|r| argmax(logits.row(r))).collect())
}

/// Fraction of argmax-correct predictions.
pub fn accuracy(params: &Checkpoint, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let preds = predict(params, data)?;
    let correct = preds.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::sgd(lr)
        }
    }
}

/// Optimizer state. Weight decay is part of the loss, not of the update.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub config: OptConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl OptState {
    pub fn new(config: OptConfig, params: &Checkpoint) -> Self {
        let buffers = || -> Vec<Vec<f64>> {
            match config.kind {
                OptimizerKind::Sgd => Vec::new(),
                OptimizerKind::Adam => params.blocks().map(|b| vec![0.0; b.len()]).collect(),
            }
        };
        Self {
            config,
            step: 0,
            first_moment: buffers(),
            second_moment: buffers(),
        }
    }

    fn check(&self, params: &Checkpoint, grads: &Grads) -> Result<()> {
        let sizes: Vec<usize> = params.blocks().map(ParamBlock::len).collect();
        let gsizes: Vec<usize> = grads.all().map(Vec::len).collect();
        if sizes != gsizes {
            return Err(Error::Shape("gradients do not match parameter blocks".into()));
        }
        if self.config.kind == OptimizerKind::Adam {
            let msizes: Vec<usize> = self.first_moment.iter().map(Vec::len).collect();
            if msizes != sizes {
                return Err(Error::Shape("moment buffers do not match parameter blocks".into()));
            }
        }
        Ok(())
    }

    /// In-place update used by the training loop.
    pub(crate) fn apply(&mut self, params: &mut Checkpoint, grads: &Grads) -> Result<()> {
        self.check(params, grads)?;
        self.step += 1;
        let cfg = self.config;
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (b, g) in params.blocks_mut().zip(grads.all()) {
                    for (v, gi) in b.values.iter_mut().zip(g) {
                        *v -= cfg.lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - cfg.beta1.powi(t);
                let c2 = 1.0 - cfg.beta2.powi(t);
                for (((b, g), m), s) in params
                    .blocks_mut()
                    .zip(grads.all())
                    .zip(self.first_moment.iter_mut())
                    .zip(self.second_moment.iter_mut())
                {
                    for (((v, &gi), mi), si) in b.values.iter_mut().zip(g).zip(m.iter_mut()).zip(s.iter_mut()) {
                        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                        *si = cfg.beta2 * *si + (1.0 - cfg.beta2) * gi * gi;
                        let m_hat = *mi / c1;
                        let s_hat = *si / c2;
                        *v -= cfg.lr * m_hat / (s_hat.sqrt() + cfg.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// One SGD or Adam update, returned as new values.
pub fn optimizer_step(state: &OptState, params: &Checkpoint, grads: &Grads) -> Result<(OptState, Checkpoint)> {
    let mut next_state = state.clone();
    let mut next_params = params.clone();
    next_state.apply(&mut next_params, grads)?;
    Ok((next_state, next_params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_identity() -> Checkpoint {
        Checkpoint::new(
            vec![],
            vec![
                ParamBlock::new("head.weight", vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                ParamBlock::zeros("head.bias", vec![2]),
            ],
            Lineage::new("scratch"),
            0,
        )
        .unwrap()
    }

    fn spec() -> NetSpec {
        NetSpec {
            input_dim: 4,
            hidden: vec![8],
            num_classes: 3,
            dropout: 0.0,
        }
    }

    fn toy_batch(n: usize, dim: usize, classes: usize, seed: u64) -> Dataset {
        let mut rng = seed::stream(seed, "toy", 0);
        let features = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|i| i % classes).collect();
        Dataset::new(dim, features, labels).unwrap()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let a = init_params(&spec(), 1).unwrap();
        let shapes: Vec<_> = a.blocks().map(|b| b.shape.clone()).collect();
        assert_eq!(shapes, vec![vec![4, 8], vec![8], vec![8, 3], vec![3]]);
        assert_eq!(a, init_params(&spec(), 1).unwrap());
        let b = init_params(&spec(), 2).unwrap();
        assert!(crate::param_store::param_distance(&a, &b).unwrap() > 0.0);
        assert_eq!(a.lineage.root, "scratch");
        assert!(a.featurizer[1].values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spec_requires_hidden_layer() {
        let mut s = spec();
        s.hidden.clear();
        assert!(init_params(&s, 0).is_err());
    }

    #[test]
    fn identity_linear_map() {
        let x = Dataset::new(2, vec![2.0, 3.0], vec![0]).unwrap();
        let logits = forward(&linear_identity(), &x, Mode::Eval).unwrap();
        assert_eq!(logits.data, vec![2.0, 3.0]);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut p = init_params(&spec(), 3).unwrap();
        p.blocks_mut().for_each(|b| b.values.fill(0.0));
        let logits = forward(&p, &toy_batch(5, 4, 3, 0), Mode::Eval).unwrap();
        assert!(logits.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_forward_is_pure_and_softmax_normalizes() {
        let p = init_params(&spec(), 4).unwrap();
        let x = toy_batch(7, 4, 3, 1);
        let a = forward(&p, &x, Mode::Eval).unwrap();
        assert_eq!(a, forward(&p, &x, Mode::Eval).unwrap());
        let probs = softmax_rows(&a);
        for r in 0..probs.rows {
            assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_mask_is_seeded() {
        let p = init_params(&spec(), 4).unwrap();
        let x = toy_batch(7, 4, 3, 1);
        let train = |seed| forward(&p, &x, Mode::Train { dropout: 0.5, seed }).unwrap();
        assert_eq!(train(9), train(9));
        assert_ne!(train(9), train(10));
    }

    #[test]
    fn dimension_mismatch() {
        let p = init_params(&spec(), 0).unwrap();
        assert!(matches!(
            forward(&p, &toy_batch(2, 3, 3, 0), Mode::Eval),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn uniform_logits_loss_is_ln2() {
        let mut p = linear_identity();
        p.classifier[0].values.fill(0.0);
        let x = Dataset::new(2, vec![1.0, -1.0, 0.5, 2.0], vec![0, 1]).unwrap();
        let (loss, _) = loss_and_grad(&p, &x, 0.0, Mode::Eval).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_decomposes() {
        let p = init_params(&spec(), 5).unwrap();
        let x = toy_batch(6, 4, 3, 2);
        let (l0, _) = loss_and_grad(&p, &x, 0.0, Mode::Eval).unwrap();
        let (l1, _) = loss_and_grad(&p, &x, 0.01, Mode::Eval).unwrap();
        assert!((l1 - l0 - 0.005 * p.sq_norm()).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let p = init_params(&spec(), 5).unwrap();
        let x = Dataset::new(4, vec![0.0; 4], vec![3]).unwrap();
        assert!(matches!(
            loss_and_grad(&p, &x, 0.0, Mode::Eval),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn sgd_rule_and_null_update() {
        let p = Checkpoint::new(
            vec![],
            vec![ParamBlock::new("w", vec![1], vec![1.0]).unwrap()],
            Lineage::new("scratch"),
            0,
        )
        .unwrap();
        let state = OptState::new(OptConfig::sgd(0.1), &p);
        let grads = Grads {
            featurizer: vec![],
            classifier: vec![vec![2.0]],
        };
        let (s, q) = optimizer_step(&state, &p, &grads).unwrap();
        assert!((q.classifier[0].values[0] - 0.8).abs() < 1e-15);
        assert_eq!(s.step, 1);
        let (_, same) = optimizer_step(&state, &p, &Grads::zeros_like(&p)).unwrap();
        assert_eq!(same, p);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // t = 1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let p = Checkpoint::new(
            vec![],
            vec![ParamBlock::new("w", vec![2], vec![0.5, 0.5]).unwrap()],
            Lineage::new("scratch"),
            0,
        )
        .unwrap();
        let lr = 0.01;
        let state = OptState::new(OptConfig::adam(lr), &p);
        let grads = Grads {
            featurizer: vec![],
            classifier: vec![vec![3.0, -0.2]],
        };
        let (_, q) = optimizer_step(&state, &p, &grads).unwrap();
        let d0 = q.classifier[0].values[0] - 0.5;
        let d1 = q.classifier[0].values[1] - 0.5;
        assert!((d0 + lr * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert!((d1 - lr * 0.2 / (0.2 + 1e-8)).abs() < 1e-15);
        let (_, z) = optimizer_step(&state, &p, &Grads::zeros_like(&p)).unwrap();
        assert_eq!(z, p);
    }

    #[test]
    fn shape_mismatch_in_step() {
        let p = init_params(&spec(), 0).unwrap();
        let state = OptState::new(OptConfig::adam(0.1), &p);
        let mut g = Grads::zeros_like(&p);
        g.classifier.pop();
        assert!(optimizer_step(&state, &p, &g).is_err());
    }

    #[test]
    fn accuracy_ties_pick_class_zero() {
        let mut p = init_params(
            &NetSpec {
                num_classes: 4,
                ..spec()
            },
            0,
        )
        .unwrap();
        p.blocks_mut().for_each(|b| b.values.fill(0.0));
        let x = toy_batch(8, 4, 4, 3);
        assert_eq!(accuracy(&p, &x).unwrap(), 0.25);
        assert!(accuracy(&p, &Dataset::empty(4)).is_err());
    }

    #[test]
    fn perfect_predictor() {
        let x = Dataset::new(
            2,
            (0..10)
                .flat_map(|i| if i % 2 == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
                .collect(),
            (0..10).map(|i| i % 2).collect(),
        )
        .unwrap();
        assert_eq!(accuracy(&linear_identity(), &x).unwrap(), 1.0);
    }
}
