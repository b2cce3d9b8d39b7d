//! Linear classifier probe over frozen embeddings.
//!
//! One affine map from the embedding dimension to the class count, followed
//! by a softmax (single-label, cross-entropy loss) or an element-wise sigmoid
//! (multi-label, binary cross-entropy summed over classes). Trained with
//! AdamW and global-norm gradient clipping; all arithmetic is `f64`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const PROBE_MAGIC: &[u8; 4] = b"PRB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    Softmax,
    Sigmoid,
}

impl Head {
    pub fn as_str(self) -> &'static str {
        match self {
            Head::Softmax => "softmax",
            Head::Sigmoid => "sigmoid",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Head::Softmax => 0,
            Head::Sigmoid => 1,
        }
    }
}

/// Weights (`C × d`, row-major) followed by the `C` biases, in one buffer so the
/// optimizer sees a single parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    params: Vec<f64>,
    n_classes: usize,
    dim: usize,
    head: Head,
}

impl ProbeModel {
    pub fn zeros(n_classes: usize, dim: usize, head: Head) -> Self {
        Self {
            params: vec![0.0; n_classes * dim + n_classes],
            n_classes,
            dim,
            head,
        }
    }

    pub fn from_parts(weights: Vec<f64>, bias: Vec<f64>, head: Head) -> Result<Self> {
        let n_classes = bias.len();
        if n_classes == 0 || !weights.len().is_multiple_of(n_classes) || weights.is_empty() {
            return Err(Error::Shape(format!(
                "{} weights for {n_classes} classes",
                weights.len()
            )));
        }
        let dim = weights.len() / n_classes;
        let mut params = weights;
        params.extend(bias);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Value("non-finite probe parameter".into()));
        }
        Ok(Self {
            params,
            n_classes,
            dim,
            head,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.n_classes * self.dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.n_classes * self.dim..]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let (w, b) = self.params.split_at(self.n_classes * self.dim);
        for ((o, row), bias) in out.iter_mut().zip(w.chunks_exact(self.dim)).zip(b) {
            *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        self.logits_into(x, out);
        match self.head {
            Head::Softmax => softmax_in_place(out),
            Head::Sigmoid => out.iter_mut().for_each(|z| *z = sigmoid(*z)),
        }
    }

    fn check_dim(&self, emb: &EmbeddingMatrix) -> Result<()> {
        if emb.dim() != self.dim {
            return Err(Error::Shape(format!(
                "probe expects dimension {}, embeddings have {}",
                self.dim,
                emb.dim()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + 8 * self.params.len());
        out.extend_from_slice(PROBE_MAGIC);
        out.push(self.head.tag());
        out.extend_from_slice(&(self.n_classes as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != PROBE_MAGIC {
            return Err(Error::Format("missing PRB1 magic".into()));
        }
        if bytes.len() < 13 {
            return Err(Error::Truncated("probe header".into()));
        }
        let head = match bytes[4] {
            0 => Head::Softmax,
            1 => Head::Sigmoid,
            t => return Err(Error::Format(format!("unknown head tag {t}"))),
        };
        let c = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        if c == 0 || d == 0 {
            return Err(Error::Empty(format!("probe header declares {c}x{d}")));
        }
        let expected = 13 + 8 * (c * d + c);
        if bytes.len() < expected {
            return Err(Error::Truncated(format!("probe has {} bytes, need {expected}", bytes.len())));
        }
        if bytes.len() > expected {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - expected)));
        }
        let params: Vec<f64> = bytes[13..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let bias = params[c * d..].to_vec();
        let mut weights = params;
        weights.truncate(c * d);
        Self::from_parts(weights, bias, head)
    }
}

pub fn save_probe(model: &ProbeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_probe(path: impl AsRef<Path>) -> Result<ProbeModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ProbeModel::from_bytes(&bytes)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Class probabilities, row-major `n × C`.
pub fn forward(model: &ProbeModel, emb: &EmbeddingMatrix) -> Result<Vec<f64>> {
    model.check_dim(emb)?;
    let c = model.n_classes;
    let mut out = vec![0.0; emb.n_rows() * c];
    for (row, o) in emb.rows().zip(out.chunks_exact_mut(c)) {
        model.probs_into(row, o);
    }
    Ok(out)
}

/// Supervision for one split.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// One class index per row.
    Classes { labels: Vec<usize>, n_classes: usize },
    /// Row-major `n × C` indicator matrix.
    MultiHot { values: Vec<bool>, n_classes: usize },
}

impl Targets {
    pub fn n_classes(&self) -> usize {
        match self {
            Targets::Classes { n_classes, .. } | Targets::MultiHot { n_classes, .. } => *n_classes,
        }
    }

    pub fn n_rows(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::MultiHot { values, n_classes } => values.len() / n_classes,
        }
    }

    pub fn head(&self) -> Head {
        match self {
            Targets::Classes { .. } => Head::Softmax,
            Targets::MultiHot { .. } => Head::Sigmoid,
        }
    }

    fn check(&self, emb: &EmbeddingMatrix, model: &ProbeModel) -> Result<()> {
        model.check_dim(emb)?;
        if self.n_rows() != emb.n_rows() {
            return Err(Error::Shape(format!(
                "{} targets for {} embedding rows",
                self.n_rows(),
                emb.n_rows()
            )));
        }
        if self.n_classes() != model.n_classes || self.head() != model.head {
            return Err(Error::Shape(format!(
                "{} {} targets for a {}-class {} probe",
                self.n_classes(),
                self.head().as_str(),
                model.n_classes,
                model.head.as_str()
            )));
        }
        if let Targets::Classes { labels, n_classes } = self {
            if let Some(bad) = labels.iter().find(|&&l| l >= *n_classes) {
                return Err(Error::Value(format!("class {bad} out of range 0..{n_classes}")));
            }
        }
        Ok(())
    }
}

/// Mean loss over `rows` and its gradient with respect to the flat parameters.
pub fn loss_and_grad(
    model: &ProbeModel,
    emb: &EmbeddingMatrix,
    targets: &Targets,
    rows: &[usize],
) -> (f64, Vec<f64>) {
    let (c, d) = (model.n_classes, model.dim);
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    let mut z = vec![0.0; c];
    let scale = 1.0 / rows.len() as f64;
    for &i in rows {
        let x = emb.row(i);
        model.logits_into(x, &mut z);
        match targets {
            Targets::Classes { labels, .. } => {
                let y = labels[i];
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - z[y];
                for (k, zk) in z.iter_mut().enumerate() {
                    *zk = (*zk - lse).exp() - if k == y { 1.0 } else { 0.0 };
                }
            }
            Targets::MultiHot { values, .. } => {
                let y = &values[i * c..(i + 1) * c];
                for (zk, &yk) in z.iter_mut().zip(y) {
                    let t = if yk { 1.0 } else { 0.0 };
                    // numerically stable log(1 + e^z) - t z
                    loss += zk.max(0.0) - *zk * t + (-zk.abs()).exp().ln_1p();
                    *zk = sigmoid(*zk) - t;
                }
            }
        }
        let (gw, gb) = grad.split_at_mut(c * d);
        for ((g_row, gb_k), dz) in gw.chunks_exact_mut(d).zip(gb.iter_mut()).zip(&z) {
            *gb_k += dz * scale;
            let s = dz * scale;
            for (g, xj) in g_row.iter_mut().zip(x) {
                *g += s * xj;
            }
        }
    }
    (loss * scale, grad)
}

/// Rescales `grad` so its L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let coef = max_norm / (norm + 1e-6);
        grad.iter_mut().for_each(|g| *g *= coef);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Sigmoid decision threshold.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 64,
            max_epochs: 30,
            patience: 5,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.learning_rate) || !positive(self.clip_norm) {
            return Err(Error::Config("learning_rate and clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig, n_params: usize) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeMetrics {
    /// Argmax accuracy (softmax) or exact-set-match accuracy (sigmoid).
    pub accuracy: f64,
    /// Micro-averaged F1; equals `accuracy` for single-label data.
    pub micro_f1: f64,
    /// Mean per-example loss.
    pub loss: f64,
}

impl ProbeMetrics {
    /// Model-selection metric: accuracy for softmax, micro-F1 for sigmoid.
    pub fn primary(&self, head: Head) -> f64 {
        match head {
            Head::Softmax => self.accuracy,
            Head::Sigmoid => self.micro_f1,
        }
    }
}

/// Micro-F1 from aggregate counts; 1 when there are no positives at all.
pub fn micro_f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

pub fn evaluate_probe(
    model: &ProbeModel,
    emb: &EmbeddingMatrix,
    targets: &Targets,
    threshold: f64,
) -> Result<ProbeMetrics> {
    targets.check(emb, model)?;
    let n = emb.n_rows();
    let c = model.n_classes;
    let rows: Vec<usize> = (0..n).collect();
    let (loss, _) = loss_and_grad(model, emb, targets, &rows);
    let probs = forward(model, emb)?;
    match targets {
        Targets::Classes { labels, .. } => {
            let correct = probs
                .chunks_exact(c)
                .zip(labels)
                .filter(|(p, &y)| argmax(p) == y)
                .count();
            let acc = correct as f64 / n as f64;
            Ok(ProbeMetrics {
                accuracy: acc,
                micro_f1: acc,
                loss,
            })
        }
        Targets::MultiHot { values, .. } => {
            let (mut tp, mut fp, mut fn_, mut exact) = (0, 0, 0, 0);
            for (p, y) in probs.chunks_exact(c).zip(values.chunks_exact(c)) {
                let mut all = true;
                for (&pk, &yk) in p.iter().zip(y) {
                    let pred = pk > threshold;
                    match (pred, yk) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => {}
                    }
                    all &= pred == yk;
                }
                exact += all as usize;
            }
            Ok(ProbeMetrics {
                accuracy: exact as f64 / n as f64,
                micro_f1: micro_f1(tp, fp, fn_),
                loss,
            })
        }
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid: ProbeMetrics,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation metric.
    pub model: ProbeModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// A split's embeddings together with its targets.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub emb: &'a EmbeddingMatrix,
    pub targets: &'a Targets,
}

/// Mini-batch AdamW from zero initialization with early stopping on the
/// validation metric. Metric ties go to the lower validation loss, then to
/// the earlier epoch.
pub fn train_probe(train: Split<'_>, valid: Split<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let head = train.targets.head();
    let mut model = ProbeModel::zeros(train.targets.n_classes(), train.emb.dim(), head);
    train.targets.check(train.emb, &model)?;
    valid.targets.check(valid.emb, &model)?;

    let mut opt = AdamW::new(cfg, model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.emb.n_rows()).collect();
    let mut history = Vec::new();
    let mut best: Option<((f64, f64), ProbeModel, usize)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, mut grad) = loss_and_grad(&model, train.emb, train.targets, batch);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("loss {loss} at epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            let norm = clip_grad_norm(&mut grad, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Divergence(format!("gradient norm {norm} at epoch {epoch}")));
            }
            opt.step(&mut model.params, &grad);
            if model.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence(format!("non-finite parameters at epoch {epoch}")));
            }
        }
        let valid_metrics = evaluate_probe(&model, valid.emb, valid.targets, cfg.threshold)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            valid: valid_metrics,
        });
        // a flat metric with a falling loss still counts as progress
        let score = (valid_metrics.primary(head), -valid_metrics.loss);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, model.clone(), epoch));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (_, model, best_epoch) = best.expect("max_epochs >= 1");
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
    })
}
