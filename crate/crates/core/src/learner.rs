//! Local models: softmax classifiers over flat parameter vectors.
//!
//! Models live as one flat f64 vector so that merging, quantization and
//! secure aggregation stay oblivious to the architecture. Gradients are
//! exact closed forms (checked against finite differences in the tests),
//! and numerically the loss goes through log-sum-exp.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::data::LabeledPool;
use crate::error::Error;
use crate::rng::{normal, shuffle};
use crate::Result;

/// Model architecture over the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Multinomial logistic regression: W (d x L), b (L).
    Logistic,
    /// One ReLU hidden layer: W1 (d x H), b1 (H), W2 (H x L), b2 (L).
    Mlp1,
}

/// A model: architecture, dimensions and the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub theta: Vec<f64>,
}

/// Parameter count for a given shape.
pub fn param_count(kind: ModelKind, input: usize, hidden: usize, classes: usize) -> usize {
    match kind {
        ModelKind::Logistic => input * classes + classes,
        ModelKind::Mlp1 => input * hidden + hidden + hidden * classes + classes,
    }
}

impl ModelParams {
    /// Zero-initialized model.
    pub fn zeros(kind: ModelKind, input: usize, hidden: usize, classes: usize) -> Result<Self> {
        if input == 0 || classes < 2 || (kind == ModelKind::Mlp1 && hidden == 0) {
            return Err(Error::Domain("model dimensions must be positive, classes >= 2".into()));
        }
        let theta = vec![0.0; param_count(kind, input, hidden, classes)];
        Ok(Self { kind, input, hidden, classes, theta })
    }

    /// Random init: weights N(0, 1/fan_in), biases zero.
    pub fn init<R: Rng>(
        kind: ModelKind,
        input: usize,
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(kind, input, hidden, classes)?;
        match kind {
            ModelKind::Logistic => {
                let scale = 1.0 / (input as f64).sqrt();
                for w in &mut model.theta[..input * classes] {
                    *w = scale * normal(rng);
                }
            }
            ModelKind::Mlp1 => {
                let scale1 = 1.0 / (input as f64).sqrt();
                for w in &mut model.theta[..input * hidden] {
                    *w = scale1 * normal(rng);
                }
                let w2_start = input * hidden + hidden;
                let scale2 = 1.0 / (hidden as f64).sqrt();
                for w in &mut model.theta[w2_start..w2_start + hidden * classes] {
                    *w = scale2 * normal(rng);
                }
            }
        }
        Ok(model)
    }

    /// Class scores for one feature row.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let (d, h, l) = (self.input, self.hidden, self.classes);
        debug_assert_eq!(x.len(), d);
        match self.kind {
            ModelKind::Logistic => {
                let (w, b) = self.theta.split_at(d * l);
                let mut z = b.to_vec();
                for (k, &xk) in x.iter().enumerate() {
                    for (c, zc) in z.iter_mut().enumerate() {
                        *zc += xk * w[k * l + c];
                    }
                }
                z
            }
            ModelKind::Mlp1 => {
                let (w1, rest) = self.theta.split_at(d * h);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h * l);
                let mut hid = b1.to_vec();
                for (k, &xk) in x.iter().enumerate() {
                    for (j, hj) in hid.iter_mut().enumerate() {
                        *hj += xk * w1[k * h + j];
                    }
                }
                for hj in &mut hid {
                    *hj = hj.max(0.0);
                }
                let mut z = b2.to_vec();
                for (j, &hj) in hid.iter().enumerate() {
                    for (c, zc) in z.iter_mut().enumerate() {
                        *zc += hj * w2[j * l + c];
                    }
                }
                z
            }
        }
    }

    /// Mean cross-entropy and its exact gradient over the indexed batch.
    pub fn loss_and_grad(&self, pool: &LabeledPool, batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Domain("batch must not be empty".into()));
        }
        if pool.dim() != self.input {
            return Err(Error::Domain(format!(
                "pool has dim {}, model expects {}",
                pool.dim(),
                self.input
            )));
        }
        let (d, h, l) = (self.input, self.hidden, self.classes);
        let inv_n = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.theta.len()];
        for &i in batch {
            let x = pool.row(i);
            let y = pool.label(i) as usize;
            if y >= l {
                return Err(Error::Domain(format!("label {y} outside 0..{l}")));
            }
            match self.kind {
                ModelKind::Logistic => {
                    let z = self.logits(x);
                    let (dz, sample_loss) = softmax_backward(&z, y, inv_n);
                    loss += sample_loss;
                    let gw = &mut grad[..d * l];
                    for (k, &xk) in x.iter().enumerate() {
                        for (c, &dzc) in dz.iter().enumerate() {
                            gw[k * l + c] += xk * dzc;
                        }
                    }
                    let gb = &mut grad[d * l..];
                    for (c, &dzc) in dz.iter().enumerate() {
                        gb[c] += dzc;
                    }
                }
                ModelKind::Mlp1 => {
                    let (w1, rest) = self.theta.split_at(d * h);
                    let (b1, rest) = rest.split_at(h);
                    let (w2, _b2) = rest.split_at(h * l);
                    let mut pre = b1.to_vec();
                    for (k, &xk) in x.iter().enumerate() {
                        for (j, pj) in pre.iter_mut().enumerate() {
                            *pj += xk * w1[k * h + j];
                        }
                    }
                    let hid: Vec<f64> = pre.iter().map(|p| p.max(0.0)).collect();
                    let mut z = self.theta[d * h + h + h * l..].to_vec();
                    for (j, &hj) in hid.iter().enumerate() {
                        for (c, zc) in z.iter_mut().enumerate() {
                            *zc += hj * w2[j * l + c];
                        }
                    }
                    let (dz, sample_loss) = softmax_backward(&z, y, inv_n);
                    loss += sample_loss;
                    let mut dpre = vec![0.0; h];
                    for (j, dp) in dpre.iter_mut().enumerate() {
                        if pre[j] > 0.0 {
                            let mut acc = 0.0;
                            for (c, &dzc) in dz.iter().enumerate() {
                                acc += w2[j * l + c] * dzc;
                            }
                            *dp = acc;
                        }
                    }
                    let (gw1, grest) = grad.split_at_mut(d * h);
                    let (gb1, grest) = grest.split_at_mut(h);
                    let (gw2, gb2) = grest.split_at_mut(h * l);
                    for (k, &xk) in x.iter().enumerate() {
                        for (j, &dpj) in dpre.iter().enumerate() {
                            gw1[k * h + j] += xk * dpj;
                        }
                    }
                    for (j, &dpj) in dpre.iter().enumerate() {
                        gb1[j] += dpj;
                    }
                    for (j, &hj) in hid.iter().enumerate() {
                        for (c, &dzc) in dz.iter().enumerate() {
                            gw2[j * l + c] += hj * dzc;
                        }
                    }
                    for (c, &dzc) in dz.iter().enumerate() {
                        gb2[c] += dzc;
                    }
                }
            }
        }
        Ok((loss * inv_n, grad))
    }

    /// Accuracy and mean loss on a whole pool. Prediction ties resolve to
    /// the lowest class index.
    pub fn evaluate(&self, pool: &LabeledPool) -> Result<(f64, f64)> {
        if pool.is_empty() {
            return Err(Error::Domain("cannot evaluate on an empty split".into()));
        }
        if pool.dim() != self.input {
            return Err(Error::Domain(format!(
                "pool has dim {}, model expects {}",
                pool.dim(),
                self.input
            )));
        }
        let mut correct = 0usize;
        let mut loss = 0.0;
        for i in 0..pool.len() {
            let z = self.logits(pool.row(i));
            let y = pool.label(i) as usize;
            if y >= self.classes {
                return Err(Error::Domain(format!("label {y} outside 0..{}", self.classes)));
            }
            let mut pred = 0;
            for (c, &zc) in z.iter().enumerate() {
                if zc > z[pred] {
                    pred = c;
                }
            }
            if pred == y {
                correct += 1;
            }
            loss += log_sum_exp(&z) - z[y];
        }
        Ok((correct as f64 / pool.len() as f64, loss / pool.len() as f64))
    }

    /// Convex combination with an aggregate: theta <- (1-w) theta + w agg.
    pub fn merge(&mut self, aggregate: &[f64], weight_on_aggregate: f64) -> Result<()> {
        if aggregate.len() != self.theta.len() {
            return Err(Error::Domain(format!(
                "aggregate has {} parameters, model has {}",
                aggregate.len(),
                self.theta.len()
            )));
        }
        if !(0.0..=1.0).contains(&weight_on_aggregate) {
            return Err(Error::Domain(format!(
                "merge weight {weight_on_aggregate} outside [0, 1]"
            )));
        }
        for (t, &a) in self.theta.iter_mut().zip(aggregate) {
            *t = (1.0 - weight_on_aggregate) * *t + weight_on_aggregate * a;
        }
        Ok(())
    }

    /// Epochs of shuffled minibatch Adam on the training pool.
    pub fn local_train<R: Rng>(
        &mut self,
        pool: &LabeledPool,
        epochs: usize,
        batch_size: usize,
        opt: &mut AdamState,
        rng: &mut R,
    ) -> Result<()> {
        if pool.is_empty() {
            return Err(Error::Domain("cannot train on an empty split".into()));
        }
        if batch_size == 0 {
            return Err(Error::Domain("batch size must be positive".into()));
        }
        if opt.dim() != self.theta.len() {
            return Err(Error::Domain(format!(
                "optimizer tracks {} parameters, model has {}",
                opt.dim(),
                self.theta.len()
            )));
        }
        let mut order: Vec<usize> = (0..pool.len()).collect();
        for _ in 0..epochs {
            shuffle(rng, &mut order);
            for batch in order.chunks(batch_size) {
                let (_, grad) = self.loss_and_grad(pool, batch)?;
                opt.step(&mut self.theta, &grad);
            }
        }
        Ok(())
    }

    /// Writes the checkpoint: a small header (kind, dims, round) followed by
    /// the parameters as little-endian f64.
    pub fn save_checkpoint(&self, round: u64, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(29 + self.theta.len() * 8);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.push(match self.kind {
            ModelKind::Logistic => 0,
            ModelKind::Mlp1 => 1,
        });
        for dim in [self.input as u32, self.hidden as u32, self.classes as u32] {
            buf.extend_from_slice(&dim.to_le_bytes());
        }
        buf.extend_from_slice(&round.to_le_bytes());
        for v in &self.theta {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    /// Reads a checkpoint back, returning the model and its round.
    pub fn load_checkpoint(path: &Path) -> Result<(Self, u64)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let header_len = CHECKPOINT_MAGIC.len() + 1 + 12 + 8;
        if bytes.len() < header_len || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
            return Err(Error::State("not a model checkpoint".into()));
        }
        let mut at = CHECKPOINT_MAGIC.len();
        let kind = match bytes[at] {
            0 => ModelKind::Logistic,
            1 => ModelKind::Mlp1,
            k => return Err(Error::State(format!("unknown model kind tag {k}"))),
        };
        at += 1;
        let mut dims = [0u32; 3];
        for dim in &mut dims {
            *dim = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            at += 4;
        }
        let round = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        at += 8;
        let (input, hidden, classes) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
        let expected = param_count(kind, input, hidden, classes);
        if bytes.len() != at + expected * 8 {
            return Err(Error::State(format!(
                "checkpoint holds {} parameter bytes, header implies {}",
                bytes.len() - at,
                expected * 8
            )));
        }
        let theta: Vec<f64> = bytes[at..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Self { kind, input, hidden, classes, theta }, round))
    }
}

const CHECKPOINT_MAGIC: &[u8] = b"PPDLCKP1";

/// dz = (softmax(z) - onehot(y)) * scale, plus the sample loss.
fn softmax_backward(z: &[f64], y: usize, scale: f64) -> (Vec<f64>, f64) {
    let lse = log_sum_exp(z);
    let loss = lse - z[y];
    let mut dz: Vec<f64> = z.iter().map(|&zc| (zc - lse).exp() * scale).collect();
    dz[y] -= scale;
    (dz, loss)
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&zc| (zc - m).exp()).sum::<f64>().ln()
}

/// Adam with bias correction; fixed beta1=0.9, beta2=0.999, eps=1e-8.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(dim: usize, lr: f64) -> Self {
        Self { lr, step: 0, m: vec![0.0; dim], v: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(theta.len(), self.m.len());
        debug_assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.step as i32);
        for ((t, &g), (m, v)) in
            theta.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *t -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}
