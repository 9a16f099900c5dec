//! Training loop: adaptive-moment optimizer, cross-entropy loss, stepped
//! learning-rate decay, weighted random sampling against class imbalance,
//! per-sample augmentation and early stopping on validation loss.
//!
//! Deterministic given the config seed: sample orders and augmentation draws
//! come from per-epoch ChaCha streams drawn up front, and batch gradients
//! are reduced in sample order regardless of thread count.

use super::augment::{augment, draw_augment, AugmentDraw, AugmentationSpec};
use super::{sigmoid, softmax, Feat, Model, ModelSpec, NetError};
use crate::volgrid::Patch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptySet,
    #[error("weighted sampling needs both classes present")]
    SingleClass,
    #[error("non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Multiplier applied to the learning rate every `lr_step_epochs`.
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    pub max_epochs: usize,
    /// Early-stopping patience on validation loss, in epochs.
    pub patience: usize,
    pub batch_size: usize,
    pub weighted_sampling: bool,
    pub augmentation: Option<AugmentationSpec>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            lr_decay: 0.1,
            lr_step_epochs: 5,
            max_epochs: 25,
            patience: 5,
            batch_size: 8,
            weighted_sampling: true,
            augmentation: Some(AugmentationSpec::default()),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Stepped schedule: initial_lr * lr_decay^(epoch / lr_step_epochs).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.initial_lr * self.lr_decay.powi((epoch / self.lr_step_epochs) as i32)
    }
}

#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub patch: Patch,
    pub label: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Parameter-shaped gradient accumulator.
pub(crate) struct ParamGrads {
    pub(crate) conv_w: Vec<Vec<f64>>,
    pub(crate) conv_b: Vec<Vec<f64>>,
    pub(crate) dense_w: Vec<f64>,
    pub(crate) dense_b: Vec<f64>,
}

impl ParamGrads {
    fn zeros_like(model: &Model) -> Self {
        Self {
            conv_w: model.params.conv.iter().map(|c| vec![0.0; c.weights.len()]).collect(),
            conv_b: model.params.conv.iter().map(|c| vec![0.0; c.bias.len()]).collect(),
            dense_w: vec![0.0; model.params.dense_w.len()],
            dense_b: vec![0.0; model.params.dense_b.len()],
        }
    }

    fn add(&mut self, other: &ParamGrads) {
        for (a, b) in self.conv_w.iter_mut().zip(other.conv_w.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
        for (a, b) in self.conv_b.iter_mut().zip(other.conv_b.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
        for (x, y) in self.dense_w.iter_mut().zip(other.dense_w.iter()) {
            *x += y;
        }
        for (x, y) in self.dense_b.iter_mut().zip(other.dense_b.iter()) {
            *x += y;
        }
    }

    fn scale(&mut self, s: f64) {
        for a in self.conv_w.iter_mut().chain(self.conv_b.iter_mut()) {
            for x in a.iter_mut() {
                *x *= s;
            }
        }
        for x in self.dense_w.iter_mut().chain(self.dense_b.iter_mut()) {
            *x *= s;
        }
    }
}

/// Loss and logit gradient for one sample.
fn loss_and_dlogits(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    if logits.len() == 1 {
        let z = logits[0];
        let y = label as f64;
        // stable binary cross entropy with logits
        let loss = z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln();
        (loss, vec![sigmoid(z) - y])
    } else {
        let p = softmax(logits);
        let loss = -(p[label].max(1e-300)).ln();
        let mut d = p;
        d[label] -= 1.0;
        (loss, d)
    }
}

impl Model {
    /// Full backpropagation for one input; returns (loss, gradients).
    pub(crate) fn backward(&self, input: &Feat, label: usize) -> (f64, ParamGrads) {
        let feats = self.run_blocks(input.clone());
        let last = feats.last().expect("at least one block");
        let pooled = last.pooled();
        let d = self.spec.feature_dim();
        let logits = self.head(&pooled);
        let (loss, dlogits) = loss_and_dlogits(&logits, label);

        let mut grads = ParamGrads::zeros_like(self);
        // dense head
        let mut g_pooled = vec![0.0; d];
        for o in 0..self.spec.n_logits {
            grads.dense_b[o] = dlogits[o];
            for c in 0..d {
                grads.dense_w[o * d + c] = dlogits[o] * pooled[c];
                g_pooled[c] += dlogits[o] * self.params.dense_w[o * d + c];
            }
        }
        // through global average pooling
        let n = last.spatial_len() as f64;
        let mut grad = Feat::zeros(last.channels, last.dims);
        for c in 0..d {
            let base = c * last.spatial_len();
            let g = g_pooled[c] / n;
            for j in 0..last.spatial_len() {
                grad.data[base + j] = g;
            }
        }
        // conv blocks, top down
        for k in (0..self.spec.blocks.len()).rev() {
            let feat_k = &feats[k];
            for (g, &v) in grad.data.iter_mut().zip(feat_k.data.iter()) {
                if v <= 0.0 {
                    *g = 0.0;
                }
            }
            let below = if k == 0 { input } else { &feats[k - 1] };
            let (gw, gb) = super::conv_param_grad(
                below,
                &self.params.conv[k],
                self.spec.blocks[k].stride,
                &grad,
            );
            grads.conv_w[k] = gw;
            grads.conv_b[k] = gb;
            if k > 0 {
                grad = super::conv_input_grad(
                    below.dims,
                    &self.params.conv[k],
                    self.spec.blocks[k].stride,
                    &grad,
                );
            }
        }
        (loss, grads)
    }
}

/// Adam state mirroring the parameter shapes.
struct Adam {
    m: ParamGrads,
    v: ParamGrads,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(model: &Model) -> Self {
        Self {
            m: ParamGrads::zeros_like(model),
            v: ParamGrads::zeros_like(model),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(&mut self, model: &mut Model, grads: &ParamGrads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        };
        for k in 0..model.params.conv.len() {
            update(
                &mut model.params.conv[k].weights,
                &grads.conv_w[k],
                &mut self.m.conv_w[k],
                &mut self.v.conv_w[k],
            );
            update(
                &mut model.params.conv[k].bias,
                &grads.conv_b[k],
                &mut self.m.conv_b[k],
                &mut self.v.conv_b[k],
            );
        }
        update(
            &mut model.params.dense_w,
            &grads.dense_w,
            &mut self.m.dense_w,
            &mut self.v.dense_w,
        );
        update(
            &mut model.params.dense_b,
            &grads.dense_b,
            &mut self.m.dense_b,
            &mut self.v.dense_b,
        );
    }
}

/// Epoch sample order with per-sample weights inversely proportional to the
/// class frequency, drawn with replacement.
pub fn weighted_order(labels: &[usize], n_draws: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n_classes = labels.iter().max().map(|&m| m + 1).unwrap_or(0);
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let weights: Vec<f64> = labels.iter().map(|&l| 1.0 / counts[l] as f64).collect();
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cdf.push(acc);
    }
    let total = acc;
    (0..n_draws)
        .map(|_| {
            let u = rng.random_range(0.0..total);
            cdf.partition_point(|&c| c <= u).min(labels.len() - 1)
        })
        .collect()
}

fn shuffled_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

fn mean_loss_and_accuracy(model: &Model, set: &[LabeledSample]) -> Result<(f64, f64), NetError> {
    let results: Vec<(f64, bool)> = set
        .par_iter()
        .map(|s| {
            let logits = model.logits(&s.patch)?;
            let (loss, _) = loss_and_dlogits(&logits, s.label);
            let predicted = if logits.len() == 1 {
                usize::from(logits[0] > 0.0)
            } else {
                usize::from(logits[1] > logits[0])
            };
            Ok((loss, predicted == s.label))
        })
        .collect::<Result<_, NetError>>()?;
    let n = results.len() as f64;
    let loss = results.iter().map(|(l, _)| l).sum::<f64>() / n;
    let acc = results.iter().filter(|(_, c)| *c).count() as f64 / n;
    Ok((loss, acc))
}

// per-epoch RNG streams derived from the config seed
fn epoch_stream(seed: u64, epoch: usize, which: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + 2 * epoch as u64 + which);
    rng
}

/// Train a model from scratch. Deterministic given the config seed.
pub fn train(
    spec: &ModelSpec,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory), TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptySet);
    }
    let labels: Vec<usize> = train_set.iter().map(|s| s.label).collect();
    if cfg.weighted_sampling {
        let has_both = labels.iter().any(|&l| l == 0) && labels.iter().any(|&l| l != 0);
        if !has_both {
            return Err(TrainError::SingleClass);
        }
    }
    let mut model = Model::init(spec.clone(), cfg.seed)?;
    let mut adam = Adam::new(&model);
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(cfg.max_epochs),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best: Option<(f64, usize, Model)> = None;
    let mut wait = 0usize;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at_epoch(epoch);
        let mut order_rng = epoch_stream(cfg.seed, epoch, 0);
        let order = if cfg.weighted_sampling {
            weighted_order(&labels, train_set.len(), &mut order_rng)
        } else {
            shuffled_order(train_set.len(), &mut order_rng)
        };
        // all augmentation draws for the epoch, in sample order
        let draws: Vec<AugmentDraw> = match &cfg.augmentation {
            Some(spec) => {
                let mut rng = epoch_stream(cfg.seed, epoch, 1);
                order.iter().map(|_| draw_augment(spec, &mut rng)).collect()
            }
            None => vec![AugmentDraw::IDENTITY; order.len()],
        };

        let mut epoch_loss = 0.0;
        for (chunk, chunk_draws) in order
            .chunks(cfg.batch_size.max(1))
            .zip(draws.chunks(cfg.batch_size.max(1)))
        {
            let per_sample: Vec<(f64, ParamGrads)> = chunk
                .par_iter()
                .zip(chunk_draws.par_iter())
                .map(|(&i, draw)| {
                    let sample = &train_set[i];
                    let patch = augment(&sample.patch, draw);
                    let input = model.input_from_patch(&patch)?;
                    Ok(model.backward(&input, sample.label))
                })
                .collect::<Result<_, NetError>>()?;
            let mut batch = ParamGrads::zeros_like(&model);
            let mut batch_loss = 0.0;
            for (loss, g) in &per_sample {
                batch_loss += loss;
                batch.add(g);
            }
            batch.scale(1.0 / per_sample.len() as f64);
            batch_loss /= per_sample.len() as f64;
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            epoch_loss += batch_loss * per_sample.len() as f64;
            adam.step(&mut model, &batch, lr);
        }
        epoch_loss /= order.len() as f64;

        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = mean_loss_and_accuracy(&model, val_set)?;
            (Some(l), Some(a))
        };
        history.epochs.push(EpochStats {
            epoch,
            lr,
            train_loss: epoch_loss,
            val_loss,
            val_accuracy,
        });

        if let Some(vl) = val_loss {
            let improved = best.as_ref().map(|(b, _, _)| vl < b - 1e-12).unwrap_or(true);
            if improved {
                best = Some((vl, epoch, model.clone()));
                wait = 0;
            } else {
                wait += 1;
                if wait >= cfg.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }

    if let Some((_, epoch, m)) = best {
        history.best_epoch = epoch;
        model = m;
    } else {
        history.best_epoch = history.epochs.len().saturating_sub(1);
    }
    Ok((model, history))
}
