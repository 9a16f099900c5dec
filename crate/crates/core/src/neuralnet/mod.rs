//! Small from-scratch 3D convolutional network with per-layer activation
//! capture and analytic gradients with respect to a chosen layer's pooled
//! activations.
//!
//! Architecture: a stack of (conv 3x3x3, edge-replication padding 1, stride,
//! ReLU) blocks, global average pooling over the spatial dims of the last
//! block, and a dense head to the output logits. Activations are exposed
//! after global average pooling of each block (a vector of channel means),
//! which keeps the regression dimension commensurate with desk-scale sample
//! counts.

pub mod augment;
pub mod io;
pub mod train;

use crate::volgrid::Patch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input has {got} channels of {got_size}^3, model expects {want} of {want_size}^3")]
    ShapeMismatch {
        got: usize,
        got_size: usize,
        want: usize,
        want_size: usize,
    },
    #[error("layer {0} does not exist (model has {1} blocks)")]
    BadLayer(usize, usize),
    #[error("output index {0} out of range for {1} logits")]
    BadOutput(usize, usize),
    #[error("model spec invalid: {0}")]
    BadSpec(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

/// Per-channel affine input normalization: (x - offset) / scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub offset: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub width: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_channels: usize,
    pub patch_size: usize,
    pub blocks: Vec<BlockSpec>,
    pub n_logits: usize,
    pub channel_norm: Vec<ChannelNorm>,
}

impl ModelSpec {
    pub fn classifier(patch_size: usize, widths: &[usize]) -> Self {
        Self::with_logits(patch_size, widths, 2)
    }

    pub fn detector_scorer(window: usize, widths: &[usize]) -> Self {
        Self::with_logits(window, widths, 1)
    }

    fn with_logits(patch_size: usize, widths: &[usize], n_logits: usize) -> Self {
        Self {
            input_channels: 2,
            patch_size,
            blocks: widths
                .iter()
                .map(|&width| BlockSpec { width, stride: 2 })
                .collect(),
            n_logits,
            channel_norm: vec![
                ChannelNorm {
                    offset: 0.0,
                    scale: 5.0,
                },
                ChannelNorm {
                    offset: -1000.0,
                    scale: 1000.0,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.blocks.is_empty() {
            return Err(NetError::BadSpec("needs at least one block".into()));
        }
        if self.blocks.iter().any(|b| b.width == 0 || b.stride == 0) {
            return Err(NetError::BadSpec("zero block width or stride".into()));
        }
        if self.n_logits == 0 {
            return Err(NetError::BadSpec("needs at least one logit".into()));
        }
        if self.channel_norm.len() != self.input_channels {
            return Err(NetError::BadSpec("one channel norm per input channel".into()));
        }
        if self.channel_norm.iter().any(|n| n.scale == 0.0) {
            return Err(NetError::BadSpec("zero norm scale".into()));
        }
        Ok(())
    }

    /// Pooled feature dimension of the last block.
    pub fn feature_dim(&self) -> usize {
        self.blocks.last().map(|b| b.width).unwrap_or(0)
    }

    pub fn n_layers(&self) -> usize {
        self.blocks.len()
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::classifier(16, &[8, 16, 32])
    }
}

/// Weights of one conv block, stored [out][in][kz][ky][kx] with kernel 3.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvParams {
    #[inline]
    pub fn w(&self, o: usize, i: usize, kz: usize, ky: usize, kx: usize) -> f64 {
        self.weights[(((o * self.in_channels + i) * 3 + kz) * 3 + ky) * 3 + kx]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub conv: Vec<ConvParams>,
    /// Dense head, row-major [n_logits][feature_dim].
    pub dense_w: Vec<f64>,
    pub dense_b: Vec<f64>,
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Params,
}

/// Pooled activation vector of one layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivationSnapshot {
    pub layer: usize,
    pub pooled: Vec<f64>,
}

/// Spatial feature maps of one block: channel-major, x-fastest order.
#[derive(Debug, Clone)]
pub struct Feat {
    pub channels: usize,
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Feat {
    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Self {
            channels,
            dims,
            data: vec![0.0; channels * dims[0] * dims[1] * dims[2]],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        c * (self.dims[0] * self.dims[1] * self.dims[2])
            + x
            + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn spatial_len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Channel means (global average pooling).
    pub fn pooled(&self) -> Vec<f64> {
        let n = self.spatial_len() as f64;
        (0..self.channels)
            .map(|c| {
                let base = c * self.spatial_len();
                self.data[base..base + self.spatial_len()].iter().sum::<f64>() / n
            })
            .collect()
    }
}

fn out_dim(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

/// Forward convolution with edge-replication padding 1 and ReLU.
fn conv_relu(input: &Feat, conv: &ConvParams, stride: usize) -> Feat {
    let od = [
        out_dim(input.dims[0], stride),
        out_dim(input.dims[1], stride),
        out_dim(input.dims[2], stride),
    ];
    let mut out = Feat::zeros(conv.out_channels, od);
    let id = input.dims;
    for o in 0..conv.out_channels {
        for oz in 0..od[2] {
            for oy in 0..od[1] {
                for ox in 0..od[0] {
                    let mut acc = conv.bias[o];
                    for i in 0..conv.in_channels {
                        for kz in 0..3 {
                            let z = (oz * stride + kz).saturating_sub(1).min(id[2] - 1);
                            for ky in 0..3 {
                                let y = (oy * stride + ky).saturating_sub(1).min(id[1] - 1);
                                for kx in 0..3 {
                                    let x = (ox * stride + kx).saturating_sub(1).min(id[0] - 1);
                                    acc += conv.w(o, i, kz, ky, kx)
                                        * input.data[input.idx(i, x, y, z)];
                                }
                            }
                        }
                    }
                    let oi = out.idx(o, ox, oy, oz);
                    out.data[oi] = acc.max(0.0);
                }
            }
        }
    }
    out
}

/// Scatter output-side gradients back to the input of a conv block.
/// `grad_out` is the gradient at the pre-ReLU output times the ReLU mask,
/// i.e. already masked.
fn conv_input_grad(input_dims: [usize; 3], conv: &ConvParams, stride: usize, grad_out: &Feat) -> Feat {
    let mut g = Feat::zeros(conv.in_channels, input_dims);
    let id = input_dims;
    for o in 0..conv.out_channels {
        for oz in 0..grad_out.dims[2] {
            for oy in 0..grad_out.dims[1] {
                for ox in 0..grad_out.dims[0] {
                    let go = grad_out.data[grad_out.idx(o, ox, oy, oz)];
                    if go == 0.0 {
                        continue;
                    }
                    for i in 0..conv.in_channels {
                        for kz in 0..3 {
                            let z = (oz * stride + kz).saturating_sub(1).min(id[2] - 1);
                            for ky in 0..3 {
                                let y = (oy * stride + ky).saturating_sub(1).min(id[1] - 1);
                                for kx in 0..3 {
                                    let x = (ox * stride + kx).saturating_sub(1).min(id[0] - 1);
                                    let gi = g.idx(i, x, y, z);
                                    g.data[gi] += go * conv.w(o, i, kz, ky, kx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    g
}

/// Gradients of the conv weights and bias given the (masked) output gradient.
fn conv_param_grad(
    input: &Feat,
    conv: &ConvParams,
    stride: usize,
    grad_out: &Feat,
) -> (Vec<f64>, Vec<f64>) {
    let mut gw = vec![0.0; conv.weights.len()];
    let mut gb = vec![0.0; conv.bias.len()];
    let id = input.dims;
    for o in 0..conv.out_channels {
        for oz in 0..grad_out.dims[2] {
            for oy in 0..grad_out.dims[1] {
                for ox in 0..grad_out.dims[0] {
                    let go = grad_out.data[grad_out.idx(o, ox, oy, oz)];
                    if go == 0.0 {
                        continue;
                    }
                    gb[o] += go;
                    for i in 0..conv.in_channels {
                        for kz in 0..3 {
                            let z = (oz * stride + kz).saturating_sub(1).min(id[2] - 1);
                            for ky in 0..3 {
                                let y = (oy * stride + ky).saturating_sub(1).min(id[1] - 1);
                                for kx in 0..3 {
                                    let x = (ox * stride + kx).saturating_sub(1).min(id[0] - 1);
                                    gw[(((o * conv.in_channels + i) * 3 + kz) * 3 + ky) * 3 + kx] +=
                                        go * input.data[input.idx(i, x, y, z)];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (gw, gb)
}

impl Model {
    /// Fan-in scaled uniform initialization, seeded; biases start at zero.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self, NetError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = Vec::with_capacity(spec.blocks.len());
        let mut in_channels = spec.input_channels;
        for block in &spec.blocks {
            let fan_in = in_channels * 27;
            let bound = (1.0 / fan_in as f64).sqrt();
            let weights = (0..block.width * in_channels * 27)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            conv.push(ConvParams {
                weights,
                bias: vec![0.0; block.width],
                in_channels,
                out_channels: block.width,
            });
            in_channels = block.width;
        }
        let d = spec.feature_dim();
        let bound = (1.0 / d as f64).sqrt();
        let dense_w = (0..spec.n_logits * d)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let dense_b = vec![0.0; spec.n_logits];
        Ok(Self {
            spec,
            params: Params {
                conv,
                dense_w,
                dense_b,
                init_seed: seed,
            },
        })
    }

    /// Normalized input tensor from a patch.
    pub fn input_from_patch(&self, patch: &Patch) -> Result<Feat, NetError> {
        if self.spec.input_channels != 2 || patch.size != self.spec.patch_size {
            return Err(NetError::ShapeMismatch {
                got: 2,
                got_size: patch.size,
                want: self.spec.input_channels,
                want_size: self.spec.patch_size,
            });
        }
        let s = patch.size;
        let mut input = Feat::zeros(2, [s, s, s]);
        let n = patch.voxel_count();
        for (c, chan) in [&patch.pet, &patch.ct].iter().enumerate() {
            let norm = self.spec.channel_norm[c];
            for (j, &v) in chan.iter().enumerate() {
                input.data[c * n + j] = (v as f64 - norm.offset) / norm.scale;
            }
        }
        Ok(input)
    }

    /// Run all blocks, returning every intermediate post-ReLU feature map.
    fn run_blocks(&self, input: Feat) -> Vec<Feat> {
        let mut feats: Vec<Feat> = Vec::with_capacity(self.spec.blocks.len());
        for (k, block) in self.spec.blocks.iter().enumerate() {
            let src = feats.last().unwrap_or(&input);
            let next = conv_relu(src, &self.params.conv[k], block.stride);
            feats.push(next);
        }
        feats
    }

    fn head(&self, pooled: &[f64]) -> Vec<f64> {
        let d = self.spec.feature_dim();
        (0..self.spec.n_logits)
            .map(|o| {
                self.params.dense_b[o]
                    + (0..d)
                        .map(|c| self.params.dense_w[o * d + c] * pooled[c])
                        .sum::<f64>()
            })
            .collect()
    }

    /// Logits plus the pooled activation snapshot of every block.
    pub fn forward(&self, patch: &Patch) -> Result<(Vec<f64>, Vec<ActivationSnapshot>), NetError> {
        let input = self.input_from_patch(patch)?;
        let feats = self.run_blocks(input);
        let snapshots = feats
            .iter()
            .enumerate()
            .map(|(layer, f)| ActivationSnapshot {
                layer,
                pooled: f.pooled(),
            })
            .collect();
        let logits = self.head(feats.last().expect("at least one block").pooled().as_slice());
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite("logits"));
        }
        Ok((logits, snapshots))
    }

    pub fn logits(&self, patch: &Patch) -> Result<Vec<f64>, NetError> {
        Ok(self.forward(patch)?.0)
    }

    /// Posterior probability of the lesion class: the softmax component of
    /// the last logit for two-logit heads, or the sigmoid of a single logit.
    pub fn predict_posterior(&self, patch: &Patch) -> Result<f64, NetError> {
        let logits = self.logits(patch)?;
        Ok(posterior_from_logits(&logits))
    }

    /// Gradient of one output logit with respect to the pooled activation
    /// vector of `layer`, by analytic backpropagation through the layers
    /// above it. Perturbing the pooled vector means shifting every spatial
    /// position of that layer's maps uniformly, so the pooled gradient is the
    /// spatial sum of the map gradients.
    pub fn grad_wrt_layer(
        &self,
        patch: &Patch,
        layer: usize,
        output_index: usize,
    ) -> Result<Vec<f64>, NetError> {
        let n_blocks = self.spec.blocks.len();
        if layer >= n_blocks {
            return Err(NetError::BadLayer(layer, n_blocks));
        }
        if output_index >= self.spec.n_logits {
            return Err(NetError::BadOutput(output_index, self.spec.n_logits));
        }
        let input = self.input_from_patch(patch)?;
        let feats = self.run_blocks(input);

        // d logit / d feat_last through global average pooling
        let last = &feats[n_blocks - 1];
        let d = self.spec.feature_dim();
        let n = last.spatial_len() as f64;
        let mut grad = Feat::zeros(last.channels, last.dims);
        for c in 0..d {
            let w = self.params.dense_w[output_index * d + c];
            let base = c * last.spatial_len();
            for j in 0..last.spatial_len() {
                grad.data[base + j] = w / n;
            }
        }

        // walk back to the requested layer
        let mut k = n_blocks - 1;
        while k > layer {
            // mask by the ReLU derivative of block k, then push through its conv
            let feat_k = &feats[k];
            let mut masked = grad;
            for (g, &v) in masked.data.iter_mut().zip(feat_k.data.iter()) {
                if v <= 0.0 {
                    *g = 0.0;
                }
            }
            let below = &feats[k - 1];
            grad = conv_input_grad(
                below.dims,
                &self.params.conv[k],
                self.spec.blocks[k].stride,
                &masked,
            );
            k -= 1;
        }

        let mut pooled_grad = vec![0.0; grad.channels];
        for c in 0..grad.channels {
            let base = c * grad.spatial_len();
            pooled_grad[c] = grad.data[base..base + grad.spatial_len()].iter().sum();
        }
        Ok(pooled_grad)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Lesion-class probability from raw logits (class index 1 for two-logit
/// heads; sigmoid confidence for single-logit scorers).
pub fn posterior_from_logits(logits: &[f64]) -> f64 {
    if logits.len() == 1 {
        sigmoid(logits[0])
    } else {
        softmax(logits)[1]
    }
}
