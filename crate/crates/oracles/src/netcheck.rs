//! Independently coded network evaluation: naive nested-loop convolution
//! with replication padding, ReLU, channel-mean pooling and the dense head,
//! plus finite-difference probes of layer-gradients by re-injecting a
//! perturbed feature map into the remaining layers.

use voxrca_core::neuralnet::Model;
use voxrca_core::volgrid::Patch;

#[derive(Debug, Clone)]
pub struct Map {
    pub channels: usize,
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Map {
    fn at(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
        self.data[c * self.dims[0] * self.dims[1] * self.dims[2]
            + x
            + self.dims[0] * (y + self.dims[1] * z)]
    }
}

pub fn input_map(model: &Model, patch: &Patch) -> Map {
    let s = patch.size;
    let n = s * s * s;
    let mut data = Vec::with_capacity(2 * n);
    for (c, chan) in [&patch.pet, &patch.ct].into_iter().enumerate() {
        let norm = model.spec.channel_norm[c];
        for &v in chan {
            data.push((v as f64 - norm.offset) / norm.scale);
        }
    }
    Map {
        channels: 2,
        dims: [s, s, s],
        data,
    }
}

fn clampi(v: i64, hi: usize) -> usize {
    v.clamp(0, hi as i64 - 1) as usize
}

/// One naive conv + ReLU block with replication padding of 1.
pub fn conv_block(model: &Model, block: usize, input: &Map) -> Map {
    let conv = &model.params.conv[block];
    let stride = model.spec.blocks[block].stride;
    let od = [
        (input.dims[0] - 1) / stride + 1,
        (input.dims[1] - 1) / stride + 1,
        (input.dims[2] - 1) / stride + 1,
    ];
    let mut out = Map {
        channels: conv.out_channels,
        dims: od,
        data: vec![0.0; conv.out_channels * od[0] * od[1] * od[2]],
    };
    let mut i = 0;
    for o in 0..conv.out_channels {
        for oz in 0..od[2] {
            for oy in 0..od[1] {
                for ox in 0..od[0] {
                    let mut acc = conv.bias[o];
                    for ic in 0..conv.in_channels {
                        for kz in 0..3usize {
                            for ky in 0..3usize {
                                for kx in 0..3usize {
                                    let z = clampi(
                                        (oz * stride) as i64 + kz as i64 - 1,
                                        input.dims[2],
                                    );
                                    let y = clampi(
                                        (oy * stride) as i64 + ky as i64 - 1,
                                        input.dims[1],
                                    );
                                    let x = clampi(
                                        (ox * stride) as i64 + kx as i64 - 1,
                                        input.dims[0],
                                    );
                                    acc += conv.w(o, ic, kz, ky, kx) * input.at(ic, x, y, z);
                                }
                            }
                        }
                    }
                    out.data[i] = if acc > 0.0 { acc } else { 0.0 };
                    i += 1;
                }
            }
        }
    }
    // the flat index above walks (o, oz, oy, ox) in exactly the layout order
    out
}

pub fn pool(map: &Map) -> Vec<f64> {
    let n = map.dims[0] * map.dims[1] * map.dims[2];
    (0..map.channels)
        .map(|c| map.data[c * n..(c + 1) * n].iter().sum::<f64>() / n as f64)
        .collect()
}

pub fn dense(model: &Model, pooled: &[f64]) -> Vec<f64> {
    let d = pooled.len();
    (0..model.spec.n_logits)
        .map(|o| {
            model.params.dense_b[o]
                + (0..d)
                    .map(|c| model.params.dense_w[o * d + c] * pooled[c])
                    .sum::<f64>()
        })
        .collect()
}

/// Full naive forward pass: logits.
pub fn naive_logits(model: &Model, patch: &Patch) -> Vec<f64> {
    let mut map = input_map(model, patch);
    for k in 0..model.spec.blocks.len() {
        map = conv_block(model, k, &map);
    }
    dense(model, &pool(&map))
}

/// Post-ReLU feature maps of every block.
pub fn naive_feats(model: &Model, patch: &Patch) -> Vec<Map> {
    let mut maps = Vec::new();
    let mut cur = input_map(model, patch);
    for k in 0..model.spec.blocks.len() {
        cur = conv_block(model, k, &cur);
        maps.push(cur.clone());
    }
    maps
}

/// Logits obtained by resuming the forward pass from a (possibly perturbed)
/// feature map of `layer`.
pub fn logits_from_layer(model: &Model, layer: usize, map: &Map) -> Vec<f64> {
    let mut cur = map.clone();
    for k in (layer + 1)..model.spec.blocks.len() {
        cur = conv_block(model, k, &cur);
    }
    dense(model, &pool(&cur))
}

/// Central finite differences of one logit with respect to the pooled
/// activation of `layer`: perturb the layer's map uniformly per channel by
/// +/- eps (which shifts the pooled vector by +/- eps on that channel) and
/// re-inject into the head.
pub fn fd_grad_wrt_layer(
    model: &Model,
    patch: &Patch,
    layer: usize,
    output_index: usize,
    eps: f64,
) -> Vec<f64> {
    fd_probe(model, patch, layer, output_index, eps).central
}

pub struct FdProbe {
    pub central: Vec<f64>,
    /// Max disagreement between the forward and backward one-sided slopes,
    /// relative to the gradient scale. The network is piecewise linear in
    /// the activations, so any material disagreement means a ReLU kink lies
    /// inside the probe segment and central differences do not measure the
    /// derivative at the point.
    pub kink_score: f64,
}

pub fn fd_probe(
    model: &Model,
    patch: &Patch,
    layer: usize,
    output_index: usize,
    eps: f64,
) -> FdProbe {
    let feats = naive_feats(model, patch);
    let base = &feats[layer];
    let spatial = base.dims[0] * base.dims[1] * base.dims[2];
    let f0 = logits_from_layer(model, layer, base)[output_index];
    let mut central = Vec::with_capacity(base.channels);
    let mut sided = Vec::with_capacity(base.channels);
    for c in 0..base.channels {
        let mut hi = base.clone();
        let mut lo = base.clone();
        for j in 0..spatial {
            hi.data[c * spatial + j] += eps;
            lo.data[c * spatial + j] -= eps;
        }
        let lhi = logits_from_layer(model, layer, &hi)[output_index];
        let llo = logits_from_layer(model, layer, &lo)[output_index];
        central.push((lhi - llo) / (2.0 * eps));
        sided.push(((lhi - f0) / eps, (f0 - llo) / eps));
    }
    let scale = central
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-9);
    let kink_score = sided
        .iter()
        .map(|(a, b)| (a - b).abs() / scale)
        .fold(0.0, f64::max);
    FdProbe { central, kink_score }
}

/// Central differences, or None when the probe segment straddles a ReLU
/// kink (one-sided slopes disagree), in which case the probe says nothing
/// about the derivative at the point and should be redrawn.
pub fn fd_grad_wrt_layer_checked(
    model: &Model,
    patch: &Patch,
    layer: usize,
    output_index: usize,
    eps: f64,
) -> Option<Vec<f64>> {
    let probe = fd_probe(model, patch, layer, output_index, eps);
    if probe.kink_score > 1e-6 {
        None
    } else {
        Some(probe.central)
    }
}
