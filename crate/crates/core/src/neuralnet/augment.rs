//! Patch augmentation: horizontal/vertical flips, translation, scaling and
//! axial-plane rotation, resampled trilinearly with the patch fill rules.
//! An identity draw returns the input bit-exactly.

use crate::volgrid::Patch;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Ranges are symmetric around the identity transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub flip_x: bool,
    pub flip_y: bool,
    /// Max absolute translation per axis, in voxels.
    pub translate_voxels: f64,
    /// Multiplicative scale range around 1.
    pub scale_range: (f64, f64),
    /// Max absolute rotation around the z axis, degrees.
    pub rotate_deg: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            flip_x: true,
            flip_y: true,
            translate_voxels: 2.0,
            scale_range: (0.9, 1.1),
            rotate_deg: 15.0,
        }
    }
}

/// One concrete per-sample transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip_x: bool,
    pub flip_y: bool,
    pub translate: [f64; 3],
    pub scale: f64,
    pub rotate_rad: f64,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        flip_x: false,
        flip_y: false,
        translate: [0.0, 0.0, 0.0],
        scale: 1.0,
        rotate_rad: 0.0,
    };

    pub fn is_identity(&self) -> bool {
        !self.flip_x
            && !self.flip_y
            && self.translate == [0.0, 0.0, 0.0]
            && self.scale == 1.0
            && self.rotate_rad == 0.0
    }
}

/// Draw a transform from the seeded stream.
pub fn draw_augment(spec: &AugmentationSpec, rng: &mut ChaCha8Rng) -> AugmentDraw {
    let flip_x = spec.flip_x && rng.random::<bool>();
    let flip_y = spec.flip_y && rng.random::<bool>();
    let t = spec.translate_voxels;
    let translate = if t > 0.0 {
        [
            rng.random_range(-t..t),
            rng.random_range(-t..t),
            rng.random_range(-t..t),
        ]
    } else {
        [0.0; 3]
    };
    let scale = if spec.scale_range.0 < spec.scale_range.1 {
        rng.random_range(spec.scale_range.0..spec.scale_range.1)
    } else {
        spec.scale_range.0
    };
    let rotate_rad = if spec.rotate_deg > 0.0 {
        rng.random_range(-spec.rotate_deg..spec.rotate_deg).to_radians()
    } else {
        0.0
    };
    AugmentDraw {
        flip_x,
        flip_y,
        translate,
        scale,
        rotate_rad,
    }
}

/// Trilinear sample of one channel at continuous patch-index coordinates;
/// out-of-patch corners take the fill value.
fn sample_channel(data: &[f32], size: usize, p: [f64; 3], fill: f32) -> f32 {
    let lo = [p[0].floor(), p[1].floor(), p[2].floor()];
    let frac = [p[0] - lo[0], p[1] - lo[1], p[2] - lo[2]];
    let mut acc = 0.0f64;
    for (dz, wz) in [(0i64, 1.0 - frac[2]), (1, frac[2])] {
        if wz == 0.0 {
            continue;
        }
        for (dy, wy) in [(0i64, 1.0 - frac[1]), (1, frac[1])] {
            if wy == 0.0 {
                continue;
            }
            for (dx, wx) in [(0i64, 1.0 - frac[0]), (1, frac[0])] {
                if wx == 0.0 {
                    continue;
                }
                let q = [lo[0] as i64 + dx, lo[1] as i64 + dy, lo[2] as i64 + dz];
                let v = if q.iter().any(|&c| c < 0 || c >= size as i64) {
                    fill
                } else {
                    data[q[0] as usize + size * (q[1] as usize + size * q[2] as usize)]
                };
                acc += wz * wy * wx * v as f64;
            }
        }
    }
    acc as f32
}

/// Apply a drawn transform. The transform acts about the patch center in
/// voxel-index space; each output voxel is pulled from the inverse-mapped
/// input location.
pub fn augment(patch: &Patch, draw: &AugmentDraw) -> Patch {
    if draw.is_identity() {
        return patch.clone();
    }
    let size = patch.size;
    let c = (size as f64 - 1.0) / 2.0;
    let (sin, cos) = draw.rotate_rad.sin_cos();
    let mut out = patch.clone();
    let fills = [patch.fill.pet, patch.fill.ct];
    for z in 0..size {
        for y in 0..size {
            for x in 0..size {
                // inverse transform: undo translation, scale, rotation, flips
                let mut u = [
                    x as f64 - c - draw.translate[0],
                    y as f64 - c - draw.translate[1],
                    z as f64 - c - draw.translate[2],
                ];
                u = [u[0] / draw.scale, u[1] / draw.scale, u[2] / draw.scale];
                let (ux, uy) = (cos * u[0] + sin * u[1], -sin * u[0] + cos * u[1]);
                u[0] = if draw.flip_x { -ux } else { ux };
                u[1] = if draw.flip_y { -uy } else { uy };
                let src = [u[0] + c, u[1] + c, u[2] + c];
                let i = x + size * (y + size * z);
                out.pet[i] = sample_channel(&patch.pet, size, src, fills[0]);
                out.ct[i] = sample_channel(&patch.ct, size, src, fills[1]);
            }
        }
    }
    out
}
