//! Core volumetric data model: grids, masks, boxes, patch extraction and
//! grid resampling.
//!
//! All types are immutable after construction and all operations are pure
//! functions, so everything here is safe to share across threads.

pub mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scan modality of a [`Volume3`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "PET")]
    Pet,
    #[serde(rename = "CT")]
    Ct,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::Pet => write!(f, "PET"),
            Modality::Ct => write!(f, "CT"),
        }
    }
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("volume dims must all be >= 1, got {0:?}")]
    InvalidDims([usize; 3]),
    #[error("voxel spacing must be positive, got {0:?}")]
    InvalidSpacing([f64; 3]),
    #[error("value buffer holds {got} voxels, grid needs {want}")]
    ValueLength { got: usize, want: usize },
    #[error("volume contains non-finite values")]
    NonFinite,
    #[error("box min {min:?} must be < max {max:?} componentwise")]
    InvalidBox { min: [usize; 3], max: [usize; 3] },
    #[error("box {min:?}..{max:?} exceeds grid dims {dims:?}")]
    BoxOutOfBounds {
        min: [usize; 3],
        max: [usize; 3],
        dims: [usize; 3],
    },
    #[error("mask dims {mask:?} do not match grid dims {grid:?}")]
    MaskDimsMismatch { mask: [usize; 3], grid: [usize; 3] },
    #[error("mask is empty")]
    EmptyMask,
    #[error("annotation box is not the tight bounding box of its mask")]
    LooseBox,
    #[error("patch center {0:?} lies outside the grid")]
    CenterOutsideGrid([usize; 3]),
    #[error("patch size must be >= 1")]
    InvalidPatchSize,
    #[error("PET and CT grids disagree: {0}")]
    ModalityMismatch(String),
}

/// A dense scalar 3D grid with physical voxel spacing.
///
/// Values are stored in x-fastest order: index = x + nx*(y + ny*z).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    dims: [usize; 3],
    spacing: [f64; 3],
    modality: Modality,
    values: Vec<f32>,
}

impl Volume3 {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        modality: Modality,
        values: Vec<f32>,
    ) -> Result<Self, GridError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(GridError::InvalidDims(dims));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(GridError::InvalidSpacing(spacing));
        }
        let want = dims[0] * dims[1] * dims[2];
        if values.len() != want {
            return Err(GridError::ValueLength {
                got: values.len(),
                want,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GridError::NonFinite);
        }
        Ok(Self {
            dims,
            spacing,
            modality,
            values,
        })
    }

    pub fn constant(dims: [usize; 3], spacing: [f64; 3], modality: Modality, v: f32) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self::new(dims, spacing, modality, vec![v; n]).expect("constant volume is always valid")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn voxel_count(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.index(x, y, z)]
    }

    /// Physical position of a voxel center: (i + 0.5) * spacing, origin at 0.
    pub fn voxel_center(&self, idx: [usize; 3]) -> [f64; 3] {
        [
            (idx[0] as f64 + 0.5) * self.spacing[0],
            (idx[1] as f64 + 0.5) * self.spacing[1],
            (idx[2] as f64 + 0.5) * self.spacing[2],
        ]
    }

    /// Trilinear sample at a physical point, clamping out-of-grid samples to
    /// the nearest edge voxel.
    pub fn sample_trilinear(&self, phys: [f64; 3]) -> f64 {
        let mut i0 = [0usize; 3];
        let mut i1 = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            // continuous voxel index: center of voxel i sits at i
            let u = phys[a] / self.spacing[a] - 0.5;
            let u = u.clamp(0.0, (n - 1) as f64);
            let lo = u.floor();
            i0[a] = lo as usize;
            i1[a] = (i0[a] + 1).min(n - 1);
            frac[a] = u - lo;
        }
        let mut acc = 0.0;
        for (dz, wz) in [(0, 1.0 - frac[2]), (1, frac[2])] {
            if wz == 0.0 {
                continue;
            }
            let z = if dz == 0 { i0[2] } else { i1[2] };
            for (dy, wy) in [(0, 1.0 - frac[1]), (1, frac[1])] {
                if wy == 0.0 {
                    continue;
                }
                let y = if dy == 0 { i0[1] } else { i1[1] };
                for (dx, wx) in [(0, 1.0 - frac[0]), (1, frac[0])] {
                    if wx == 0.0 {
                        continue;
                    }
                    let x = if dx == 0 { i0[0] } else { i1[0] };
                    acc += wz * wy * wx * self.get(x, y, z) as f64;
                }
            }
        }
        acc
    }
}

/// Axis-aligned voxel box with inclusive min and exclusive max indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Box3 {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl Box3 {
    pub fn new(min: [usize; 3], max: [usize; 3]) -> Result<Self, GridError> {
        if (0..3).any(|a| min[a] >= max[a]) {
            return Err(GridError::InvalidBox { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn volume(&self) -> u64 {
        self.dims().iter().map(|&d| d as u64).product()
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] < self.max[a])
    }

    pub fn center(&self) -> [usize; 3] {
        [
            (self.min[0] + self.max[0]) / 2,
            (self.min[1] + self.max[1]) / 2,
            (self.min[2] + self.max[2]) / 2,
        ]
    }

    pub fn intersection(&self, other: &Box3) -> Option<Box3> {
        let mut min = [0usize; 3];
        let mut max = [0usize; 3];
        for a in 0..3 {
            min[a] = self.min[a].max(other.min[a]);
            max[a] = self.max[a].min(other.max[a]);
            if min[a] >= max[a] {
                return None;
            }
        }
        Some(Box3 { min, max })
    }

    pub fn fits_in(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|a| self.max[a] <= dims[a])
    }

    /// Box of given size centered on `center`, clipped against the grid.
    /// Even sizes tie toward the lower index: the center voxel maps to patch
    /// offset (size-1)/2.
    pub fn centered(center: [usize; 3], size: usize, dims: [usize; 3]) -> Option<Box3> {
        let lo = ((size - 1) / 2) as i64;
        let mut min = [0usize; 3];
        let mut max = [0usize; 3];
        for a in 0..3 {
            let c = center[a] as i64;
            let b_min = (c - lo).max(0) as usize;
            let b_max = ((c - lo + size as i64).min(dims[a] as i64)).max(0) as usize;
            if b_min >= b_max {
                return None;
            }
            min[a] = b_min;
            max[a] = b_max;
        }
        Some(Box3 { min, max })
    }
}

/// Intersection-over-union of two voxel boxes. Zero when disjoint.
pub fn iou(a: &Box3, b: &Box3) -> f64 {
    let inter = match a.intersection(b) {
        Some(i) => i.volume(),
        None => return 0.0,
    };
    let union = a.volume() + b.volume() - inter;
    inter as f64 / union as f64
}

/// Binary voxel mask over a full grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask3 {
    dims: [usize; 3],
    bits: Vec<bool>,
}

impl Mask3 {
    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            dims,
            bits: vec![false; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_bits(dims: [usize; 3], bits: Vec<bool>) -> Result<Self, GridError> {
        if bits.len() != dims[0] * dims[1] * dims[2] {
            return Err(GridError::ValueLength {
                got: bits.len(),
                want: dims[0] * dims[1] * dims[2],
            });
        }
        Ok(Self { dims, bits })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Coordinates of set voxels in x-fastest scan order.
    pub fn set_voxels(&self) -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        let mut i = 0;
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    if self.bits[i] {
                        out.push([x, y, z]);
                    }
                    i += 1;
                }
            }
        }
        out
    }

    /// Tight bounding box of the set voxels, or None if empty.
    pub fn tight_box(&self) -> Option<Box3> {
        let mut min = [usize::MAX; 3];
        let mut max = [0usize; 3];
        let mut any = false;
        let mut i = 0;
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    if self.bits[i] {
                        any = true;
                        let p = [x, y, z];
                        for a in 0..3 {
                            min[a] = min[a].min(p[a]);
                            max[a] = max[a].max(p[a] + 1);
                        }
                    }
                    i += 1;
                }
            }
        }
        if any {
            Some(Box3 { min, max })
        } else {
            None
        }
    }
}

/// One ground-truth lesion: its center voxel, tight box and full-grid mask.
#[derive(Debug, Clone)]
pub struct LesionAnnotation {
    pub center: [usize; 3],
    pub bbox: Box3,
    pub mask: Mask3,
}

impl LesionAnnotation {
    pub fn new(center: [usize; 3], mask: Mask3) -> Result<Self, GridError> {
        let bbox = mask.tight_box().ok_or(GridError::EmptyMask)?;
        Ok(Self { center, bbox, mask })
    }

    pub fn validate(&self, dims: [usize; 3]) -> Result<(), GridError> {
        if self.mask.dims() != dims {
            return Err(GridError::MaskDimsMismatch {
                mask: self.mask.dims(),
                grid: dims,
            });
        }
        let tight = self.mask.tight_box().ok_or(GridError::EmptyMask)?;
        if tight != self.bbox {
            return Err(GridError::LooseBox);
        }
        if !self.bbox.fits_in(dims) {
            return Err(GridError::BoxOutOfBounds {
                min: self.bbox.min,
                max: self.bbox.max,
                dims,
            });
        }
        Ok(())
    }
}

/// A registered PET+CT pair with ground-truth lesion annotations.
#[derive(Debug, Clone)]
pub struct MultiModalCase {
    pub id: String,
    pub ct: Volume3,
    pub pet: Volume3,
    pub annotations: Vec<LesionAnnotation>,
}

impl MultiModalCase {
    pub fn new(
        id: String,
        ct: Volume3,
        pet: Volume3,
        annotations: Vec<LesionAnnotation>,
    ) -> Result<Self, GridError> {
        if pet.dims() != ct.dims() {
            return Err(GridError::ModalityMismatch(format!(
                "dims {:?} vs {:?}",
                pet.dims(),
                ct.dims()
            )));
        }
        if pet.spacing() != ct.spacing() {
            return Err(GridError::ModalityMismatch(format!(
                "spacing {:?} vs {:?}",
                pet.spacing(),
                ct.spacing()
            )));
        }
        for ann in &annotations {
            ann.validate(ct.dims())?;
        }
        Ok(Self {
            id,
            ct,
            pet,
            annotations,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.ct.dims()
    }

    pub fn lesion_boxes(&self) -> Vec<Box3> {
        self.annotations.iter().map(|a| a.bbox).collect()
    }
}

/// Per-channel fill values used for out-of-grid voxels in patches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchFill {
    pub pet: f32,
    pub ct: f32,
}

impl Default for PatchFill {
    fn default() -> Self {
        // PET background is zero uptake; CT background is air.
        Self {
            pet: 0.0,
            ct: -1000.0,
        }
    }
}

/// A two-channel cubic sub-volume around a voxel center.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub pet: Vec<f32>,
    pub ct: Vec<f32>,
    pub center: [usize; 3],
    pub padded_fraction: f64,
    pub fill: PatchFill,
}

impl Patch {
    /// Conventional full-scale patch edge; desk-scale runs configure smaller.
    pub const DEFAULT_SIZE: usize = 96;

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.size * (y + self.size * z)
    }

    pub fn voxel_count(&self) -> usize {
        self.size * self.size * self.size
    }
}

/// Extract a cubic two-channel patch centered on `center`.
///
/// Even sizes tie toward the lower index: the center voxel lands at patch
/// offset (size-1)/2. Out-of-grid voxels take the per-channel fill value and
/// are counted in `padded_fraction`.
pub fn extract_patch(
    case: &MultiModalCase,
    center: [usize; 3],
    size: usize,
    fill: PatchFill,
) -> Result<Patch, GridError> {
    if size == 0 {
        return Err(GridError::InvalidPatchSize);
    }
    let dims = case.dims();
    if (0..3).any(|a| center[a] >= dims[a]) {
        return Err(GridError::CenterOutsideGrid(center));
    }
    let lo = ((size - 1) / 2) as i64;
    let n = size * size * size;
    let mut pet = vec![0f32; n];
    let mut ct = vec![0f32; n];
    let mut padded = 0usize;
    let mut i = 0;
    for pz in 0..size {
        let sz = center[2] as i64 + pz as i64 - lo;
        for py in 0..size {
            let sy = center[1] as i64 + py as i64 - lo;
            for px in 0..size {
                let sx = center[0] as i64 + px as i64 - lo;
                let inside = sx >= 0
                    && sy >= 0
                    && sz >= 0
                    && (sx as usize) < dims[0]
                    && (sy as usize) < dims[1]
                    && (sz as usize) < dims[2];
                if inside {
                    let (x, y, z) = (sx as usize, sy as usize, sz as usize);
                    pet[i] = case.pet.get(x, y, z);
                    ct[i] = case.ct.get(x, y, z);
                } else {
                    pet[i] = fill.pet;
                    ct[i] = fill.ct;
                    padded += 1;
                }
                i += 1;
            }
        }
    }
    Ok(Patch {
        size,
        pet,
        ct,
        center,
        padded_fraction: padded as f64 / n as f64,
        fill,
    })
}

/// Resample a volume onto a new grid by trilinear interpolation at the
/// target voxel centers, mapped through physical coordinates. Out-of-grid
/// samples clamp to the nearest edge voxel.
pub fn resample_trilinear(
    src: &Volume3,
    target_dims: [usize; 3],
    target_spacing: [f64; 3],
) -> Result<Volume3, GridError> {
    if target_dims.iter().any(|&d| d == 0) {
        return Err(GridError::InvalidDims(target_dims));
    }
    if target_spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(GridError::InvalidSpacing(target_spacing));
    }
    if src.values().iter().any(|v| !v.is_finite()) {
        return Err(GridError::NonFinite);
    }
    let n = target_dims[0] * target_dims[1] * target_dims[2];
    let mut values = vec![0f32; n];
    let mut i = 0;
    for z in 0..target_dims[2] {
        let pz = (z as f64 + 0.5) * target_spacing[2];
        for y in 0..target_dims[1] {
            let py = (y as f64 + 0.5) * target_spacing[1];
            for x in 0..target_dims[0] {
                let px = (x as f64 + 0.5) * target_spacing[0];
                values[i] = src.sample_trilinear([px, py, pz]) as f32;
                i += 1;
            }
        }
    }
    Volume3::new(target_dims, target_spacing, src.modality(), values)
}
