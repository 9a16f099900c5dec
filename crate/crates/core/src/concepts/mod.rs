//! Adaptive-threshold segmentation and native extraction of the
//! human-interpretable concept features used for explanations.
//!
//! The registry is fixed: shape (volume, sphericity), ten first-order
//! statistics, and the GLCM / GLRLM / GLSZM / GLDM texture families, each
//! computed on PET and on CT within the same PET-derived mask. All entropies
//! use log base 2 with 0*log0 = 0.

pub mod firstorder;
pub mod shape;
pub mod texture;

use crate::volgrid::{Box3, Mask3, Volume3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("ROI is empty or outside the grid")]
    BadRoi,
    #[error("ROI contains non-finite values")]
    NonFinite,
    #[error("mask is empty")]
    EmptyMask,
    #[error("no valid voxel pairs in any direction")]
    NoPairs,
    #[error("fraction must lie in (0,1), got {0}")]
    BadFraction(f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DiscretizationSpec {
    pub bin_count: u32,
}

impl Default for DiscretizationSpec {
    fn default() -> Self {
        Self { bin_count: 32 }
    }
}

/// Which image a concept is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConceptModality {
    #[serde(rename = "PET")]
    Pet,
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "SHAPE")]
    Shape,
}

impl std::fmt::Display for ConceptModality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConceptModality::Pet => write!(f, "PET"),
            ConceptModality::Ct => write!(f, "CT"),
            ConceptModality::Shape => write!(f, "SHAPE"),
        }
    }
}

/// One named concept value; failed features carry a reason instead of a
/// number and are excluded from downstream ranking, never zeroed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub name: String,
    pub modality: ConceptModality,
    pub value: Option<f64>,
    pub flag: Option<String>,
}

impl ConceptEntry {
    fn ok(name: &str, modality: ConceptModality, value: f64) -> Self {
        Self {
            name: name.to_string(),
            modality,
            value: Some(value),
            flag: None,
        }
    }

    fn failed(name: &str, modality: ConceptModality, reason: &str) -> Self {
        Self {
            name: name.to_string(),
            modality,
            value: None,
            flag: Some(reason.to_string()),
        }
    }
}

/// Ordered concept values for one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptVector {
    pub source_id: String,
    pub entries: Vec<ConceptEntry>,
}

/// Fixed registry: (name, modality) in serialization order.
pub fn registry() -> Vec<(String, ConceptModality)> {
    let mut out = Vec::with_capacity(48);
    out.push(("Shape VoxelVolume".to_string(), ConceptModality::Shape));
    out.push(("Shape Sphericity".to_string(), ConceptModality::Shape));
    for (prefix, modality) in [("PET", ConceptModality::Pet), ("CT", ConceptModality::Ct)] {
        for f in [
            "Firstorder Mean",
            "Firstorder Median",
            "Firstorder Maximum",
            "Firstorder Minimum",
            "Firstorder Range",
            "Firstorder Entropy",
            "Firstorder MeanAbsoluteDeviation",
            "Firstorder RootMeanSquared",
            "Firstorder 10Percentile",
            "Firstorder 90Percentile",
            "GLCM JointAverage",
            "GLCM SumAverage",
            "GLCM SumEntropy",
            "GLCM DifferenceAverage",
            "GLCM DifferenceEntropy",
            "GLCM MCC",
            "GLRLM RunEntropy",
            "GLRLM RunLengthNonUniformityNormalized",
            "GLSZM SizeZoneNonUniformity",
            "GLSZM SizeZoneNonUniformityNormalized",
            "GLSZM ZoneEntropy",
            "GLDM SmallDependenceEmphasis",
            "GLDM DependenceEntropy",
        ] {
            out.push((format!("{prefix} {f}"), modality));
        }
    }
    out
}

/// Entropy helper: -sum p log2 p with 0*log0 = 0, over already-normalized
/// probabilities.
pub(crate) fn entropy_bits(probs: impl Iterator<Item = f64>) -> f64 {
    let mut h = 0.0;
    for p in probs {
        if p > 0.0 {
            h -= p * p.log2();
        }
    }
    h
}

/// Gray-level labels 1..=Nb over masked voxels, 0 outside the mask.
#[derive(Debug, Clone)]
pub struct Labels {
    pub dims: [usize; 3],
    pub labels: Vec<u32>,
    pub bin_count: u32,
}

impl Labels {
    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.labels[x + self.dims[0] * (y + self.dims[1] * z)]
    }
}

/// Discretize masked voxels into `bin_count` gray levels:
/// bin = floor(Nb * (x - min) / (max - min)) + 1, clamped to [1, Nb];
/// constant regions map to bin 1.
pub fn discretize(vol: &Volume3, mask: &Mask3, spec: &DiscretizationSpec) -> Result<Labels, ConceptError> {
    if mask.is_empty() {
        return Err(ConceptError::EmptyMask);
    }
    let nb = spec.bin_count.max(2);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, &m) in mask.bits().iter().enumerate() {
        if m {
            let v = vol.values()[i] as f64;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let mut labels = vec![0u32; vol.voxel_count()];
    let span = hi - lo;
    for (i, &m) in mask.bits().iter().enumerate() {
        if !m {
            continue;
        }
        let v = vol.values()[i] as f64;
        let bin = if span <= 0.0 {
            1
        } else {
            let b = ((nb as f64) * (v - lo) / span).floor() as i64 + 1;
            b.clamp(1, nb as i64) as u32
        };
        labels[i] = bin;
    }
    Ok(Labels {
        dims: vol.dims(),
        labels,
        bin_count: nb,
    })
}

/// Voxels in `roi` at or above `fraction` of the ROI maximum, reduced to the
/// largest 26-connected component. Nonempty by construction (the argmax voxel
/// always qualifies). A constant ROI selects the whole ROI.
pub fn segment_adaptive(pet: &Volume3, roi: &Box3, fraction: f64) -> Result<Mask3, ConceptError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ConceptError::BadFraction(fraction));
    }
    if !roi.fits_in(pet.dims()) {
        return Err(ConceptError::BadRoi);
    }
    let mut max = f64::NEG_INFINITY;
    for z in roi.min[2]..roi.max[2] {
        for y in roi.min[1]..roi.max[1] {
            for x in roi.min[0]..roi.max[0] {
                let v = pet.get(x, y, z) as f64;
                if !v.is_finite() {
                    return Err(ConceptError::NonFinite);
                }
                max = max.max(v);
            }
        }
    }
    let level = fraction * max;
    let mut mask = Mask3::empty(pet.dims());
    for z in roi.min[2]..roi.max[2] {
        for y in roi.min[1]..roi.max[1] {
            for x in roi.min[0]..roi.max[0] {
                if pet.get(x, y, z) as f64 >= level {
                    mask.set(x, y, z, true);
                }
            }
        }
    }
    Ok(largest_component_26(&mask))
}

/// 26-neighborhood offsets.
pub(crate) const NEIGHBORS_26: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut i = 0;
    let mut dz = -1i64;
    while dz <= 1 {
        let mut dy = -1i64;
        while dy <= 1 {
            let mut dx = -1i64;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[i] = [dx, dy, dz];
                    i += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

/// Keep only the largest 26-connected component (ties broken by the first
/// component reached in scan order).
pub fn largest_component_26(mask: &Mask3) -> Mask3 {
    let dims = mask.dims();
    let n = mask.bits().len();
    let mut comp = vec![0u32; n];
    let mut next = 0u32;
    let mut best_id = 0u32;
    let mut best_size = 0usize;
    let mut stack = Vec::new();
    let flat = |x: usize, y: usize, z: usize| x + dims[0] * (y + dims[1] * z);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = flat(x, y, z);
                if !mask.bits()[i] || comp[i] != 0 {
                    continue;
                }
                next += 1;
                let id = next;
                let mut size = 0usize;
                comp[i] = id;
                stack.push([x, y, z]);
                while let Some(p) = stack.pop() {
                    size += 1;
                    for d in NEIGHBORS_26 {
                        let q = [
                            p[0] as i64 + d[0],
                            p[1] as i64 + d[1],
                            p[2] as i64 + d[2],
                        ];
                        if q.iter().zip(dims.iter()).any(|(&c, &n)| c < 0 || c >= n as i64) {
                            continue;
                        }
                        let (qx, qy, qz) = (q[0] as usize, q[1] as usize, q[2] as usize);
                        let j = flat(qx, qy, qz);
                        if mask.bits()[j] && comp[j] == 0 {
                            comp[j] = id;
                            stack.push([qx, qy, qz]);
                        }
                    }
                }
                if size > best_size {
                    best_size = size;
                    best_id = id;
                }
            }
        }
    }
    let bits = comp.iter().map(|&c| c != 0 && c == best_id).collect();
    Mask3::from_bits(dims, bits).expect("component mask keeps grid dims")
}

fn push_family<T, F>(
    entries: &mut Vec<ConceptEntry>,
    prefix: &str,
    modality: ConceptModality,
    result: &Result<T, ConceptError>,
    fields: &[(&str, F)],
) where
    F: Fn(&T) -> f64,
{
    match result {
        Ok(v) => {
            for (name, get) in fields {
                entries.push(ConceptEntry::ok(&format!("{prefix} {name}"), modality, get(v)));
            }
        }
        Err(e) => {
            let reason = e.to_string();
            for (name, _) in fields {
                entries.push(ConceptEntry::failed(
                    &format!("{prefix} {name}"),
                    modality,
                    &reason,
                ));
            }
        }
    }
}

fn modality_entries(
    entries: &mut Vec<ConceptEntry>,
    prefix: &str,
    modality: ConceptModality,
    vol: &Volume3,
    mask: &Mask3,
    disc: &DiscretizationSpec,
) {
    let fo = firstorder::firstorder_features(vol, mask, disc);
    push_family(
        entries,
        prefix,
        modality,
        &fo,
        &[
            ("Firstorder Mean", (|f: &firstorder::FirstOrderFeatures| f.mean) as fn(&_) -> f64),
            ("Firstorder Median", |f| f.median),
            ("Firstorder Maximum", |f| f.maximum),
            ("Firstorder Minimum", |f| f.minimum),
            ("Firstorder Range", |f| f.range),
            ("Firstorder Entropy", |f| f.entropy),
            ("Firstorder MeanAbsoluteDeviation", |f| f.mean_absolute_deviation),
            ("Firstorder RootMeanSquared", |f| f.root_mean_squared),
            ("Firstorder 10Percentile", |f| f.p10),
            ("Firstorder 90Percentile", |f| f.p90),
        ],
    );
    let labels = match discretize(vol, mask, disc) {
        Ok(l) => l,
        Err(e) => {
            let reason = e.to_string();
            for f in [
                "GLCM JointAverage",
                "GLCM SumAverage",
                "GLCM SumEntropy",
                "GLCM DifferenceAverage",
                "GLCM DifferenceEntropy",
                "GLCM MCC",
                "GLRLM RunEntropy",
                "GLRLM RunLengthNonUniformityNormalized",
                "GLSZM SizeZoneNonUniformity",
                "GLSZM SizeZoneNonUniformityNormalized",
                "GLSZM ZoneEntropy",
                "GLDM SmallDependenceEmphasis",
                "GLDM DependenceEntropy",
            ] {
                entries.push(ConceptEntry::failed(&format!("{prefix} {f}"), modality, &reason));
            }
            return;
        }
    };
    let glcm = texture::glcm_features(&labels);
    push_family(
        entries,
        prefix,
        modality,
        &glcm,
        &[
            ("GLCM JointAverage", (|f: &texture::GlcmFeatures| f.joint_average) as fn(&_) -> f64),
            ("GLCM SumAverage", |f| f.sum_average),
            ("GLCM SumEntropy", |f| f.sum_entropy),
            ("GLCM DifferenceAverage", |f| f.difference_average),
            ("GLCM DifferenceEntropy", |f| f.difference_entropy),
            ("GLCM MCC", |f| f.mcc),
        ],
    );
    let glrlm = texture::glrlm_features(&labels);
    push_family(
        entries,
        prefix,
        modality,
        &glrlm,
        &[
            ("GLRLM RunEntropy", (|f: &texture::GlrlmFeatures| f.run_entropy) as fn(&_) -> f64),
            ("GLRLM RunLengthNonUniformityNormalized", |f| {
                f.run_length_non_uniformity_normalized
            }),
        ],
    );
    let glszm = texture::glszm_features(&labels);
    push_family(
        entries,
        prefix,
        modality,
        &glszm,
        &[
            (
                "GLSZM SizeZoneNonUniformity",
                (|f: &texture::GlszmFeatures| f.size_zone_non_uniformity) as fn(&_) -> f64,
            ),
            ("GLSZM SizeZoneNonUniformityNormalized", |f| {
                f.size_zone_non_uniformity_normalized
            }),
            ("GLSZM ZoneEntropy", |f| f.zone_entropy),
        ],
    );
    let gldm = texture::gldm_features(&labels);
    push_family(
        entries,
        prefix,
        modality,
        &gldm,
        &[
            (
                "GLDM SmallDependenceEmphasis",
                (|f: &texture::GldmFeatures| f.small_dependence_emphasis) as fn(&_) -> f64,
            ),
            ("GLDM DependenceEntropy", |f| f.dependence_entropy),
        ],
    );
}

/// Evaluate the full registry on one sample: shape on the mask, then every
/// first-order and texture feature on PET and on CT within the same
/// PET-derived mask.
pub fn extract_concepts(
    pet: &Volume3,
    ct: &Volume3,
    pet_mask: &Mask3,
    disc: &DiscretizationSpec,
    source_id: &str,
) -> Result<ConceptVector, ConceptError> {
    if pet_mask.is_empty() {
        return Err(ConceptError::EmptyMask);
    }
    let mut entries = Vec::with_capacity(48);
    let sh = shape::shape_features(pet_mask, pet.spacing());
    push_family(
        &mut entries,
        "Shape",
        ConceptModality::Shape,
        &sh,
        &[
            ("VoxelVolume", (|f: &shape::ShapeFeatures| f.voxel_volume) as fn(&_) -> f64),
            ("Sphericity", |f| f.sphericity),
        ],
    );
    modality_entries(&mut entries, "PET", ConceptModality::Pet, pet, pet_mask, disc);
    modality_entries(&mut entries, "CT", ConceptModality::Ct, ct, pet_mask, disc);
    debug_assert_eq!(entries.len(), registry().len());
    Ok(ConceptVector {
        source_id: source_id.to_string(),
        entries,
    })
}

/// Concept values for a set of samples aligned with a target score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptMatrix {
    pub names: Vec<String>,
    pub modalities: Vec<ConceptModality>,
    pub sample_ids: Vec<String>,
    /// rows[i][j] = value of concept j for sample i; None = flagged.
    pub rows: Vec<Vec<Option<f64>>>,
    pub target: Vec<f64>,
}

impl ConceptMatrix {
    pub fn from_vectors(vectors: &[ConceptVector], targets: &[f64]) -> Self {
        assert_eq!(vectors.len(), targets.len(), "one target per sample");
        let reg = registry();
        let names: Vec<String> = reg.iter().map(|(n, _)| n.clone()).collect();
        let modalities: Vec<ConceptModality> = reg.iter().map(|(_, m)| *m).collect();
        let rows = vectors
            .iter()
            .map(|v| {
                assert_eq!(v.entries.len(), names.len(), "registry order is fixed");
                v.entries.iter().map(|e| e.value).collect()
            })
            .collect();
        Self {
            names,
            modalities,
            sample_ids: vectors.iter().map(|v| v.source_id.clone()).collect(),
            rows,
            target: targets.to_vec(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    /// Column j, or None if any sample is flagged for it.
    pub fn column(&self, j: usize) -> Option<Vec<f64>> {
        let mut col = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            col.push(row[j]?);
        }
        Some(col)
    }

    /// CSV with a `sample_id` and `target` column followed by every concept;
    /// flagged cells are left empty. Ordering is identical across runs.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("sample_id,target");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&self.sample_ids[i]);
            out.push(',');
            out.push_str(&format!("{}", self.target[i]));
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push('\n');
        }
        out
    }
}
