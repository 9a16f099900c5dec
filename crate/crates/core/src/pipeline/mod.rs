//! Two-stage detect-then-filter pipeline: a sliding-window proposal detector
//! emitting fixed-size boxes with sigmoid confidence scores, non-maximum
//! suppression, patch-classifier false-positive filtering and operating
//! point selection.

use crate::evalx::match_detections;
use crate::neuralnet::{Model, NetError};
use crate::volgrid::{
    extract_patch, iou, Box3, GridError, MultiModalCase, Patch, PatchFill,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scorer expects {expected}^3 windows, requested {got}")]
    WindowMismatch { expected: usize, got: usize },
    #[error("detection lacks a stage-2 posterior; run classify_detections first")]
    MissingPosterior,
    #[error("cohort has no detections to threshold")]
    NoScores,
    #[error("no ground-truth lesions; sensitivity is undefined")]
    NoLesions,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// One detection proposal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: Box3,
    pub confidence: f64,
    pub patch_center: [usize; 3],
    pub stage2_posterior: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "detector")]
    Detector,
    #[serde(rename = "classifier")]
    Classifier,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Detector => write!(f, "detector"),
            Stage::Classifier => write!(f, "classifier"),
        }
    }
}

/// A confidence threshold with its achieved cohort metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub stage: Stage,
    pub threshold: f64,
    pub sensitivity: f64,
    pub fp_per_patient: f64,
    /// False when the target sensitivity was unreachable and the minimal
    /// threshold was reported instead.
    pub reachable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectParams {
    /// Cube edge of the scoring window and of the emitted boxes, voxels.
    pub window: usize,
    /// Lattice stride of the sliding window, voxels.
    pub stride: usize,
    /// Minimum sigmoid score for a local maximum to become a proposal.
    pub score_threshold: f64,
    /// IoU threshold for non-maximum suppression.
    pub nms_iou: f64,
    pub fill: PatchFill,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            window: 8,
            stride: 3,
            score_threshold: 0.2,
            nms_iou: 0.25,
            fill: PatchFill::default(),
        }
    }
}

/// Sliding-window detection: score every lattice window with the sigmoid of
/// the scorer logit, keep lattice-local maxima above the score threshold as
/// fixed-size boxes centered on the maximum, then apply NMS.
pub fn detect(
    case: &MultiModalCase,
    scorer: &Model,
    params: &DetectParams,
) -> Result<Vec<Detection>, PipelineError> {
    if scorer.spec.patch_size != params.window {
        return Err(PipelineError::WindowMismatch {
            expected: scorer.spec.patch_size,
            got: params.window,
        });
    }
    let dims = case.dims();
    let lattice: [Vec<usize>; 3] = [
        (0..dims[0]).step_by(params.stride).collect(),
        (0..dims[1]).step_by(params.stride).collect(),
        (0..dims[2]).step_by(params.stride).collect(),
    ];
    let ld = [lattice[0].len(), lattice[1].len(), lattice[2].len()];
    let mut centers = Vec::with_capacity(ld[0] * ld[1] * ld[2]);
    for &z in &lattice[2] {
        for &y in &lattice[1] {
            for &x in &lattice[0] {
                centers.push([x, y, z]);
            }
        }
    }
    let scores: Vec<f64> = centers
        .par_iter()
        .map(|&c| {
            let patch = extract_patch(case, c, params.window, params.fill)?;
            let logits = scorer.logits(&patch)?;
            Ok(crate::neuralnet::sigmoid(logits[0]))
        })
        .collect::<Result<_, PipelineError>>()?;

    let at = |i: usize, j: usize, k: usize| scores[i + ld[0] * (j + ld[1] * k)];
    let mut candidates = Vec::new();
    for k in 0..ld[2] {
        for j in 0..ld[1] {
            for i in 0..ld[0] {
                let s = at(i, j, k);
                if s < params.score_threshold {
                    continue;
                }
                // local maximum over the lattice neighborhood; score ties
                // (saturated plateaus) keep only the scan-order-first cell
                let mut is_max = true;
                'nb: for dk in -1i64..=1 {
                    for dj in -1i64..=1 {
                        for di in -1i64..=1 {
                            if di == 0 && dj == 0 && dk == 0 {
                                continue;
                            }
                            let (qi, qj, qk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                            if qi < 0
                                || qj < 0
                                || qk < 0
                                || qi >= ld[0] as i64
                                || qj >= ld[1] as i64
                                || qk >= ld[2] as i64
                            {
                                continue;
                            }
                            let q = at(qi as usize, qj as usize, qk as usize);
                            let precedes = (qk, qj, qi) < (k as i64, j as i64, i as i64);
                            if q > s || (q == s && precedes) {
                                is_max = false;
                                break 'nb;
                            }
                        }
                    }
                }
                if !is_max {
                    continue;
                }
                let center = centers[i + ld[0] * (j + ld[1] * k)];
                if let Some(bbox) = Box3::centered(center, params.window, dims) {
                    candidates.push(Detection {
                        bbox,
                        confidence: s,
                        patch_center: center,
                        stage2_posterior: None,
                    });
                }
            }
        }
    }
    Ok(nms(candidates, params.nms_iou))
}

/// Greedy non-maximum suppression by descending confidence; ties break by
/// the lexicographic box min corner. Output keeps that order.
pub fn nms(detections: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    let order = crate::evalx::detection_order(&detections);
    let mut kept: Vec<Detection> = Vec::new();
    for &i in &order {
        let det = &detections[i];
        if kept.iter().all(|k| iou(&k.bbox, &det.bbox) < iou_threshold) {
            kept.push(det.clone());
        }
    }
    kept
}

/// Annotate each detection with the classifier posterior of the patch at its
/// center. Order is preserved.
pub fn classify_detections(
    case: &MultiModalCase,
    detections: Vec<Detection>,
    classifier: &Model,
    patch_size: usize,
    fill: PatchFill,
) -> Result<Vec<Detection>, PipelineError> {
    detections
        .into_iter()
        .map(|mut det| {
            let patch = extract_patch(case, det.patch_center, patch_size, fill)?;
            det.stage2_posterior = Some(classifier.predict_posterior(&patch)?);
            Ok(det)
        })
        .collect()
}

/// Which score a threshold applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreField {
    Confidence,
    Posterior,
}

fn score_of(det: &Detection, field: ScoreField) -> Result<f64, PipelineError> {
    match field {
        ScoreField::Confidence => Ok(det.confidence),
        ScoreField::Posterior => det.stage2_posterior.ok_or(PipelineError::MissingPosterior),
    }
}

/// The largest threshold whose resulting cohort sensitivity is at least the
/// target; if the target is unreachable, the minimal-threshold point is
/// returned with `reachable: false`.
pub fn threshold_at_sensitivity(
    cohort: &[(Vec<Detection>, Vec<Box3>)],
    iou_threshold: f64,
    target_sensitivity: f64,
    field: ScoreField,
    stage: Stage,
) -> Result<OperatingPoint, PipelineError> {
    let n_lesions: usize = cohort.iter().map(|(_, l)| l.len()).sum();
    if n_lesions == 0 {
        return Err(PipelineError::NoLesions);
    }
    let mut thresholds: Vec<f64> = Vec::new();
    for (dets, _) in cohort {
        for d in dets {
            thresholds.push(score_of(d, field)?);
        }
    }
    if thresholds.is_empty() {
        return Err(PipelineError::NoScores);
    }
    thresholds.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    thresholds.dedup();

    let metrics_at = |threshold: f64| -> Result<(f64, f64), PipelineError> {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (idx, (dets, lesions)) in cohort.iter().enumerate() {
            let mut kept = Vec::new();
            for d in dets {
                if score_of(d, field)? >= threshold {
                    kept.push(d.clone());
                }
            }
            let m = match_detections(&format!("case{idx}"), &kept, lesions, iou_threshold);
            tp += m.tp_count();
            fp += m.fp.len();
        }
        Ok((
            tp as f64 / n_lesions as f64,
            fp as f64 / cohort.len() as f64,
        ))
    };

    for &threshold in &thresholds {
        let (sensitivity, fp_per_patient) = metrics_at(threshold)?;
        if sensitivity >= target_sensitivity {
            return Ok(OperatingPoint {
                stage,
                threshold,
                sensitivity,
                fp_per_patient,
                reachable: true,
            });
        }
    }
    let threshold = *thresholds.last().expect("nonempty");
    let (sensitivity, fp_per_patient) = metrics_at(threshold)?;
    Ok(OperatingPoint {
        stage,
        threshold,
        sensitivity,
        fp_per_patient,
        reachable: false,
    })
}

/// Training-set assembly for the detector scorer: positive windows at lesion
/// centers (plus jittered copies), negative windows at PET-cold,
/// lesion-disjoint locations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorSampleParams {
    pub window: usize,
    /// Max absolute voxel jitter per axis for extra positive crops.
    pub jitter: usize,
    pub jittered_per_lesion: usize,
    pub negatives_per_case: usize,
    /// Candidate negative windows must stay below this PET maximum, keeping
    /// distractors out of the negative class.
    pub neg_uptake_ceiling: f64,
    pub fill: PatchFill,
    pub seed: u64,
}

impl Default for DetectorSampleParams {
    fn default() -> Self {
        Self {
            window: 8,
            jitter: 1,
            jittered_per_lesion: 2,
            negatives_per_case: 10,
            neg_uptake_ceiling: 1.5,
            fill: PatchFill::default(),
            seed: 0,
        }
    }
}

fn clamp_jitter(center: [usize; 3], d: [i64; 3], dims: [usize; 3]) -> [usize; 3] {
    let mut out = [0usize; 3];
    for a in 0..3 {
        out[a] = (center[a] as i64 + d[a]).clamp(0, dims[a] as i64 - 1) as usize;
    }
    out
}

pub fn build_detector_samples(
    cases: &[MultiModalCase],
    params: &DetectorSampleParams,
) -> Result<Vec<crate::neuralnet::train::LabeledSample>, PipelineError> {
    use crate::neuralnet::train::LabeledSample;
    let mut out = Vec::new();
    for (ci, case) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(ci as u64);
        let dims = case.dims();
        for ann in &case.annotations {
            let patch = extract_patch(case, ann.center, params.window, params.fill)?;
            out.push(LabeledSample { patch, label: 1 });
            for _ in 0..params.jittered_per_lesion {
                let j = params.jitter as i64;
                let d = [
                    rng.random_range(-j..=j),
                    rng.random_range(-j..=j),
                    rng.random_range(-j..=j),
                ];
                let c = clamp_jitter(ann.center, d, dims);
                let patch = extract_patch(case, c, params.window, params.fill)?;
                out.push(LabeledSample { patch, label: 1 });
            }
        }
        let lesion_boxes = case.lesion_boxes();
        let mut placed = 0;
        let mut attempts = 0;
        while placed < params.negatives_per_case && attempts < params.negatives_per_case * 100 {
            attempts += 1;
            let c = [
                rng.random_range(0..dims[0]),
                rng.random_range(0..dims[1]),
                rng.random_range(0..dims[2]),
            ];
            let Some(bbox) = Box3::centered(c, params.window, dims) else {
                continue;
            };
            if lesion_boxes.iter().any(|l| iou(&bbox, l) > 0.0) {
                continue;
            }
            let mut max_pet = f64::NEG_INFINITY;
            for z in bbox.min[2]..bbox.max[2] {
                for y in bbox.min[1]..bbox.max[1] {
                    for x in bbox.min[0]..bbox.max[0] {
                        max_pet = max_pet.max(case.pet.get(x, y, z) as f64);
                    }
                }
            }
            if max_pet >= params.neg_uptake_ceiling {
                continue;
            }
            let patch = extract_patch(case, c, params.window, params.fill)?;
            out.push(LabeledSample { patch, label: 0 });
            placed += 1;
        }
    }
    Ok(out)
}

/// Training-set assembly for the false-positive filter: stage-1 detections
/// labeled by IoU matching against ground truth, plus every ground-truth
/// lesion center as an extra positive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierSampleParams {
    pub patch_size: usize,
    pub iou_threshold: f64,
    pub fill: PatchFill,
}

pub fn build_classifier_samples(
    cases: &[MultiModalCase],
    detections_per_case: &[Vec<Detection>],
    params: &ClassifierSampleParams,
) -> Result<Vec<crate::neuralnet::train::LabeledSample>, PipelineError> {
    use crate::neuralnet::train::LabeledSample;
    assert_eq!(cases.len(), detections_per_case.len());
    let mut out = Vec::new();
    for (case, dets) in cases.iter().zip(detections_per_case.iter()) {
        let lesions = case.lesion_boxes();
        let m = match_detections(&case.id, dets, &lesions, params.iou_threshold);
        let mut label = vec![0usize; dets.len()];
        for &(di, _) in &m.tp {
            label[di] = 1;
        }
        for (di, det) in dets.iter().enumerate() {
            let patch = extract_patch(case, det.patch_center, params.patch_size, params.fill)?;
            out.push(LabeledSample {
                patch,
                label: label[di],
            });
        }
        for ann in &case.annotations {
            let patch = extract_patch(case, ann.center, params.patch_size, params.fill)?;
            out.push(LabeledSample { patch, label: 1 });
        }
    }
    Ok(out)
}

/// Window-sized patch at each detection center, for explanation passes.
pub fn detection_patches(
    case: &MultiModalCase,
    detections: &[Detection],
    size: usize,
    fill: PatchFill,
) -> Result<Vec<Patch>, PipelineError> {
    detections
        .iter()
        .map(|d| Ok(extract_patch(case, d.patch_center, size, fill)?))
        .collect()
}

#[cfg(test)]
mod tests;
