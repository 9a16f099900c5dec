//! Detection-to-lesion matching, FROC and ROC curves, false-positive
//! reduction reporting and post-hoc false-negative analysis.

use crate::neuralnet::{Model, NetError};
use crate::pipeline::Detection;
use crate::volgrid::{extract_patch, Box3, GridError, MultiModalCase, PatchFill};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ground-truth lesions in the cohort; sensitivity is undefined")]
    NoLesions,
    #[error("ROC needs both classes present")]
    SingleClass,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Per-patient matching outcome at a fixed IoU threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchResult {
    pub case_id: String,
    /// (detection index, lesion index) pairs.
    pub tp: Vec<(usize, usize)>,
    /// Unmatched detection indices.
    pub fp: Vec<usize>,
    /// Unmatched lesion indices.
    pub fn_lesions: Vec<usize>,
    pub iou_threshold: f64,
}

impl MatchResult {
    pub fn tp_count(&self) -> usize {
        self.tp.len()
    }
}

/// Deterministic processing order: confidence descending, ties by the
/// lexicographic box min corner.
pub(crate) fn detection_order(detections: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&detections[a], &detections[b]);
        db.confidence
            .partial_cmp(&da.confidence)
            .expect("finite confidences")
            .then_with(|| da.bbox.min.cmp(&db.bbox.min))
    });
    order
}

/// Greedy matching in descending confidence: each detection takes the
/// unmatched lesion of highest IoU at or above the threshold; ties go to the
/// lowest lesion index. Each lesion matches at most once.
pub fn match_detections(
    case_id: &str,
    detections: &[Detection],
    lesions: &[Box3],
    iou_threshold: f64,
) -> MatchResult {
    let mut taken = vec![false; lesions.len()];
    let mut tp = Vec::new();
    let mut fp = Vec::new();
    for &di in &detection_order(detections) {
        let det = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (li, lesion) in lesions.iter().enumerate() {
            if taken[li] {
                continue;
            }
            let overlap = crate::volgrid::iou(&det.bbox, lesion);
            if overlap >= iou_threshold {
                let better = match best {
                    None => true,
                    Some((_, b)) => overlap > b,
                };
                if better {
                    best = Some((li, overlap));
                }
            }
        }
        match best {
            Some((li, _)) => {
                taken[li] = true;
                tp.push((di, li));
            }
            None => fp.push(di),
        }
    }
    let fn_lesions = (0..lesions.len()).filter(|&l| !taken[l]).collect();
    MatchResult {
        case_id: case_id.to_string(),
        tp,
        fp,
        fn_lesions,
        iou_threshold,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrocPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub fp_per_patient: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrocCurve {
    pub points: Vec<FrocPoint>,
    pub iou_threshold: f64,
    pub n_lesions: usize,
    pub n_patients: usize,
}

impl FrocCurve {
    /// Highest sensitivity available at or under an FP/patient budget.
    pub fn sensitivity_at_fp_budget(&self, max_fp_per_patient: f64) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.fp_per_patient <= max_fp_per_patient)
            .map(|p| p.sensitivity)
            .fold(None, |acc, s| Some(acc.map_or(s, |a: f64| a.max(s))))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,sensitivity,fp_per_patient\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{}\n",
                p.threshold, p.sensitivity, p.fp_per_patient
            ));
        }
        out
    }
}

/// FROC over a cohort: sweep the distinct confidence values; at each
/// threshold sensitivity = cohort TP / cohort lesions and FP/patient =
/// cohort FP / patient count.
///
/// Greedy matching processes detections in descending confidence, so the
/// matching outcome of a confidence-threshold subset is exactly the prefix
/// of the full greedy run; one matching pass per patient suffices.
pub fn froc(
    cases: &[(Vec<Detection>, Vec<Box3>)],
    iou_threshold: f64,
) -> Result<FrocCurve, EvalError> {
    let n_lesions: usize = cases.iter().map(|(_, l)| l.len()).sum();
    if n_lesions == 0 {
        return Err(EvalError::NoLesions);
    }
    let n_patients = cases.len();
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for (idx, (dets, lesions)) in cases.iter().enumerate() {
        let m = match_detections(&format!("case{idx}"), dets, lesions, iou_threshold);
        let mut is_tp = vec![false; dets.len()];
        for &(di, _) in &m.tp {
            is_tp[di] = true;
        }
        for (di, det) in dets.iter().enumerate() {
            scored.push((det.confidence, is_tp[di]));
        }
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite confidences"));
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(FrocPoint {
            threshold,
            sensitivity: tp as f64 / n_lesions as f64,
            fp_per_patient: fp as f64 / n_patients as f64,
        });
    }
    points.reverse(); // ascending threshold
    Ok(FrocCurve {
        points,
        iou_threshold,
        n_lesions,
        n_patients,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.fpr, p.tpr));
        }
        out
    }
}

/// ROC by threshold sweep with tie grouping, trapezoidal AUC.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve, EvalError> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().cloned().zip(labels.iter().cloned()).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < pairs.len() {
        let threshold = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == threshold {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0;
    }
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpReductionReport {
    pub fp_before: usize,
    pub fp_after: usize,
    pub removed: usize,
    pub percent: f64,
    pub tp_preserved: bool,
    pub fp_per_patient_after: f64,
    pub n_patients: usize,
}

/// Arithmetic report comparing the matching outcome before and after the
/// second-stage filter on the same cohort.
pub fn fp_reduction_report(stage1: &[MatchResult], stage2: &[MatchResult]) -> FpReductionReport {
    let fp_before: usize = stage1.iter().map(|m| m.fp.len()).sum();
    let fp_after: usize = stage2.iter().map(|m| m.fp.len()).sum();
    let tp_before: usize = stage1.iter().map(|m| m.tp_count()).sum();
    let tp_after: usize = stage2.iter().map(|m| m.tp_count()).sum();
    let removed = fp_before.saturating_sub(fp_after);
    let percent = if fp_before > 0 {
        100.0 * removed as f64 / fp_before as f64
    } else {
        0.0
    };
    let n_patients = stage1.len();
    FpReductionReport {
        fp_before,
        fp_after,
        removed,
        percent,
        tp_preserved: tp_after >= tp_before,
        fp_per_patient_after: if n_patients > 0 {
            fp_after as f64 / n_patients as f64
        } else {
            0.0
        },
        n_patients,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosthocFnRecord {
    pub case_id: String,
    pub lesion_index: usize,
    pub center: [usize; 3],
    pub posterior: f64,
    pub classified_as_lesion: bool,
}

/// Classify a patch at each missed lesion center with the second-stage
/// classifier; the records also feed the local-explanation path.
pub fn posthoc_false_negatives(
    cases: &[MultiModalCase],
    stage1: &[MatchResult],
    classifier: &Model,
    patch_size: usize,
    fill: PatchFill,
) -> Result<Vec<PosthocFnRecord>, EvalError> {
    assert_eq!(cases.len(), stage1.len(), "one match result per case");
    let mut out = Vec::new();
    for (case, m) in cases.iter().zip(stage1.iter()) {
        for &li in &m.fn_lesions {
            let center = case.annotations[li].center;
            let patch = extract_patch(case, center, patch_size, fill)?;
            let posterior = classifier.predict_posterior(&patch)?;
            out.push(PosthocFnRecord {
                case_id: case.id.clone(),
                lesion_index: li,
                center,
                posterior,
                classified_as_lesion: posterior > 0.5,
            });
        }
    }
    Ok(out)
}
