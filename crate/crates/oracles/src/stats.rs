//! Independent statistical references: nalgebra-backed ridge normal
//! equations, Mann-Whitney AUC with half-credit ties, an independent greedy
//! matcher and a per-threshold re-matching FROC sweep.

use nalgebra::{DMatrix, DVector};

/// Ridge normal-equations solve on centered data via nalgebra LU:
/// w = (A^T A + lambda tr(A^T A)/d I)^-1 A^T m.
pub fn ridge_fit(activations: &[Vec<f64>], concept: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let n = activations.len();
    let d = activations[0].len();
    let mean_a: Vec<f64> = (0..d)
        .map(|c| activations.iter().map(|r| r[c]).sum::<f64>() / n as f64)
        .collect();
    let mean_m = concept.iter().sum::<f64>() / n as f64;
    let a = DMatrix::from_fn(n, d, |i, j| activations[i][j] - mean_a[j]);
    let m = DVector::from_fn(n, |i, _| concept[i] - mean_m);
    let gram = a.transpose() * &a;
    let trace = gram.trace();
    let reg = &gram + DMatrix::identity(d, d) * (lambda * trace / d as f64);
    let rhs = a.transpose() * m;
    reg.lu().solve(&rhs).map(|w| w.iter().cloned().collect())
}

/// AUC as the Mann-Whitney U statistic over (positive, negative) pairs with
/// half credit for ties, divided by n_pos * n_neg.
pub fn mann_whitney_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut u = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                u += 1.0;
            } else if p == n {
                u += 0.5;
            }
        }
    }
    Some(u / (pos.len() * neg.len()) as f64)
}

/// Minimal box for the matcher oracle: [min; max) voxel indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

pub fn obox_iou(a: &OBox, b: &OBox) -> f64 {
    let mut inter = 1u64;
    for k in 0..3 {
        let lo = a.min[k].max(b.min[k]);
        let hi = a.max[k].min(b.max[k]);
        if lo >= hi {
            return 0.0;
        }
        inter *= (hi - lo) as u64;
    }
    let vol = |b: &OBox| -> u64 {
        (0..3).map(|k| (b.max[k] - b.min[k]) as u64).product()
    };
    inter as f64 / (vol(a) + vol(b) - inter) as f64
}

/// Greedy matcher re-written from the rule: detections in descending
/// confidence (ties by min corner), each takes the free lesion with the
/// highest IoU at or above the threshold, lowest index on IoU ties.
/// Returns (tp_pairs, fp_indices, fn_indices).
pub fn greedy_match(
    detections: &[(f64, OBox)],
    lesions: &[OBox],
    iou_threshold: f64,
) -> (Vec<(usize, usize)>, Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&x, &y| {
        detections[y]
            .0
            .partial_cmp(&detections[x].0)
            .unwrap()
            .then_with(|| detections[x].1.min.cmp(&detections[y].1.min))
    });
    let mut free: Vec<bool> = vec![true; lesions.len()];
    let mut tp = Vec::new();
    let mut fp = Vec::new();
    for &di in &order {
        let mut best_iou = -1.0;
        let mut best = None;
        for (li, lesion) in lesions.iter().enumerate() {
            if !free[li] {
                continue;
            }
            let v = obox_iou(&detections[di].1, lesion);
            if v >= iou_threshold && v > best_iou {
                best_iou = v;
                best = Some(li);
            }
        }
        if let Some(li) = best {
            free[li] = false;
            tp.push((di, li));
        } else {
            fp.push(di);
        }
    }
    let fn_idx = (0..lesions.len()).filter(|&l| free[l]).collect();
    (tp, fp, fn_idx)
}

/// FROC by brute force: re-run the matcher at every distinct confidence
/// threshold. Returns (threshold, sensitivity, fp/patient) ascending in
/// threshold.
pub fn froc_sweep(
    cases: &[(Vec<(f64, OBox)>, Vec<OBox>)],
    iou_threshold: f64,
) -> Vec<(f64, f64, f64)> {
    let n_lesions: usize = cases.iter().map(|(_, l)| l.len()).sum();
    let n_patients = cases.len();
    let mut thresholds: Vec<f64> = cases
        .iter()
        .flat_map(|(d, _)| d.iter().map(|(c, _)| *c))
        .collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    thresholds
        .into_iter()
        .map(|t| {
            let mut tp = 0;
            let mut fp = 0;
            for (dets, lesions) in cases {
                let kept: Vec<(f64, OBox)> =
                    dets.iter().filter(|(c, _)| *c >= t).cloned().collect();
                let (tps, fps, _) = greedy_match(&kept, lesions, iou_threshold);
                tp += tps.len();
                fp += fps.len();
            }
            (
                t,
                tp as f64 / n_lesions as f64,
                fp as f64 / n_patients as f64,
            )
        })
        .collect()
}
