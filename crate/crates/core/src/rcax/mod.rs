//! The explanation engine: regression concept vectors and the four global
//! measures (Pearson correlation against the network score, concept
//! regression fit, sensitivity scores, bidirectional relevance), plus
//! per-sample local explanations, applicable to either pipeline stage.

use crate::concepts::{ConceptMatrix, ConceptModality};
use crate::neuralnet::{Model, NetError};
use crate::volgrid::Patch;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RcaxError {
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("input vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("degenerate fit: zero slope")]
    DegenerateFit,
    #[error("normal equations are singular (try a larger ridge lambda)")]
    SingularSystem,
    #[error("regression concept vector is not unit length")]
    NotUnit,
    #[error("sample and concept-matrix row counts differ: {0} vs {1}")]
    RowMismatch(usize, usize),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Per-concept, per-layer regression concept vector with its fit quality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RcvResult {
    pub concept: String,
    pub layer: usize,
    /// Unit direction of increasing concept value in activation space.
    pub v: Vec<f64>,
    /// Norm of the fitted (un-normalized) linear map.
    pub slope_norm: f64,
    /// Coefficient of determination of the fit, clamped to [0, 1].
    pub determination: f64,
    /// Relative ridge strength used: lambda * tr(A^T A)/d on the diagonal.
    pub lambda: f64,
    pub n_samples: usize,
}

/// Directional derivative of the network output along a concept vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityRecord {
    pub sample_id: String,
    pub concept: String,
    pub s: f64,
}

/// Sample Pearson correlation with a two-sided p-value from the
/// t-statistic t = rho sqrt((n-2)/(1-rho^2)) on n-2 degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64), RcaxError> {
    if x.len() != y.len() {
        return Err(RcaxError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(RcaxError::TooFewSamples(n));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(RcaxError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(RcaxError::ZeroVariance("y"));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p = if 1.0 - rho * rho < 1e-15 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid dof");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok((rho, p))
}

/// Solve the symmetric positive-definite system by Cholesky decomposition.
/// Pivots below a relative tolerance report the system as singular.
fn cholesky_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = a.len();
    let scale = (0..n).map(|i| a[i][i]).fold(0.0f64, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= a[i][k] * a[j][k];
            }
            if i == j {
                if sum <= tol {
                    return None;
                }
                a[i][i] = sum.sqrt();
            } else {
                a[i][j] = sum / a[j][j];
            }
        }
    }
    // forward substitution: L z = b
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= a[i][k] * b[k];
        }
        b[i] = sum / a[i][i];
    }
    // back substitution: L^T w = z
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in (i + 1)..n {
            sum -= a[k][i] * b[k];
        }
        b[i] = sum / a[i][i];
    }
    Some(b)
}

/// Fit the regression concept vector: center activations and concept values,
/// solve the ridge normal equations
/// (A^T A + lambda tr(A^T A)/d I) w = A^T m, and normalize.
pub fn fit_rcv(
    activations: &[Vec<f64>],
    concept_values: &[f64],
    lambda: f64,
    concept: &str,
    layer: usize,
) -> Result<RcvResult, RcaxError> {
    let n = activations.len();
    if n != concept_values.len() {
        return Err(RcaxError::LengthMismatch(n, concept_values.len()));
    }
    if n < 3 {
        return Err(RcaxError::TooFewSamples(n));
    }
    let d = activations[0].len();
    let nf = n as f64;
    let mean_a: Vec<f64> = (0..d)
        .map(|c| activations.iter().map(|row| row[c]).sum::<f64>() / nf)
        .collect();
    let mean_m = concept_values.iter().sum::<f64>() / nf;
    let lo = concept_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = concept_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(RcaxError::ZeroVariance("concept values"));
    }

    // gram matrix and right-hand side over centered data
    let mut gram = vec![vec![0.0; d]; d];
    let mut rhs = vec![0.0; d];
    for (row, &m) in activations.iter().zip(concept_values.iter()) {
        for i in 0..d {
            let ai = row[i] - mean_a[i];
            rhs[i] += ai * (m - mean_m);
            for j in 0..=i {
                gram[i][j] += ai * (row[j] - mean_a[j]);
            }
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            gram[i][j] = gram[j][i];
        }
    }
    let trace: f64 = (0..d).map(|i| gram[i][i]).sum();
    let ridge = lambda * trace / d as f64;
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += ridge;
    }
    let w = cholesky_solve(gram, rhs).ok_or(RcaxError::SingularSystem)?;
    let slope_norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if slope_norm == 0.0 || !slope_norm.is_finite() {
        return Err(RcaxError::DegenerateFit);
    }
    let v: Vec<f64> = w.iter().map(|x| x / slope_norm).collect();

    // determination coefficient of the fit
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (row, &m) in activations.iter().zip(concept_values.iter()) {
        let pred: f64 = (0..d).map(|c| w[c] * (row[c] - mean_a[c])).sum();
        let dm = m - mean_m;
        ss_res += (dm - pred) * (dm - pred);
        ss_tot += dm * dm;
    }
    let determination = (1.0 - ss_res / ss_tot).clamp(0.0, 1.0);
    Ok(RcvResult {
        concept: concept.to_string(),
        layer,
        v,
        slope_norm,
        determination,
        lambda,
        n_samples: n,
    })
}

/// S_i = grad_wrt_layer(x_i) . v for each sample.
pub fn sensitivity_scores(
    model: &Model,
    layer: usize,
    output_index: usize,
    v: &[f64],
    samples: &[(String, Patch)],
    concept: &str,
) -> Result<Vec<SensitivityRecord>, RcaxError> {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(RcaxError::NotUnit);
    }
    samples
        .iter()
        .map(|(id, patch)| {
            let g = model.grad_wrt_layer(patch, layer, output_index)?;
            let s = g.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            Ok(SensitivityRecord {
                sample_id: id.clone(),
                concept: concept.to_string(),
                s,
            })
        })
        .collect()
}

pub fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Br = determination * mean(S)/std(S); the sign carries the direction.
/// None when the sensitivity scores have zero spread.
pub fn bidirectional_relevance(determination: f64, sensitivities: &[f64]) -> Option<f64> {
    if sensitivities.len() < 2 {
        return None;
    }
    let (mean, std) = mean_and_population_std(sensitivities);
    if std == 0.0 {
        return None;
    }
    Some(determination * mean / std)
}

/// One explained concept in the global table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptRow {
    pub name: String,
    pub modality: ConceptModality,
    pub rho: f64,
    pub p_value: f64,
    pub determination: f64,
    pub slope_norm: f64,
    pub lambda: f64,
    pub mean_s: f64,
    pub std_s: f64,
    pub br: Option<f64>,
    pub rcv: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlaggedConcept {
    pub name: String,
    pub modality: ConceptModality,
    pub reason: String,
}

/// Index permutations of `rows`, one per measure, best first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rankings {
    pub by_abs_rho: Vec<usize>,
    pub by_determination: Vec<usize>,
    pub by_abs_mean_s: Vec<usize>,
    pub by_abs_br: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalExplanation {
    pub layer: usize,
    pub output_index: usize,
    pub n_samples: usize,
    pub sample_ids: Vec<String>,
    pub rows: Vec<ConceptRow>,
    /// Per-row sensitivity scores aligned with `sample_ids`.
    pub sensitivity: Vec<Vec<f64>>,
    pub rankings: Rankings,
    pub diagnostics: Vec<FlaggedConcept>,
}

fn rank_by<F: Fn(&ConceptRow) -> f64>(rows: &[ConceptRow], key: F) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        key(&rows[b])
            .partial_cmp(&key(&rows[a]))
            .expect("finite ranking keys")
            .then_with(|| rows[a].name.cmp(&rows[b].name))
    });
    order
}

/// Evaluate every non-flagged concept against the model: correlation with
/// the target score, concept regression on the layer activations,
/// sensitivity scores along the concept vector, and bidirectional relevance.
pub fn global_explain(
    model: &Model,
    layer: usize,
    output_index: usize,
    concepts: &ConceptMatrix,
    patches: &[Patch],
    lambda: f64,
) -> Result<GlobalExplanation, RcaxError> {
    let n = concepts.n_samples();
    if n != patches.len() {
        return Err(RcaxError::RowMismatch(n, patches.len()));
    }
    if n < 3 {
        return Err(RcaxError::TooFewSamples(n));
    }

    // activations and gradients, one pass per sample
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut gradients: Vec<Vec<f64>> = Vec::with_capacity(n);
    for patch in patches {
        let (_, snaps) = model.forward(patch)?;
        let snap = snaps
            .get(layer)
            .ok_or(NetError::BadLayer(layer, snaps.len()))?;
        activations.push(snap.pooled.clone());
        gradients.push(model.grad_wrt_layer(patch, layer, output_index)?);
    }

    let mut rows = Vec::new();
    let mut sensitivity = Vec::new();
    let mut diagnostics = Vec::new();
    for j in 0..concepts.names.len() {
        let name = &concepts.names[j];
        let modality = concepts.modalities[j];
        let flag = |reason: String| FlaggedConcept {
            name: name.clone(),
            modality,
            reason,
        };
        let Some(col) = concepts.column(j) else {
            diagnostics.push(flag("flagged extraction value in at least one sample".into()));
            continue;
        };
        let (rho, p_value) = match pearson(&col, &concepts.target) {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(flag(e.to_string()));
                continue;
            }
        };
        let rcv = match fit_rcv(&activations, &col, lambda, name, layer) {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(flag(e.to_string()));
                continue;
            }
        };
        let s: Vec<f64> = gradients
            .iter()
            .map(|g| g.iter().zip(rcv.v.iter()).map(|(a, b)| a * b).sum())
            .collect();
        let (mean_s, std_s) = mean_and_population_std(&s);
        let br = bidirectional_relevance(rcv.determination, &s);
        rows.push(ConceptRow {
            name: name.clone(),
            modality,
            rho,
            p_value,
            determination: rcv.determination,
            slope_norm: rcv.slope_norm,
            lambda: rcv.lambda,
            mean_s,
            std_s,
            br,
            rcv: rcv.v,
        });
        sensitivity.push(s);
    }

    let rankings = Rankings {
        by_abs_rho: rank_by(&rows, |r| r.rho.abs()),
        by_determination: rank_by(&rows, |r| r.determination),
        by_abs_mean_s: rank_by(&rows, |r| r.mean_s.abs()),
        // undefined Br ranks last
        by_abs_br: rank_by(&rows, |r| r.br.map(f64::abs).unwrap_or(f64::NEG_INFINITY)),
    };
    Ok(GlobalExplanation {
        layer,
        output_index,
        n_samples: n,
        sample_ids: concepts.sample_ids.clone(),
        rows,
        sensitivity,
        rankings,
        diagnostics,
    })
}

impl GlobalExplanation {
    /// CSV table, one row per explained concept, diagnostics appended as
    /// flagged rows with empty measures.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "concept,modality,rho,p_value,determination,slope_norm,mean_s,std_s,br,flag\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},\n",
                r.name,
                r.modality,
                r.rho,
                r.p_value,
                r.determination,
                r.slope_norm,
                r.mean_s,
                r.std_s,
                r.br.map(|b| b.to_string()).unwrap_or_default(),
            ));
        }
        for d in &self.diagnostics {
            out.push_str(&format!("{},{},,,,,,,,{}\n", d.name, d.modality, d.reason));
        }
        out
    }

    /// Top-k row indices by |Br|, skipping rows with undefined Br.
    pub fn top_k_by_br(&self, k: usize) -> Vec<usize> {
        self.rankings
            .by_abs_br
            .iter()
            .cloned()
            .filter(|&i| self.rows[i].br.is_some())
            .take(k)
            .collect()
    }
}

/// Reference-class sensitivity statistics for the concepts used in local
/// explanations, bundled with their concept vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassStats {
    pub layer: usize,
    pub output_index: usize,
    pub rows: Vec<ClassStatRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassStatRow {
    pub name: String,
    pub modality: ConceptModality,
    pub rcv: Vec<f64>,
    pub mean_s: f64,
    pub std_s: f64,
}

/// Build class statistics over a reference subset of the explained samples
/// (e.g. the true positives), for the top-k concepts by |Br|.
pub fn class_sensitivity_stats(
    global: &GlobalExplanation,
    reference_samples: &[usize],
    top_k: usize,
) -> Result<ClassStats, RcaxError> {
    if reference_samples.len() < 2 {
        return Err(RcaxError::TooFewSamples(reference_samples.len()));
    }
    let rows = global
        .top_k_by_br(top_k)
        .into_iter()
        .map(|ri| {
            let row = &global.rows[ri];
            let s: Vec<f64> = reference_samples
                .iter()
                .map(|&i| global.sensitivity[ri][i])
                .collect();
            let (mean_s, std_s) = mean_and_population_std(&s);
            ClassStatRow {
                name: row.name.clone(),
                modality: row.modality,
                rcv: row.rcv.clone(),
                mean_s,
                std_s,
            }
        })
        .collect();
    Ok(ClassStats {
        layer: global.layer,
        output_index: global.output_index,
        rows,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalRow {
    pub name: String,
    pub modality: ConceptModality,
    pub s: f64,
    pub class_mean: f64,
    pub class_std: f64,
    /// (s - class mean)/class std; None when the class std is zero.
    pub z: Option<f64>,
}

/// Per-sample concept-sensitivity profile against the reference class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalExplanation {
    pub sample_id: String,
    pub rows: Vec<LocalRow>,
    /// Negative mean |z| over usable rows: 0 is maximal similarity.
    pub similarity: f64,
    pub concepts_used: Vec<String>,
}

/// Compare one sample's sensitivity scores to the class statistics.
pub fn local_explain(
    model: &Model,
    sample_id: &str,
    patch: &Patch,
    class_stats: &ClassStats,
) -> Result<LocalExplanation, RcaxError> {
    let g = model.grad_wrt_layer(patch, class_stats.layer, class_stats.output_index)?;
    let mut rows = Vec::with_capacity(class_stats.rows.len());
    let mut zsum = 0.0;
    let mut zcount = 0usize;
    for cs in &class_stats.rows {
        let s: f64 = g.iter().zip(cs.rcv.iter()).map(|(a, b)| a * b).sum();
        let z = if cs.std_s == 0.0 {
            None
        } else {
            let z = (s - cs.mean_s) / cs.std_s;
            zsum += z.abs();
            zcount += 1;
            Some(z)
        };
        rows.push(LocalRow {
            name: cs.name.clone(),
            modality: cs.modality,
            s,
            class_mean: cs.mean_s,
            class_std: cs.std_s,
            z,
        });
    }
    let similarity = if zcount > 0 { -(zsum / zcount as f64) } else { 0.0 };
    Ok(LocalExplanation {
        sample_id: sample_id.to_string(),
        rows,
        similarity,
        concepts_used: class_stats.rows.iter().map(|r| r.name.clone()).collect(),
    })
}

#[cfg(test)]
mod tests;
