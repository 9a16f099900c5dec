//! First-order intensity statistics over masked voxels.

use super::{entropy_bits, discretize, ConceptError, DiscretizationSpec};
use crate::volgrid::{Mask3, Volume3};

#[derive(Debug, Clone)]
pub struct FirstOrderFeatures {
    pub mean: f64,
    pub median: f64,
    pub maximum: f64,
    pub minimum: f64,
    pub range: f64,
    /// Entropy of the discretization histogram, base 2.
    pub entropy: f64,
    pub mean_absolute_deviation: f64,
    pub root_mean_squared: f64,
    pub p10: f64,
    pub p90: f64,
}

/// Percentile by linear interpolation between order statistics of the
/// sorted sample.
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = q * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

pub fn firstorder_features(
    vol: &Volume3,
    mask: &Mask3,
    disc: &DiscretizationSpec,
) -> Result<FirstOrderFeatures, ConceptError> {
    if mask.is_empty() {
        return Err(ConceptError::EmptyMask);
    }
    let mut vals: Vec<f64> = Vec::with_capacity(mask.count());
    for (i, &m) in mask.bits().iter().enumerate() {
        if m {
            vals.push(vol.values()[i] as f64);
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let mad = vals.iter().map(|v| (v - mean).abs()).sum::<f64>() / n;
    let rms = (vals.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let mut sorted = vals.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let minimum = sorted[0];
    let maximum = sorted[sorted.len() - 1];
    let median = percentile(&sorted, 0.5);

    // histogram entropy over the same discretization used for textures
    let labels = discretize(vol, mask, disc)?;
    let mut hist = vec![0usize; labels.bin_count as usize + 1];
    for &l in &labels.labels {
        if l > 0 {
            hist[l as usize] += 1;
        }
    }
    let total = mask.count() as f64;
    let entropy = entropy_bits(hist.iter().map(|&c| c as f64 / total));

    Ok(FirstOrderFeatures {
        mean,
        median,
        maximum,
        minimum,
        range: maximum - minimum,
        entropy,
        mean_absolute_deviation: mad,
        root_mean_squared: rms,
        p10: percentile(&sorted, 0.10),
        p90: percentile(&sorted, 0.90),
    })
}
