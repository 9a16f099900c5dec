//! Gray-level texture matrices (co-occurrence, run length, size zone,
//! dependence) over discretized masked voxels.
//!
//! Matrices are built at distance 1 over the 13 unique 3D directions where a
//! direction applies; features are computed per direction on the normalized
//! matrix and then averaged over directions that contain at least one
//! pair/run. Zones and dependences use the full 26-neighborhood.

use super::{entropy_bits, ConceptError, Labels, NEIGHBORS_26};

/// The 13 unique direction vectors (one per opposite pair of the 26
/// neighbors), in fixed scan order.
pub const DIRECTIONS_13: [[i64; 3]; 13] = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 0],
    [1, -1, 0],
    [1, 0, 1],
    [1, 0, -1],
    [0, 1, 1],
    [0, 1, -1],
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
];

#[derive(Debug, Clone)]
pub struct GlcmFeatures {
    pub joint_average: f64,
    pub sum_average: f64,
    pub sum_entropy: f64,
    pub difference_average: f64,
    pub difference_entropy: f64,
    /// Square root of the second-largest eigenvalue of the Q matrix; fixed
    /// to 1 for degenerate (single-level / rank-deficient) regions.
    pub mcc: f64,
    pub mcc_degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct GlrlmFeatures {
    pub run_entropy: f64,
    pub run_length_non_uniformity_normalized: f64,
}

#[derive(Debug, Clone)]
pub struct GlszmFeatures {
    pub size_zone_non_uniformity: f64,
    pub size_zone_non_uniformity_normalized: f64,
    pub zone_entropy: f64,
}

#[derive(Debug, Clone)]
pub struct GldmFeatures {
    pub small_dependence_emphasis: f64,
    pub dependence_entropy: f64,
}

#[inline]
fn in_grid(p: [i64; 3], dims: [usize; 3]) -> bool {
    (0..3).all(|a| p[a] >= 0 && p[a] < dims[a] as i64)
}

/// Symmetric co-occurrence counts for one direction; counts[i][j] over
/// labels 1..=nb stored 0-based. Returns None when the direction has no
/// valid pair.
fn glcm_counts(labels: &Labels, dir: [i64; 3]) -> Option<Vec<Vec<f64>>> {
    let nb = labels.bin_count as usize;
    let dims = labels.dims;
    let mut counts = vec![vec![0f64; nb]; nb];
    let mut total = 0u64;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let a = labels.get(x, y, z);
                if a == 0 {
                    continue;
                }
                let q = [x as i64 + dir[0], y as i64 + dir[1], z as i64 + dir[2]];
                if !in_grid(q, dims) {
                    continue;
                }
                let b = labels.get(q[0] as usize, q[1] as usize, q[2] as usize);
                if b == 0 {
                    continue;
                }
                counts[(a - 1) as usize][(b - 1) as usize] += 1.0;
                counts[(b - 1) as usize][(a - 1) as usize] += 1.0;
                total += 1;
            }
        }
    }
    if total == 0 {
        None
    } else {
        Some(counts)
    }
}

fn normalize(matrix: &mut [Vec<f64>]) -> f64 {
    let sum: f64 = matrix.iter().flat_map(|r| r.iter()).sum();
    if sum > 0.0 {
        for row in matrix.iter_mut() {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
    sum
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn symmetric_eigenvalues(mut m: Vec<Vec<f64>>) -> Vec<f64> {
    let n = m.len();
    if n == 0 {
        return vec![];
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i][j] * m[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-18 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i][i]).collect()
}

/// MCC of one normalized symmetric co-occurrence matrix. The Q matrix is
/// similar to the symmetric PSD matrix S = B B^T with
/// B(i,k) = p(i,k)/sqrt(px(i) py(k)), restricted to occupied levels, so its
/// eigenvalues are computed from S. Returns (mcc, degenerate).
fn glcm_mcc(p: &[Vec<f64>]) -> (f64, bool) {
    let nb = p.len();
    let px: Vec<f64> = (0..nb).map(|i| p[i].iter().sum()).collect();
    let occupied: Vec<usize> = (0..nb).filter(|&i| px[i] > 0.0).collect();
    if occupied.len() < 2 {
        return (1.0, true);
    }
    let m = occupied.len();
    let mut b = vec![vec![0f64; m]; m];
    for (bi, &i) in occupied.iter().enumerate() {
        for (bk, &k) in occupied.iter().enumerate() {
            b[bi][bk] = p[i][k] / (px[i] * px[k]).sqrt();
        }
    }
    let mut s = vec![vec![0f64; m]; m];
    for i in 0..m {
        for j in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                acc += b[i][k] * b[j][k];
            }
            s[i][j] = acc;
        }
    }
    let mut eig = symmetric_eigenvalues(s);
    eig.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    let second = eig[1].clamp(0.0, 1.0);
    if !second.is_finite() {
        return (1.0, true);
    }
    (second.sqrt(), false)
}

pub fn glcm_features(labels: &Labels) -> Result<GlcmFeatures, ConceptError> {
    let nb = labels.bin_count as usize;
    let mut sums = [0f64; 6];
    let mut n_dirs = 0usize;
    let mut degenerate = false;
    for dir in DIRECTIONS_13 {
        let Some(mut counts) = glcm_counts(labels, dir) else {
            continue;
        };
        normalize(&mut counts);
        let p = &counts;
        let mut joint_average = 0.0;
        let mut p_sum = vec![0f64; 2 * nb + 1]; // index k = i + j, 2..=2nb
        let mut p_diff = vec![0f64; nb]; // index k = |i - j|, 0..=nb-1
        for i in 0..nb {
            for j in 0..nb {
                let v = p[i][j];
                if v == 0.0 {
                    continue;
                }
                let gi = (i + 1) as f64;
                joint_average += gi * v;
                p_sum[i + j + 2] += v;
                p_diff[i.abs_diff(j)] += v;
            }
        }
        let sum_average: f64 = p_sum
            .iter()
            .enumerate()
            .map(|(k, &v)| k as f64 * v)
            .sum();
        let sum_entropy = entropy_bits(p_sum.iter().copied());
        let difference_average: f64 = p_diff
            .iter()
            .enumerate()
            .map(|(k, &v)| k as f64 * v)
            .sum();
        let difference_entropy = entropy_bits(p_diff.iter().copied());
        let (mcc, deg) = glcm_mcc(p);
        degenerate |= deg;
        sums[0] += joint_average;
        sums[1] += sum_average;
        sums[2] += sum_entropy;
        sums[3] += difference_average;
        sums[4] += difference_entropy;
        sums[5] += mcc;
        n_dirs += 1;
    }
    if n_dirs == 0 {
        return Err(ConceptError::NoPairs);
    }
    let d = n_dirs as f64;
    Ok(GlcmFeatures {
        joint_average: sums[0] / d,
        sum_average: sums[1] / d,
        sum_entropy: sums[2] / d,
        difference_average: sums[3] / d,
        difference_entropy: sums[4] / d,
        mcc: sums[5] / d,
        mcc_degenerate: degenerate,
    })
}

/// Run-length matrix for one direction: counts[g][len] with g 0-based and
/// len 1-based (index 0 unused). Every masked voxel belongs to exactly one
/// maximal run per direction, so this never comes back empty for a nonempty
/// mask.
fn glrlm_counts(labels: &Labels, dir: [i64; 3]) -> (Vec<Vec<f64>>, f64) {
    let nb = labels.bin_count as usize;
    let dims = labels.dims;
    let max_len = dims[0].max(dims[1]).max(dims[2]);
    let mut counts = vec![vec![0f64; max_len + 1]; nb];
    let mut total = 0f64;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let g = labels.get(x, y, z);
                if g == 0 {
                    continue;
                }
                // run start: predecessor along -dir is out of grid or a
                // different label
                let prev = [x as i64 - dir[0], y as i64 - dir[1], z as i64 - dir[2]];
                if in_grid(prev, dims)
                    && labels.get(prev[0] as usize, prev[1] as usize, prev[2] as usize) == g
                {
                    continue;
                }
                let mut len = 1usize;
                let mut q = [x as i64 + dir[0], y as i64 + dir[1], z as i64 + dir[2]];
                while in_grid(q, dims)
                    && labels.get(q[0] as usize, q[1] as usize, q[2] as usize) == g
                {
                    len += 1;
                    q = [q[0] + dir[0], q[1] + dir[1], q[2] + dir[2]];
                }
                counts[(g - 1) as usize][len] += 1.0;
                total += 1.0;
            }
        }
    }
    (counts, total)
}

pub fn glrlm_features(labels: &Labels) -> Result<GlrlmFeatures, ConceptError> {
    let mut sum_entropy = 0.0;
    let mut sum_rlnn = 0.0;
    let mut n_dirs = 0usize;
    for dir in DIRECTIONS_13 {
        let (counts, total) = glrlm_counts(labels, dir);
        if total == 0.0 {
            continue;
        }
        let entropy = entropy_bits(
            counts
                .iter()
                .flat_map(|row| row.iter())
                .map(|&c| c / total),
        );
        let max_len = counts[0].len();
        let mut rlnn = 0.0;
        for len in 1..max_len {
            let col: f64 = counts.iter().map(|row| row[len]).sum();
            rlnn += col * col;
        }
        rlnn /= total * total;
        sum_entropy += entropy;
        sum_rlnn += rlnn;
        n_dirs += 1;
    }
    if n_dirs == 0 {
        return Err(ConceptError::NoPairs);
    }
    Ok(GlrlmFeatures {
        run_entropy: sum_entropy / n_dirs as f64,
        run_length_non_uniformity_normalized: sum_rlnn / n_dirs as f64,
    })
}

/// Zones: 26-connected components of equal gray level. Returns a list of
/// (level, size) pairs in scan order of first contact.
pub fn zones_26(labels: &Labels) -> Vec<(u32, usize)> {
    let dims = labels.dims;
    let n = labels.labels.len();
    let mut visited = vec![false; n];
    let flat = |x: usize, y: usize, z: usize| x + dims[0] * (y + dims[1] * z);
    let mut zones = Vec::new();
    let mut stack = Vec::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = flat(x, y, z);
                let g = labels.labels[i];
                if g == 0 || visited[i] {
                    continue;
                }
                visited[i] = true;
                stack.push([x, y, z]);
                let mut size = 0usize;
                while let Some(p) = stack.pop() {
                    size += 1;
                    for d in NEIGHBORS_26 {
                        let q = [p[0] as i64 + d[0], p[1] as i64 + d[1], p[2] as i64 + d[2]];
                        if !in_grid(q, dims) {
                            continue;
                        }
                        let (qx, qy, qz) = (q[0] as usize, q[1] as usize, q[2] as usize);
                        let j = flat(qx, qy, qz);
                        if !visited[j] && labels.labels[j] == g {
                            visited[j] = true;
                            stack.push([qx, qy, qz]);
                        }
                    }
                }
                zones.push((g, size));
            }
        }
    }
    zones
}

pub fn glszm_features(labels: &Labels) -> Result<GlszmFeatures, ConceptError> {
    let zones = zones_26(labels);
    if zones.is_empty() {
        return Err(ConceptError::EmptyMask);
    }
    let n_zones = zones.len() as f64;
    // column sums over sizes: sum over gray levels of N(g, s)
    let max_size = zones.iter().map(|&(_, s)| s).max().expect("nonempty");
    let mut by_size = vec![0f64; max_size + 1];
    for &(_, s) in &zones {
        by_size[s] += 1.0;
    }
    let szn: f64 = by_size.iter().map(|&c| c * c).sum::<f64>() / n_zones;
    // entropy over the (g, s) cells
    use std::collections::BTreeMap;
    let mut cells: BTreeMap<(u32, usize), f64> = BTreeMap::new();
    for &(g, s) in &zones {
        *cells.entry((g, s)).or_insert(0.0) += 1.0;
    }
    let zone_entropy = entropy_bits(cells.values().map(|&c| c / n_zones));
    Ok(GlszmFeatures {
        size_zone_non_uniformity: szn,
        size_zone_non_uniformity_normalized: szn / n_zones,
        zone_entropy,
    })
}

pub fn gldm_features(labels: &Labels) -> Result<GldmFeatures, ConceptError> {
    let dims = labels.dims;
    let mut total = 0f64;
    // cells[(g, d)] with d = dependence count + 1
    use std::collections::BTreeMap;
    let mut cells: BTreeMap<(u32, usize), f64> = BTreeMap::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let g = labels.get(x, y, z);
                if g == 0 {
                    continue;
                }
                let mut dep = 0usize;
                for d in NEIGHBORS_26 {
                    let q = [x as i64 + d[0], y as i64 + d[1], z as i64 + d[2]];
                    if !in_grid(q, dims) {
                        continue;
                    }
                    if labels.get(q[0] as usize, q[1] as usize, q[2] as usize) == g {
                        dep += 1;
                    }
                }
                *cells.entry((g, dep + 1)).or_insert(0.0) += 1.0;
                total += 1.0;
            }
        }
    }
    if total == 0.0 {
        return Err(ConceptError::EmptyMask);
    }
    let mut sde = 0.0;
    for (&(_, d), &c) in &cells {
        sde += (c / total) / ((d * d) as f64);
    }
    let dependence_entropy = entropy_bits(cells.values().map(|&c| c / total));
    Ok(GldmFeatures {
        small_dependence_emphasis: sde,
        dependence_entropy,
    })
}
