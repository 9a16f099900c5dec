//! Brute-force texture/first-order/shape oracles computed straight from the
//! definitions: all-pairs enumeration for co-occurrence, full line walks for
//! runs, fixed-point label propagation for zones, Chebyshev-distance
//! scanning for dependences. Conventions (13 unique directions, symmetric
//! accumulation, empty directions excluded from the average, log2 entropies
//! with 0*log0 = 0) follow the declared contract.

use nalgebra::DMatrix;

fn log2e(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().map(|&p| log2e(p)).sum::<f64>()
}

/// All 13 directions whose first nonzero component (x, then y, then z) is
/// positive.
pub fn half_directions() -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if (dx, dy, dz) == (0, 0, 0) {
                    continue;
                }
                let positive = dx > 0 || (dx == 0 && (dy > 0 || (dy == 0 && dz > 0)));
                if positive {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    assert_eq!(out.len(), 13);
    out
}

fn coords(dims: [usize; 3]) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                out.push([x as i64, y as i64, z as i64]);
            }
        }
    }
    out
}

fn label_at(dims: [usize; 3], labels: &[u32], p: [i64; 3]) -> u32 {
    if p[0] < 0 || p[1] < 0 || p[2] < 0 {
        return 0;
    }
    let (x, y, z) = (p[0] as usize, p[1] as usize, p[2] as usize);
    if x >= dims[0] || y >= dims[1] || z >= dims[2] {
        return 0;
    }
    labels[x + dims[0] * (y + dims[1] * z)]
}

#[derive(Debug, Clone)]
pub struct GlcmOracle {
    pub joint_average: f64,
    pub sum_average: f64,
    pub sum_entropy: f64,
    pub difference_average: f64,
    pub difference_entropy: f64,
    pub mcc: f64,
}

/// Eigenvalues of the textbook Q matrix via a general eigensolver; MCC is
/// the square root of the second largest, 1 for degenerate regions.
fn mcc_from_q(p: &[Vec<f64>]) -> f64 {
    let nb = p.len();
    let px: Vec<f64> = (0..nb).map(|i| p[i].iter().sum()).collect();
    let py: Vec<f64> = (0..nb).map(|j| (0..nb).map(|i| p[i][j]).sum()).collect();
    let occ: Vec<usize> = (0..nb).filter(|&i| px[i] > 0.0).collect();
    if occ.len() < 2 {
        return 1.0;
    }
    let m = occ.len();
    let q = DMatrix::from_fn(m, m, |a, b| {
        let (i, j) = (occ[a], occ[b]);
        let mut acc = 0.0;
        for &k in &occ {
            acc += p[i][k] * p[j][k] / (px[i] * py[k]);
        }
        acc
    });
    let eig = q.complex_eigenvalues();
    let mut re: Vec<f64> = eig.iter().map(|c| c.re).collect();
    for c in eig.iter() {
        assert!(c.im.abs() < 1e-8, "Q eigenvalues should be real");
    }
    re.sort_by(|a, b| b.partial_cmp(a).unwrap());
    re[1].clamp(0.0, 1.0).sqrt()
}

pub fn glcm(dims: [usize; 3], labels: &[u32], nb: u32) -> Option<GlcmOracle> {
    let nb = nb as usize;
    let all = coords(dims);
    let mut sums = [0.0f64; 6];
    let mut used = 0usize;
    for dir in half_directions() {
        // all-pairs enumeration: count ordered pairs (v, v+dir) both masked
        let mut counts = vec![vec![0f64; nb]; nb];
        let mut any = false;
        for &v in &all {
            let a = label_at(dims, labels, v);
            if a == 0 {
                continue;
            }
            for &w in &all {
                if [w[0] - v[0], w[1] - v[1], w[2] - v[2]] != dir {
                    continue;
                }
                let b = label_at(dims, labels, w);
                if b == 0 {
                    continue;
                }
                counts[(a - 1) as usize][(b - 1) as usize] += 1.0;
                counts[(b - 1) as usize][(a - 1) as usize] += 1.0;
                any = true;
            }
        }
        if !any {
            continue;
        }
        let total: f64 = counts.iter().flatten().sum();
        let p: Vec<Vec<f64>> = counts
            .iter()
            .map(|row| row.iter().map(|c| c / total).collect())
            .collect();
        let mut ja = 0.0;
        let mut sa = 0.0;
        let mut da = 0.0;
        let mut psum = vec![0.0; 2 * nb + 1];
        let mut pdiff = vec![0.0; nb];
        for i in 0..nb {
            for j in 0..nb {
                ja += (i + 1) as f64 * p[i][j];
                sa += ((i + 1) + (j + 1)) as f64 * p[i][j];
                da += (i as f64 - j as f64).abs() * p[i][j];
                psum[i + j + 2] += p[i][j];
                pdiff[i.abs_diff(j)] += p[i][j];
            }
        }
        sums[0] += ja;
        sums[1] += sa;
        sums[2] += entropy(&psum);
        sums[3] += da;
        sums[4] += entropy(&pdiff);
        sums[5] += mcc_from_q(&p);
        used += 1;
    }
    if used == 0 {
        return None;
    }
    let d = used as f64;
    Some(GlcmOracle {
        joint_average: sums[0] / d,
        sum_average: sums[1] / d,
        sum_entropy: sums[2] / d,
        difference_average: sums[3] / d,
        difference_entropy: sums[4] / d,
        mcc: sums[5] / d,
    })
}

#[derive(Debug, Clone)]
pub struct GlrlmOracle {
    pub run_entropy: f64,
    pub rlnn: f64,
}

pub fn glrlm(dims: [usize; 3], labels: &[u32]) -> Option<GlrlmOracle> {
    let mut sum_entropy = 0.0;
    let mut sum_rlnn = 0.0;
    let mut used = 0usize;
    for dir in half_directions() {
        // walk every full grid line once, then split it into runs
        let mut cells: std::collections::BTreeMap<(u32, usize), f64> = Default::default();
        let mut by_len: std::collections::BTreeMap<usize, f64> = Default::default();
        let mut total = 0.0;
        for start in coords(dims) {
            let before = [start[0] - dir[0], start[1] - dir[1], start[2] - dir[2]];
            let in_grid = |p: [i64; 3]| {
                p[0] >= 0
                    && p[1] >= 0
                    && p[2] >= 0
                    && (p[0] as usize) < dims[0]
                    && (p[1] as usize) < dims[1]
                    && (p[2] as usize) < dims[2]
            };
            if in_grid(before) {
                continue; // not a line entry point
            }
            let mut line = Vec::new();
            let mut p = start;
            while in_grid(p) {
                line.push(label_at(dims, labels, p));
                p = [p[0] + dir[0], p[1] + dir[1], p[2] + dir[2]];
            }
            let mut i = 0;
            while i < line.len() {
                if line[i] == 0 {
                    i += 1;
                    continue;
                }
                let g = line[i];
                let mut len = 1;
                while i + len < line.len() && line[i + len] == g {
                    len += 1;
                }
                *cells.entry((g, len)).or_insert(0.0) += 1.0;
                *by_len.entry(len).or_insert(0.0) += 1.0;
                total += 1.0;
                i += len;
            }
        }
        if total == 0.0 {
            continue;
        }
        let probs: Vec<f64> = cells.values().map(|c| c / total).collect();
        sum_entropy += entropy(&probs);
        sum_rlnn += by_len.values().map(|c| c * c).sum::<f64>() / (total * total);
        used += 1;
    }
    if used == 0 {
        return None;
    }
    Some(GlrlmOracle {
        run_entropy: sum_entropy / used as f64,
        rlnn: sum_rlnn / used as f64,
    })
}

#[derive(Debug, Clone)]
pub struct GlszmOracle {
    pub szn: f64,
    pub sznn: f64,
    pub zone_entropy: f64,
    pub zones: Vec<(u32, usize)>,
}

/// Zones by iterated label propagation: every masked voxel starts as its own
/// zone id; repeatedly take the min id over equal-label 26-neighbors until
/// nothing changes.
pub fn glszm(dims: [usize; 3], labels: &[u32]) -> Option<GlszmOracle> {
    let n = labels.len();
    let mut zone: Vec<usize> = (0..n).collect();
    let all = coords(dims);
    loop {
        let mut changed = false;
        for &v in &all {
            let g = label_at(dims, labels, v);
            if g == 0 {
                continue;
            }
            let vi = v[0] as usize + dims[0] * (v[1] as usize + dims[1] * v[2] as usize);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dx, dy, dz) == (0, 0, 0) {
                            continue;
                        }
                        let w = [v[0] + dx, v[1] + dy, v[2] + dz];
                        if label_at(dims, labels, w) != g {
                            continue;
                        }
                        let wi =
                            w[0] as usize + dims[0] * (w[1] as usize + dims[1] * w[2] as usize);
                        if zone[wi] < zone[vi] {
                            zone[vi] = zone[wi];
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut sizes: std::collections::BTreeMap<usize, (u32, usize)> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let e = sizes.entry(zone[i]).or_insert((l, 0));
        e.1 += 1;
    }
    if sizes.is_empty() {
        return None;
    }
    let zones: Vec<(u32, usize)> = sizes.values().cloned().collect();
    let n_zones = zones.len() as f64;
    let mut by_size: std::collections::BTreeMap<usize, f64> = Default::default();
    let mut by_cell: std::collections::BTreeMap<(u32, usize), f64> = Default::default();
    for &(g, s) in &zones {
        *by_size.entry(s).or_insert(0.0) += 1.0;
        *by_cell.entry((g, s)).or_insert(0.0) += 1.0;
    }
    let szn = by_size.values().map(|c| c * c).sum::<f64>() / n_zones;
    let probs: Vec<f64> = by_cell.values().map(|c| c / n_zones).collect();
    Some(GlszmOracle {
        szn,
        sznn: szn / n_zones,
        zone_entropy: entropy(&probs),
        zones,
    })
}

#[derive(Debug, Clone)]
pub struct GldmOracle {
    pub sde: f64,
    pub dependence_entropy: f64,
}

pub fn gldm(dims: [usize; 3], labels: &[u32]) -> Option<GldmOracle> {
    let all = coords(dims);
    let mut cells: std::collections::BTreeMap<(u32, usize), f64> = Default::default();
    let mut total = 0.0;
    for &v in &all {
        let g = label_at(dims, labels, v);
        if g == 0 {
            continue;
        }
        // dependence: scan the whole grid for equal-label voxels at
        // Chebyshev distance exactly 1
        let mut dep = 0usize;
        for &w in &all {
            let cheb = (0..3).map(|a| (w[a] - v[a]).abs()).max().unwrap();
            if cheb == 1 && label_at(dims, labels, w) == g {
                dep += 1;
            }
        }
        *cells.entry((g, dep + 1)).or_insert(0.0) += 1.0;
        total += 1.0;
    }
    if total == 0.0 {
        return None;
    }
    let mut sde = 0.0;
    let mut probs = Vec::new();
    for (&(_, d), &c) in &cells {
        sde += (c / total) / (d as f64 * d as f64);
        probs.push(c / total);
    }
    Some(GldmOracle {
        sde,
        dependence_entropy: entropy(&probs),
    })
}

#[derive(Debug, Clone)]
pub struct FirstOrderOracle {
    pub mean: f64,
    pub median: f64,
    pub maximum: f64,
    pub minimum: f64,
    pub range: f64,
    pub entropy: f64,
    pub mad: f64,
    pub rms: f64,
    pub p10: f64,
    pub p90: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// First-order statistics over the masked values; `bin_labels` are the
/// discretized labels of the same voxels for the histogram entropy.
pub fn firstorder(values: &[f64], bin_labels: &[u32]) -> FirstOrderOracle {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut hist: std::collections::BTreeMap<u32, f64> = Default::default();
    for &b in bin_labels {
        *hist.entry(b).or_insert(0.0) += 1.0;
    }
    let probs: Vec<f64> = hist.values().map(|c| c / n).collect();
    FirstOrderOracle {
        mean,
        median: quantile(&sorted, 0.5),
        maximum: sorted[sorted.len() - 1],
        minimum: sorted[0],
        range: sorted[sorted.len() - 1] - sorted[0],
        entropy: entropy(&probs),
        mad: values.iter().map(|v| (v - mean).abs()).sum::<f64>() / n,
        rms: (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
        p10: quantile(&sorted, 0.10),
        p90: quantile(&sorted, 0.90),
    }
}

/// (voxel volume, sphericity) with the exposed-face area computed by
/// subtracting shared faces per axis.
pub fn shape(dims: [usize; 3], mask: &[bool], spacing: [f64; 3]) -> Option<(f64, f64)> {
    let count = mask.iter().filter(|&&b| b).count();
    if count == 0 {
        return None;
    }
    let at = |x: usize, y: usize, z: usize| mask[x + dims[0] * (y + dims[1] * z)];
    let face_area = [
        spacing[1] * spacing[2],
        spacing[0] * spacing[2],
        spacing[0] * spacing[1],
    ];
    let mut shared = [0usize; 3];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if !at(x, y, z) {
                    continue;
                }
                if x + 1 < dims[0] && at(x + 1, y, z) {
                    shared[0] += 1;
                }
                if y + 1 < dims[1] && at(x, y + 1, z) {
                    shared[1] += 1;
                }
                if z + 1 < dims[2] && at(x, y, z + 1) {
                    shared[2] += 1;
                }
            }
        }
    }
    let mut area = 0.0;
    for a in 0..3 {
        let exposed = 2 * count - 2 * shared[a];
        area += exposed as f64 * face_area[a];
    }
    let v = count as f64 * spacing[0] * spacing[1] * spacing[2];
    let sphericity = std::f64::consts::PI.powf(1.0 / 3.0) * (6.0 * v).powf(2.0 / 3.0) / area;
    Some((v, sphericity))
}
