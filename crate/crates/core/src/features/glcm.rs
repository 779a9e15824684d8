//! Gray-level co-occurrence matrix descriptors.
//!
//! Intensities are quantized to equal-width bins over the region's min-max
//! range; co-occurrence counts are symmetric and include only pairs with
//! both pixels inside the region. Descriptors are averaged over the four
//! angles and reported per distance.

use super::region::Region;

pub const GLCM_DESCRIPTOR_NAMES: [&str; 11] = [
    "contrast",
    "dissimilarity",
    "homogeneity",
    "asm",
    "energy",
    "entropy",
    "correlation",
    "cluster_shade",
    "cluster_prominence",
    "max_probability",
    "sum_average",
];

/// Angle offsets (drow, dcol) for 0, 45, 90, 135 degrees at unit distance.
pub const ANGLES: [(i64, i64); 4] = [(0, 1), (-1, 1), (-1, 0), (-1, -1)];

/// Symmetric normalized co-occurrence matrix for one offset, or None when
/// the offset produces no valid pair.
pub fn cooccurrence_matrix(
    quantized: &[i32],
    width: usize,
    height: usize,
    levels: usize,
    offset: (i64, i64),
) -> Option<Vec<f64>> {
    let mut counts = vec![0u64; levels * levels];
    let mut total = 0u64;
    for r in 0..height as i64 {
        for c in 0..width as i64 {
            let a = quantized[(r * width as i64 + c) as usize];
            if a < 0 {
                continue;
            }
            let (nr, nc) = (r + offset.0, c + offset.1);
            if nr < 0 || nc < 0 || nr >= height as i64 || nc >= width as i64 {
                continue;
            }
            let b = quantized[(nr * width as i64 + nc) as usize];
            if b < 0 {
                continue;
            }
            counts[a as usize * levels + b as usize] += 1;
            counts[b as usize * levels + a as usize] += 1;
            total += 2;
        }
    }
    if total == 0 {
        return None;
    }
    Some(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// The 11 descriptors of one normalized GLCM.
pub fn glcm_descriptors(p: &[f64], levels: usize) -> Vec<f64> {
    let mut contrast = 0.0;
    let mut dissimilarity = 0.0;
    let mut homogeneity = 0.0;
    let mut asm = 0.0;
    let mut entropy = 0.0;
    let mut max_prob: f64 = 0.0;
    let mut sum_average = 0.0;
    let mut mu_i = 0.0;
    let mut mu_j = 0.0;
    for i in 0..levels {
        for j in 0..levels {
            let v = p[i * levels + j];
            if v == 0.0 {
                continue;
            }
            let d = i as f64 - j as f64;
            contrast += v * d * d;
            dissimilarity += v * d.abs();
            homogeneity += v / (1.0 + d * d);
            asm += v * v;
            entropy -= v * v.log2();
            max_prob = max_prob.max(v);
            sum_average += v * (i as f64 + j as f64);
            mu_i += v * i as f64;
            mu_j += v * j as f64;
        }
    }
    let mut var_i = 0.0;
    let mut var_j = 0.0;
    let mut cov = 0.0;
    let mut shade = 0.0;
    let mut prominence = 0.0;
    for i in 0..levels {
        for j in 0..levels {
            let v = p[i * levels + j];
            if v == 0.0 {
                continue;
            }
            let di = i as f64 - mu_i;
            let dj = j as f64 - mu_j;
            var_i += v * di * di;
            var_j += v * dj * dj;
            cov += v * di * dj;
            let s = i as f64 + j as f64 - mu_i - mu_j;
            shade += v * s * s * s;
            prominence += v * s * s * s * s;
        }
    }
    let sigma = (var_i * var_j).sqrt();
    let correlation = if sigma > 0.0 { cov / sigma } else { 1.0 };
    vec![
        contrast,
        dissimilarity,
        homogeneity,
        asm,
        asm.sqrt(),
        entropy,
        correlation,
        shade,
        prominence,
        max_prob,
        sum_average,
    ]
}

/// Angle-averaged descriptors per distance. Angles with no valid pair are
/// skipped from the average; a distance where no angle yields pairs reports
/// all-zero descriptors (correlation 1 slots included as 0).
pub fn glcm_features_per_distance(region: &Region, levels: usize, distances: &[i64]) -> Vec<Vec<f64>> {
    let quantized = region.quantized(levels);
    distances
        .iter()
        .map(|&d| {
            let mut acc = vec![0.0; GLCM_DESCRIPTOR_NAMES.len()];
            let mut n = 0usize;
            for &(dr, dc) in &ANGLES {
                if let Some(p) =
                    cooccurrence_matrix(&quantized, region.width, region.height, levels, (dr * d, dc * d))
                {
                    let desc = glcm_descriptors(&p, levels);
                    for (a, v) in acc.iter_mut().zip(desc.iter()) {
                        *a += v;
                    }
                    n += 1;
                }
            }
            if n > 0 {
                for a in acc.iter_mut() {
                    *a /= n as f64;
                }
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region_from_grid(grid: &[&[f64]]) -> Region {
        let height = grid.len();
        let width = grid[0].len();
        let mut values = Vec::new();
        for row in grid {
            values.extend_from_slice(row);
        }
        Region {
            width,
            height,
            values,
            inside: vec![true; width * height],
        }
    }

    #[test]
    fn checkerboard_distance1_angle0() {
        let grid: Vec<Vec<f64>> = (0..4)
            .map(|r| (0..4).map(|c| ((r + c) % 2) as f64).collect())
            .collect();
        let refs: Vec<&[f64]> = grid.iter().map(|r| r.as_slice()).collect();
        let region = region_from_grid(&refs);
        let q = region.quantized(2);
        let p = cooccurrence_matrix(&q, 4, 4, 2, (0, 1)).unwrap();
        let d = glcm_descriptors(&p, 2);
        let idx = |n: &str| {
            GLCM_DESCRIPTOR_NAMES
                .iter()
                .position(|&x| x == n)
                .unwrap()
        };
        // every horizontal pair differs by exactly one level
        assert!((d[idx("contrast")] - 1.0).abs() < 1e-12);
        assert!((d[idx("homogeneity")] - 0.5).abs() < 1e-12);
        assert!((d[idx("dissimilarity")] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_region_degenerate() {
        let region = Region {
            width: 8,
            height: 8,
            values: vec![0.7; 64],
            inside: vec![true; 64],
        };
        let per_d = glcm_features_per_distance(&region, 32, &[1, 2, 3]);
        let idx = |n: &str| {
            GLCM_DESCRIPTOR_NAMES
                .iter()
                .position(|&x| x == n)
                .unwrap()
        };
        for d in &per_d {
            assert_eq!(d[idx("contrast")], 0.0);
            assert_eq!(d[idx("asm")], 1.0);
            assert_eq!(d[idx("entropy")], 0.0);
            assert_eq!(d[idx("correlation")], 1.0);
        }
    }

    #[test]
    fn matrix_is_symmetric_and_normalized() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let region = Region {
            width: 16,
            height: 16,
            values: (0..256).map(|_| rng.gen::<f64>()).collect(),
            inside: (0..256).map(|_| rng.gen_bool(0.8)).collect(),
        };
        let q = region.quantized(8);
        for &(dr, dc) in &ANGLES {
            if let Some(p) = cooccurrence_matrix(&q, 16, 16, 8, (dr, dc)) {
                let sum: f64 = p.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                for i in 0..8 {
                    for j in 0..8 {
                        assert_eq!(p[i * 8 + j], p[j * 8 + i]);
                    }
                }
            }
        }
    }

    /// Brute-force pair-enumeration oracle: walk every pixel pair at the
    /// given offset in both directions and tally raw statistics.
    fn oracle_descriptors(region: &Region, levels: usize, offset: (i64, i64)) -> Option<Vec<f64>> {
        let q = region.quantized(levels);
        let (w, h) = (region.width as i64, region.height as i64);
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let a = q[(r * w + c) as usize];
                if a < 0 {
                    continue;
                }
                for &(dr, dc) in &[offset, (-offset.0, -offset.1)] {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h || nc >= w {
                        continue;
                    }
                    let b = q[(nr * w + nc) as usize];
                    if b >= 0 {
                        pairs.push((a as usize, b as usize));
                    }
                }
            }
        }
        if pairs.is_empty() {
            return None;
        }
        let total = pairs.len() as f64;
        let mut p = vec![0.0; levels * levels];
        for &(a, b) in &pairs {
            p[a * levels + b] += 1.0 / total;
        }
        Some(glcm_descriptors_oracle(&p, levels))
    }

    fn glcm_descriptors_oracle(p: &[f64], levels: usize) -> Vec<f64> {
        // recomputed from the definitions, scalar loops throughout
        let at = |i: usize, j: usize| p[i * levels + j];
        let mut out = Vec::new();
        let mut mu_i = 0.0;
        let mut mu_j = 0.0;
        for i in 0..levels {
            for j in 0..levels {
                mu_i += i as f64 * at(i, j);
                mu_j += j as f64 * at(i, j);
            }
        }
        let sum2 = |f: &dyn Fn(usize, usize) -> f64| {
            let mut s = 0.0;
            for i in 0..levels {
                for j in 0..levels {
                    s += f(i, j) * at(i, j);
                }
            }
            s
        };
        out.push(sum2(&|i, j| (i as f64 - j as f64).powi(2)));
        out.push(sum2(&|i, j| (i as f64 - j as f64).abs()));
        out.push(sum2(&|i, j| 1.0 / (1.0 + (i as f64 - j as f64).powi(2))));
        let asm: f64 = p.iter().map(|&v| v * v).sum();
        out.push(asm);
        out.push(asm.sqrt());
        out.push(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>());
        let var_i = sum2(&|i, _| (i as f64 - mu_i).powi(2));
        let var_j = sum2(&|_, j| (j as f64 - mu_j).powi(2));
        let cov = sum2(&|i, j| (i as f64 - mu_i) * (j as f64 - mu_j));
        out.push(if var_i * var_j > 0.0 {
            cov / (var_i * var_j).sqrt()
        } else {
            1.0
        });
        out.push(sum2(&|i, j| (i as f64 + j as f64 - mu_i - mu_j).powi(3)));
        out.push(sum2(&|i, j| (i as f64 + j as f64 - mu_i - mu_j).powi(4)));
        out.push(p.iter().cloned().fold(0.0f64, f64::max));
        out.push(sum2(&|i, j| i as f64 + j as f64));
        out
    }

    #[test]
    fn random_regions_match_pair_enumeration_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let region = Region {
                width: 16,
                height: 16,
                values: (0..256).map(|_| rng.gen::<f64>()).collect(),
                inside: (0..256).map(|_| rng.gen_bool(0.85)).collect(),
            };
            if region.pixel_count() < 4 {
                continue;
            }
            let q = region.quantized(8);
            for d in [1i64, 2, 3] {
                for &(dr, dc) in &ANGLES {
                    let offset = (dr * d, dc * d);
                    let ours =
                        cooccurrence_matrix(&q, 16, 16, 8, offset).map(|p| glcm_descriptors(&p, 8));
                    let oracle = oracle_descriptors(&region, 8, offset);
                    match (ours, oracle) {
                        (None, None) => {}
                        (Some(a), Some(b)) => {
                            for (x, y) in a.iter().zip(b.iter()) {
                                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
                            }
                        }
                        (a, b) => panic!("pair availability mismatch: {:?} {:?}", a, b),
                    }
                }
            }
        }
    }

    #[test]
    fn affine_rescale_leaves_descriptors_unchanged() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..256).map(|_| rng.gen::<f64>()).collect();
        let region = Region {
            width: 16,
            height: 16,
            values: values.clone(),
            inside: vec![true; 256],
        };
        let scaled = Region {
            width: 16,
            height: 16,
            values: values.iter().map(|&v| 3.0 * v + 11.0).collect(),
            inside: vec![true; 256],
        };
        let a = glcm_features_per_distance(&region, 32, &[1, 2, 3]);
        let b = glcm_features_per_distance(&scaled, 32, &[1, 2, 3]);
        for (da, db) in a.iter().zip(b.iter()) {
            for (x, y) in da.iter().zip(db.iter()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
