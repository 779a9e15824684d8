//! Random forest of CART trees for feature-importance ranking.
//!
//! Gini impurity, sqrt(p) candidate features per split, bootstrap row
//! sampling, max depth 16, min leaf 5. Importance is total impurity
//! decrease per feature, normalized to sum 1.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_TREES: usize = 100;
const MAX_DEPTH: usize = 16;
const MIN_LEAF: usize = 5;

/// Row-major data access for training.
pub struct Dataset<'a> {
    pub values: &'a [f64],
    pub n_cols: usize,
    pub labels: &'a [bool],
}

impl<'a> Dataset<'a> {
    #[inline]
    fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols + col]
    }

    fn n_rows(&self) -> usize {
        self.labels.len()
    }
}

/// Per-feature Gini importances, normalized to sum 1.
///
/// Determinism: the caller is expected to pass rows in a canonical order
/// (sorted by row id); per-tree seeds derive from `seed` and the tree index.
pub fn gini_importances(data: &Dataset, trees: usize, seed: u64) -> Result<Vec<f64>> {
    let n = data.n_rows();
    let pos = data.labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == n {
        return Err(Error::SingleClass);
    }
    let importances: Vec<Vec<f64>> = (0..trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t as u64));
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut imp = vec![0.0; data.n_cols];
            grow_tree(data, rows, 0, &mut rng, &mut imp, n as f64);
            imp
        })
        .collect();
    // reduction in fixed tree-index order
    let mut total = vec![0.0; data.n_cols];
    for imp in &importances {
        for (a, v) in total.iter_mut().zip(imp.iter()) {
            *a += v;
        }
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        for v in total.iter_mut() {
            *v /= sum;
        }
    }
    Ok(total)
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

fn grow_tree(
    data: &Dataset,
    rows: Vec<usize>,
    depth: usize,
    rng: &mut ChaCha8Rng,
    importances: &mut [f64],
    n_total: f64,
) {
    let n = rows.len();
    let pos = rows.iter().filter(|&&r| data.labels[r]).count();
    if depth >= MAX_DEPTH || n < 2 * MIN_LEAF || pos == 0 || pos == n {
        return;
    }
    let parent_impurity = gini(pos, n);

    // sqrt(p) candidate features, sampled without replacement
    let m = (data.n_cols as f64).sqrt().round().max(1.0) as usize;
    let mut cols: Vec<usize> = (0..data.n_cols).collect();
    cols.shuffle(rng);
    cols.truncate(m);
    cols.sort_unstable(); // scan candidates in index order for tie stability

    let mut best: Option<(f64, usize, f64)> = None; // (decrease, col, threshold)
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for &col in &cols {
        order.clear();
        order.extend(rows.iter().cloned());
        order.sort_by(|&a, &b| {
            data.at(a, col)
                .partial_cmp(&data.at(b, col))
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut left_pos = 0usize;
        for i in 0..n - 1 {
            if data.labels[order[i]] {
                left_pos += 1;
            }
            let left_n = i + 1;
            let v = data.at(order[i], col);
            let v_next = data.at(order[i + 1], col);
            if v == v_next {
                continue;
            }
            if left_n < MIN_LEAF || n - left_n < MIN_LEAF {
                continue;
            }
            let right_n = n - left_n;
            let right_pos = pos - left_pos;
            let wl = left_n as f64 / n as f64;
            let wr = right_n as f64 / n as f64;
            let decrease =
                parent_impurity - wl * gini(left_pos, left_n) - wr * gini(right_pos, right_n);
            if best.map_or(true, |(bd, bc, _)| {
                decrease > bd + 1e-15 || ((decrease - bd).abs() <= 1e-15 && col < bc)
            }) {
                best = Some((decrease, col, (v + v_next) / 2.0));
            }
        }
    }
    let Some((decrease, col, threshold)) = best else {
        return;
    };
    importances[col] += decrease * n as f64 / n_total;
    let (left, right): (Vec<usize>, Vec<usize>) =
        rows.into_iter().partition(|&r| data.at(r, col) <= threshold);
    grow_tree(data, left, depth + 1, rng, importances, n_total);
    grow_tree(data, right, depth + 1, rng, importances, n_total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn informative_column_ranks_first() {
        let mut successes = 0;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = 200;
            let p = 8;
            let mut values = Vec::with_capacity(n * p);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let label = rng.gen_bool(0.5);
                for col in 0..p {
                    if col == 3 {
                        values.push(if label { 1.0 } else { 0.0 });
                    } else {
                        values.push(rng.gen::<f64>());
                    }
                }
                labels.push(label);
            }
            let data = Dataset {
                values: &values,
                n_cols: p,
                labels: &labels,
            };
            let imp = gini_importances(&data, 30, seed).unwrap();
            let top = imp
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if top == 3 {
                successes += 1;
            }
        }
        assert!(successes >= 49, "label column ranked first in {successes}/50 runs");
    }

    #[test]
    fn importances_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 120;
        let p = 6;
        let values: Vec<f64> = (0..n * p).map(|_| rng.gen()).collect();
        let labels: Vec<bool> = (0..n).map(|i| values[i * p] > 0.5).collect();
        let data = Dataset {
            values: &values,
            n_cols: p,
            labels: &labels,
        };
        let imp = gini_importances(&data, 20, 9).unwrap();
        assert!(imp.iter().all(|&v| v >= 0.0));
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100;
        let p = 5;
        let values: Vec<f64> = (0..n * p).map(|_| rng.gen()).collect();
        let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let data = Dataset {
            values: &values,
            n_cols: p,
            labels: &labels,
        };
        let a = gini_importances(&data, 25, 42).unwrap();
        let b = gini_importances(&data, 25, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_errors() {
        let values = vec![0.0; 50 * 3];
        let labels = vec![true; 50];
        let data = Dataset {
            values: &values,
            n_cols: 3,
            labels: &labels,
        };
        assert!(matches!(
            gini_importances(&data, 10, 0),
            Err(Error::SingleClass)
        ));
    }
}
