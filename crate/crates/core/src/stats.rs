//! Evaluation statistics: mask agreement, rank correlation, two-sample
//! tests, logistic and conditional logistic regression, AUC with a
//! matched-stratum bootstrap, and case-control report generation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::segmentation::{RegionLabel, RegionMask};

pub const BOOTSTRAP_REPLICATES: usize = 1000;

const CLASSES: [RegionLabel; 3] = [
    RegionLabel::Background,
    RegionLabel::Pectoralis,
    RegionLabel::Breast,
];

fn check_shapes(a: &RegionMask, b: &RegionMask) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch {
            left_w: a.width,
            left_h: a.height,
            right_w: b.width,
            right_h: b.height,
        });
    }
    Ok(())
}

/// Dice coefficient for one class; 1.0 when the class is absent from both.
pub fn dice(pred: &RegionMask, reference: &RegionMask, class: RegionLabel) -> Result<f64> {
    check_shapes(pred, reference)?;
    let mut inter = 0usize;
    let mut pa = 0usize;
    let mut pb = 0usize;
    for (&x, &y) in pred.labels.iter().zip(&reference.labels) {
        if x == class {
            pa += 1;
        }
        if y == class {
            pb += 1;
        }
        if x == class && y == class {
            inter += 1;
        }
    }
    if pa + pb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (pa + pb) as f64)
}

/// Sensitivity (recall) for one class against the reference; 1.0 when the
/// class is absent from the reference.
pub fn sensitivity(pred: &RegionMask, reference: &RegionMask, class: RegionLabel) -> Result<f64> {
    check_shapes(pred, reference)?;
    let mut hit = 0usize;
    let mut total = 0usize;
    for (&x, &y) in pred.labels.iter().zip(&reference.labels) {
        if y == class {
            total += 1;
            if x == class {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(hit as f64 / total as f64)
}

/// Weights proportional to the inverse class frequency in the reference,
/// normalized to sum 1 over the classes present. Absent classes get zero.
fn class_weights(reference: &RegionMask) -> [f64; 3] {
    let mut counts = [0usize; 3];
    for &l in &reference.labels {
        counts[l as usize] += 1;
    }
    let mut weights = [0.0; 3];
    let mut sum = 0.0;
    for (w, &c) in weights.iter_mut().zip(&counts) {
        if c > 0 {
            *w = 1.0 / c as f64;
            sum += *w;
        }
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
    weights
}

/// Class-weighted mean Dice over the classes present in the reference.
pub fn weighted_dice(pred: &RegionMask, reference: &RegionMask) -> Result<f64> {
    let weights = class_weights(reference);
    let mut total = 0.0;
    for (class, &w) in CLASSES.iter().zip(&weights) {
        if w > 0.0 {
            total += w * dice(pred, reference, *class)?;
        }
    }
    Ok(total)
}

/// Class-weighted mean sensitivity over the classes present in the reference.
pub fn weighted_sensitivity(pred: &RegionMask, reference: &RegionMask) -> Result<f64> {
    let weights = class_weights(reference);
    let mut total = 0.0;
    for (class, &w) in CLASSES.iter().zip(&weights) {
        if w > 0.0 {
            total += w * sensitivity(pred, reference, *class)?;
        }
    }
    Ok(total)
}

/// Mid-ranks (average rank for ties), 1-based.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with mid-ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return Err(Error::InvalidInput("need at least two pairs".into()));
    }
    let rx = midranks(x);
    let ry = midranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantVector);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MannWhitney {
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

const EXACT_LIMIT: usize = 16;

fn u_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for &x in a {
        for &y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// Two-sided Mann-Whitney U test. Exact permutation enumeration when the
/// combined sample size is at most 16, otherwise a normal approximation
/// with tie correction.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("empty sample".into()));
    }
    let u = u_statistic(a, b);
    let n1 = a.len();
    let n2 = b.len();
    if n1 + n2 <= EXACT_LIMIT {
        let mut pooled: Vec<f64> = a.iter().chain(b).cloned().collect();
        pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let n = pooled.len();
        let mut le = 0u64;
        let mut ge = 0u64;
        let mut total = 0u64;
        let mut chosen = vec![0usize; n1];
        enumerate_combinations(n, n1, &mut chosen, 0, 0, &mut |sel| {
            let group_a: Vec<f64> = sel.iter().map(|&i| pooled[i]).collect();
            let rest: Vec<f64> = (0..n)
                .filter(|i| !sel.contains(i))
                .map(|i| pooled[i])
                .collect();
            let up = u_statistic(&group_a, &rest);
            total += 1;
            if up <= u + 1e-12 {
                le += 1;
            }
            if up >= u - 1e-12 {
                ge += 1;
            }
        });
        let p = (2.0 * (le.min(ge) as f64) / total as f64).min(1.0);
        Ok(MannWhitney {
            u,
            p_value: p,
            exact: true,
        })
    } else {
        let n = (n1 + n2) as f64;
        let mean = n1 as f64 * n2 as f64 / 2.0;
        // tie correction on the pooled sample
        let pooled: Vec<f64> = a.iter().chain(b).cloned().collect();
        let ranks = midranks(&pooled);
        let mut tie_term = 0.0;
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for &r in &ranks {
            *counts.entry(r.to_bits()).or_insert(0) += 1;
        }
        for &t in counts.values() {
            let t = t as f64;
            tie_term += t * t * t - t;
        }
        let var = n1 as f64 * n2 as f64 / 12.0 * (n + 1.0 - tie_term / (n * (n - 1.0)));
        if var <= 0.0 {
            return Err(Error::ConstantVector);
        }
        let z = (u - mean).abs() / var.sqrt();
        let p = 2.0 * (1.0 - standard_normal_cdf(z));
        Ok(MannWhitney {
            u,
            p_value: p.min(1.0),
            exact: false,
        })
    }
}

fn enumerate_combinations(
    n: usize,
    k: usize,
    chosen: &mut Vec<usize>,
    start: usize,
    depth: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == k {
        visit(chosen);
        return;
    }
    for i in start..=n - (k - depth) {
        chosen[depth] = i;
        enumerate_combinations(n, k, chosen, i + 1, depth + 1, visit);
    }
}

fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Solves A x = b by Gaussian elimination with partial pivoting.
fn solve(a: &mut [f64], b: &mut [f64], dim: usize) -> Result<Vec<f64>> {
    for col in 0..dim {
        let pivot = (col..dim)
            .max_by(|&i, &j| a[i * dim + col].abs().partial_cmp(&a[j * dim + col].abs()).unwrap())
            .unwrap();
        if a[pivot * dim + col].abs() < 1e-12 {
            return Err(Error::SingularInformation);
        }
        if pivot != col {
            for c in 0..dim {
                a.swap(col * dim + c, pivot * dim + c);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..dim {
            let f = a[row * dim + col] / a[col * dim + col];
            for c in col..dim {
                a[row * dim + c] -= f * a[col * dim + c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; dim];
    for col in (0..dim).rev() {
        let mut v = b[col];
        for c in col + 1..dim {
            v -= a[col * dim + c] * x[c];
        }
        x[col] = v / a[col * dim + col];
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Intercept followed by one coefficient per covariate column.
    pub coefficients: Vec<f64>,
    /// Wald standard errors in the same order.
    pub standard_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

impl LogisticFit {
    /// Odds ratio and 95% Wald interval for one covariate (0 = first
    /// covariate after the intercept).
    pub fn odds_ratio(&self, covariate: usize) -> (f64, f64, f64) {
        let beta = self.coefficients[covariate + 1];
        let se = self.standard_errors[covariate + 1];
        (
            beta.exp(),
            (beta - 1.959_963_984_540_054 * se).exp(),
            (beta + 1.959_963_984_540_054 * se).exp(),
        )
    }
}

const NEWTON_MAX_ITERS: usize = 200;
const NEWTON_GRAD_TOL: f64 = 1e-8;
const SEPARATION_BOUND: f64 = 30.0;

/// Maximum-likelihood logistic regression with a damped Newton solver.
/// `x` is row-major without an intercept column; one is added internally.
pub fn logistic_fit(x: &[f64], n_cols: usize, y: &[bool]) -> Result<LogisticFit> {
    let n = y.len();
    assert_eq!(x.len(), n * n_cols);
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == n {
        return Err(Error::SingleClass);
    }
    let dim = n_cols + 1;
    let design = |r: usize, c: usize| -> f64 {
        if c == 0 {
            1.0
        } else {
            x[r * n_cols + c - 1]
        }
    };
    let loglik = |beta: &[f64]| -> f64 {
        let mut ll = 0.0;
        for r in 0..n {
            let eta: f64 = (0..dim).map(|c| beta[c] * design(r, c)).sum();
            ll += if y[r] { eta } else { 0.0 } - softplus(eta);
        }
        ll
    };
    let mut beta = vec![0.0; dim];
    let mut ll = loglik(&beta);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut grad = vec![0.0; dim];
        let mut info = vec![0.0; dim * dim];
        for r in 0..n {
            let eta: f64 = (0..dim).map(|c| beta[c] * design(r, c)).sum();
            let p = 1.0 / (1.0 + (-eta).exp());
            let resid = if y[r] { 1.0 - p } else { -p };
            let w = p * (1.0 - p);
            for c in 0..dim {
                grad[c] += resid * design(r, c);
                for c2 in 0..dim {
                    info[c * dim + c2] += w * design(r, c) * design(r, c2);
                }
            }
        }
        let gmax = grad.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
        if gmax < NEWTON_GRAD_TOL {
            break;
        }
        if iterations > NEWTON_MAX_ITERS {
            return Err(Error::Separation);
        }
        let step = solve(&mut info.clone(), &mut grad.clone(), dim)?;
        // step halving to guarantee monotone likelihood
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let trial_ll = loglik(&trial);
            if trial_ll >= ll - 1e-12 {
                beta = trial;
                ll = trial_ll;
                break;
            }
            scale *= 0.5;
            if scale < 1e-10 {
                return Err(Error::SingularInformation);
            }
        }
        if beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            return Err(Error::Separation);
        }
    }
    // standard errors from the inverse information at the optimum
    let mut info = vec![0.0; dim * dim];
    for r in 0..n {
        let eta: f64 = (0..dim).map(|c| beta[c] * design(r, c)).sum();
        let p = 1.0 / (1.0 + (-eta).exp());
        let w = p * (1.0 - p);
        for c in 0..dim {
            for c2 in 0..dim {
                info[c * dim + c2] += w * design(r, c) * design(r, c2);
            }
        }
    }
    let mut se = vec![0.0; dim];
    for c in 0..dim {
        let mut e = vec![0.0; dim];
        e[c] = 1.0;
        let col = solve(&mut info.clone(), &mut e, dim)?;
        if col[c] < 0.0 {
            return Err(Error::SingularInformation);
        }
        se[c] = col[c].sqrt();
    }
    Ok(LogisticFit {
        coefficients: beta,
        standard_errors: se,
        log_likelihood: ll,
        iterations,
    })
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}

/// One matched stratum: the case row plus its matched control rows, given
/// as covariate vectors in the same column order.
#[derive(Debug, Clone)]
pub struct Stratum {
    pub case: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
}

/// Conditional logistic regression for matched case-control strata, fitted
/// by damped Newton on the conditional likelihood. No intercept term:
/// stratum-constant effects cancel.
pub fn conditional_logistic_fit(strata: &[Stratum], n_cols: usize) -> Result<LogisticFit> {
    if strata.is_empty() {
        return Err(Error::InvalidInput("no strata".into()));
    }
    for s in strata {
        assert_eq!(s.case.len(), n_cols);
        for c in &s.controls {
            assert_eq!(c.len(), n_cols);
        }
    }
    let loglik = |beta: &[f64]| -> f64 {
        let mut ll = 0.0;
        for s in strata {
            let eta_case: f64 = s.case.iter().zip(beta).map(|(x, b)| x * b).sum();
            let mut max_eta = eta_case;
            let etas: Vec<f64> = s
                .controls
                .iter()
                .map(|row| row.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>())
                .collect();
            for &e in &etas {
                max_eta = max_eta.max(e);
            }
            let denom = (eta_case - max_eta).exp()
                + etas.iter().map(|e| (e - max_eta).exp()).sum::<f64>();
            ll += eta_case - max_eta - denom.ln();
        }
        ll
    };
    let mut beta = vec![0.0; n_cols];
    let mut ll = loglik(&beta);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut grad = vec![0.0; n_cols];
        let mut info = vec![0.0; n_cols * n_cols];
        for s in strata {
            let rows: Vec<&Vec<f64>> = std::iter::once(&s.case).chain(&s.controls).collect();
            let etas: Vec<f64> = rows
                .iter()
                .map(|row| row.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>())
                .collect();
            let max_eta = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = etas.iter().map(|e| (e - max_eta).exp()).collect();
            let wsum: f64 = weights.iter().sum();
            let probs: Vec<f64> = weights.iter().map(|w| w / wsum).collect();
            let mut mean = vec![0.0; n_cols];
            for (row, &p) in rows.iter().zip(&probs) {
                for c in 0..n_cols {
                    mean[c] += p * row[c];
                }
            }
            for c in 0..n_cols {
                grad[c] += s.case[c] - mean[c];
            }
            for (row, &p) in rows.iter().zip(&probs) {
                for c in 0..n_cols {
                    for c2 in 0..n_cols {
                        info[c * n_cols + c2] += p * (row[c] - mean[c]) * (row[c2] - mean[c2]);
                    }
                }
            }
        }
        let gmax = grad.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
        if gmax < NEWTON_GRAD_TOL {
            break;
        }
        if iterations > NEWTON_MAX_ITERS {
            return Err(Error::Separation);
        }
        let step = solve(&mut info.clone(), &mut grad.clone(), n_cols)?;
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let trial_ll = loglik(&trial);
            if trial_ll >= ll - 1e-12 {
                beta = trial;
                ll = trial_ll;
                break;
            }
            scale *= 0.5;
            if scale < 1e-10 {
                return Err(Error::SingularInformation);
            }
        }
        if beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            return Err(Error::Separation);
        }
    }
    let mut info = vec![0.0; n_cols * n_cols];
    for s in strata {
        let rows: Vec<&Vec<f64>> = std::iter::once(&s.case).chain(&s.controls).collect();
        let etas: Vec<f64> = rows
            .iter()
            .map(|row| row.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>())
            .collect();
        let max_eta = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = etas.iter().map(|e| (e - max_eta).exp()).collect();
        let wsum: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / wsum).collect();
        let mut mean = vec![0.0; n_cols];
        for (row, &p) in rows.iter().zip(&probs) {
            for c in 0..n_cols {
                mean[c] += p * row[c];
            }
        }
        for (row, &p) in rows.iter().zip(&probs) {
            for c in 0..n_cols {
                for c2 in 0..n_cols {
                    info[c * n_cols + c2] += p * (row[c] - mean[c]) * (row[c2] - mean[c2]);
                }
            }
        }
    }
    let mut se = vec![0.0; n_cols];
    for c in 0..n_cols {
        let mut e = vec![0.0; n_cols];
        e[c] = 1.0;
        let col = solve(&mut info.clone(), &mut e, n_cols)?;
        if col[c] < 0.0 {
            return Err(Error::SingularInformation);
        }
        se[c] = col[c].sqrt();
    }
    // keep the LogisticFit shape: a pseudo-intercept of zero keeps
    // odds_ratio() indexing consistent across the two models
    let mut coefficients = vec![0.0];
    coefficients.extend_from_slice(&beta);
    let mut standard_errors = vec![0.0];
    standard_errors.extend_from_slice(&se);
    Ok(LogisticFit {
        coefficients,
        standard_errors,
        log_likelihood: ll,
        iterations,
    })
}

/// AUC of `scores` for separating positives from negatives, computed by
/// the mid-rank (Mann-Whitney) formulation.
pub fn auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), positives.len());
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(positives)
        .filter(|(_, &p)| p)
        .map(|(&r, _)| r)
        .sum();
    Ok((rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapAuc {
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Two-sided bootstrap p-value against AUC = 0.5.
    pub p_value: f64,
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Stratum picks for one bootstrap replicate: whole strata are drawn with
/// replacement, so every draw keeps its case-control composition intact.
pub fn bootstrap_stratum_indices(n_strata: usize, replicate: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x2545_F491_4F6C_DD1D)
            .wrapping_add(replicate as u64),
    );
    (0..n_strata).map(|_| rng.gen_range(0..n_strata)).collect()
}

/// Stratified bootstrap for a matched design: whole strata are resampled
/// with replacement so the matching structure survives resampling.
/// `strata` maps each stratum to its (scores, positive flags).
pub fn auc_matched_bootstrap(
    strata: &[(Vec<f64>, Vec<bool>)],
    replicates: usize,
    seed: u64,
) -> Result<BootstrapAuc> {
    let all_scores: Vec<f64> = strata.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    let all_pos: Vec<bool> = strata.iter().flat_map(|(_, p)| p.iter().cloned()).collect();
    let point = auc(&all_scores, &all_pos)?;
    let mut replicate_aucs = Vec::with_capacity(replicates);
    for b in 0..replicates {
        let mut scores = Vec::new();
        let mut pos = Vec::new();
        for pick in bootstrap_stratum_indices(strata.len(), b, seed) {
            scores.extend_from_slice(&strata[pick].0);
            pos.extend_from_slice(&strata[pick].1);
        }
        match auc(&scores, &pos) {
            Ok(v) => replicate_aucs.push(v),
            Err(Error::SingleClass) => replicate_aucs.push(0.5),
            Err(e) => return Err(e),
        }
    }
    replicate_aucs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ci_low = percentile_sorted(&replicate_aucs, 2.5);
    let ci_high = percentile_sorted(&replicate_aucs, 97.5);
    let below = replicate_aucs.iter().filter(|&&v| v <= 0.5).count();
    let above = replicate_aucs.len() - below;
    let p_value = (2.0 * (below.min(above) + 1) as f64 / (replicates + 1) as f64).min(1.0);
    Ok(BootstrapAuc {
        auc: point,
        ci_low,
        ci_high,
        p_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    None,
    Log,
    Sqrt,
}

impl Transform {
    pub fn name(&self) -> &'static str {
        match self {
            Transform::None => "none",
            Transform::Log => "log",
            Transform::Sqrt => "sqrt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Transform::None),
            "log" => Ok(Transform::Log),
            "sqrt" => Ok(Transform::Sqrt),
            other => Err(Error::InvalidInput(format!("unknown transform {other:?}"))),
        }
    }
}

/// Applies a variance-stabilizing transform; domain violations name the
/// offending subject.
pub fn transform_measure(value: f64, transform: Transform, subject: &str) -> Result<f64> {
    match transform {
        Transform::None => Ok(value),
        Transform::Log => {
            if value <= 0.0 {
                Err(Error::TransformDomain {
                    subject: subject.to_string(),
                    detail: format!("log of non-positive value {value}"),
                })
            } else {
                Ok(value.ln())
            }
        }
        Transform::Sqrt => {
            if value < 0.0 {
                Err(Error::TransformDomain {
                    subject: subject.to_string(),
                    detail: format!("sqrt of negative value {value}"),
                })
            } else {
                Ok(value.sqrt())
            }
        }
    }
}

/// One subject in a matched case-control study.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseControlRecord {
    pub subject_id: String,
    pub stratum_id: String,
    pub is_case: bool,
    pub age: f64,
    pub bmi: f64,
    pub measures: BTreeMap<String, f64>,
}

pub fn read_case_control_csv(path: &Path) -> Result<Vec<CaseControlRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::InvalidInput(format!("{}: {e}", path.display())),
        _ => Error::InvalidInput(format!("{}: {e}", path.display())),
    })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let fixed = ["subject_id", "stratum_id", "status", "age", "bmi"];
    if headers.len() < fixed.len() || headers[..fixed.len()] != fixed {
        return Err(Error::InvalidInput(format!(
            "{}: expected leading columns {fixed:?}",
            path.display()
        )));
    }
    let measure_names = &headers[fixed.len()..];
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        let status = match &row[2] {
            "case" => true,
            "control" => false,
            other => {
                return Err(Error::InvalidInput(format!(
                    "{}: bad status {other:?} for subject {}",
                    path.display(),
                    &row[0]
                )))
            }
        };
        let parse_f = |idx: usize, what: &str| -> Result<f64> {
            row[idx].parse().map_err(|_| {
                Error::InvalidInput(format!(
                    "{}: bad {what} {:?} for subject {}",
                    path.display(),
                    &row[idx],
                    &row[0]
                ))
            })
        };
        let mut measures = BTreeMap::new();
        for (i, name) in measure_names.iter().enumerate() {
            measures.insert(name.clone(), parse_f(fixed.len() + i, name)?);
        }
        records.push(CaseControlRecord {
            subject_id: row[0].to_string(),
            stratum_id: row[1].to_string(),
            is_case: status,
            age: parse_f(3, "age")?,
            bmi: parse_f(4, "bmi")?,
            measures,
        });
    }
    if records.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no subject rows",
            path.display()
        )));
    }
    Ok(records)
}

pub fn write_case_control_csv(records: &[CaseControlRecord], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| {
        Error::InvalidInput(format!("{}: {e}", path.display()))
    })?;
    let measure_names: Vec<String> = records
        .first()
        .map(|r| r.measures.keys().cloned().collect())
        .unwrap_or_default();
    let mut header = vec![
        "subject_id".to_string(),
        "stratum_id".to_string(),
        "status".to_string(),
        "age".to_string(),
        "bmi".to_string(),
    ];
    header.extend(measure_names.iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    for r in records {
        let mut row = vec![
            r.subject_id.clone(),
            r.stratum_id.clone(),
            if r.is_case { "case" } else { "control" }.to_string(),
            format!("{:.17e}", r.age),
            format!("{:.17e}", r.bmi),
        ];
        for name in &measure_names {
            row.push(format!("{:.17e}", r.measures[name]));
        }
        writer
            .write_record(&row)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(path, e))
}

/// One row of the association report: a measure under one transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub measure: String,
    pub transform: Transform,
    /// Odds ratio per standard deviation from conditional logistic
    /// regression adjusted for age and BMI, with 95% Wald interval.
    pub odds_ratio: f64,
    pub or_ci_low: f64,
    pub or_ci_high: f64,
    pub auc: f64,
    pub auc_ci_low: f64,
    pub auc_ci_high: f64,
    pub auc_p_value: f64,
}

/// Builds conditional-logistic strata from records: one case per stratum,
/// covariates [z-scored transformed measure, age, bmi].
fn build_strata(
    records: &[CaseControlRecord],
    measure: &str,
    transform: Transform,
) -> Result<(Vec<Stratum>, Vec<(Vec<f64>, Vec<bool>)>)> {
    let mut transformed: Vec<f64> = Vec::with_capacity(records.len());
    for r in records {
        let raw = *r.measures.get(measure).ok_or_else(|| {
            Error::InvalidInput(format!("subject {}: missing measure {measure:?}", r.subject_id))
        })?;
        transformed.push(transform_measure(raw, transform, &r.subject_id)?);
    }
    let n = transformed.len() as f64;
    let mean = transformed.iter().sum::<f64>() / n;
    let sd = (transformed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return Err(Error::ConstantVector);
    }
    let z: Vec<f64> = transformed.iter().map(|v| (v - mean) / sd).collect();

    let mut by_stratum: BTreeMap<&String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_stratum.entry(&r.stratum_id).or_default().push(i);
    }
    let mut strata = Vec::new();
    let mut auc_strata = Vec::new();
    for (sid, members) in by_stratum {
        let cases: Vec<usize> = members.iter().cloned().filter(|&i| records[i].is_case).collect();
        if cases.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "stratum {sid}: expected exactly one case, found {}",
                cases.len()
            )));
        }
        let controls: Vec<usize> = members.iter().cloned().filter(|&i| !records[i].is_case).collect();
        if controls.is_empty() {
            return Err(Error::InvalidInput(format!("stratum {sid}: no controls")));
        }
        let cov = |i: usize| vec![z[i], records[i].age, records[i].bmi];
        strata.push(Stratum {
            case: cov(cases[0]),
            controls: controls.iter().map(|&i| cov(i)).collect(),
        });
        let scores: Vec<f64> = members.iter().map(|&i| z[i]).collect();
        let pos: Vec<bool> = members.iter().map(|&i| records[i].is_case).collect();
        auc_strata.push((scores, pos));
    }
    Ok((strata, auc_strata))
}

/// Runs the full association analysis for every (measure, transform) pair.
pub fn case_control_report(
    records: &[CaseControlRecord],
    measures: &[(String, Transform)],
    bootstrap_replicates: usize,
    seed: u64,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for (m_idx, (measure, transform)) in measures.iter().enumerate() {
        let (strata, auc_strata) = build_strata(records, measure, *transform)?;
        let fit = conditional_logistic_fit(&strata, 3)?;
        let (or, lo, hi) = fit.odds_ratio(0);
        let boot = auc_matched_bootstrap(
            &auc_strata,
            bootstrap_replicates,
            seed.wrapping_add(m_idx as u64),
        )?;
        rows.push(ReportRow {
            measure: measure.clone(),
            transform: *transform,
            odds_ratio: or,
            or_ci_low: lo,
            or_ci_high: hi,
            auc: boot.auc,
            auc_ci_low: boot.ci_low,
            auc_ci_high: boot.ci_high,
            auc_p_value: boot.p_value,
        });
    }
    Ok(rows)
}

pub fn write_report_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut out = String::from(
        "measure,transform,odds_ratio_per_sd,or_ci_low,or_ci_high,auc,auc_ci_low,auc_ci_high,auc_p_value\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.measure,
            r.transform.name(),
            r.odds_ratio,
            r.or_ci_low,
            r.or_ci_high,
            r.auc,
            r.auc_ci_low,
            r.auc_ci_high,
            r.auc_p_value
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
