//! Feature selection: correlation pruning followed by importance ranking.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::forest::{gini_importances, Dataset};

pub const CORRELATION_THRESHOLD: f64 = 0.95;
pub const TOP_FEATURES: usize = 80;

/// Outcome of the two-stage selection, serializable for reproducibility.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    /// Columns dropped by correlation pruning, with the retained column
    /// from the same correlated group.
    pub pruned: Vec<(String, String)>,
    /// Surviving columns ranked by importance, highest first.
    pub ranked: Vec<(String, f64)>,
    /// Final selected column names, at most [`TOP_FEATURES`].
    pub selected: Vec<String>,
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn iqr(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    percentile(&sorted, 75.0) - percentile(&sorted, 25.0)
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Groups columns whose absolute Pearson correlation exceeds
/// [`CORRELATION_THRESHOLD`] and keeps one representative per group:
/// the column with the largest interquartile range, ties broken by the
/// lexicographically smallest name. Returns (kept column indices, dropped
/// pairs as (dropped name, kept name)).
pub fn prune_correlated(matrix: &FeatureMatrix) -> (Vec<usize>, Vec<(String, String)>) {
    let p = matrix.columns.len();
    let n = matrix.image_ids.len();
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|c| (0..n).map(|r| matrix.values[r * p + c]).collect())
        .collect();
    let mut uf = UnionFind::new(p);
    for i in 0..p {
        for j in i + 1..p {
            if pearson(&cols[i], &cols[j]).abs() > CORRELATION_THRESHOLD {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..p {
        let root = uf.find(i);
        groups.entry(root).or_default().push(i);
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for members in groups.values() {
        let rep = *members
            .iter()
            .min_by(|&&a, &&b| {
                iqr(&cols[b])
                    .partial_cmp(&iqr(&cols[a]))
                    .unwrap()
                    .then_with(|| matrix.columns[a].cmp(&matrix.columns[b]))
            })
            .unwrap();
        kept.push(rep);
        for &m in members {
            if m != rep {
                dropped.push((matrix.columns[m].clone(), matrix.columns[rep].clone()));
            }
        }
    }
    kept.sort_unstable();
    dropped.sort();
    (kept, dropped)
}

/// Full selection: correlation pruning, then random-forest importance
/// ranking over the survivors, keeping the top [`TOP_FEATURES`] (ties on
/// importance broken by lexicographically smaller name).
pub fn select_features(
    matrix: &FeatureMatrix,
    labels: &[bool],
    trees: usize,
    seed: u64,
) -> Result<SelectionReport> {
    if labels.len() != matrix.image_ids.len() {
        return Err(Error::InvalidInput(format!(
            "label count {} does not match {} matrix rows",
            labels.len(),
            matrix.image_ids.len()
        )));
    }
    let (kept, pruned) = prune_correlated(matrix);
    let p_full = matrix.columns.len();
    let n = labels.len();
    let mut values = Vec::with_capacity(n * kept.len());
    for r in 0..n {
        for &c in &kept {
            values.push(matrix.values[r * p_full + c]);
        }
    }
    let data = Dataset {
        values: &values,
        n_cols: kept.len(),
        labels,
    };
    let importances = gini_importances(&data, trees, seed)?;
    let mut ranked: Vec<(String, f64)> = kept
        .iter()
        .zip(importances)
        .map(|(&c, imp)| (matrix.columns[c].clone(), imp))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    let selected = ranked
        .iter()
        .take(TOP_FEATURES)
        .map(|(name, _)| name.clone())
        .collect();
    Ok(SelectionReport {
        pruned,
        ranked,
        selected,
    })
}

impl SelectionReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("section,name,detail\n");
        for (dropped, kept) in &self.pruned {
            out.push_str(&format!("pruned,{dropped},{kept}\n"));
        }
        for (name, imp) in &self.ranked {
            out.push_str(&format!("ranked,{name},{imp:.17e}\n"));
        }
        for name in &self.selected {
            out.push_str(&format!("selected,{name},\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut report = SelectionReport {
            pruned: Vec::new(),
            ranked: Vec::new(),
            selected: Vec::new(),
        };
        for line in text.lines().skip(1) {
            let mut parts = line.splitn(3, ',');
            let section = parts.next().unwrap_or("");
            let name = parts.next().unwrap_or("").to_string();
            let detail = parts.next().unwrap_or("");
            match section {
                "pruned" => report.pruned.push((name, detail.to_string())),
                "ranked" => {
                    let imp: f64 = detail
                        .parse()
                        .map_err(|_| Error::InvalidInput(format!("bad importance in {line}")))?;
                    report.ranked.push((name, imp));
                }
                "selected" => report.selected.push(name),
                _ => return Err(Error::InvalidInput(format!("bad section in {line}"))),
            }
        }
        Ok(report)
    }
}
