//! Soft-margin RBF support vector machines trained with sequential
//! minimal optimization, and the three-member majority-vote ensemble
//! used for superpixel density classification.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read as IoRead};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_TOL: f64 = 1e-3;
pub const MAX_SMO_ITERS: usize = 1_000_000;
pub const ENSEMBLE_FOLDS: usize = 3;
const MODEL_MAGIC: &[u8; 4] = b"DLBR";
const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct SmoParams {
    pub c: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// None selects 1 / (n_features * pooled feature variance).
    pub gamma: Option<f64>,
    /// Scale per-class C inversely to class frequency.
    pub class_weighting: bool,
}

impl Default for SmoParams {
    fn default() -> Self {
        SmoParams {
            c: DEFAULT_C,
            tol: DEFAULT_TOL,
            max_iters: MAX_SMO_ITERS,
            gamma: None,
            class_weighting: true,
        }
    }
}

/// One trained SVM. Feature vectors passed to [`TrainedSvm::decision`]
/// must be in the same column order as training; standardization is
/// applied internally.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSvm {
    pub gamma: f64,
    pub bias: f64,
    /// Per-feature training means and standard deviations.
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// alpha_i * y_i for each support vector.
    pub coefs: Vec<f64>,
    /// Standardized support vectors, row-major.
    pub support_vectors: Vec<f64>,
    pub n_features: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub bank_version: String,
    pub feature_names: Vec<String>,
    pub members: Vec<TrainedSvm>,
    /// Calibrated cutoff carried for reference, in [0, 1].
    pub cutoff: f64,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let mut d2 = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        d2 += d * d;
    }
    (-gamma * d2).exp()
}

fn standardization(rows: &[f64], n_features: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() / n_features;
    let mut means = vec![0.0; n_features];
    let mut stds = vec![0.0; n_features];
    for r in 0..n {
        for f in 0..n_features {
            means[f] += rows[r * n_features + f];
        }
    }
    for m in means.iter_mut() {
        *m /= n as f64;
    }
    for r in 0..n {
        for f in 0..n_features {
            let d = rows[r * n_features + f] - means[f];
            stds[f] += d * d;
        }
    }
    for s in stds.iter_mut() {
        *s = (*s / n as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    (means, stds)
}

fn auto_gamma(standardized: &[f64], n_features: usize) -> f64 {
    let n = standardized.len() / n_features;
    let total = standardized.len() as f64;
    let mean = standardized.iter().sum::<f64>() / total;
    let var = standardized.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / total;
    if var > 0.0 && n > 0 {
        1.0 / (n_features as f64 * var)
    } else {
        1.0 / n_features as f64
    }
}

/// Trains one soft-margin RBF SVM with SMO using maximal-violating-pair
/// working-set selection. `labels` are dense (true) / non-dense (false).
pub fn train_svm(
    rows: &[f64],
    n_features: usize,
    labels: &[bool],
    params: &SmoParams,
) -> Result<TrainedSvm> {
    let n = labels.len();
    assert_eq!(rows.len(), n * n_features);
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == n {
        return Err(Error::SingleClass);
    }

    let (means, stds) = standardization(rows, n_features);
    let mut x = vec![0.0; rows.len()];
    for r in 0..n {
        for f in 0..n_features {
            x[r * n_features + f] = (rows[r * n_features + f] - means[f]) / stds[f];
        }
    }
    let gamma = params.gamma.unwrap_or_else(|| auto_gamma(&x, n_features));
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    // per-class C, inversely proportional to class frequency
    let (c_pos, c_neg) = if params.class_weighting {
        let neg = n - pos;
        (
            params.c * n as f64 / (2.0 * pos as f64),
            params.c * n as f64 / (2.0 * neg as f64),
        )
    } else {
        (params.c, params.c)
    };
    let cap: Vec<f64> = y.iter().map(|&yi| if yi > 0.0 { c_pos } else { c_neg }).collect();

    let kernel: Vec<f64> = {
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rbf(&x[i * n_features..(i + 1) * n_features], &x[j * n_features..(j + 1) * n_features], gamma);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    };

    // minimize 1/2 a' Q a - e' a  with  0 <= a_i <= cap_i,  y' a = 0
    let mut alpha = vec![0.0; n];
    // grad_i = d/d a_i = sum_j a_j y_i y_j K_ij - 1
    let mut grad = vec![-1.0; n];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _iter in 0..params.max_iters {
        // i: max -y_i grad_i over I_up, j: min -y_j grad_j over I_low
        let mut i_best: Option<(usize, f64)> = None;
        let mut j_best: Option<(usize, f64)> = None;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let up = (y[t] > 0.0 && alpha[t] < cap[t]) || (y[t] < 0.0 && alpha[t] > 0.0);
            let low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < cap[t]);
            if up && i_best.map_or(true, |(_, bv)| v > bv) {
                i_best = Some((t, v));
            }
            if low && j_best.map_or(true, |(_, bv)| v < bv) {
                j_best = Some((t, v));
            }
        }
        let (Some((i, vi)), Some((j, vj))) = (i_best, j_best) else {
            converged = true;
            break;
        };
        residual = vi - vj;
        if residual < params.tol {
            converged = true;
            break;
        }

        // analytic two-variable update
        let quad = kernel[i * n + i] + kernel[j * n + j] - 2.0 * kernel[i * n + j];
        let quad = quad.max(1e-12);
        let delta = residual / quad;
        // move delta along direction (y_i, -y_j) in (a_i, a_j), clipped to box
        let max_i = if y[i] > 0.0 { cap[i] - alpha[i] } else { alpha[i] };
        let max_j = if y[j] > 0.0 { alpha[j] } else { cap[j] - alpha[j] };
        let step = delta.min(max_i).min(max_j);
        alpha[i] += y[i] * step;
        alpha[j] -= y[j] * step;
        for t in 0..n {
            grad[t] += step * y[t] * (kernel[i * n + t] - kernel[j * n + t]);
        }
    }
    if !converged {
        return Err(Error::SmoNonConvergence {
            iterations: params.max_iters,
            residual,
        });
    }

    // bias from the KKT conditions of unbounded support vectors
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut free_sum = 0.0;
    let mut free_n = 0usize;
    for t in 0..n {
        let v = -y[t] * grad[t]; // equals the bias at optimality for free vectors
        if alpha[t] > 0.0 && alpha[t] < cap[t] {
            free_sum += v;
            free_n += 1;
        } else if (y[t] > 0.0 && alpha[t] == 0.0) || (y[t] < 0.0 && alpha[t] == cap[t]) {
            hi = hi.min(v);
        } else {
            lo = lo.max(v);
        }
    }
    let bias = if free_n > 0 {
        free_sum / free_n as f64
    } else {
        (lo + hi) / 2.0
    };

    let mut coefs = Vec::new();
    let mut support_vectors = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            coefs.push(alpha[t] * y[t]);
            support_vectors.extend_from_slice(&x[t * n_features..(t + 1) * n_features]);
        }
    }
    Ok(TrainedSvm {
        gamma,
        bias,
        means,
        stds,
        coefs,
        support_vectors,
        n_features,
    })
}

impl TrainedSvm {
    /// Signed decision value; positive means dense.
    pub fn decision(&self, features: &[f64]) -> f64 {
        let z: Vec<f64> = features
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect();
        let mut f = self.bias;
        for (sv, &coef) in self
            .support_vectors
            .chunks_exact(self.n_features)
            .zip(&self.coefs)
        {
            f += coef * rbf(sv, &z, self.gamma);
        }
        f
    }

    pub fn predict(&self, features: &[f64]) -> bool {
        self.decision(features) > 0.0
    }

    /// Dual objective value for the training set that produced this model;
    /// exposed for verification of solver optimality.
    pub fn n_support(&self) -> usize {
        self.coefs.len()
    }
}

/// Dual objective 1/2 a' Q a - e' a for a standardized training set;
/// used in tests to compare solvers.
pub fn dual_objective(
    x: &[f64],
    n_features: usize,
    y: &[f64],
    alpha: &[f64],
    gamma: f64,
) -> f64 {
    let n = y.len();
    let mut obj = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            obj -= alpha[i];
            continue;
        }
        for j in 0..n {
            if alpha[j] == 0.0 {
                continue;
            }
            obj += 0.5
                * alpha[i]
                * alpha[j]
                * y[i]
                * y[j]
                * rbf(
                    &x[i * n_features..(i + 1) * n_features],
                    &x[j * n_features..(j + 1) * n_features],
                    gamma,
                );
        }
        obj -= alpha[i];
    }
    obj
}

/// Deterministic grouped fold assignment: unique image ids are sorted and
/// dealt round-robin, so every superpixel of an image lands in one fold.
pub fn fold_of_image(image_ids: &[String], folds: usize) -> BTreeMap<String, usize> {
    let mut unique: Vec<&String> = image_ids.iter().collect();
    unique.sort();
    unique.dedup();
    unique
        .iter()
        .enumerate()
        .map(|(i, id)| ((*id).clone(), i % folds))
        .collect()
}

/// Trains the majority-vote ensemble: one member per fold, each trained on
/// the rows of the other folds. Rows are superpixels; `image_ids` gives the
/// owning image per row so folds never split an image.
pub fn train_ensemble(
    rows: &[f64],
    n_features: usize,
    labels: &[bool],
    image_ids: &[String],
    feature_names: &[String],
    bank_version: &str,
    cutoff: f64,
    params: &SmoParams,
) -> Result<Ensemble> {
    assert_eq!(feature_names.len(), n_features);
    assert_eq!(labels.len(), image_ids.len());
    let fold_map = fold_of_image(image_ids, ENSEMBLE_FOLDS);
    let mut members = Vec::with_capacity(ENSEMBLE_FOLDS);
    for fold in 0..ENSEMBLE_FOLDS {
        let mut sub_rows = Vec::new();
        let mut sub_labels = Vec::new();
        for (r, id) in image_ids.iter().enumerate() {
            if fold_map[id] != fold {
                sub_rows.extend_from_slice(&rows[r * n_features..(r + 1) * n_features]);
                sub_labels.push(labels[r]);
            }
        }
        if sub_labels.is_empty() {
            return Err(Error::InvalidInput(format!(
                "fold {fold} leaves no training rows"
            )));
        }
        members.push(train_svm(&sub_rows, n_features, &sub_labels, params)?);
    }
    Ok(Ensemble {
        bank_version: bank_version.to_string(),
        feature_names: feature_names.to_vec(),
        members,
        cutoff,
    })
}

impl Ensemble {
    /// Majority vote over the members; returns (dense, votes-for-dense).
    pub fn classify(&self, features: &[f64]) -> (bool, usize) {
        let votes = self.members.iter().filter(|m| m.predict(features)).count();
        (2 * votes > self.members.len(), votes)
    }
}

/// Per-image percent-density outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PdResult {
    pub image_id: String,
    pub percent_density: f64,
    pub dense_area: usize,
    pub breast_area: usize,
}

/// Classifies each superpixel row and aggregates per-image percent density
/// as 100 * dense area / breast area. `areas` gives the pixel count of the
/// superpixel behind each row.
pub fn classify_and_pd(
    ensemble: &Ensemble,
    rows: &[f64],
    n_features: usize,
    image_ids: &[String],
    areas: &[usize],
) -> Result<Vec<PdResult>> {
    if n_features != ensemble.feature_names.len() {
        return Err(Error::FeatureMismatch(format!(
            "{} feature columns, model expects {}",
            n_features,
            ensemble.feature_names.len()
        )));
    }
    let mut per_image: BTreeMap<&String, (usize, usize)> = BTreeMap::new();
    for (r, id) in image_ids.iter().enumerate() {
        let (dense, _) = ensemble.classify(&rows[r * n_features..(r + 1) * n_features]);
        let entry = per_image.entry(id).or_insert((0, 0));
        entry.1 += areas[r];
        if dense {
            entry.0 += areas[r];
        }
    }
    Ok(per_image
        .into_iter()
        .map(|(id, (dense, total))| PdResult {
            image_id: id.clone(),
            percent_density: 100.0 * dense as f64 / total as f64,
            dense_area: dense,
            breast_area: total,
        })
        .collect())
}

fn put_string(buf: &mut Vec<u8>, s: &str) {
    buf.write_u32::<LittleEndian>(s.len() as u32).unwrap();
    buf.extend_from_slice(s.as_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, v: &[f64]) {
    buf.write_u32::<LittleEndian>(v.len() as u32).unwrap();
    for &x in v {
        buf.write_f64::<LittleEndian>(x).unwrap();
    }
}

fn get_string(cur: &mut Cursor<&[u8]>, path: &Path) -> Result<String> {
    let len = cur.read_u32::<LittleEndian>().map_err(|_| truncated(cur, path))? as usize;
    let mut bytes = vec![0u8; len];
    cur.read_exact(&mut bytes).map_err(|_| truncated(cur, path))?;
    String::from_utf8(bytes)
        .map_err(|_| Error::InvalidInput(format!("{}: non-UTF-8 string in model", path.display())))
}

fn get_f64s(cur: &mut Cursor<&[u8]>, path: &Path) -> Result<Vec<f64>> {
    let len = cur.read_u32::<LittleEndian>().map_err(|_| truncated(cur, path))? as usize;
    let mut v = Vec::with_capacity(len);
    for _ in 0..len {
        v.push(cur.read_f64::<LittleEndian>().map_err(|_| truncated(cur, path))?);
    }
    Ok(v)
}

fn truncated(cur: &Cursor<&[u8]>, path: &Path) -> Error {
    Error::Truncated {
        path: path.to_path_buf(),
        offset: cur.position() as usize,
        expected: cur.get_ref().len(),
    }
}

pub fn save_ensemble(ensemble: &Ensemble, path: &Path) -> Result<()> {
    let mut payload = Vec::new();
    put_string(&mut payload, &ensemble.bank_version);
    payload
        .write_u32::<LittleEndian>(ensemble.feature_names.len() as u32)
        .unwrap();
    for name in &ensemble.feature_names {
        put_string(&mut payload, name);
    }
    payload.write_f64::<LittleEndian>(ensemble.cutoff).unwrap();
    payload
        .write_u32::<LittleEndian>(ensemble.members.len() as u32)
        .unwrap();
    for m in &ensemble.members {
        payload.write_f64::<LittleEndian>(m.gamma).unwrap();
        payload.write_f64::<LittleEndian>(m.bias).unwrap();
        payload.write_u32::<LittleEndian>(m.n_features as u32).unwrap();
        put_f64s(&mut payload, &m.means);
        put_f64s(&mut payload, &m.stds);
        put_f64s(&mut payload, &m.coefs);
        put_f64s(&mut payload, &m.support_vectors);
    }
    let mut out = Vec::with_capacity(payload.len() + 40);
    out.extend_from_slice(MODEL_MAGIC);
    out.write_u32::<LittleEndian>(MODEL_FORMAT_VERSION).unwrap();
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&payload);
    out.extend_from_slice(&digest);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_ensemble(path: &Path) -> Result<Ensemble> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 + 32 || &bytes[..4] != MODEL_MAGIC {
        if bytes.len() >= 4 && &bytes[..4] == MODEL_MAGIC {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                offset: bytes.len(),
                expected: 40,
            });
        }
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let payload = &bytes[8..bytes.len() - 32];
    let digest = Sha256::digest(payload);
    if digest.as_slice() != &bytes[bytes.len() - 32..] {
        return Err(Error::ChecksumFailure {
            path: path.to_path_buf(),
        });
    }
    let mut cur = Cursor::new(payload);
    let bank_version = get_string(&mut cur, path)?;
    let n_names = cur.read_u32::<LittleEndian>().map_err(|_| truncated(&cur, path))? as usize;
    let mut feature_names = Vec::with_capacity(n_names);
    for _ in 0..n_names {
        feature_names.push(get_string(&mut cur, path)?);
    }
    let cutoff = cur.read_f64::<LittleEndian>().map_err(|_| truncated(&cur, path))?;
    let n_models = cur.read_u32::<LittleEndian>().map_err(|_| truncated(&cur, path))? as usize;
    let mut members = Vec::with_capacity(n_models);
    for _ in 0..n_models {
        let gamma = cur.read_f64::<LittleEndian>().map_err(|_| truncated(&cur, path))?;
        let bias = cur.read_f64::<LittleEndian>().map_err(|_| truncated(&cur, path))?;
        let n_features =
            cur.read_u32::<LittleEndian>().map_err(|_| truncated(&cur, path))? as usize;
        let means = get_f64s(&mut cur, path)?;
        let stds = get_f64s(&mut cur, path)?;
        let coefs = get_f64s(&mut cur, path)?;
        let support_vectors = get_f64s(&mut cur, path)?;
        members.push(TrainedSvm {
            gamma,
            bias,
            means,
            stds,
            coefs,
            support_vectors,
            n_features,
        });
    }
    Ok(Ensemble {
        bank_version,
        feature_names,
        members,
        cutoff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_problem(seed: u64, n: usize, p: usize) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n * p);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2 == 0;
            let offset = if label { 1.5 } else { -1.5 };
            for _ in 0..p {
                rows.push(offset + rng.gen::<f64>() - 0.5);
            }
            labels.push(label);
        }
        (rows, labels)
    }

    /// Projection of v onto {0 <= a_i <= cap_i, y' a = 0} by bisection on
    /// the hyperplane multiplier.
    fn project(v: &[f64], y: &[f64], cap: &[f64]) -> Vec<f64> {
        let clip = |lambda: f64| -> Vec<f64> {
            v.iter()
                .zip(y)
                .zip(cap)
                .map(|((&vi, &yi), &ci)| (vi - lambda * yi).clamp(0.0, ci))
                .collect()
        };
        let mut lo = -1e6;
        let mut hi = 1e6;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let dot: f64 = clip(mid).iter().zip(y).map(|(a, b)| a * b).sum();
            if dot > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        clip(0.5 * (lo + hi))
    }

    /// Independent reference solver: projected gradient descent on the
    /// dual with a diminishing step size.
    fn reference_alpha(
        x: &[f64],
        p: usize,
        y: &[f64],
        cap: &[f64],
        gamma: f64,
        iters: usize,
    ) -> Vec<f64> {
        let n = y.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = y[i] * y[j] * rbf(&x[i * p..(i + 1) * p], &x[j * p..(j + 1) * p], gamma);
            }
        }
        let mut alpha = vec![0.0; n];
        let step = 0.5;
        for it in 0..iters {
            let eta = step / (1.0 + it as f64 / 2000.0);
            let mut trial = vec![0.0; n];
            for i in 0..n {
                let mut g = -1.0;
                for j in 0..n {
                    g += k[i * n + j] * alpha[j];
                }
                trial[i] = alpha[i] - eta * g;
            }
            alpha = project(&trial, y, cap);
        }
        alpha
    }

    #[test]
    fn smo_matches_projected_gradient_reference() {
        for seed in 0..20u64 {
            let n = 30;
            let p = 3;
            let (rows, labels) = toy_problem(seed, n, p);
            let params = SmoParams {
                tol: 1e-6,
                class_weighting: false,
                ..SmoParams::default()
            };
            let model = train_svm(&rows, p, &labels, &params).unwrap();
            // rebuild the standardized design the solver saw
            let mut x = vec![0.0; rows.len()];
            for r in 0..n {
                for f in 0..p {
                    x[r * p + f] = (rows[r * p + f] - model.means[f]) / model.stds[f];
                }
            }
            let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
            let cap = vec![params.c; n];
            let alpha_ref = reference_alpha(&x, p, &y, &cap, model.gamma, 40_000);
            let obj_ref = dual_objective(&x, p, &y, &alpha_ref, model.gamma);
            // recover full alpha from the support vector coefficients
            let mut alpha_smo = vec![0.0; n];
            let mut sv = 0usize;
            for r in 0..n {
                if sv < model.coefs.len() {
                    let matches = model.support_vectors[sv * p..(sv + 1) * p]
                        .iter()
                        .zip(&x[r * p..(r + 1) * p])
                        .all(|(a, b)| a == b);
                    if matches {
                        alpha_smo[r] = model.coefs[sv] * y[r];
                        sv += 1;
                    }
                }
            }
            assert_eq!(sv, model.coefs.len());
            let obj_smo = dual_objective(&x, p, &y, &alpha_smo, model.gamma);
            assert!(
                obj_smo <= obj_ref + 1e-4,
                "seed {seed}: SMO objective {obj_smo} worse than reference {obj_ref}"
            );
            assert!(
                (obj_smo - obj_ref).abs() <= 1e-4,
                "seed {seed}: objectives differ: {obj_smo} vs {obj_ref}"
            );
        }
    }

    #[test]
    fn separable_data_classified_perfectly() {
        let (rows, labels) = toy_problem(99, 80, 4);
        let model = train_svm(&rows, 4, &labels, &SmoParams::default()).unwrap();
        for (r, &label) in labels.iter().enumerate() {
            assert_eq!(model.predict(&rows[r * 4..(r + 1) * 4]), label);
        }
    }

    #[test]
    fn alphas_respect_box_constraints() {
        let (rows, labels) = toy_problem(7, 50, 3);
        let params = SmoParams::default();
        let model = train_svm(&rows, 3, &labels, &params).unwrap();
        let n = labels.len();
        let pos = labels.iter().filter(|&&l| l).count();
        let c_pos = params.c * n as f64 / (2.0 * pos as f64);
        let c_neg = params.c * n as f64 / (2.0 * (n - pos) as f64);
        let cap = c_pos.max(c_neg) + 1e-12;
        for &coef in &model.coefs {
            assert!(coef.abs() > 0.0 && coef.abs() <= cap);
        }
    }

    #[test]
    fn single_class_errors() {
        let rows = vec![0.0; 20 * 2];
        let labels = vec![true; 20];
        assert!(matches!(
            train_svm(&rows, 2, &labels, &SmoParams::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn fold_assignment_groups_images() {
        let ids: Vec<String> = ["b", "a", "c", "a", "b", "d"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let map = fold_of_image(&ids, 3);
        assert_eq!(map["a"], 0);
        assert_eq!(map["b"], 1);
        assert_eq!(map["c"], 2);
        assert_eq!(map["d"], 0);
    }

    fn toy_ensemble() -> (Ensemble, Vec<f64>, Vec<bool>, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n_images = 9;
        let per_image = 12;
        let p = 3;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for img in 0..n_images {
            for _ in 0..per_image {
                let label = rng.gen_bool(0.5);
                let offset = if label { 2.0 } else { -2.0 };
                for _ in 0..p {
                    rows.push(offset + rng.gen::<f64>() - 0.5);
                }
                labels.push(label);
                ids.push(format!("img{img:02}"));
            }
        }
        let names: Vec<String> = (0..p).map(|i| format!("f{i}")).collect();
        let ens = train_ensemble(
            &rows,
            p,
            &labels,
            &ids,
            &names,
            "v1",
            0.4,
            &SmoParams::default(),
        )
        .unwrap();
        (ens, rows, labels, ids)
    }

    #[test]
    fn ensemble_majority_vote_and_pd() {
        let (ens, rows, labels, ids) = toy_ensemble();
        assert_eq!(ens.members.len(), 3);
        let areas = vec![10usize; labels.len()];
        let results = classify_and_pd(&ens, &rows, 3, &ids, &areas).unwrap();
        assert_eq!(results.len(), 9);
        for res in &results {
            assert_eq!(res.breast_area, 120);
            let expected = labels
                .iter()
                .zip(&ids)
                .filter(|(_, id)| **id == res.image_id)
                .filter(|(&l, _)| l)
                .count();
            let got_dense_sp = res.dense_area / 10;
            // separable toy data: votes should match the labels
            assert_eq!(got_dense_sp, expected, "image {}", res.image_id);
            assert!(
                (res.percent_density - 100.0 * res.dense_area as f64 / 120.0).abs() < 1e-12
            );
        }
    }

    #[test]
    fn model_round_trip() {
        let (ens, _, _, _) = toy_ensemble();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dlbr");
        save_ensemble(&ens, &path).unwrap();
        let back = load_ensemble(&path).unwrap();
        assert_eq!(ens, back);
    }

    #[test]
    fn corrupt_files_rejected() {
        let (ens, _, _, _) = toy_ensemble();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dlbr");
        save_ensemble(&ens, &path).unwrap();
        let bytes = fs::read(&path).unwrap();

        let wrong_magic = {
            let mut b = bytes.clone();
            b[0] = b'X';
            b
        };
        let p2 = dir.path().join("magic.dlbr");
        fs::write(&p2, wrong_magic).unwrap();
        assert!(matches!(load_ensemble(&p2), Err(Error::BadMagic { .. })));

        let truncated_file = &bytes[..bytes.len() / 2];
        let p3 = dir.path().join("trunc.dlbr");
        fs::write(&p3, truncated_file).unwrap();
        assert!(matches!(
            load_ensemble(&p3),
            Err(Error::ChecksumFailure { .. }) | Err(Error::Truncated { .. })
        ));

        let flipped = {
            let mut b = bytes.clone();
            let mid = b.len() / 2;
            b[mid] ^= 0xFF;
            b
        };
        let p4 = dir.path().join("flip.dlbr");
        fs::write(&p4, flipped).unwrap();
        assert!(matches!(
            load_ensemble(&p4),
            Err(Error::ChecksumFailure { .. })
        ));

        let wrong_version = {
            let mut b = bytes.clone();
            b[4..8].copy_from_slice(&7u32.to_le_bytes());
            b
        };
        let p5 = dir.path().join("ver.dlbr");
        fs::write(&p5, wrong_version).unwrap();
        assert!(matches!(
            load_ensemble(&p5),
            Err(Error::VersionMismatch { found: 7, .. })
        ));
    }

    #[test]
    fn feature_count_mismatch_rejected() {
        let (ens, rows, _, ids) = toy_ensemble();
        let areas = vec![10usize; ids.len()];
        let bad = classify_and_pd(&ens, &rows[..ids.len() * 2], 2, &ids, &areas);
        assert!(matches!(bad, Err(Error::FeatureMismatch(_))));
    }
}
