//! Batch orchestration: per-image analysis, training, prediction, and
//! run manifests. Failures on individual images are isolated so one bad
//! input cannot sink a batch.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::calibration::{
    calibrate_cutoff, reference_labels, CutoffCalibration, GoldRecord, ImageSuperpixelSummary,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{
    extract_image_features, extract_superpixel_features, matrix_column_names, FeatureMatrix,
};
use crate::image::{load_image, preprocess, PreprocessedImage, RawImage};
use crate::segmentation::{
    finalize_breast_mask, ingest_mask, remove_abdominal_bump, segment_background_classical,
    BumpParams, RegionLabel, RegionMask,
};
use crate::selection::{select_features, SelectionReport};
use crate::superpixel::{generate_superpixels, superpixel_mean_intensities, SuperpixelMap};
use crate::svm::{classify_and_pd, train_ensemble, Ensemble, PdResult, SmoParams};

/// Everything derived from one input image.
pub struct ImageArtifacts {
    pub id: String,
    pub preprocessed: PreprocessedImage,
    pub mask: RegionMask,
    pub superpixels: SuperpixelMap,
    /// Superpixel-scope feature rows (one per superpixel, 151 columns).
    pub features: FeatureMatrix,
    pub summary: ImageSuperpixelSummary,
}

/// Runs the single-image chain: preprocess, segment (or ingest the given
/// external mask), superpixels, features.
pub fn analyze_image(
    id: &str,
    img: &RawImage,
    external_mask: Option<RegionMask>,
    cfg: &PipelineConfig,
) -> Result<ImageArtifacts> {
    let pre = preprocess(img);
    let mask = match external_mask {
        Some(m) => finalize_breast_mask(&m)?,
        None => {
            let seg = segment_background_classical(&pre)?;
            let seg = if cfg.remove_bump {
                remove_abdominal_bump(&seg, &BumpParams::default())
            } else {
                seg
            };
            finalize_breast_mask(&seg)?
        }
    };
    let sp = generate_superpixels(
        &pre,
        &mask,
        cfg.superpixels.min(mask.breast_area()),
        cfg.compactness,
        cfg.slic_iterations,
        cfg.seed,
    )?;
    let image_features = extract_image_features(&pre, &mask)?;
    let features = extract_superpixel_features(id, &pre, &sp, &mask, &image_features)?;
    let summary = ImageSuperpixelSummary {
        image_id: id.to_string(),
        means: superpixel_mean_intensities(&pre, &sp),
        areas: sp.label_areas(),
    };
    Ok(ImageArtifacts {
        id: id.to_string(),
        preprocessed: pre,
        mask,
        superpixels: sp,
        features,
        summary,
    })
}

/// Batch result: artifacts in image-id order plus isolated failures.
pub struct BatchOutcome {
    pub artifacts: Vec<ImageArtifacts>,
    /// (image id, error description) for inputs that failed.
    pub failures: Vec<(String, String)>,
    /// (image id, input path) for manifest checksums, id order.
    pub inputs: Vec<(String, PathBuf)>,
}

/// Lists image inputs in a directory: `.pgm` and `.png` files, excluding
/// `*_mask.*`. Returns (id, path) sorted by id.
pub fn list_inputs(input_dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut inputs = Vec::new();
    let entries = fs::read_dir(input_dir).map_err(|e| Error::io(input_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(input_dir, e))?;
        let path = entry.path();
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
            continue;
        };
        if !matches!(ext, "pgm" | "png") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if stem.ends_with("_mask") {
            continue;
        }
        inputs.push((stem.to_string(), path));
    }
    inputs.sort();
    if inputs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no .pgm or .png inputs found",
            input_dir.display()
        )));
    }
    Ok(inputs)
}

fn mask_path_for(mask_dir: &Path, id: &str) -> Option<PathBuf> {
    for ext in ["pgm", "png"] {
        let p = mask_dir.join(format!("{id}_mask.{ext}"));
        if p.exists() {
            return Some(p);
        }
        let p = mask_dir.join(format!("{id}.{ext}"));
        if p.exists() {
            return Some(p);
        }
    }
    None
}

/// Analyzes every image in `input_dir` in parallel. When `mask_dir` is
/// given, a `<id>_mask.pgm/png` (or `<id>.pgm/png`) file there is ingested
/// instead of running classical segmentation.
pub fn analyze_dir(
    input_dir: &Path,
    mask_dir: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<BatchOutcome> {
    let inputs = list_inputs(input_dir)?;
    let results: Vec<(String, Result<ImageArtifacts>)> = inputs
        .par_iter()
        .map(|(id, path)| {
            let run = || -> Result<ImageArtifacts> {
                let img = load_image(path)?;
                let external = match mask_dir.and_then(|d| mask_path_for(d, id)) {
                    Some(mp) => Some(ingest_mask(&mp, &img)?),
                    None => None,
                };
                analyze_image(id, &img, external, cfg)
            };
            (id.clone(), run())
        })
        .collect();
    let mut artifacts = Vec::new();
    let mut failures = Vec::new();
    for (id, res) in results {
        match res {
            Ok(a) => artifacts.push(a),
            Err(e) => {
                log::warn!("{id}: {e}");
                failures.push((id, e.to_string()));
            }
        }
    }
    if artifacts.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: every input failed",
            input_dir.display()
        )));
    }
    Ok(BatchOutcome {
        artifacts,
        failures,
        inputs,
    })
}

/// Stacks per-image superpixel feature rows; also returns per-row areas.
pub fn stack_features(artifacts: &[ImageArtifacts]) -> Result<(FeatureMatrix, Vec<usize>)> {
    let mut matrix = FeatureMatrix {
        image_ids: Vec::new(),
        row_labels: Vec::new(),
        columns: matrix_column_names(),
        values: Vec::new(),
        bank_version: artifacts[0].features.bank_version.clone(),
    };
    let mut areas = Vec::new();
    for a in artifacts {
        matrix.extend(&a.features)?;
        areas.extend(a.superpixels.label_areas());
    }
    Ok((matrix, areas))
}

/// Even systematic subsample of `indices` down to `limit` entries;
/// deterministic and order-preserving.
fn systematic_subsample(indices: &[usize], limit: usize) -> Vec<usize> {
    if limit == 0 || indices.len() <= limit {
        return indices.to_vec();
    }
    (0..limit)
        .map(|i| indices[i * indices.len() / limit])
        .collect()
}

pub struct TrainedModel {
    pub ensemble: Ensemble,
    pub calibration: CutoffCalibration,
    pub selection: SelectionReport,
}

/// Full training flow: cutoff calibration against the gold standard,
/// per-superpixel reference labels, feature selection, and the 3-fold
/// SVM ensemble. Rows are capped per class at `cfg.max_train_rows` to
/// bound runtime; the cap is deterministic.
pub fn train_model(
    artifacts: &[ImageArtifacts],
    gold: &[GoldRecord],
    cfg: &PipelineConfig,
) -> Result<TrainedModel> {
    let summaries: Vec<ImageSuperpixelSummary> =
        artifacts.iter().map(|a| a.summary.clone()).collect();
    let calibration = calibrate_cutoff(&summaries, gold, cfg.cutoff_grid, cfg.overall_pd)?;
    let (matrix, _areas) = stack_features(artifacts)?;
    let mut labels = Vec::with_capacity(matrix.rows());
    for a in artifacts {
        labels.extend(reference_labels(&a.summary.means, &calibration));
    }

    // deterministic per-class row cap (rows are already in id order)
    let dense_rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let other_rows: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let mut keep = systematic_subsample(&dense_rows, cfg.max_train_rows);
    keep.extend(systematic_subsample(&other_rows, cfg.max_train_rows));
    keep.sort_unstable();
    let p = matrix.columns.len();
    let mut sub_values = Vec::with_capacity(keep.len() * p);
    let mut sub_labels = Vec::with_capacity(keep.len());
    let mut sub_ids = Vec::with_capacity(keep.len());
    for &r in &keep {
        sub_values.extend_from_slice(matrix.row(r));
        sub_labels.push(labels[r]);
        sub_ids.push(matrix.image_ids[r].clone());
    }
    let sub_matrix = FeatureMatrix {
        image_ids: sub_ids.clone(),
        row_labels: keep.iter().map(|&r| matrix.row_labels[r]).collect(),
        columns: matrix.columns.clone(),
        values: sub_values,
        bank_version: matrix.bank_version.clone(),
    };

    let selection = select_features(&sub_matrix, &sub_labels, cfg.trees, cfg.seed)?;
    let sel_cols: Vec<usize> = selection
        .selected
        .iter()
        .map(|name| sub_matrix.column_index(name).unwrap())
        .collect();
    let n_sel = sel_cols.len();
    let mut train_rows = Vec::with_capacity(sub_labels.len() * n_sel);
    for r in 0..sub_labels.len() {
        let row = sub_matrix.row(r);
        for &c in &sel_cols {
            train_rows.push(row[c]);
        }
    }
    let params = SmoParams {
        c: cfg.svm_c,
        tol: cfg.svm_tol,
        class_weighting: cfg.class_weighting,
        ..SmoParams::default()
    };
    let ensemble = train_ensemble(
        &train_rows,
        n_sel,
        &sub_labels,
        &sub_ids,
        &selection.selected,
        &matrix.bank_version,
        calibration.cutoff,
        &params,
    )?;
    Ok(TrainedModel {
        ensemble,
        calibration,
        selection,
    })
}

/// Applies a trained ensemble to analyzed images, producing per-image
/// percent density.
pub fn predict(artifacts: &[ImageArtifacts], ensemble: &Ensemble) -> Result<Vec<PdResult>> {
    let (matrix, areas) = stack_features(artifacts)?;
    if matrix.bank_version != ensemble.bank_version {
        return Err(Error::BankVersionMismatch {
            model: ensemble.bank_version.clone(),
            features: matrix.bank_version.clone(),
        });
    }
    let sel_cols: Vec<usize> = ensemble
        .feature_names
        .iter()
        .map(|name| {
            matrix
                .column_index(name)
                .ok_or_else(|| Error::FeatureMismatch(format!("missing column {name:?}")))
        })
        .collect::<Result<_>>()?;
    let n_sel = sel_cols.len();
    let mut rows = Vec::with_capacity(matrix.rows() * n_sel);
    for r in 0..matrix.rows() {
        let row = matrix.row(r);
        for &c in &sel_cols {
            rows.push(row[c]);
        }
    }
    classify_and_pd(ensemble, &rows, n_sel, &matrix.image_ids, &areas)
}

pub fn write_pd_csv(results: &[PdResult], path: &Path) -> Result<()> {
    let mut out = String::from("image_id,percent_density,dense_area,breast_area\n");
    for r in results {
        out.push_str(&format!(
            "{},{:.6},{},{}\n",
            r.image_id, r.percent_density, r.dense_area, r.breast_area
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pd_csv(path: &Path) -> Result<Vec<PdResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut results = Vec::new();
    for line in text.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::InvalidInput(format!(
                "{}: bad row {line:?}",
                path.display()
            )));
        }
        let bad = || Error::InvalidInput(format!("{}: bad row {line:?}", path.display()));
        results.push(PdResult {
            image_id: parts[0].to_string(),
            percent_density: parts[1].parse().map_err(|_| bad())?,
            dense_area: parts[2].parse().map_err(|_| bad())?,
            breast_area: parts[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(results)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes the run manifest: config hash, seed, feature bank version, and
/// a checksum per input, so a rerun can be verified byte for byte.
pub fn write_manifest(
    path: &Path,
    cfg: &PipelineConfig,
    inputs: &[(String, PathBuf)],
    failures: &[(String, String)],
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("config_hash={}\n", cfg.hash()));
    out.push_str(&format!("seed={}\n", cfg.seed));
    out.push_str(&format!(
        "bank_version={}\n",
        crate::features::BANK_VERSION
    ));
    for (id, input) in inputs {
        out.push_str(&format!("input {id} sha256={}\n", sha256_file(input)?));
    }
    for (id, err) in failures {
        out.push_str(&format!("failed {id}: {err}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// 8-bit overlay of superpixel boundaries on the preprocessed image.
pub fn save_superpixel_overlay(
    img: &PreprocessedImage,
    sp: &SuperpixelMap,
    path: &Path,
) -> Result<()> {
    let (w, h) = (img.width, img.height);
    let mut bytes: Vec<u8> = img
        .pixels
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    for r in 0..h {
        for c in 0..w {
            let l = sp.labels[r * w + c];
            let boundary = (c + 1 < w && sp.labels[r * w + c + 1] != l)
                || (r + 1 < h && sp.labels[(r + 1) * w + c] != l);
            if boundary && l != crate::superpixel::NONE_LABEL {
                bytes[r * w + c] = 255;
            }
        }
    }
    let header = format!("P5\n{w} {h}\n255\n");
    let mut data = header.into_bytes();
    data.extend_from_slice(&bytes);
    fs::write(path, data).map_err(|e| Error::io(path, e))
}

/// 8-bit overlay of the segmentation over the preprocessed image:
/// background dimmed, breast boundary marked white.
pub fn save_mask_overlay(
    img: &PreprocessedImage,
    mask: &RegionMask,
    path: &Path,
) -> Result<()> {
    let (w, h) = (img.width, img.height);
    let mut bytes: Vec<u8> = img
        .pixels
        .iter()
        .zip(&mask.labels)
        .map(|(&v, &l)| {
            let g = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            if l == RegionLabel::Breast {
                g
            } else {
                g / 3
            }
        })
        .collect();
    for r in 0..h {
        for c in 0..w {
            let inside = mask.labels[r * w + c] == RegionLabel::Breast;
            let edge = (c + 1 < w && (mask.labels[r * w + c + 1] == RegionLabel::Breast) != inside)
                || (r + 1 < h && (mask.labels[(r + 1) * w + c] == RegionLabel::Breast) != inside);
            if edge {
                bytes[r * w + c] = 255;
            }
        }
    }
    let header = format!("P5\n{w} {h}\n255\n");
    let mut data = header.into_bytes();
    data.extend_from_slice(&bytes);
    fs::write(path, data).map_err(|e| Error::io(path, e))
}
