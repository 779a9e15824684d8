//! Texture-feature bank: first-order, GLCM, and GLRLM descriptors computed
//! on whole images and on each superpixel, assembled into a feature matrix.
//!
//! The bank composition is fixed by `BANK_VERSION`: 101 image-scope features
//! and 50 superpixel-scope features; superpixel rows carry both for a total
//! of 151 columns.

pub mod first_order;
pub mod glcm;
pub mod glrlm;
pub mod region;

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::PreprocessedImage;
use crate::segmentation::{trace_contour, RegionLabel, RegionMask};
use crate::superpixel::{superpixel_mean_intensities, SuperpixelMap};
use first_order::{first_order_features, FIRST_ORDER_NAMES};
use glcm::{glcm_features_per_distance, GLCM_DESCRIPTOR_NAMES};
use glrlm::{glrlm_features, GLRLM_DESCRIPTOR_NAMES};
use region::Region;

pub const BANK_VERSION: &str = "v1";
pub const IMAGE_FEATURE_COUNT: usize = 101;
pub const SUPERPIXEL_FEATURE_COUNT: usize = 50;
pub const TOTAL_COLUMNS: usize = IMAGE_FEATURE_COUNT + SUPERPIXEL_FEATURE_COUNT;

const GLCM_LEVELS: usize = 32;
const MULTISCALE_FACTORS: [usize; 2] = [2, 4];
const MULTISCALE_GLCM: [&str; 4] = ["contrast", "entropy", "homogeneity", "correlation"];
const MULTISCALE_FO: [&str; 4] = ["fo_mean", "fo_std", "fo_entropy", "fo_skewness"];
// extra GLCM configurations chosen to complete the 101-feature image bank
const EXTRA_D5_SUBSET: [&str; 8] = [
    "contrast",
    "dissimilarity",
    "homogeneity",
    "asm",
    "energy",
    "entropy",
    "correlation",
    "max_probability",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Image,
    Superpixel,
}

#[derive(Debug, Clone)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub scope: Scope,
    pub bank_version: String,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

/// Rows = (image id, superpixel label or IMAGE); rectangular, no missing
/// cells; deterministic column order fixed by the bank version.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub image_ids: Vec<String>,
    /// None for IMAGE-scope rows.
    pub row_labels: Vec<Option<usize>>,
    pub columns: Vec<String>,
    pub values: Vec<f64>,
    pub bank_version: String,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.image_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.columns.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Append all rows of `other`; columns must match exactly.
    pub fn extend(&mut self, other: &FeatureMatrix) -> Result<()> {
        if self.columns != other.columns {
            return Err(Error::FeatureMismatch(
                "cannot merge matrices with different columns".into(),
            ));
        }
        self.image_ids.extend(other.image_ids.iter().cloned());
        self.row_labels.extend(other.row_labels.iter().cloned());
        self.values.extend(other.values.iter().cloned());
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path).map_err(|e| {
            Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
        })?;
        let mut header = vec!["image_id".to_string(), "superpixel_label".to_string()];
        header.extend(self.columns.iter().cloned());
        wtr.write_record(&header).map_err(csv_err(path))?;
        for i in 0..self.rows() {
            let mut rec = vec![
                self.image_ids[i].clone(),
                self.row_labels[i]
                    .map(|l| l.to_string())
                    .unwrap_or_else(|| "IMAGE".to_string()),
            ];
            rec.extend(self.row(i).iter().map(|v| format!("{v:.17e}")));
            wtr.write_record(&rec).map_err(csv_err(path))?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<FeatureMatrix> {
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let headers = rdr.headers().map_err(csv_err(path))?.clone();
        let columns: Vec<String> = headers.iter().skip(2).map(|s| s.to_string()).collect();
        let mut out = FeatureMatrix {
            image_ids: Vec::new(),
            row_labels: Vec::new(),
            columns,
            values: Vec::new(),
            bank_version: BANK_VERSION.to_string(),
        };
        for record in rdr.records() {
            let record = record.map_err(csv_err(path))?;
            out.image_ids.push(record[0].to_string());
            out.row_labels.push(if &record[1] == "IMAGE" {
                None
            } else {
                Some(record[1].parse().map_err(|_| {
                    Error::InvalidInput(format!("bad superpixel label {:?}", &record[1]))
                })?)
            });
            for field in record.iter().skip(2) {
                out.values.push(field.parse().map_err(|_| {
                    Error::InvalidInput(format!("bad feature value {field:?}"))
                })?);
            }
        }
        Ok(out)
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
}

/// Names of the 101 image-scope features, in bank order.
pub fn image_feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(IMAGE_FEATURE_COUNT);
    names.extend(FIRST_ORDER_NAMES.iter().map(|s| s.to_string()));
    for d in [1, 2, 3] {
        for desc in GLCM_DESCRIPTOR_NAMES {
            names.push(format!("glcm_d{d}_{desc}"));
        }
    }
    names.extend(GLRLM_DESCRIPTOR_NAMES.iter().map(|s| format!("glrlm_{s}")));
    names.push("geom_area_fraction".into());
    names.push("geom_contour_length".into());
    names.push("geom_bbox_aspect".into());
    for factor in MULTISCALE_FACTORS {
        for desc in MULTISCALE_GLCM {
            names.push(format!("ms{factor}_glcm_{desc}"));
        }
        for fo in MULTISCALE_FO {
            names.push(format!("ms{factor}_{fo}"));
        }
    }
    for desc in GLCM_DESCRIPTOR_NAMES {
        names.push(format!("xglcm_d4_l16_{desc}"));
    }
    for desc in EXTRA_D5_SUBSET {
        names.push(format!("xglcm_d5_l64_{desc}"));
    }
    debug_assert_eq!(names.len(), IMAGE_FEATURE_COUNT);
    names
}

/// Names of the 50 superpixel-scope features, in bank order.
pub fn superpixel_feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(SUPERPIXEL_FEATURE_COUNT);
    names.extend(FIRST_ORDER_NAMES.iter().map(|s| s.to_string()));
    for desc in GLCM_DESCRIPTOR_NAMES {
        names.push(format!("glcm_d1_{desc}"));
    }
    names.extend(GLRLM_DESCRIPTOR_NAMES.iter().map(|s| format!("glrlm_{s}")));
    for g in [
        "sp_area",
        "sp_perimeter",
        "sp_eccentricity",
        "sp_centroid_row",
        "sp_centroid_col",
        "sp_mean_rank",
        "sp_neighbor_contrast",
        "sp_dist_chestwall",
        "sp_dist_skinline",
    ] {
        names.push(g.to_string());
    }
    debug_assert_eq!(names.len(), SUPERPIXEL_FEATURE_COUNT);
    names
}

/// Column names of the combined 151-column matrix: the 50 superpixel
/// features followed by the 101 image features under an `img_` prefix.
pub fn matrix_column_names() -> Vec<String> {
    let mut cols = superpixel_feature_names();
    cols.extend(image_feature_names().iter().map(|n| format!("img_{n}")));
    cols
}

fn glcm_index(desc: &str) -> usize {
    GLCM_DESCRIPTOR_NAMES.iter().position(|&d| d == desc).unwrap()
}

fn fo_index(name: &str) -> usize {
    FIRST_ORDER_NAMES.iter().position(|&d| d == name).unwrap()
}

/// The 101 IMAGE-scope features over the whole breast region.
pub fn extract_image_features(img: &PreprocessedImage, mask: &RegionMask) -> Result<FeatureVector> {
    let region = Region::from_mask(img, mask).ok_or(Error::EmptyBreast)?;
    let members = region.member_values();
    if members.len() < 2 {
        return Err(Error::InvalidInput(
            "breast region has fewer than 2 pixels".into(),
        ));
    }
    let mut values = Vec::with_capacity(IMAGE_FEATURE_COUNT);
    values.extend(first_order_features(&members));
    let per_distance = glcm_features_per_distance(&region, GLCM_LEVELS, &[1, 2, 3]);
    for d in &per_distance {
        values.extend(d.iter().cloned());
    }
    values.extend(glrlm_features(&region, GLCM_LEVELS));

    // breast geometry
    let (w, h) = (img.width, img.height);
    let area = mask.breast_area();
    values.push(area as f64 / (w * h) as f64);
    let contour = trace_contour(mask);
    values.push(contour.points.len() as f64);
    values.push(region.height as f64 / region.width as f64);

    // multi-scale subset
    for factor in MULTISCALE_FACTORS {
        let down = region.downsampled(factor);
        let g = glcm_features_per_distance(&down, GLCM_LEVELS, &[1]);
        for desc in MULTISCALE_GLCM {
            values.push(g[0][glcm_index(desc)]);
        }
        let fo = first_order_features(&down.member_values());
        for name in MULTISCALE_FO {
            values.push(fo[fo_index(name)]);
        }
    }

    // extra GLCM configurations (longer distances, alternate quantizations)
    let d4 = glcm_features_per_distance(&region, 16, &[4]);
    values.extend(d4[0].iter().cloned());
    let d5 = glcm_features_per_distance(&region, 64, &[5]);
    for desc in EXTRA_D5_SUBSET {
        values.push(d5[0][glcm_index(desc)]);
    }

    debug_assert_eq!(values.len(), IMAGE_FEATURE_COUNT);
    debug_assert!(values.iter().all(|v| v.is_finite()));
    Ok(FeatureVector {
        names: image_feature_names(),
        values,
        scope: Scope::Image,
        bank_version: BANK_VERSION.to_string(),
    })
}

/// Per-superpixel rows: 50 superpixel features concatenated with the
/// image's 101 features. Superpixels too small for GLCM (< 4 pixels)
/// contribute zeroed GLCM descriptors rather than failing the batch.
pub fn extract_superpixel_features(
    image_id: &str,
    img: &PreprocessedImage,
    sp: &SuperpixelMap,
    mask: &RegionMask,
    image_features: &FeatureVector,
) -> Result<FeatureMatrix> {
    assert_eq!(image_features.scope, Scope::Image);
    let n_labels = sp.label_count();
    let means = superpixel_mean_intensities(img, sp);
    let ranks = fractional_ranks(&means);
    let adjacency = superpixel_adjacency(sp);
    let areas = sp.label_areas();
    let skin_distance = distance_to_non_breast(mask);

    // breast bounding box for centroid normalization
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0usize, usize::MAX, 0usize);
    for idx in 0..mask.labels.len() {
        if mask.labels[idx] == RegionLabel::Breast {
            let (r, c) = (idx / mask.width, idx % mask.width);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
    }
    if r0 == usize::MAX {
        return Err(Error::EmptyBreast);
    }
    let bbox_h = (r1 - r0 + 1) as f64;
    let bbox_w = (c1 - c0 + 1) as f64;
    let breast_area: f64 = areas.iter().sum::<usize>() as f64;
    let scale = breast_area.sqrt();

    let columns = matrix_column_names();
    let n_cols = columns.len();
    let mut matrix = FeatureMatrix {
        image_ids: Vec::with_capacity(n_labels),
        row_labels: Vec::with_capacity(n_labels),
        columns,
        values: Vec::with_capacity(n_labels * n_cols),
        bank_version: BANK_VERSION.to_string(),
    };

    for label in 0..n_labels {
        let region = Region::from_superpixel(img, sp, label as i32)
            .ok_or_else(|| Error::InvalidInput(format!("superpixel {label} empty")))?;
        let members = region.member_values();
        let mut row = Vec::with_capacity(n_cols);
        row.extend(first_order_features(&members));
        if region.pixel_count() < 4 {
            log::warn!(
                "{image_id}: superpixel {label} has {} pixels, GLCM descriptors zeroed",
                region.pixel_count()
            );
            row.extend(std::iter::repeat(0.0).take(GLCM_DESCRIPTOR_NAMES.len()));
        } else {
            let g = glcm_features_per_distance(&region, GLCM_LEVELS, &[1]);
            row.extend(g[0].iter().cloned());
        }
        row.extend(glrlm_features(&region, GLCM_LEVELS));

        // geometry and context
        let (centroid_r, centroid_c, ecc, perimeter, mean_skin) =
            superpixel_geometry(sp, label as i32, &skin_distance);
        row.push(areas[label] as f64);
        row.push(perimeter);
        row.push(ecc);
        row.push((centroid_r - r0 as f64) / bbox_h);
        row.push((centroid_c - c0 as f64) / bbox_w);
        row.push(ranks[label]);
        let neighbors = &adjacency[label];
        let contrast = if neighbors.is_empty() {
            0.0
        } else {
            let nb_mean: f64 =
                neighbors.iter().map(|&n| means[n]).sum::<f64>() / neighbors.len() as f64;
            means[label] - nb_mean
        };
        row.push(contrast);
        row.push((centroid_c - c0 as f64) / scale);
        row.push(mean_skin / scale);

        row.extend(image_features.values.iter().cloned());
        debug_assert_eq!(row.len(), n_cols);
        matrix.image_ids.push(image_id.to_string());
        matrix.row_labels.push(Some(label));
        matrix.values.extend(row);
    }
    Ok(matrix)
}

/// Average fractional rank of each value, normalized so the (unique)
/// maximum gets 1.0 and ties share a rank.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    values
        .iter()
        .map(|&v| {
            let below = values.iter().filter(|&&o| o < v).count() as f64;
            let equal = values.iter().filter(|&&o| o == v).count() as f64;
            (below + (equal + 1.0) / 2.0) / n
        })
        .collect()
}

/// 8-neighborhood adjacency between superpixel labels.
fn superpixel_adjacency(sp: &SuperpixelMap) -> Vec<Vec<usize>> {
    let (w, h) = (sp.width, sp.height);
    let n = sp.label_count();
    let mut sets: Vec<std::collections::BTreeSet<usize>> = vec![Default::default(); n];
    for r in 0..h {
        for c in 0..w {
            let l = sp.labels[r * w + c];
            if l < 0 {
                continue;
            }
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let nl = sp.labels[nr as usize * w + nc as usize];
                    if nl >= 0 && nl != l {
                        sets[l as usize].insert(nl as usize);
                    }
                }
            }
        }
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Multi-source BFS distance (4-neighbor steps) from every non-breast
/// pixel; breast pixels get their distance to the nearest skin line.
fn distance_to_non_breast(mask: &RegionMask) -> Vec<f64> {
    let (w, h) = (mask.width, mask.height);
    let mut dist = vec![f64::INFINITY; w * h];
    let mut queue = std::collections::VecDeque::new();
    for idx in 0..w * h {
        if mask.labels[idx] != RegionLabel::Breast {
            dist[idx] = 0.0;
            queue.push_back(idx);
        }
    }
    // image border also counts as a skin line for full-frame masks
    if queue.is_empty() {
        for r in 0..h {
            for &c in &[0usize, w - 1] {
                let idx = r * w + c;
                if dist[idx] > 1.0 {
                    dist[idx] = 1.0;
                    queue.push_back(idx);
                }
            }
        }
        for c in 0..w {
            for &r in &[0usize, h - 1] {
                let idx = r * w + c;
                if dist[idx] > 1.0 {
                    dist[idx] = 1.0;
                    queue.push_back(idx);
                }
            }
        }
    }
    while let Some(idx) = queue.pop_front() {
        let (r, c) = (idx / w, idx % w);
        let d = dist[idx] + 1.0;
        let mut push = |nr: usize, nc: usize| {
            let n = nr * w + nc;
            if dist[n] > d {
                dist[n] = d;
                queue.push_back(n);
            }
        };
        if r > 0 {
            push(r - 1, c);
        }
        if r + 1 < h {
            push(r + 1, c);
        }
        if c > 0 {
            push(r, c - 1);
        }
        if c + 1 < w {
            push(r, c + 1);
        }
    }
    dist
}

fn superpixel_geometry(
    sp: &SuperpixelMap,
    label: i32,
    skin_distance: &[f64],
) -> (f64, f64, f64, f64, f64) {
    let (w, h) = (sp.width, sp.height);
    let mut sum_r = 0.0;
    let mut sum_c = 0.0;
    let mut n = 0usize;
    let mut perimeter = 0usize;
    let mut skin_sum = 0.0;
    for r in 0..h {
        for c in 0..w {
            if sp.labels[r * w + c] != label {
                continue;
            }
            n += 1;
            sum_r += r as f64;
            sum_c += c as f64;
            skin_sum += skin_distance[r * w + c];
            // exposed 4-neighbor edges
            let same = |nr: i64, nc: i64| {
                nr >= 0
                    && nc >= 0
                    && (nr as usize) < h
                    && (nc as usize) < w
                    && sp.labels[nr as usize * w + nc as usize] == label
            };
            for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                if !same(r as i64 + dr, c as i64 + dc) {
                    perimeter += 1;
                }
            }
        }
    }
    let nf = n as f64;
    let (cr, cc) = (sum_r / nf, sum_c / nf);
    // covariance eigen-ratio eccentricity
    let mut srr = 0.0;
    let mut scc = 0.0;
    let mut src = 0.0;
    for r in 0..h {
        for c in 0..w {
            if sp.labels[r * w + c] == label {
                let dr = r as f64 - cr;
                let dc = c as f64 - cc;
                srr += dr * dr;
                scc += dc * dc;
                src += dr * dc;
            }
        }
    }
    srr /= nf;
    scc /= nf;
    src /= nf;
    let trace = srr + scc;
    let det = srr * scc - src * src;
    let disc = ((trace * trace) / 4.0 - det).max(0.0).sqrt();
    let l_max = trace / 2.0 + disc;
    let l_min = (trace / 2.0 - disc).max(0.0);
    let ecc = if l_max > 0.0 {
        (1.0 - l_min / l_max).max(0.0).sqrt()
    } else {
        0.0
    };
    (cr, cc, ecc, perimeter as f64, skin_sum / nf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::RegionMask;
    use crate::superpixel::generate_superpixels;
    use rand::{Rng, SeedableRng};

    fn constant_image(w: usize, h: usize, v: f64) -> PreprocessedImage {
        PreprocessedImage {
            width: w,
            height: h,
            pixels: vec![v; w * h],
            normalization: (0.0, 1.0),
        }
    }

    #[test]
    fn image_bank_has_101_unique_names() {
        let names = image_feature_names();
        assert_eq!(names.len(), 101);
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), 101);
    }

    #[test]
    fn superpixel_bank_has_50_unique_names() {
        let names = superpixel_feature_names();
        assert_eq!(names.len(), 50);
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), 50);
    }

    #[test]
    fn combined_matrix_has_151_unique_columns() {
        let cols = matrix_column_names();
        assert_eq!(cols.len(), 151);
        let set: std::collections::HashSet<_> = cols.iter().collect();
        assert_eq!(set.len(), 151);
    }

    #[test]
    fn uniform_breast_zero_texture() {
        let img = constant_image(128, 128, 0.4);
        let mut mask = RegionMask::filled(128, 128, RegionLabel::Background);
        for r in 20..100 {
            for c in 20..100 {
                mask.set(r, c, RegionLabel::Breast);
            }
        }
        let fv = extract_image_features(&img, &mask).unwrap();
        assert_eq!(fv.values.len(), 101);
        for (name, value) in fv.names.iter().zip(fv.values.iter()) {
            if name.contains("contrast") || name.contains("entropy") {
                assert_eq!(*value, 0.0, "{name} nonzero on uniform breast");
            }
            assert!(value.is_finite(), "{name} not finite");
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let (w, h) = (96, 96);
        let img = PreprocessedImage {
            width: w,
            height: h,
            pixels: (0..w * h).map(|_| rng.gen::<f64>()).collect(),
            normalization: (0.0, 1.0),
        };
        let mask = RegionMask::filled(w, h, RegionLabel::Breast);
        let a = extract_image_features(&img, &mask).unwrap();
        let b = extract_image_features(&img, &mask).unwrap();
        assert_eq!(a.values, b.values);
        let sp = generate_superpixels(&img, &mask, 16, 0.1, 5, 0).unwrap();
        let ma = extract_superpixel_features("x", &img, &sp, &mask, &a).unwrap();
        let mb = extract_superpixel_features("x", &img, &sp, &mask, &b).unwrap();
        assert_eq!(ma.values, mb.values);
        assert_eq!(ma.rows(), sp.label_count());
        assert_eq!(ma.columns.len(), 151);
        assert!(ma.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mean_rank_peaks_at_one_and_ties_share() {
        let r = fractional_ranks(&[0.1, 0.5, 0.2, 0.5, 0.9]);
        assert_eq!(r[4], 1.0);
        assert_eq!(r[1], r[3]);
        assert!(r[0] < r[2]);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        let m = FeatureMatrix {
            image_ids: vec!["a".into(), "a".into(), "b".into()],
            row_labels: vec![Some(0), Some(1), None],
            columns: vec!["f1".into(), "f2".into()],
            values: vec![1.0, -0.5, 3.25e-10, 4.0, 5.0, 6.5],
            bank_version: BANK_VERSION.into(),
        };
        m.write_csv(&path).unwrap();
        let back = FeatureMatrix::read_csv(&path).unwrap();
        assert_eq!(back, m);
    }
}
