//! Synthetic mammogram phantoms with known ground truth.
//!
//! Phantoms are built in attenuation space: dense tissue attenuates more
//! than fat, which attenuates more than the open-field background. Raw
//! pixel values are the transmitted signal, a monotone decreasing map of
//! attenuation, so dense tissue is dark in the raw frame exactly as in a
//! real "for processing" mammogram.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calibration::{write_gold_csv, GoldRecord};
use crate::error::{Error, Result};
use crate::image::{save_image, ImageMeta, RawImage};
use crate::segmentation::{save_mask, RegionLabel, RegionMask};

#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Breast semicircle radius as a fraction of the frame height.
    pub radius_fraction: f64,
    /// Target percent density in [0, 100].
    pub target_pd: f64,
    /// Mean attenuation of fat and dense tissue; dense must exceed fat.
    pub fat_attenuation: f64,
    pub dense_attenuation: f64,
    pub background_attenuation: f64,
    /// Amplitude of the smoothed texture noise.
    pub noise_amplitude: f64,
    /// Adds a protruding bump on the lower breast boundary.
    pub with_bump: bool,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 0,
            width: 256,
            height: 256,
            radius_fraction: 0.42,
            target_pd: 25.0,
            fat_attenuation: 0.50,
            dense_attenuation: 0.62,
            background_attenuation: 0.02,
            noise_amplitude: 0.05,
            with_bump: false,
        }
    }
}

/// A generated phantom plus its ground truth.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: RawImage,
    pub breast_mask: RegionMask,
    /// Dense-tissue indicator for breast pixels.
    pub dense: Vec<bool>,
    /// Exact percent density of the generated dense blob.
    pub percent_density: f64,
}

fn smoothed_noise(rng: &mut ChaCha8Rng, width: usize, height: usize, window: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..width * height).map(|_| rng.gen::<f64>() - 0.5).collect();
    // separable moving average
    let half = window / 2;
    let mut rows = vec![0.0; width * height];
    for r in 0..height {
        for c in 0..width {
            let lo = c.saturating_sub(half);
            let hi = (c + half + 1).min(width);
            let sum: f64 = raw[r * width + lo..r * width + hi].iter().sum();
            rows[r * width + c] = sum / (hi - lo) as f64;
        }
    }
    let mut out = vec![0.0; width * height];
    for c in 0..width {
        for r in 0..height {
            let lo = r.saturating_sub(half);
            let hi = (r + half + 1).min(height);
            let sum: f64 = (lo..hi).map(|rr| rows[rr * width + c]).sum();
            out[r * width + c] = sum / (hi - lo) as f64;
        }
    }
    out
}

/// Grows a 4-connected dense blob from a seed pixel until it covers the
/// requested fraction of the breast, within one pixel.
fn grow_dense_blob(
    rng: &mut ChaCha8Rng,
    width: usize,
    height: usize,
    breast: &[bool],
    target_pixels: usize,
) -> Vec<bool> {
    let mut dense = vec![false; width * height];
    if target_pixels == 0 {
        return dense;
    }
    // seed near the blob centroid of the breast
    let mut sum_r = 0.0;
    let mut sum_c = 0.0;
    let mut n = 0.0;
    for r in 0..height {
        for c in 0..width {
            if breast[r * width + c] {
                sum_r += r as f64;
                sum_c += c as f64;
                n += 1.0;
            }
        }
    }
    let (cr, cc) = ((sum_r / n).round() as usize, (sum_c / n).round() as usize);
    let seed_idx = if breast[cr * width + cc] {
        cr * width + cc
    } else {
        breast.iter().position(|&b| b).unwrap()
    };
    let mut frontier = vec![seed_idx];
    dense[seed_idx] = true;
    let mut count = 1usize;
    while count < target_pixels && !frontier.is_empty() {
        let pick = rng.gen_range(0..frontier.len());
        let idx = frontier.swap_remove(pick);
        let r = idx / width;
        let c = idx % width;
        let mut neighbors = [None; 4];
        if r > 0 {
            neighbors[0] = Some(idx - width);
        }
        if r + 1 < height {
            neighbors[1] = Some(idx + width);
        }
        if c > 0 {
            neighbors[2] = Some(idx - 1);
        }
        if c + 1 < width {
            neighbors[3] = Some(idx + 1);
        }
        let mut expanded = false;
        for nb in neighbors.into_iter().flatten() {
            if breast[nb] && !dense[nb] {
                dense[nb] = true;
                count += 1;
                frontier.push(nb);
                expanded = true;
                if count >= target_pixels {
                    break;
                }
            }
        }
        if expanded {
            // keep the source on the frontier so growth can continue past it
            frontier.push(idx);
        }
    }
    dense
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    if spec.dense_attenuation <= spec.fat_attenuation
        || spec.fat_attenuation <= spec.background_attenuation
    {
        return Err(Error::InvalidInput(
            "attenuations must satisfy dense > fat > background".into(),
        ));
    }
    if !(0.0..=100.0).contains(&spec.target_pd) {
        return Err(Error::InvalidInput(format!(
            "target percent density {} outside [0, 100]",
            spec.target_pd
        )));
    }
    let (width, height) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let radius = spec.radius_fraction * height as f64;
    let center_r = height as f64 / 2.0;

    let mut breast = vec![false; width * height];
    for r in 0..height {
        for c in 0..width {
            let dr = r as f64 - center_r;
            let dc = c as f64;
            let mut inside = (dr * dr + dc * dc).sqrt() <= radius;
            if spec.with_bump {
                let br = center_r + radius * 0.75;
                let dist = ((r as f64 - br).powi(2) + dc * dc).sqrt();
                if dist <= radius * 0.35 {
                    inside = true;
                }
            }
            if inside {
                breast[r * width + c] = true;
            }
        }
    }
    let breast_area = breast.iter().filter(|&&b| b).count();
    if breast_area == 0 {
        return Err(Error::EmptyBreast);
    }
    let target_pixels = (spec.target_pd / 100.0 * breast_area as f64).round() as usize;
    let dense = grow_dense_blob(&mut rng, width, height, &breast, target_pixels);
    let dense_area = dense.iter().filter(|&&d| d).count();
    let percent_density = 100.0 * dense_area as f64 / breast_area as f64;

    let noise = smoothed_noise(&mut rng, width, height, 5);
    let fine = smoothed_noise(&mut rng, width, height, 2);
    let mut pixels = vec![0u16; width * height];
    for idx in 0..width * height {
        let base = if dense[idx] {
            spec.dense_attenuation
        } else if breast[idx] {
            spec.fat_attenuation
        } else {
            spec.background_attenuation
        };
        let texture = if breast[idx] {
            spec.noise_amplitude * (noise[idx] + 0.5 * fine[idx])
        } else {
            0.01 * fine[idx]
        };
        let attenuation = (base + texture).clamp(0.0, 1.0);
        pixels[idx] = ((1.0 - attenuation) * 65535.0).round() as u16;
    }

    let labels: Vec<RegionLabel> = breast
        .iter()
        .map(|&b| if b { RegionLabel::Breast } else { RegionLabel::Background })
        .collect();
    Ok(Phantom {
        image: RawImage {
            width,
            height,
            pixels,
            meta: ImageMeta::default(),
        },
        breast_mask: RegionMask {
            width,
            height,
            labels,
        },
        dense,
        percent_density,
    })
}

/// Generates `count` phantoms with target densities drawn uniformly from
/// `pd_range` and writes images, reference masks, and the gold-standard
/// CSV into `dir`. Image ids are `phantom_000`, `phantom_001`, ...
/// Returns the generated phantoms in id order.
pub fn generate_corpus(
    dir: &Path,
    count: usize,
    base_seed: u64,
    template: &PhantomSpec,
    pd_range: (f64, f64),
) -> Result<Vec<Phantom>> {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    let mut gold = Vec::with_capacity(count);
    let mut phantoms = Vec::with_capacity(count);
    for i in 0..count {
        let mut spec = template.clone();
        spec.seed = base_seed.wrapping_mul(0x0100_0000_01B3).wrapping_add(i as u64);
        spec.target_pd = pd_range.0 + (pd_range.1 - pd_range.0) * rng.gen::<f64>();
        let id = format!("phantom_{i:03}");
        let mut phantom = generate_phantom(&spec)?;
        phantom.image.meta.source_id = id.clone();
        save_image(&phantom.image, &dir.join(format!("{id}.pgm")))?;
        save_mask(&phantom.breast_mask, &dir.join(format!("{id}_mask.pgm")))?;
        gold.push(GoldRecord {
            image_id: id,
            gold_pd: phantom.percent_density,
        });
        phantoms.push(phantom);
    }
    write_gold_csv(&gold, &dir.join("gold.csv"))?;
    Ok(phantoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::read_gold_csv;
    use crate::image::preprocess;
    use crate::segmentation::{connected_components, segment_background_classical};

    #[test]
    fn pd_hits_target_within_one_pixel() {
        for &target in &[0.0, 10.0, 33.3, 60.0, 100.0] {
            let spec = PhantomSpec {
                target_pd: target,
                seed: 3,
                ..PhantomSpec::default()
            };
            let p = generate_phantom(&spec).unwrap();
            let breast_area = p.breast_mask.breast_area();
            let tolerance_pd = 100.0 / breast_area as f64;
            assert!(
                (p.percent_density - target).abs() <= tolerance_pd + 1e-9,
                "target {target} got {}",
                p.percent_density
            );
        }
    }

    #[test]
    fn dense_blob_is_connected_and_inside_breast() {
        let spec = PhantomSpec {
            target_pd: 30.0,
            seed: 8,
            ..PhantomSpec::default()
        };
        let p = generate_phantom(&spec).unwrap();
        for (i, &d) in p.dense.iter().enumerate() {
            if d {
                assert_eq!(p.breast_mask.labels[i], RegionLabel::Breast);
            }
        }
        let comps = connected_components(spec.width, spec.height, |idx| p.dense[idx]);
        assert_eq!(comps.count, 1);
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = PhantomSpec {
            seed: 42,
            ..PhantomSpec::default()
        };
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a.image.pixels, b.image.pixels);
        assert_eq!(a.dense, b.dense);
        let different = generate_phantom(&PhantomSpec {
            seed: 43,
            ..PhantomSpec::default()
        })
        .unwrap();
        assert_ne!(a.image.pixels, different.image.pixels);
    }

    #[test]
    fn dense_is_brighter_than_fat_after_preprocessing() {
        let spec = PhantomSpec {
            target_pd: 30.0,
            seed: 5,
            ..PhantomSpec::default()
        };
        let p = generate_phantom(&spec).unwrap();
        let pre = preprocess(&p.image);
        let mut dense_sum = 0.0;
        let mut dense_n = 0.0;
        let mut fat_sum = 0.0;
        let mut fat_n = 0.0;
        for (i, &v) in pre.pixels.iter().enumerate() {
            if p.dense[i] {
                dense_sum += v;
                dense_n += 1.0;
            } else if p.breast_mask.labels[i] == RegionLabel::Breast {
                fat_sum += v;
                fat_n += 1.0;
            }
        }
        assert!(dense_sum / dense_n > fat_sum / fat_n + 0.05);
    }

    #[test]
    fn classical_segmentation_recovers_breast() {
        let spec = PhantomSpec {
            seed: 17,
            target_pd: 20.0,
            ..PhantomSpec::default()
        };
        let p = generate_phantom(&spec).unwrap();
        let pre = preprocess(&p.image);
        let seg = segment_background_classical(&pre).unwrap();
        let d = crate::stats::dice(&seg, &p.breast_mask, RegionLabel::Breast).unwrap();
        assert!(d > 0.97, "dice {d}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad_atten = PhantomSpec {
            dense_attenuation: 0.3,
            fat_attenuation: 0.4,
            ..PhantomSpec::default()
        };
        assert!(generate_phantom(&bad_atten).is_err());
        let bad_pd = PhantomSpec {
            target_pd: 120.0,
            ..PhantomSpec::default()
        };
        assert!(generate_phantom(&bad_pd).is_err());
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let template = PhantomSpec::default();
        let phantoms = generate_corpus(dir.path(), 5, 11, &template, (5.0, 65.0)).unwrap();
        assert_eq!(phantoms.len(), 5);
        let gold = read_gold_csv(&dir.path().join("gold.csv")).unwrap();
        assert_eq!(gold.len(), 5);
        for (i, g) in gold.iter().enumerate() {
            assert_eq!(g.image_id, format!("phantom_{i:03}"));
            assert!((g.gold_pd - phantoms[i].percent_density).abs() < 1e-9);
        }
        let img = crate::image::load_image(&dir.path().join("phantom_000.pgm")).unwrap();
        assert_eq!(img.pixels, phantoms[0].image.pixels);
    }
}
