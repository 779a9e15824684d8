//! SLIC superpixels restricted to the breast mask.
//!
//! Spatially localized k-means over (row, col, intensity) with the distance
//! `sqrt(d_int^2 + (compactness * d_sp / S)^2)`, seeds on a hexagonal-offset
//! grid of spacing `S = sqrt(breast_area / K)`.

use crate::error::{Error, Result};
use crate::image::PreprocessedImage;
use crate::segmentation::RegionMask;

pub const NONE_LABEL: i32 = -1;

#[derive(Debug, Clone)]
pub struct SuperpixelMap {
    pub width: usize,
    pub height: usize,
    /// Per-pixel label, `NONE_LABEL` outside the breast.
    pub labels: Vec<i32>,
    pub k_requested: usize,
    /// Per-label (mean row, mean col, mean intensity).
    pub centers: Vec<(f64, f64, f64)>,
}

impl SuperpixelMap {
    pub fn label_count(&self) -> usize {
        self.centers.len()
    }

    pub fn label_areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.centers.len()];
        for &l in &self.labels {
            if l >= 0 {
                areas[l as usize] += 1;
            }
        }
        areas
    }
}

pub fn generate_superpixels(
    img: &PreprocessedImage,
    mask: &RegionMask,
    k: usize,
    compactness: f64,
    iters: usize,
    _seed: u64,
) -> Result<SuperpixelMap> {
    let (w, h) = (img.width, img.height);
    assert_eq!((mask.width, mask.height), (w, h));
    let area = mask.breast_area();
    if area == 0 {
        return Err(Error::EmptyBreast);
    }
    if k < 2 || k > area {
        return Err(Error::SuperpixelCountTooLarge { k, area });
    }
    let spacing = (area as f64 / k as f64).sqrt();

    // hexagonal-offset seed grid, kept only where it falls on the breast
    let mut centers: Vec<(f64, f64, f64)> = Vec::new();
    let mut row_idx = 0usize;
    let mut y = spacing / 2.0;
    while y < h as f64 {
        let x_offset = if row_idx % 2 == 0 {
            spacing / 2.0
        } else {
            spacing
        };
        let mut x = x_offset;
        while x < w as f64 {
            let (r, c) = (y as usize, x as usize);
            if mask.is_breast(r, c) {
                centers.push((r as f64, c as f64, img.get(r, c)));
            }
            x += spacing;
        }
        y += spacing;
        row_idx += 1;
    }
    if centers.len() > k {
        centers.truncate(k);
    }
    if centers.is_empty() {
        // thin or fragmented mask: evenly spaced breast pixels as seeds
        let breast: Vec<usize> = (0..w * h)
            .filter(|&i| mask.labels[i] == crate::segmentation::RegionLabel::Breast)
            .collect();
        let step = (breast.len() / k.min(breast.len())).max(1);
        for idx in breast.iter().step_by(step).take(k) {
            let (r, c) = (idx / w, idx % w);
            centers.push((r as f64, c as f64, img.get(r, c)));
        }
    }

    let mut labels = vec![NONE_LABEL; w * h];
    let mut dist = vec![f64::INFINITY; w * h];
    let window = spacing.ceil() as i64;

    for _ in 0..iters {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        labels.iter_mut().for_each(|l| *l = NONE_LABEL);
        // centers visited in ascending label order: ties resolve to the
        // lowest label index via the strict < comparison
        for (ci, &(cr, cc, cint)) in centers.iter().enumerate() {
            let r0 = ((cr as i64) - window).max(0) as usize;
            let r1 = (((cr as i64) + window + 1) as usize).min(h);
            let c0 = ((cc as i64) - window).max(0) as usize;
            let c1 = (((cc as i64) + window + 1) as usize).min(w);
            for r in r0..r1 {
                for c in c0..c1 {
                    let idx = r * w + c;
                    if !mask.is_breast(r, c) {
                        continue;
                    }
                    let d_int = img.pixels[idx] - cint;
                    let dr = r as f64 - cr;
                    let dc = c as f64 - cc;
                    let d_sp = (dr * dr + dc * dc).sqrt();
                    let scaled = compactness * d_sp / spacing;
                    let d = (d_int * d_int + scaled * scaled).sqrt();
                    if d < dist[idx] {
                        dist[idx] = d;
                        labels[idx] = ci as i32;
                    }
                }
            }
        }
        // pixels outside every window: nearest center by the same metric
        assign_orphan_pixels(img, mask, &centers, &mut labels, compactness, spacing);
        // recompute centers
        let mut acc = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); centers.len()];
        for idx in 0..w * h {
            let l = labels[idx];
            if l >= 0 {
                let a = &mut acc[l as usize];
                a.0 += (idx / w) as f64;
                a.1 += (idx % w) as f64;
                a.2 += img.pixels[idx];
                a.3 += 1;
            }
        }
        for (ci, a) in acc.iter().enumerate() {
            if a.3 > 0 {
                centers[ci] = (a.0 / a.3 as f64, a.1 / a.3 as f64, a.2 / a.3 as f64);
            }
        }
    }

    enforce_connectivity(mask, &mut labels, w, h);

    // compact the label space, preserving original label order
    let mut remap2 = vec![-1i32; centers.len()];
    let mut next2 = 0i32;
    let mut used = vec![false; centers.len()];
    for &l in labels.iter() {
        if l >= 0 {
            used[l as usize] = true;
        }
    }
    for (old, &u) in used.iter().enumerate() {
        if u {
            remap2[old] = next2;
            next2 += 1;
        }
    }
    let mut final_centers = vec![(0.0f64, 0.0f64, 0.0f64); next2 as usize];
    let mut counts = vec![0usize; next2 as usize];
    for idx in 0..w * h {
        if labels[idx] >= 0 {
            let nl = remap2[labels[idx] as usize];
            labels[idx] = nl;
            let a = &mut final_centers[nl as usize];
            a.0 += (idx / w) as f64;
            a.1 += (idx % w) as f64;
            a.2 += img.pixels[idx];
            counts[nl as usize] += 1;
        }
    }
    for (c, &n) in final_centers.iter_mut().zip(counts.iter()) {
        c.0 /= n as f64;
        c.1 /= n as f64;
        c.2 /= n as f64;
    }

    Ok(SuperpixelMap {
        width: w,
        height: h,
        labels,
        k_requested: k,
        centers: final_centers,
    })
}

fn assign_orphan_pixels(
    img: &PreprocessedImage,
    mask: &RegionMask,
    centers: &[(f64, f64, f64)],
    labels: &mut [i32],
    compactness: f64,
    spacing: f64,
) {
    let (w, h) = (img.width, img.height);
    for r in 0..h {
        for c in 0..w {
            let idx = r * w + c;
            if !mask.is_breast(r, c) || labels[idx] >= 0 {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut best_label = 0i32;
            for (ci, &(cr, cc, cint)) in centers.iter().enumerate() {
                let d_int = img.pixels[idx] - cint;
                let dr = r as f64 - cr;
                let dc = c as f64 - cc;
                let scaled = compactness * (dr * dr + dc * dc).sqrt() / spacing;
                let d = (d_int * d_int + scaled * scaled).sqrt();
                if d < best {
                    best = d;
                    best_label = ci as i32;
                }
            }
            labels[idx] = best_label;
        }
    }
}

/// Keep each label's largest 4-connected fragment; merge every other
/// fragment into the largest adjacent surviving label, iterating until no
/// fragmented labels remain.
fn enforce_connectivity(_mask: &RegionMask, labels: &mut [i32], w: usize, h: usize) {
    loop {
        let frag = label_fragments(labels, w, h);
        // largest fragment per label survives (ties: lowest fragment id)
        let mut best_per_label: std::collections::HashMap<i32, (usize, usize)> =
            std::collections::HashMap::new();
        for f in 0..frag.count {
            let label = frag.frag_label[f];
            let size = frag.sizes[f];
            let entry = best_per_label.entry(label).or_insert((f, size));
            if size > entry.1 {
                *entry = (f, size);
            }
        }
        let kept: Vec<bool> = (0..frag.count)
            .map(|f| best_per_label[&frag.frag_label[f]].0 == f)
            .collect();
        if kept.iter().all(|&k| k) {
            break;
        }

        let mut label_area: std::collections::HashMap<i32, usize> = std::collections::HashMap::new();
        for &l in labels.iter() {
            if l >= 0 {
                *label_area.entry(l).or_insert(0) += 1;
            }
        }

        let mut merged_any = false;
        for f in 0..frag.count {
            if kept[f] {
                continue;
            }
            // largest-area adjacent label whose own fragment survives
            let mut best: Option<(usize, i32)> = None;
            for &idx in &frag.members[f] {
                let (r, c) = (idx / w, idx % w);
                let mut consider = |nr: usize, nc: usize| {
                    let nidx = nr * w + nc;
                    let nl = labels[nidx];
                    if nl >= 0 && nl != frag.frag_label[f] && kept[frag.pixel_frag[nidx] as usize] {
                        let area = label_area[&nl];
                        let better = match best {
                            None => true,
                            Some((ba, bl)) => area > ba || (area == ba && nl < bl),
                        };
                        if better {
                            best = Some((area, nl));
                        }
                    }
                };
                if r > 0 {
                    consider(r - 1, c);
                }
                if r + 1 < h {
                    consider(r + 1, c);
                }
                if c > 0 {
                    consider(r, c - 1);
                }
                if c + 1 < w {
                    consider(r, c + 1);
                }
            }
            if let Some((_, target)) = best {
                for &idx in &frag.members[f] {
                    labels[idx] = target;
                }
                merged_any = true;
            }
        }
        if !merged_any {
            // remaining fragments touch only other orphans (disconnected
            // mask); absorb each into any neighboring label to terminate
            let mut progressed = false;
            for f in 0..frag.count {
                if kept[f] {
                    continue;
                }
                'search: for &idx in &frag.members[f] {
                    let (r, c) = (idx / w, idx % w);
                    let neighbors = [
                        (r.wrapping_sub(1), c),
                        (r + 1, c),
                        (r, c.wrapping_sub(1)),
                        (r, c + 1),
                    ];
                    for (nr, nc) in neighbors {
                        if nr < h && nc < w {
                            let nl = labels[nr * w + nc];
                            if nl >= 0 && nl != frag.frag_label[f] {
                                for &m in &frag.members[f] {
                                    labels[m] = nl;
                                }
                                progressed = true;
                                break 'search;
                            }
                        }
                    }
                }
            }
            if !progressed {
                break; // isolated fragments with no foreign neighbor stay
            }
        }
    }
}

struct Fragments {
    count: usize,
    sizes: Vec<usize>,
    frag_label: Vec<i32>,
    members: Vec<Vec<usize>>,
    pixel_frag: Vec<i32>,
}

fn label_fragments(labels: &[i32], w: usize, h: usize) -> Fragments {
    let mut pixel_frag = vec![-1i32; w * h];
    let mut sizes = Vec::new();
    let mut frag_label = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut count = 0usize;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if labels[start] < 0 || pixel_frag[start] >= 0 {
            continue;
        }
        let id = count as i32;
        count += 1;
        let label = labels[start];
        let mut mem = Vec::new();
        stack.push(start);
        pixel_frag[start] = id;
        while let Some(idx) = stack.pop() {
            mem.push(idx);
            let (r, c) = (idx / w, idx % w);
            let mut push = |nr: usize, nc: usize| {
                let n = nr * w + nc;
                if pixel_frag[n] < 0 && labels[n] == label {
                    pixel_frag[n] = id;
                    stack.push(n);
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
        sizes.push(mem.len());
        frag_label.push(label);
        members.push(mem);
    }
    Fragments {
        count,
        sizes,
        frag_label,
        members,
        pixel_frag,
    }
}

/// Exact arithmetic mean intensity per label.
pub fn superpixel_mean_intensities(img: &PreprocessedImage, sp: &SuperpixelMap) -> Vec<f64> {
    let mut sums = vec![0.0f64; sp.label_count()];
    let mut counts = vec![0usize; sp.label_count()];
    for (idx, &l) in sp.labels.iter().enumerate() {
        if l >= 0 {
            sums[l as usize] += img.pixels[idx];
            counts[l as usize] += 1;
        }
    }
    sums.iter()
        .zip(counts.iter())
        .map(|(&s, &n)| s / n as f64)
        .collect()
}

/// Total 4-neighbor boundary length of the partition (pairs of adjacent
/// pixels with differing labels).
pub fn partition_boundary_length(sp: &SuperpixelMap) -> usize {
    let (w, h) = (sp.width, sp.height);
    let mut len = 0usize;
    for r in 0..h {
        for c in 0..w {
            let l = sp.labels[r * w + c];
            if c + 1 < w && l != sp.labels[r * w + c + 1] {
                len += 1;
            }
            if r + 1 < h && l != sp.labels[(r + 1) * w + c] {
                len += 1;
            }
        }
    }
    len
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::PreprocessedImage;
    use crate::segmentation::{RegionLabel, RegionMask};
    use rand::{Rng, SeedableRng};

    fn constant_image(w: usize, h: usize, v: f64) -> PreprocessedImage {
        PreprocessedImage {
            width: w,
            height: h,
            pixels: vec![v; w * h],
            normalization: (0.0, 1.0),
        }
    }

    fn full_mask(w: usize, h: usize) -> RegionMask {
        RegionMask::filled(w, h, RegionLabel::Breast)
    }

    #[test]
    fn constant_image_near_regular_grid() {
        let img = constant_image(512, 512, 0.5);
        let mask = full_mask(512, 512);
        let sp = generate_superpixels(&img, &mask, 512, 0.1, 10, 0).unwrap();
        assert!(sp.label_count() <= 512);
        assert!(sp.label_count() > 256, "too few superpixels: {}", sp.label_count());
        let areas = sp.label_areas();
        let mean = 512.0 * 512.0 / sp.label_count() as f64;
        let within = areas
            .iter()
            .filter(|&&a| (a as f64 - mean).abs() <= 0.3 * mean)
            .count();
        assert!(
            within as f64 >= 0.95 * areas.len() as f64,
            "{within}/{} within 30% of mean area",
            areas.len()
        );
    }

    #[test]
    fn labels_cover_breast_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (w, h) = (128, 128);
        let img = PreprocessedImage {
            width: w,
            height: h,
            pixels: (0..w * h).map(|_| rng.gen::<f64>()).collect(),
            normalization: (0.0, 1.0),
        };
        let mut mask = RegionMask::filled(w, h, RegionLabel::Background);
        for r in 0..h {
            for c in 0..w {
                if ((r as f64 - 64.0).powi(2) + (c as f64).powi(2)).sqrt() < 60.0 {
                    mask.set(r, c, RegionLabel::Breast);
                }
            }
        }
        let sp = generate_superpixels(&img, &mask, 64, 0.1, 10, 0).unwrap();
        for idx in 0..w * h {
            let is_breast = mask.labels[idx] == RegionLabel::Breast;
            assert_eq!(sp.labels[idx] >= 0, is_breast, "coverage mismatch at {idx}");
        }
        // every label non-empty and 4-connected
        let areas = sp.label_areas();
        assert!(areas.iter().all(|&a| a > 0));
        for l in 0..sp.label_count() {
            let comp = crate::segmentation::connected_components(w, h, |i| {
                sp.labels[i] == l as i32
            });
            assert_eq!(comp.count, 1, "label {l} fragmented");
        }
    }

    #[test]
    fn intensity_edge_respected() {
        let (w, h) = (128, 128);
        let pixels: Vec<f64> = (0..w * h)
            .map(|i| if i % w < w / 2 { 0.2 } else { 0.8 })
            .collect();
        let img = PreprocessedImage {
            width: w,
            height: h,
            pixels,
            normalization: (0.0, 1.0),
        };
        let mask = full_mask(w, h);
        let sp = generate_superpixels(&img, &mask, 64, 0.1, 10, 0).unwrap();
        // no superpixel may straddle the edge by more than a 1-pixel band
        let mut mixed = 0usize;
        for l in 0..sp.label_count() {
            let mut low = 0usize;
            let mut high = 0usize;
            for (idx, &lab) in sp.labels.iter().enumerate() {
                if lab == l as i32 {
                    let col = idx % w;
                    if col < w / 2 - 1 {
                        low += 1;
                    } else if col > w / 2 {
                        high += 1;
                    }
                }
            }
            if low > 0 && high > 0 {
                mixed += 1;
            }
        }
        assert_eq!(mixed, 0, "{mixed} superpixels straddle the intensity edge");
    }

    #[test]
    fn k_too_large_errors() {
        let img = constant_image(64, 64, 0.5);
        let mask = full_mask(64, 64);
        match generate_superpixels(&img, &mask, 64 * 64 + 1, 0.1, 10, 0) {
            Err(Error::SuperpixelCountTooLarge { .. }) => {}
            other => panic!("expected error, got {:?}", other.map(|s| s.label_count())),
        }
    }

    #[test]
    fn empty_mask_errors() {
        let img = constant_image(64, 64, 0.5);
        let mask = RegionMask::filled(64, 64, RegionLabel::Background);
        assert!(generate_superpixels(&img, &mask, 16, 0.1, 10, 0).is_err());
    }

    #[test]
    fn mean_intensities_match_scalar_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let (w, h) = (96, 96);
        let img = PreprocessedImage {
            width: w,
            height: h,
            pixels: (0..w * h).map(|_| rng.gen::<f64>()).collect(),
            normalization: (0.0, 1.0),
        };
        let mask = full_mask(w, h);
        let sp = generate_superpixels(&img, &mask, 32, 0.1, 10, 0).unwrap();
        let means = superpixel_mean_intensities(&img, &sp);
        for l in 0..sp.label_count() {
            let mut sum = 0.0;
            let mut n = 0usize;
            for idx in 0..w * h {
                if sp.labels[idx] == l as i32 {
                    sum += img.pixels[idx];
                    n += 1;
                }
            }
            assert!((means[l] - sum / n as f64).abs() < 1e-12);
        }
        // conservation: sum over labels of area*mean equals total intensity
        let areas = sp.label_areas();
        let total: f64 = img.pixels.iter().sum();
        let recon: f64 = means
            .iter()
            .zip(areas.iter())
            .map(|(&m, &a)| m * a as f64)
            .sum();
        assert!((recon - total).abs() / total.abs() < 1e-9);
    }

    #[test]
    fn deterministic_across_runs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let (w, h) = (96, 96);
        let img = PreprocessedImage {
            width: w,
            height: h,
            pixels: (0..w * h).map(|_| rng.gen::<f64>()).collect(),
            normalization: (0.0, 1.0),
        };
        let mask = full_mask(w, h);
        let a = generate_superpixels(&img, &mask, 48, 0.1, 10, 7).unwrap();
        let b = generate_superpixels(&img, &mask, 48, 0.1, 10, 7).unwrap();
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn compactness_does_not_grow_boundary_on_constant_image() {
        let img = constant_image(128, 128, 0.5);
        let mask = full_mask(128, 128);
        let low = generate_superpixels(&img, &mask, 64, 0.05, 10, 0).unwrap();
        let high = generate_superpixels(&img, &mask, 64, 0.5, 10, 0).unwrap();
        assert!(partition_boundary_length(&high) <= partition_boundary_length(&low));
    }
}
