//! Breast-region masks: classical background segmentation, external mask
//! ingestion, contour tracing, abdominal-bump removal, and finalization.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{PreprocessedImage, RawImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionLabel {
    Background,
    Pectoralis,
    Breast,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<RegionLabel>,
}

impl RegionMask {
    pub fn filled(width: usize, height: usize, label: RegionLabel) -> Self {
        RegionMask {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> RegionLabel {
        self.labels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, label: RegionLabel) {
        self.labels[row * self.width + col] = label;
    }

    pub fn breast_area(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l == RegionLabel::Breast)
            .count()
    }

    pub fn is_breast(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == RegionLabel::Breast
    }

    /// True when the BREAST set is non-empty and 4-connected.
    pub fn breast_is_single_component(&self) -> bool {
        let comps = connected_components(self.width, self.height, |idx| {
            self.labels[idx] == RegionLabel::Breast
        });
        comps.count == 1
    }
}

/// Component labeling over an arbitrary pixel predicate, 4-connectivity.
pub struct Components {
    pub labels: Vec<i32>, // -1 outside the predicate set
    pub count: usize,
    pub sizes: Vec<usize>,
}

pub fn connected_components(
    width: usize,
    height: usize,
    inside: impl Fn(usize) -> bool,
) -> Components {
    let mut labels = vec![-1i32; width * height];
    let mut sizes = Vec::new();
    let mut count = 0usize;
    let mut stack = Vec::new();
    for start in 0..width * height {
        if labels[start] >= 0 || !inside(start) {
            continue;
        }
        let id = count as i32;
        count += 1;
        let mut size = 0usize;
        stack.push(start);
        labels[start] = id;
        while let Some(idx) = stack.pop() {
            size += 1;
            let row = idx / width;
            let col = idx % width;
            let mut push = |r: usize, c: usize| {
                let n = r * width + c;
                if labels[n] < 0 && inside(n) {
                    labels[n] = id;
                    stack.push(n);
                }
            };
            if row > 0 {
                push(row - 1, col);
            }
            if row + 1 < height {
                push(row + 1, col);
            }
            if col > 0 {
                push(row, col - 1);
            }
            if col + 1 < width {
                push(row, col + 1);
            }
        }
        sizes.push(size);
    }
    Components {
        labels,
        count,
        sizes,
    }
}

/// Otsu threshold over 256 equal bins on `[0, 1]` values. Returns the bin
/// upper edge, or `None` for a degenerate (single-intensity) input.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    const BINS: usize = 256;
    let mut hist = [0u64; BINS];
    for &v in values {
        let bin = ((v * BINS as f64) as usize).min(BINS - 1);
        hist[bin] += 1;
    }
    let total: u64 = values.len() as u64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let mut best: Option<(f64, usize)> = None;
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    for t in 0..BINS - 1 {
        w0 += hist[t];
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let mu0 = sum0 / w0 as f64;
        let mu1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (mu0 - mu1) * (mu0 - mu1);
        if best.map_or(true, |(b, _)| between > b) {
            best = Some((between, t));
        }
    }
    best.map(|(_, t)| (t + 1) as f64 / BINS as f64)
}

/// Classical fallback for background removal: Otsu threshold, then refine by
/// reassigning any background component not touching one of the four image
/// boundaries to foreground, then keep the largest foreground component.
pub fn segment_background_classical(img: &PreprocessedImage) -> Result<RegionMask> {
    let threshold = otsu_threshold(&img.pixels).ok_or(Error::NoForeground)?;
    let (w, h) = (img.width, img.height);
    let mut foreground: Vec<bool> = img.pixels.iter().map(|&v| v >= threshold).collect();
    if !foreground.iter().any(|&f| f) {
        return Err(Error::NoForeground);
    }

    // background components must be reachable from an image boundary
    let bg = connected_components(w, h, |idx| !foreground[idx]);
    let mut touches_boundary = vec![false; bg.count];
    for row in 0..h {
        for &col in &[0, w - 1] {
            let l = bg.labels[row * w + col];
            if l >= 0 {
                touches_boundary[l as usize] = true;
            }
        }
    }
    for col in 0..w {
        for &row in &[0, h - 1] {
            let l = bg.labels[row * w + col];
            if l >= 0 {
                touches_boundary[l as usize] = true;
            }
        }
    }
    for idx in 0..w * h {
        let l = bg.labels[idx];
        if l >= 0 && !touches_boundary[l as usize] {
            foreground[idx] = true;
        }
    }

    // largest foreground component becomes the breast candidate
    let fg = connected_components(w, h, |idx| foreground[idx]);
    if fg.count == 0 {
        return Err(Error::NoForeground);
    }
    let largest = fg
        .sizes
        .iter()
        .enumerate()
        .max_by_key(|&(i, &s)| (s, std::cmp::Reverse(i)))
        .map(|(i, _)| i as i32)
        .unwrap();
    let mut mask = RegionMask::filled(w, h, RegionLabel::Background);
    for idx in 0..w * h {
        if fg.labels[idx] == largest {
            mask.labels[idx] = RegionLabel::Breast;
        }
    }
    Ok(mask)
}

/// Map an external 0/128/255 mask raster to a RegionMask, validating shape.
pub fn ingest_mask(path: &Path, img: &RawImage) -> Result<RegionMask> {
    let (w, h, values) = load_mask_raster(path)?;
    if w != img.width || h != img.height {
        return Err(Error::ShapeMismatch {
            left_w: w,
            left_h: h,
            right_w: img.width,
            right_h: img.height,
        });
    }
    let mut labels = Vec::with_capacity(values.len());
    for &v in &values {
        labels.push(match v {
            0 => RegionLabel::Background,
            128 => RegionLabel::Pectoralis,
            255 => RegionLabel::Breast,
            other => return Err(Error::IllegalMaskValue { value: other as u16 }),
        });
    }
    Ok(RegionMask {
        width: w,
        height: h,
        labels,
    })
}

/// Ordered breast boundary, traced with 8-adjacent steps, chest wall
/// (left edge) columns excluded.
#[derive(Debug, Clone)]
pub struct Contour {
    pub points: Vec<(usize, usize)>,
}

/// Moore-neighbor boundary trace of the BREAST region. Points on the image's
/// left edge are dropped from the returned contour.
pub fn trace_contour(mask: &RegionMask) -> Contour {
    let (w, h) = (mask.width, mask.height);
    let inside = |r: i64, c: i64| -> bool {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && mask.is_breast(r as usize, c as usize)
    };
    // top-most then left-most breast pixel
    let mut start = None;
    'outer: for r in 0..h {
        for c in 0..w {
            if mask.is_breast(r, c) {
                start = Some((r as i64, c as i64));
                break 'outer;
            }
        }
    }
    let Some(start) = start else {
        return Contour { points: Vec::new() };
    };
    // clockwise Moore neighborhood starting from west
    const NB: [(i64, i64); 8] = [
        (0, -1),
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, 1),
        (1, 1),
        (1, 0),
        (1, -1),
    ];
    let mut points = Vec::new();
    let mut current = start;
    let mut backtrack = 0usize; // index into NB of the previous pixel
    loop {
        points.push((current.0 as usize, current.1 as usize));
        let mut found = None;
        for step in 0..8 {
            let dir = (backtrack + 1 + step) % 8;
            let cand = (current.0 + NB[dir].0, current.1 + NB[dir].1);
            if inside(cand.0, cand.1) {
                found = Some((cand, dir));
                break;
            }
        }
        match found {
            None => break, // isolated pixel
            Some((next, dir)) => {
                // backtrack points from next toward the previously checked empty cell
                backtrack = (dir + 4) % 8;
                current = next;
                if current == start && points.len() > 1 {
                    break;
                }
            }
        }
        if points.len() > 4 * (w * h) {
            break; // safety bound
        }
    }
    points.retain(|&(_, c)| c > 0);
    Contour { points }
}

/// Parameters for the contour-gradient bump removal rule.
#[derive(Debug, Clone, Copy)]
pub struct BumpParams {
    /// Fraction of the breast's vertical extent, from the bottom, inspected.
    pub bottom_fraction: f64,
    /// Moving-average window (rows) for the contour column profile.
    pub smooth_window: usize,
}

impl Default for BumpParams {
    fn default() -> Self {
        BumpParams {
            bottom_fraction: 0.25,
            smooth_window: 15,
        }
    }
}

/// Remove a protruding abdominal/paddle bump below the breast.
///
/// The breast outline's column coordinate (rightmost breast column per row)
/// is smoothed and differenced; a shrink-to-grow sign change below the row
/// of maximum breast width truncates the mask there. Iterates to a fixed
/// point so the operation is idempotent.
pub fn remove_abdominal_bump(mask: &RegionMask, params: &BumpParams) -> RegionMask {
    let mut current = mask.clone();
    loop {
        match bump_truncation_row(&current, params) {
            None => return current,
            Some(cut_row) => {
                let mut changed = false;
                for row in (cut_row + 1)..current.height {
                    for col in 0..current.width {
                        if current.is_breast(row, col) {
                            current.set(row, col, RegionLabel::Background);
                            changed = true;
                        }
                    }
                }
                if !changed {
                    return current;
                }
            }
        }
    }
}

fn bump_truncation_row(mask: &RegionMask, params: &BumpParams) -> Option<usize> {
    let (w, h) = (mask.width, mask.height);
    // per-row rightmost column and width of the breast
    let mut rows = Vec::new();
    for row in 0..h {
        let mut rightmost = None;
        for col in (0..w).rev() {
            if mask.is_breast(row, col) {
                rightmost = Some(col);
                break;
            }
        }
        if let Some(c) = rightmost {
            rows.push((row, c as f64));
        }
    }
    if rows.len() < params.smooth_window + 2 {
        return None;
    }
    let r_min = rows.first().unwrap().0;
    let r_max = rows.last().unwrap().0;
    let extent = r_max - r_min + 1;
    let peak_idx = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let bottom_start_row =
        r_max.saturating_sub((extent as f64 * params.bottom_fraction) as usize) + 0;

    // centered moving average of the column profile
    let half = params.smooth_window / 2;
    let n = rows.len();
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            rows[lo..hi].iter().map(|&(_, c)| c).sum::<f64>() / (hi - lo) as f64
        })
        .collect();

    // scan for shrink -> grow transitions below the widest row, inside the
    // bottom band; truncate at the valley where growth starts
    let mut was_shrinking = false;
    for i in peak_idx..n - 1 {
        let d = smooth[i + 1] - smooth[i];
        if d < -1e-9 {
            was_shrinking = true;
        } else if d > 1e-9 && was_shrinking && rows[i].0 >= bottom_start_row {
            return Some(rows[i].0);
        }
    }
    None
}

/// Keep the largest 4-connected BREAST component and merge PECTORALIS into
/// BACKGROUND, establishing the single-component invariant.
pub fn finalize_breast_mask(mask: &RegionMask) -> Result<RegionMask> {
    let comps = connected_components(mask.width, mask.height, |idx| {
        mask.labels[idx] == RegionLabel::Breast
    });
    if comps.count == 0 {
        return Err(Error::EmptyBreast);
    }
    let largest = comps
        .sizes
        .iter()
        .enumerate()
        .max_by_key(|&(i, &s)| (s, std::cmp::Reverse(i)))
        .map(|(i, _)| i as i32)
        .unwrap();
    let mut out = RegionMask::filled(mask.width, mask.height, RegionLabel::Background);
    for idx in 0..mask.labels.len() {
        if comps.labels[idx] == largest {
            out.labels[idx] = RegionLabel::Breast;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Mask raster I/O (8-bit PGM/PNG, values {0, 128, 255})
// ---------------------------------------------------------------------------

fn load_mask_raster(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" => load_pgm8(path),
        "png" => {
            let dynimg = image::open(path).map_err(|e| Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
            let buf = dynimg.into_luma8();
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Ok((w, h, buf.into_raw()))
        }
        other => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("unknown extension {other:?}"),
        }),
    }
}

fn load_pgm8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text_end = data.len().min(64);
    let header = String::from_utf8_lossy(&data[..text_end]);
    let mut fields = header.split_ascii_whitespace();
    if fields.next() != Some("P5") {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "bad PGM magic".into(),
        });
    }
    let width: usize = fields
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "missing width".into(),
        })?;
    let height: usize = fields
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "missing height".into(),
        })?;
    let maxval: usize = fields
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "missing maxval".into(),
        })?;
    if maxval != 255 {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
        });
    }
    // payload starts one byte after the maxval token
    let header_str = format!("P5");
    let _ = header_str;
    let mut token_count = 0;
    let mut pos = 0usize;
    while pos < data.len() && token_count < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        token_count += 1;
    }
    pos += 1;
    let expected = width * height;
    if data.len() < pos + expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: data.len(),
            expected: pos + expected,
        });
    }
    Ok((width, height, data[pos..pos + expected].to_vec()))
}

pub fn save_mask(mask: &RegionMask, path: &Path) -> Result<()> {
    let values: Vec<u8> = mask
        .labels
        .iter()
        .map(|l| match l {
            RegionLabel::Background => 0u8,
            RegionLabel::Pectoralis => 128,
            RegionLabel::Breast => 255,
        })
        .collect();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" => {
            let mut out = Vec::with_capacity(32 + values.len());
            write!(out, "P5\n{} {}\n255\n", mask.width, mask.height).unwrap();
            out.extend_from_slice(&values);
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        "png" => {
            let buf = image::ImageBuffer::<image::Luma<u8>, _>::from_raw(
                mask.width as u32,
                mask.height as u32,
                values,
            )
            .expect("buffer matches dimensions");
            buf.save(path).map_err(|e| {
                Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
                )
            })
        }
        other => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("unknown extension {other:?}"),
        }),
    }
}
