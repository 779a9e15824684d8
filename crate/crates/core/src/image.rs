//! 16-bit raster I/O and the deterministic preprocessing transforms.
//!
//! Raw mammograms come in as 16-bit binary PGM (magic `P5`, maxval 65535)
//! or 16-bit grayscale PNG. Preprocessing is log-transform, inversion,
//! squaring, then a min-max rescale to `[0, 1]`.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const MIN_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Laterality {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Cc,
    Mlo,
}

impl fmt::Display for Laterality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Laterality::Left => "L",
            Laterality::Right => "R",
        })
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Cc => "CC",
            View::Mlo => "MLO",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageMeta {
    pub laterality: Laterality,
    pub view: View,
    pub source_id: String,
}

impl Default for ImageMeta {
    fn default() -> Self {
        ImageMeta {
            laterality: Laterality::Left,
            view: View::Cc,
            source_id: String::new(),
        }
    }
}

/// Raw 16-bit single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u16>,
    pub meta: ImageMeta,
}

impl RawImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u16>, meta: ImageMeta) -> Result<Self> {
        if width < MIN_DIM || height < MIN_DIM {
            return Err(Error::ImageTooSmall { width, height });
        }
        assert_eq!(pixels.len(), width * height);
        Ok(RawImage {
            width,
            height,
            pixels,
            meta,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.pixels[row * self.width + col]
    }

    pub fn mirrored_horizontal(&self) -> RawImage {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in 0..self.height {
            let base = row * self.width;
            pixels.extend(self.pixels[base..base + self.width].iter().rev());
        }
        RawImage {
            width: self.width,
            height: self.height,
            pixels,
            meta: self.meta.clone(),
        }
    }
}

/// Real-valued image after log/invert/square preprocessing, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    /// Min and max of the squared-inverted values before rescale.
    pub normalization: (f64, f64),
}

impl PreprocessedImage {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

/// Log-transform, invert against the image maximum, square, min-max rescale.
///
/// A constant input maps to an all-zero output.
pub fn preprocess(img: &RawImage) -> PreprocessedImage {
    let log: Vec<f64> = img.pixels.iter().map(|&p| (1.0 + p as f64).ln()).collect();
    let max_log = log.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let squared: Vec<f64> = log
        .iter()
        .map(|&l| {
            let inv = max_log - l;
            inv * inv
        })
        .collect();
    let lo = squared.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = squared.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let pixels = if range > 0.0 {
        squared.iter().map(|&v| (v - lo) / range).collect()
    } else {
        vec![0.0; squared.len()]
    };
    PreprocessedImage {
        width: img.width,
        height: img.height,
        pixels,
        normalization: (lo, hi),
    }
}

/// Mirror the image so the breast sits against the left edge.
///
/// If the right half carries more summed intensity than the left half the
/// image is flipped. Returns the (possibly mirrored) image and whether a
/// flip happened. Idempotent.
pub fn standardize_orientation(img: &RawImage) -> (RawImage, bool) {
    let half = img.width / 2;
    let mut left = 0u64;
    let mut right = 0u64;
    for row in 0..img.height {
        let base = row * img.width;
        for col in 0..half {
            left += img.pixels[base + col] as u64;
        }
        for col in img.width - half..img.width {
            right += img.pixels[base + col] as u64;
        }
    }
    if right > left {
        (img.mirrored_horizontal(), true)
    } else {
        (img.clone(), false)
    }
}

// ---------------------------------------------------------------------------
// I/O
// ---------------------------------------------------------------------------

/// Load a 16-bit binary PGM or 16-bit grayscale PNG, with optional
/// `<stem>.meta` sidecar (key=value lines: laterality, view, source_id).
pub fn load_image(path: &Path) -> Result<RawImage> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let (width, height, pixels) = match ext.as_str() {
        "pgm" => load_pgm16(path)?,
        "png" => load_png16(path)?,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("unknown extension {other:?}"),
            })
        }
    };
    let meta = load_sidecar_meta(path)?;
    RawImage::new(width, height, pixels, meta)
}

/// Write the image in the format implied by the path extension, plus a
/// `<stem>.meta` sidecar when metadata is non-default.
pub fn save_image(img: &RawImage, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" => save_pgm16(img, path)?,
        "png" => save_png16(img, path)?,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("unknown extension {other:?}"),
            })
        }
    }
    if img.meta != ImageMeta::default() {
        let mut text = format!(
            "laterality={}\nview={}\n",
            img.meta.laterality, img.meta.view
        );
        if !img.meta.source_id.is_empty() {
            text.push_str(&format!("source_id={}\n", img.meta.source_id));
        }
        let sidecar = path.with_extension("meta");
        fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))?;
    }
    Ok(())
}

fn load_sidecar_meta(path: &Path) -> Result<ImageMeta> {
    let sidecar = path.with_extension("meta");
    if !sidecar.exists() {
        return Ok(ImageMeta::default());
    }
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let mut meta = ImageMeta::default();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        match (key.trim(), value.trim()) {
            ("laterality", "L") => meta.laterality = Laterality::Left,
            ("laterality", "R") => meta.laterality = Laterality::Right,
            ("view", "CC") => meta.view = View::Cc,
            ("view", "MLO") => meta.view = View::Mlo,
            ("source_id", v) => meta.source_id = v.to_string(),
            _ => {}
        }
    }
    Ok(meta)
}

fn load_pgm16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;

    fn next_token(data: &[u8], pos: &mut usize) -> Option<String> {
        // skip whitespace and comments
        loop {
            while *pos < data.len() && data[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < data.len() && data[*pos] == b'#' {
                while *pos < data.len() && data[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos > start {
            Some(String::from_utf8_lossy(&data[start..*pos]).into_owned())
        } else {
            None
        }
    }

    let magic = next_token(&data, &mut pos).unwrap_or_default();
    if magic != "P5" {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("bad PGM magic {magic:?}"),
        });
    }
    let parse = |tok: Option<String>, what: &str| -> Result<usize> {
        tok.and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("missing or invalid {what}"),
            })
    };
    let width = parse(next_token(&data, &mut pos), "width")?;
    let height = parse(next_token(&data, &mut pos), "height")?;
    let maxval = parse(next_token(&data, &mut pos), "maxval")?;
    if maxval != 65535 {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
        });
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let expected = width * height * 2;
    if data.len() < pos + expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: data.len(),
            expected: pos + expected,
        });
    }
    let pixels = data[pos..pos + expected]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((width, height, pixels))
}

fn save_pgm16(img: &RawImage, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(32 + img.pixels.len() * 2);
    write!(out, "P5\n{} {}\n65535\n", img.width, img.height).unwrap();
    for &p in &img.pixels {
        out.extend_from_slice(&p.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn load_png16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let dynimg = image::open(path).map_err(|e| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    match dynimg {
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Ok((w, h, buf.into_raw()))
        }
        _ => Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
        }),
    }
}

fn save_png16(img: &RawImage, path: &Path) -> Result<()> {
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        img.width as u32,
        img.height as u32,
        img.pixels.clone(),
    )
    .expect("pixel buffer matches dimensions");
    buf.save(path).map_err(|e| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn flat(width: usize, height: usize, value: u16) -> RawImage {
        RawImage::new(width, height, vec![value; width * height], ImageMeta::default()).unwrap()
    }

    #[test]
    fn pgm_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.pgm");
        let img = flat(64, 64, 100);
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.pixels, img.pixels);
        assert_eq!((back.width, back.height), (64, 64));
    }

    #[test]
    fn pgm_round_trip_random_images_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for i in 0..50 {
            let w = rng.gen_range(64..100);
            let h = rng.gen_range(64..100);
            let pixels: Vec<u16> = (0..w * h).map(|_| rng.gen()).collect();
            let img = RawImage::new(w, h, pixels, ImageMeta::default()).unwrap();
            let path = dir.path().join(format!("r{i}.pgm"));
            save_image(&img, &path).unwrap();
            let bytes1 = std::fs::read(&path).unwrap();
            let back = load_image(&path).unwrap();
            save_image(&back, &path).unwrap();
            let bytes2 = std::fs::read(&path).unwrap();
            assert_eq!(bytes1, bytes2);
            assert_eq!(back.pixels, img.pixels);
        }
    }

    #[test]
    fn png16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pixels: Vec<u16> = (0..64 * 64).map(|_| rng.gen()).collect();
        let img = RawImage::new(64, 64, pixels, ImageMeta::default()).unwrap();
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.pixels, img.pixels);
    }

    #[test]
    fn eight_bit_pgm_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("8bit.pgm");
        std::fs::write(&path, b"P5\n64 64\n255\n").unwrap();
        match load_image(&path) {
            Err(Error::UnsupportedBitDepth { .. }) => {}
            other => panic!("expected bit-depth error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_pgm_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.pgm");
        std::fs::write(&path, b"P5\n64 64\n65535\nxy").unwrap();
        match load_image(&path) {
            Err(Error::Truncated { offset, .. }) => assert!(offset > 0),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn sidecar_meta_parsed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let mut img = flat(64, 64, 9);
        img.meta = ImageMeta {
            laterality: Laterality::Right,
            view: View::Mlo,
            source_id: "case-17".into(),
        };
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.meta, img.meta);
    }

    #[test]
    fn preprocess_constant_image_is_zero() {
        let img = flat(64, 64, 500);
        let pre = preprocess(&img);
        assert!(pre.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preprocess_endpoints() {
        let mut pixels = vec![0u16; 64 * 64];
        pixels[10] = 65535;
        let img = RawImage::new(64, 64, pixels, ImageMeta::default()).unwrap();
        let pre = preprocess(&img);
        assert_eq!(pre.get(0, 0), 1.0);
        assert_eq!(pre.pixels[10], 0.0);
    }

    #[test]
    fn preprocess_matches_scalar_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pixels: Vec<u16> = (0..64 * 64).map(|_| rng.gen()).collect();
        let img = RawImage::new(64, 64, pixels.clone(), ImageMeta::default()).unwrap();
        let pre = preprocess(&img);

        // independent scalar-loop reference
        let mut max_log = f64::NEG_INFINITY;
        for &p in &pixels {
            let l = (1.0 + p as f64).ln();
            if l > max_log {
                max_log = l;
            }
        }
        let mut sq = Vec::new();
        for &p in &pixels {
            let inv = max_log - (1.0 + p as f64).ln();
            sq.push(inv * inv);
        }
        let lo = sq.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = sq.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (a, &s) in pre.pixels.iter().zip(sq.iter()) {
            let expect = (s - lo) / (hi - lo);
            assert!((a - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn preprocess_is_monotone_decreasing() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let pixels: Vec<u16> = (0..64 * 64).map(|_| rng.gen()).collect();
        let img = RawImage::new(64, 64, pixels.clone(), ImageMeta::default()).unwrap();
        let pre = preprocess(&img);
        for i in 0..pixels.len() {
            for j in (i + 1)..pixels.len().min(i + 50) {
                if pixels[i] < pixels[j] {
                    assert!(pre.pixels[i] >= pre.pixels[j]);
                }
            }
        }
    }

    #[test]
    fn orientation_flips_bright_right() {
        let mut pixels = vec![0u16; 64 * 64];
        for row in 0..64 {
            for col in 40..64 {
                pixels[row * 64 + col] = 1000;
            }
        }
        let img = RawImage::new(64, 64, pixels, ImageMeta::default()).unwrap();
        let (fixed, flipped) = standardize_orientation(&img);
        assert!(flipped);
        assert_eq!(fixed.get(0, 0), 1000);
        let (again, flipped2) = standardize_orientation(&fixed);
        assert!(!flipped2);
        assert_eq!(again.pixels, fixed.pixels);
    }

    #[test]
    fn orientation_keeps_bright_left() {
        let mut pixels = vec![0u16; 64 * 64];
        for row in 0..64 {
            for col in 0..20 {
                pixels[row * 64 + col] = 1000;
            }
        }
        let img = RawImage::new(64, 64, pixels.clone(), ImageMeta::default()).unwrap();
        let (fixed, flipped) = standardize_orientation(&img);
        assert!(!flipped);
        assert_eq!(fixed.pixels, pixels);
    }

    #[test]
    fn orientation_idempotent_on_random_images() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        for _ in 0..100 {
            let pixels: Vec<u16> = (0..64 * 64).map(|_| rng.gen()).collect();
            let img = RawImage::new(64, 64, pixels, ImageMeta::default()).unwrap();
            let (once, _) = standardize_orientation(&img);
            let (twice, flag) = standardize_orientation(&once);
            assert!(!flag);
            assert_eq!(once.pixels, twice.pixels);
            // mirror then re-standardize recovers the same grid
            let (re, _) = standardize_orientation(&once.mirrored_horizontal());
            assert_eq!(re.pixels, once.pixels);
        }
    }
}
