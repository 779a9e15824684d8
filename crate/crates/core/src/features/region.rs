//! Rectangular patch with an inclusion mask, the input to the texture
//! extractors. Regions are cropped to the bounding box of their pixels.

use crate::image::PreprocessedImage;
use crate::segmentation::{RegionLabel, RegionMask};
use crate::superpixel::SuperpixelMap;

#[derive(Debug, Clone)]
pub struct Region {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub inside: Vec<bool>,
}

impl Region {
    pub fn from_mask(img: &PreprocessedImage, mask: &RegionMask) -> Option<Region> {
        Self::from_predicate(img, |idx| mask.labels[idx] == RegionLabel::Breast)
    }

    pub fn from_superpixel(img: &PreprocessedImage, sp: &SuperpixelMap, label: i32) -> Option<Region> {
        Self::from_predicate(img, |idx| sp.labels[idx] == label)
    }

    fn from_predicate(img: &PreprocessedImage, inside: impl Fn(usize) -> bool) -> Option<Region> {
        let (w, h) = (img.width, img.height);
        let mut r0 = usize::MAX;
        let mut r1 = 0usize;
        let mut c0 = usize::MAX;
        let mut c1 = 0usize;
        for idx in 0..w * h {
            if inside(idx) {
                let (r, c) = (idx / w, idx % w);
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
        if r0 == usize::MAX {
            return None;
        }
        let rw = c1 - c0 + 1;
        let rh = r1 - r0 + 1;
        let mut values = vec![0.0; rw * rh];
        let mut ins = vec![false; rw * rh];
        for r in r0..=r1 {
            for c in c0..=c1 {
                let src = r * w + c;
                let dst = (r - r0) * rw + (c - c0);
                if inside(src) {
                    values[dst] = img.pixels[src];
                    ins[dst] = true;
                }
            }
        }
        Some(Region {
            width: rw,
            height: rh,
            values,
            inside: ins,
        })
    }

    pub fn member_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(self.inside.iter())
            .filter(|&(_, &m)| m)
            .map(|(&v, _)| v)
            .collect()
    }

    pub fn pixel_count(&self) -> usize {
        self.inside.iter().filter(|&&m| m).count()
    }

    /// Block-mean downsample by `factor`; a target cell is inside when any
    /// source pixel in its block is inside.
    pub fn downsampled(&self, factor: usize) -> Region {
        let nw = (self.width + factor - 1) / factor;
        let nh = (self.height + factor - 1) / factor;
        let mut values = vec![0.0; nw * nh];
        let mut inside = vec![false; nw * nh];
        for nr in 0..nh {
            for nc in 0..nw {
                let mut sum = 0.0;
                let mut n = 0usize;
                for r in nr * factor..((nr + 1) * factor).min(self.height) {
                    for c in nc * factor..((nc + 1) * factor).min(self.width) {
                        let idx = r * self.width + c;
                        if self.inside[idx] {
                            sum += self.values[idx];
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    values[nr * nw + nc] = sum / n as f64;
                    inside[nr * nw + nc] = true;
                }
            }
        }
        Region {
            width: nw,
            height: nh,
            values,
            inside,
        }
    }

    /// Quantize member intensities to `levels` equal-width bins over the
    /// region's min-max range. Constant regions map to level 0.
    pub fn quantized(&self, levels: usize) -> Vec<i32> {
        let members = self.member_values();
        let lo = members.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = members.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        self.values
            .iter()
            .zip(self.inside.iter())
            .map(|(&v, &m)| {
                if !m {
                    -1
                } else if range <= 0.0 {
                    0
                } else {
                    (((v - lo) / range * levels as f64) as i32).min(levels as i32 - 1)
                }
            })
            .collect()
    }
}
