//! Gray-level run-length matrix descriptors, four directions, runs clipped
//! at the region boundary.

use super::region::Region;

pub const GLRLM_DESCRIPTOR_NAMES: [&str; 11] = [
    "sre", "lre", "gln", "rln", "rp", "lglre", "hglre", "srlgle", "srhgle", "lrlgle", "lrhgle",
];

pub const DIRECTIONS: [(i64, i64); 4] = [(0, 1), (-1, 1), (-1, 0), (-1, -1)];

/// Run-length matrix for one direction: `rlm[level][run_length - 1]`.
pub fn run_length_matrix(
    quantized: &[i32],
    width: usize,
    height: usize,
    levels: usize,
    dir: (i64, i64),
) -> Vec<Vec<u64>> {
    let (w, h) = (width as i64, height as i64);
    let max_run = width.max(height);
    let mut rlm = vec![vec![0u64; max_run]; levels];
    let (dr, dc) = dir;
    for r in 0..h {
        for c in 0..w {
            // line starts where the predecessor falls outside the frame
            let (pr, pc) = (r - dr, c - dc);
            if pr >= 0 && pr < h && pc >= 0 && pc < w {
                continue;
            }
            let mut cur_level = -1i32;
            let mut run_len = 0usize;
            let (mut rr, mut cc) = (r, c);
            while rr >= 0 && rr < h && cc >= 0 && cc < w {
                let v = quantized[(rr * w + cc) as usize];
                if v == cur_level && v >= 0 {
                    run_len += 1;
                } else {
                    if cur_level >= 0 {
                        rlm[cur_level as usize][run_len - 1] += 1;
                    }
                    cur_level = v;
                    run_len = 1;
                }
                rr += dr;
                cc += dc;
            }
            if cur_level >= 0 {
                rlm[cur_level as usize][run_len - 1] += 1;
            }
        }
    }
    rlm
}

pub fn glrlm_descriptors(rlm: &[Vec<u64>], pixel_count: usize) -> Vec<f64> {
    let mut n_runs = 0.0;
    let mut sre = 0.0;
    let mut lre = 0.0;
    let mut lglre = 0.0;
    let mut hglre = 0.0;
    let mut srlgle = 0.0;
    let mut srhgle = 0.0;
    let mut lrlgle = 0.0;
    let mut lrhgle = 0.0;
    let mut per_level: Vec<f64> = vec![0.0; rlm.len()];
    let max_run = rlm.first().map_or(0, |r| r.len());
    let mut per_length: Vec<f64> = vec![0.0; max_run];
    for (lvl, row) in rlm.iter().enumerate() {
        let i = (lvl + 1) as f64; // gray-level index starts at 1
        for (len_idx, &count) in row.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let j = (len_idx + 1) as f64;
            let r = count as f64;
            n_runs += r;
            sre += r / (j * j);
            lre += r * j * j;
            lglre += r / (i * i);
            hglre += r * i * i;
            srlgle += r / (i * i * j * j);
            srhgle += r * i * i / (j * j);
            lrlgle += r * j * j / (i * i);
            lrhgle += r * i * i * j * j;
            per_level[lvl] += r;
            per_length[len_idx] += r;
        }
    }
    if n_runs == 0.0 {
        return vec![0.0; GLRLM_DESCRIPTOR_NAMES.len()];
    }
    let gln = per_level.iter().map(|&s| s * s).sum::<f64>() / n_runs;
    let rln = per_length.iter().map(|&s| s * s).sum::<f64>() / n_runs;
    vec![
        sre / n_runs,
        lre / n_runs,
        gln,
        rln,
        n_runs / pixel_count as f64,
        lglre / n_runs,
        hglre / n_runs,
        srlgle / n_runs,
        srhgle / n_runs,
        lrlgle / n_runs,
        lrhgle / n_runs,
    ]
}

/// Direction-averaged GLRLM descriptors.
pub fn glrlm_features(region: &Region, levels: usize) -> Vec<f64> {
    let quantized = region.quantized(levels);
    let pixels = region.pixel_count();
    let mut acc = vec![0.0; GLRLM_DESCRIPTOR_NAMES.len()];
    for &dir in &DIRECTIONS {
        let rlm = run_length_matrix(&quantized, region.width, region.height, levels, dir);
        let desc = glrlm_descriptors(&rlm, pixels);
        for (a, v) in acc.iter_mut().zip(desc.iter()) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= DIRECTIONS.len() as f64;
    }
    acc
}
