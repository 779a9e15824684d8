//! First-order intensity statistics: 19 named features per value set.

pub const FIRST_ORDER_NAMES: [&str; 19] = [
    "fo_mean",
    "fo_median",
    "fo_std",
    "fo_variance",
    "fo_skewness",
    "fo_kurtosis",
    "fo_min",
    "fo_max",
    "fo_range",
    "fo_p10",
    "fo_p25",
    "fo_p75",
    "fo_p90",
    "fo_iqr",
    "fo_mad",
    "fo_rms",
    "fo_energy",
    "fo_entropy",
    "fo_uniformity",
];

const ENTROPY_BINS: usize = 256;

/// Linear-interpolated percentile of a sorted slice, q in [0, 100].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Population statistics over `values`. Degenerate inputs (n = 1 or zero
/// spread) produce finite values: std/variance/skew/kurtosis 0, entropy 0,
/// uniformity 1.
pub fn first_order_features(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 1, "first-order features need at least one value");
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = percentile(&sorted, 50.0);
    let constant = sorted[0] == sorted[n - 1];
    let variance = if constant {
        0.0
    } else {
        values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / nf
    };
    let std = variance.sqrt();
    let (skewness, kurtosis) = if std > 0.0 {
        let m3 = values.iter().map(|&v| (v - mean).powi(3)).sum::<f64>() / nf;
        let m4 = values.iter().map(|&v| (v - mean).powi(4)).sum::<f64>() / nf;
        (m3 / std.powi(3), m4 / (variance * variance) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let min = sorted[0];
    let max = sorted[n - 1];
    let p10 = percentile(&sorted, 10.0);
    let p25 = percentile(&sorted, 25.0);
    let p75 = percentile(&sorted, 75.0);
    let p90 = percentile(&sorted, 90.0);
    let mad = values.iter().map(|&v| (v - mean).abs()).sum::<f64>() / nf;
    let rms = (values.iter().map(|&v| v * v).sum::<f64>() / nf).sqrt();
    let energy = values.iter().map(|&v| v * v).sum::<f64>();

    // 256-bin histogram over the value range, log base 2, 0*log0 := 0
    let range = max - min;
    let mut hist = vec![0u64; ENTROPY_BINS];
    if range > 0.0 {
        for &v in values {
            let bin = (((v - min) / range * ENTROPY_BINS as f64) as usize).min(ENTROPY_BINS - 1);
            hist[bin] += 1;
        }
    } else {
        hist[0] = n as u64;
    }
    let mut entropy = 0.0;
    let mut uniformity = 0.0;
    for &c in &hist {
        if c > 0 {
            let p = c as f64 / nf;
            entropy -= p * p.log2();
            uniformity += p * p;
        }
    }

    vec![
        mean, median, std, variance, skewness, kurtosis, min, max, range, p10, p25, p75, p90,
        p75 - p25, mad, rms, energy, entropy, uniformity,
    ]
}
