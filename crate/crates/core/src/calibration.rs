//! Global intensity-cutoff calibration: converts image-level gold-standard
//! PD scores into per-superpixel dense/non-dense reference labels.

use std::path::Path;

use crate::error::{Error, Result};

/// Superpixel mean intensities and pixel areas for one image.
#[derive(Debug, Clone)]
pub struct ImageSuperpixelSummary {
    pub image_id: String,
    pub means: Vec<f64>,
    pub areas: Vec<usize>,
}

impl ImageSuperpixelSummary {
    /// Percent area of superpixels whose mean is at or above the cutoff.
    pub fn pd_at_cutoff(&self, cutoff: f64) -> f64 {
        let total: usize = self.areas.iter().sum();
        let dense: usize = self
            .means
            .iter()
            .zip(self.areas.iter())
            .filter(|&(&m, _)| m >= cutoff)
            .map(|(_, &a)| a)
            .sum();
        100.0 * dense as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldRecord {
    pub image_id: String,
    pub gold_pd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffCalibration {
    pub cutoff: f64,
    pub achieved_overall_pd: f64,
    pub gold_overall_pd: f64,
}

pub const DEFAULT_GRID: usize = 1024;

/// How per-image PD values combine into the overall score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverallPd {
    /// Unweighted mean of per-image PD values (default).
    MeanOfImages,
    /// Pooled dense area over pooled breast area.
    Pooled,
}

/// Exhaustive search over `grid` equally spaced cutoffs on `[0, 1]` for the
/// one minimizing the distance between the overall PD and the mean gold PD.
/// Ties break toward the smaller cutoff.
pub fn calibrate_cutoff(
    summaries: &[ImageSuperpixelSummary],
    gold: &[GoldRecord],
    grid: usize,
    overall: OverallPd,
) -> Result<CutoffCalibration> {
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    let mut matched = Vec::with_capacity(gold.len());
    for g in gold {
        if !(0.0..=100.0).contains(&g.gold_pd) {
            return Err(Error::InvalidInput(format!(
                "gold PD {} out of [0,100] for {}",
                g.gold_pd, g.image_id
            )));
        }
        let s = summaries
            .iter()
            .find(|s| s.image_id == g.image_id)
            .ok_or_else(|| Error::UnknownImageId(g.image_id.clone()))?;
        matched.push(s);
    }
    let gold_overall = gold.iter().map(|g| g.gold_pd).sum::<f64>() / gold.len() as f64;

    let overall_pd = |cutoff: f64| -> f64 {
        match overall {
            OverallPd::MeanOfImages => {
                matched.iter().map(|s| s.pd_at_cutoff(cutoff)).sum::<f64>() / matched.len() as f64
            }
            OverallPd::Pooled => {
                let mut dense = 0usize;
                let mut total = 0usize;
                for s in &matched {
                    total += s.areas.iter().sum::<usize>();
                    dense += s
                        .means
                        .iter()
                        .zip(s.areas.iter())
                        .filter(|&(&m, _)| m >= cutoff)
                        .map(|(_, &a)| a)
                        .sum::<usize>();
                }
                100.0 * dense as f64 / total as f64
            }
        }
    };

    let mut best: Option<(f64, f64, f64)> = None; // (|diff|, cutoff, achieved)
    for i in 0..grid {
        let c = i as f64 / (grid - 1) as f64;
        let achieved = overall_pd(c);
        let diff = (achieved - gold_overall).abs();
        if best.map_or(true, |(bd, _, _)| diff < bd) {
            best = Some((diff, c, achieved));
        }
    }
    let (_, cutoff, achieved) = best.unwrap();
    Ok(CutoffCalibration {
        cutoff,
        achieved_overall_pd: achieved,
        gold_overall_pd: gold_overall,
    })
}

/// DENSE iff mean >= cutoff.
pub fn reference_labels(means: &[f64], calib: &CutoffCalibration) -> Vec<bool> {
    means.iter().map(|&m| m >= calib.cutoff).collect()
}

/// Gold records from a CSV with columns `image_id,gold_pd`.
pub fn read_gold_csv(path: &Path) -> Result<Vec<GoldRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| {
        Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
    })?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
        })?;
        out.push(GoldRecord {
            image_id: record[0].to_string(),
            gold_pd: record[1]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad gold_pd {:?}", &record[1])))?,
        });
    }
    Ok(out)
}

pub fn write_gold_csv(records: &[GoldRecord], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| {
        Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
    })?;
    wtr.write_record(["image_id", "gold_pd"]).ok();
    for r in records {
        wtr.write_record([r.image_id.as_str(), &format!("{:.10}", r.gold_pd)])
            .ok();
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn phantom_summary(id: &str, dense_frac: f64, n: usize) -> ImageSuperpixelSummary {
        let dense_n = (n as f64 * dense_frac).round() as usize;
        let mut means = vec![0.8; dense_n];
        means.extend(vec![0.2; n - dense_n]);
        ImageSuperpixelSummary {
            image_id: id.into(),
            means,
            areas: vec![10; n],
        }
    }

    #[test]
    fn phantom_cutoff_lands_just_above_fat() {
        let s = vec![phantom_summary("a", 0.30, 100)];
        let gold = vec![GoldRecord {
            image_id: "a".into(),
            gold_pd: 30.0,
        }];
        let c = calibrate_cutoff(&s, &gold, DEFAULT_GRID, OverallPd::MeanOfImages).unwrap();
        // any cutoff in (0.2, 0.8] achieves exactly 30; ties break small
        let first_above = (0..DEFAULT_GRID)
            .map(|i| i as f64 / (DEFAULT_GRID - 1) as f64)
            .find(|&c| c > 0.2)
            .unwrap();
        assert_eq!(c.cutoff, first_above);
        assert!((c.achieved_overall_pd - 30.0).abs() < 1e-12);
    }

    #[test]
    fn gold_100_with_equal_means() {
        let s = vec![ImageSuperpixelSummary {
            image_id: "a".into(),
            means: vec![0.5; 20],
            areas: vec![5; 20],
        }];
        let gold = vec![GoldRecord {
            image_id: "a".into(),
            gold_pd: 100.0,
        }];
        let c = calibrate_cutoff(&s, &gold, DEFAULT_GRID, OverallPd::MeanOfImages).unwrap();
        assert!(c.cutoff <= 0.5);
        assert_eq!(c.achieved_overall_pd, 100.0);
    }

    #[test]
    fn unknown_image_id_errors() {
        let s = vec![phantom_summary("a", 0.3, 10)];
        let gold = vec![GoldRecord {
            image_id: "zzz".into(),
            gold_pd: 10.0,
        }];
        match calibrate_cutoff(&s, &gold, 64, OverallPd::MeanOfImages) {
            Err(Error::UnknownImageId(id)) => assert_eq!(id, "zzz"),
            other => panic!("expected unknown-id error, got {other:?}"),
        }
    }

    #[test]
    fn empty_gold_errors() {
        assert!(matches!(
            calibrate_cutoff(&[], &[], 64, OverallPd::MeanOfImages),
            Err(Error::EmptyGold)
        ));
    }

    #[test]
    fn overall_pd_non_increasing_in_cutoff() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let summaries: Vec<ImageSuperpixelSummary> = (0..5)
            .map(|i| ImageSuperpixelSummary {
                image_id: format!("im{i}"),
                means: (0..64).map(|_| rng.gen::<f64>()).collect(),
                areas: (0..64).map(|_| rng.gen_range(1..50)).collect(),
            })
            .collect();
        let mut prev = f64::INFINITY;
        for i in 0..256 {
            let c = i as f64 / 255.0;
            let overall = summaries.iter().map(|s| s.pd_at_cutoff(c)).sum::<f64>() / 5.0;
            assert!(overall <= prev + 1e-12);
            prev = overall;
        }
    }

    #[test]
    fn equals_brute_force_sweep_on_random_corpora() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let summaries: Vec<ImageSuperpixelSummary> = (0..4)
                .map(|i| ImageSuperpixelSummary {
                    image_id: format!("im{i}"),
                    means: (0..32).map(|_| rng.gen::<f64>()).collect(),
                    areas: (0..32).map(|_| rng.gen_range(1..50)).collect(),
                })
                .collect();
            let gold: Vec<GoldRecord> = (0..4)
                .map(|i| GoldRecord {
                    image_id: format!("im{i}"),
                    gold_pd: rng.gen_range(0.0..100.0),
                })
                .collect();
            let got = calibrate_cutoff(&summaries, &gold, 1024, OverallPd::MeanOfImages).unwrap();

            // independent exhaustive sweep
            let gold_mean = gold.iter().map(|g| g.gold_pd).sum::<f64>() / 4.0;
            let mut best_c = 0.0;
            let mut best_d = f64::INFINITY;
            for i in 0..1024 {
                let c = i as f64 / 1023.0;
                let overall = summaries.iter().map(|s| s.pd_at_cutoff(c)).sum::<f64>() / 4.0;
                let d = (overall - gold_mean).abs();
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            assert_eq!(got.cutoff, best_c);
        }
    }

    #[test]
    fn labels_reproduce_achieved_pd_and_fixed_point() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let summaries: Vec<ImageSuperpixelSummary> = (0..3)
            .map(|i| ImageSuperpixelSummary {
                image_id: format!("im{i}"),
                means: (0..64).map(|_| rng.gen::<f64>()).collect(),
                areas: vec![7; 64],
            })
            .collect();
        let gold: Vec<GoldRecord> = (0..3)
            .map(|i| GoldRecord {
                image_id: format!("im{i}"),
                gold_pd: 25.0 + i as f64,
            })
            .collect();
        let calib = calibrate_cutoff(&summaries, &gold, 1024, OverallPd::MeanOfImages).unwrap();

        // re-aggregate labels into per-image PDs
        let mut total_pd = 0.0;
        for s in &summaries {
            let labels = reference_labels(&s.means, &calib);
            let dense: usize = labels
                .iter()
                .zip(s.areas.iter())
                .filter(|&(&d, _)| d)
                .map(|(_, &a)| a)
                .sum();
            total_pd += 100.0 * dense as f64 / s.areas.iter().sum::<usize>() as f64;
        }
        assert!((total_pd / 3.0 - calib.achieved_overall_pd).abs() < 1e-9);

        // calibrating against its own achieved output reproduces the cutoff
        let gold2: Vec<GoldRecord> = summaries
            .iter()
            .map(|s| GoldRecord {
                image_id: s.image_id.clone(),
                gold_pd: s.pd_at_cutoff(calib.cutoff),
            })
            .collect();
        let calib2 = calibrate_cutoff(&summaries, &gold2, 1024, OverallPd::MeanOfImages).unwrap();
        assert_eq!(calib2.cutoff, calib.cutoff);
    }

    #[test]
    fn mean_at_cutoff_is_dense() {
        let calib = CutoffCalibration {
            cutoff: 0.5,
            achieved_overall_pd: 0.0,
            gold_overall_pd: 0.0,
        };
        assert_eq!(reference_labels(&[0.5, 0.4999], &calib), vec![true, false]);
    }

    #[test]
    fn gold_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gold.csv");
        let records = vec![
            GoldRecord {
                image_id: "a".into(),
                gold_pd: 12.5,
            },
            GoldRecord {
                image_id: "b".into(),
                gold_pd: 40.0,
            },
        ];
        write_gold_csv(&records, &path).unwrap();
        assert_eq!(read_gold_csv(&path).unwrap(), records);
    }
}
