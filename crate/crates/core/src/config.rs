//! Pipeline configuration: defaults, flat key=value files, and hashing
//! for run manifests.

use std::fmt::Write as FmtWrite;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::calibration::OverallPd;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Requested superpixel count per image.
    pub superpixels: usize,
    pub compactness: f64,
    pub slic_iterations: usize,
    pub folds: usize,
    pub trees: usize,
    pub seed: u64,
    /// Worker threads; 0 selects the rayon default.
    pub threads: usize,
    pub cutoff_grid: usize,
    pub overall_pd: OverallPd,
    /// Training rows kept per class before forest and SVM fitting; caps
    /// runtime on large corpora. 0 disables subsampling.
    pub max_train_rows: usize,
    pub svm_c: f64,
    pub svm_tol: f64,
    pub class_weighting: bool,
    /// Apply abdominal bump removal during classical segmentation.
    pub remove_bump: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            superpixels: 512,
            compactness: 0.1,
            slic_iterations: 10,
            folds: 3,
            trees: 100,
            seed: 0,
            threads: 0,
            cutoff_grid: 1024,
            overall_pd: OverallPd::MeanOfImages,
            max_train_rows: 2000,
            svm_c: 1.0,
            svm_tol: 1e-3,
            class_weighting: true,
            remove_bump: true,
        }
    }
}

impl PipelineConfig {
    /// Canonical key=value serialization; also the hashing input.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "class_weighting={}", self.class_weighting);
        let _ = writeln!(s, "compactness={}", self.compactness);
        let _ = writeln!(s, "cutoff_grid={}", self.cutoff_grid);
        let _ = writeln!(s, "folds={}", self.folds);
        let _ = writeln!(s, "max_train_rows={}", self.max_train_rows);
        let _ = writeln!(
            s,
            "overall_pd={}",
            match self.overall_pd {
                OverallPd::MeanOfImages => "mean_of_images",
                OverallPd::Pooled => "pooled",
            }
        );
        let _ = writeln!(s, "remove_bump={}", self.remove_bump);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "slic_iterations={}", self.slic_iterations);
        let _ = writeln!(s, "superpixels={}", self.superpixels);
        let _ = writeln!(s, "svm_c={}", self.svm_c);
        let _ = writeln!(s, "svm_tol={}", self.svm_tol);
        let _ = writeln!(s, "threads={}", self.threads);
        let _ = writeln!(s, "trees={}", self.trees);
        s
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.serialize().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value {value:?} for {what}"));
        match key {
            "superpixels" => self.superpixels = value.parse().map_err(|_| bad(key))?,
            "compactness" => self.compactness = value.parse().map_err(|_| bad(key))?,
            "slic_iterations" => self.slic_iterations = value.parse().map_err(|_| bad(key))?,
            "folds" => self.folds = value.parse().map_err(|_| bad(key))?,
            "trees" => self.trees = value.parse().map_err(|_| bad(key))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "threads" => self.threads = value.parse().map_err(|_| bad(key))?,
            "cutoff_grid" => self.cutoff_grid = value.parse().map_err(|_| bad(key))?,
            "overall_pd" => {
                self.overall_pd = match value {
                    "mean_of_images" => OverallPd::MeanOfImages,
                    "pooled" => OverallPd::Pooled,
                    _ => return Err(bad(key)),
                }
            }
            "max_train_rows" => self.max_train_rows = value.parse().map_err(|_| bad(key))?,
            "svm_c" => self.svm_c = value.parse().map_err(|_| bad(key))?,
            "svm_tol" => self.svm_tol = value.parse().map_err(|_| bad(key))?,
            "class_weighting" => self.class_weighting = value.parse().map_err(|_| bad(key))?,
            "remove_bump" => self.remove_bump = value.parse().map_err(|_| bad(key))?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.superpixels == 0 {
            return Err(Error::Config("superpixels must be positive".into()));
        }
        if !(self.compactness > 0.0) {
            return Err(Error::Config("compactness must be positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if self.trees == 0 {
            return Err(Error::Config("trees must be positive".into()));
        }
        if self.cutoff_grid < 2 {
            return Err(Error::Config("cutoff_grid must be at least 2".into()));
        }
        if !(self.svm_c > 0.0) || !(self.svm_tol > 0.0) {
            return Err(Error::Config("svm_c and svm_tol must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.serialize()).map_err(|e| Error::io(path, e))
    }
}
