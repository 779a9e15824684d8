use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mammodensity::calibration::read_gold_csv;
use mammodensity::config::PipelineConfig;
use mammodensity::image::{load_image, preprocess, save_image, RawImage};
use mammodensity::phantom::{generate_corpus, PhantomSpec};
use mammodensity::pipeline::{
    analyze_dir, predict, save_mask_overlay, save_superpixel_overlay, stack_features,
    train_model, write_manifest, write_pd_csv, BatchOutcome,
};
use mammodensity::segmentation::save_mask;
use mammodensity::stats::{case_control_report, read_case_control_csv, write_report_csv, Transform};
use mammodensity::svm::{load_ensemble, save_ensemble};
use mammodensity::Result;

#[derive(Parser)]
#[command(name = "mammodensity", version, about = "Breast percent density estimation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Directory of input images (.pgm or .png, 16-bit)
    #[arg(long)]
    input_dir: PathBuf,
    /// Directory of external 0/128/255 masks (<id>_mask.pgm); classical
    /// segmentation runs when absent
    #[arg(long)]
    mask_dir: Option<PathBuf>,
    /// Config file with key=value overrides
    #[arg(long)]
    config: Option<PathBuf>,
    /// Requested superpixel count
    #[arg(long)]
    k: Option<usize>,
    /// SLIC compactness
    #[arg(long)]
    compactness: Option<f64>,
    /// Random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = automatic)
    #[arg(long)]
    threads: Option<usize>,
    /// Forest size used in feature selection
    #[arg(long)]
    trees: Option<usize>,
}

impl CommonOpts {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(k) = self.k {
            cfg.apply("superpixels", &k.to_string())?;
        }
        if let Some(c) = self.compactness {
            cfg.apply("compactness", &c.to_string())?;
        }
        if let Some(s) = self.seed {
            cfg.apply("seed", &s.to_string())?;
        }
        if let Some(t) = self.threads {
            cfg.apply("threads", &t.to_string())?;
        }
        if let Some(t) = self.trees {
            cfg.apply("trees", &t.to_string())?;
        }
        if cfg.threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build_global();
        }
        Ok(cfg)
    }

    fn analyze(&self) -> Result<(PipelineConfig, BatchOutcome)> {
        let cfg = self.config()?;
        let outcome = analyze_dir(&self.input_dir, self.mask_dir.as_deref(), &cfg)?;
        for (id, err) in &outcome.failures {
            eprintln!("warning: {id}: {err}");
        }
        Ok((cfg, outcome))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom corpus with gold-standard densities
    Phantom {
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
        /// Lower and upper bounds of the target percent-density range
        #[arg(long, default_value_t = 5.0)]
        pd_min: f64,
        #[arg(long, default_value_t = 65.0)]
        pd_max: f64,
        /// Add an abdominal bump to each phantom
        #[arg(long)]
        bump: bool,
    },
    /// Preprocess raw images and write normalized 16-bit copies
    Preprocess {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Segment the breast and write region masks
    Segment {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        output_dir: PathBuf,
        /// Also write segmentation overlays
        #[arg(long)]
        overlay: bool,
    },
    /// Partition each breast into superpixels
    Superpixel {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        output_dir: PathBuf,
        /// Also write boundary overlays
        #[arg(long)]
        overlay: bool,
    },
    /// Extract the feature matrix for a directory of images
    Features {
        #[command(flatten)]
        common: CommonOpts,
        /// Output CSV path
        #[arg(long)]
        output: PathBuf,
    },
    /// Calibrate the density cutoff against gold-standard densities
    Calibrate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        gold_csv: PathBuf,
        /// Output text file for the calibrated cutoff
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the full model (calibration, selection, SVM ensemble)
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        gold_csv: PathBuf,
        /// Output model path
        #[arg(long)]
        model: PathBuf,
        /// Optional selection report CSV
        #[arg(long)]
        selection_report: Option<PathBuf>,
    },
    /// Predict percent density with a trained model
    Predict {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Case-control association report from a subject CSV
    Evaluate {
        /// Subject CSV: subject_id,stratum_id,status,age,bmi,<measures...>
        #[arg(long)]
        case_control_csv: PathBuf,
        /// Output report CSV
        #[arg(long)]
        output: PathBuf,
        /// Transforms to apply to every measure (none, log, sqrt)
        #[arg(long, default_value = "none")]
        transforms: String,
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Full batch: segment, superpixels, features, prediction, manifest
    Pipeline {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        /// Also write overlays per image
        #[arg(long)]
        overlay: bool,
    },
}

fn run() -> Result<()> {
    env_logger::init();
    let cli = Cli::parse();
    match cli.command {
        Command::Phantom {
            output_dir,
            count,
            seed,
            width,
            height,
            pd_min,
            pd_max,
            bump,
        } => {
            std::fs::create_dir_all(&output_dir)
                .map_err(|e| mammodensity::Error::io(&output_dir, e))?;
            let template = PhantomSpec {
                width,
                height,
                with_bump: bump,
                ..PhantomSpec::default()
            };
            let phantoms = generate_corpus(&output_dir, count, seed, &template, (pd_min, pd_max))?;
            println!(
                "wrote {} phantoms and gold.csv to {}",
                phantoms.len(),
                output_dir.display()
            );
        }
        Command::Preprocess { common, output_dir } => {
            let cfg = common.config()?;
            let _ = &cfg;
            std::fs::create_dir_all(&output_dir)
                .map_err(|e| mammodensity::Error::io(&output_dir, e))?;
            let inputs = mammodensity::pipeline::list_inputs(&common.input_dir)?;
            for (id, path) in &inputs {
                let img = load_image(path)?;
                let pre = preprocess(&img);
                let out = RawImage {
                    width: pre.width,
                    height: pre.height,
                    pixels: pre
                        .pixels
                        .iter()
                        .map(|&v| (v * 65535.0).round().clamp(0.0, 65535.0) as u16)
                        .collect(),
                    meta: img.meta.clone(),
                };
                save_image(&out, &output_dir.join(format!("{id}.pgm")))?;
            }
            println!("preprocessed {} images", inputs.len());
        }
        Command::Segment {
            common,
            output_dir,
            overlay,
        } => {
            let (cfg, outcome) = common.analyze()?;
            std::fs::create_dir_all(&output_dir)
                .map_err(|e| mammodensity::Error::io(&output_dir, e))?;
            for a in &outcome.artifacts {
                save_mask(&a.mask, &output_dir.join(format!("{}_mask.pgm", a.id)))?;
                if overlay {
                    save_mask_overlay(
                        &a.preprocessed,
                        &a.mask,
                        &output_dir.join(format!("{}_overlay.pgm", a.id)),
                    )?;
                }
            }
            write_manifest(
                &output_dir.join("manifest.txt"),
                &cfg,
                &outcome.inputs,
                &outcome.failures,
            )?;
            println!("segmented {} images", outcome.artifacts.len());
        }
        Command::Superpixel {
            common,
            output_dir,
            overlay,
        } => {
            let (cfg, outcome) = common.analyze()?;
            std::fs::create_dir_all(&output_dir)
                .map_err(|e| mammodensity::Error::io(&output_dir, e))?;
            for a in &outcome.artifacts {
                let w = a.superpixels.width;
                let h = a.superpixels.height;
                // labels as 16-bit PGM (label + 1; 0 = outside)
                let pixels: Vec<u16> = a
                    .superpixels
                    .labels
                    .iter()
                    .map(|&l| if l < 0 { 0 } else { (l + 1) as u16 })
                    .collect();
                let img = RawImage {
                    width: w,
                    height: h,
                    pixels,
                    meta: Default::default(),
                };
                save_image(&img, &output_dir.join(format!("{}_labels.pgm", a.id)))?;
                if overlay {
                    save_superpixel_overlay(
                        &a.preprocessed,
                        &a.superpixels,
                        &output_dir.join(format!("{}_overlay.pgm", a.id)),
                    )?;
                }
            }
            write_manifest(
                &output_dir.join("manifest.txt"),
                &cfg,
                &outcome.inputs,
                &outcome.failures,
            )?;
            println!("partitioned {} images", outcome.artifacts.len());
        }
        Command::Features { common, output } => {
            let (_cfg, outcome) = common.analyze()?;
            let (matrix, _) = stack_features(&outcome.artifacts)?;
            matrix.write_csv(&output)?;
            println!(
                "wrote {} rows x {} columns to {}",
                matrix.rows(),
                matrix.columns.len(),
                output.display()
            );
        }
        Command::Calibrate {
            common,
            gold_csv,
            output,
        } => {
            let (cfg, outcome) = common.analyze()?;
            let gold = read_gold_csv(&gold_csv)?;
            let summaries: Vec<_> = outcome.artifacts.iter().map(|a| a.summary.clone()).collect();
            let calib = mammodensity::calibration::calibrate_cutoff(
                &summaries,
                &gold,
                cfg.cutoff_grid,
                cfg.overall_pd,
            )?;
            std::fs::write(
                &output,
                format!(
                    "cutoff={:.17e}\nachieved_overall_pd={:.6}\ngold_overall_pd={:.6}\n",
                    calib.cutoff, calib.achieved_overall_pd, calib.gold_overall_pd
                ),
            )
            .map_err(|e| mammodensity::Error::io(&output, e))?;
            println!("cutoff {:.6} written to {}", calib.cutoff, output.display());
        }
        Command::Train {
            common,
            gold_csv,
            model,
            selection_report,
        } => {
            let (cfg, outcome) = common.analyze()?;
            let gold = read_gold_csv(&gold_csv)?;
            let trained = train_model(&outcome.artifacts, &gold, &cfg)?;
            save_ensemble(&trained.ensemble, &model)?;
            if let Some(path) = selection_report {
                trained.selection.write(&path)?;
            }
            if let Some(dir) = model.parent() {
                write_manifest(
                    &dir.join("manifest.txt"),
                    &cfg,
                    &outcome.inputs,
                    &outcome.failures,
                )?;
            }
            println!(
                "trained ensemble ({} features, cutoff {:.4}) -> {}",
                trained.ensemble.feature_names.len(),
                trained.calibration.cutoff,
                model.display()
            );
        }
        Command::Predict {
            common,
            model,
            output_dir,
        } => {
            let ensemble = load_ensemble(&model)?;
            let (cfg, outcome) = common.analyze()?;
            std::fs::create_dir_all(&output_dir)
                .map_err(|e| mammodensity::Error::io(&output_dir, e))?;
            let results = predict(&outcome.artifacts, &ensemble)?;
            write_pd_csv(&results, &output_dir.join("pd.csv"))?;
            write_manifest(
                &output_dir.join("manifest.txt"),
                &cfg,
                &outcome.inputs,
                &outcome.failures,
            )?;
            println!("wrote pd.csv for {} images", results.len());
        }
        Command::Evaluate {
            case_control_csv,
            output,
            transforms,
            bootstrap,
            seed,
        } => {
            let records = read_case_control_csv(&case_control_csv)?;
            let measure_names: Vec<String> = records[0].measures.keys().cloned().collect();
            let mut measures = Vec::new();
            for t in transforms.split(',') {
                let transform = Transform::parse(t.trim())?;
                for m in &measure_names {
                    measures.push((m.clone(), transform));
                }
            }
            let rows = case_control_report(&records, &measures, bootstrap, seed)?;
            write_report_csv(&rows, &output)?;
            println!("wrote {} report rows to {}", rows.len(), output.display());
        }
        Command::Pipeline {
            common,
            model,
            output_dir,
            overlay,
        } => {
            let ensemble = load_ensemble(&model)?;
            let (cfg, outcome) = common.analyze()?;
            std::fs::create_dir_all(&output_dir)
                .map_err(|e| mammodensity::Error::io(&output_dir, e))?;
            for a in &outcome.artifacts {
                save_mask(&a.mask, &output_dir.join(format!("{}_mask.pgm", a.id)))?;
                if overlay {
                    save_mask_overlay(
                        &a.preprocessed,
                        &a.mask,
                        &output_dir.join(format!("{}_seg_overlay.pgm", a.id)),
                    )?;
                    save_superpixel_overlay(
                        &a.preprocessed,
                        &a.superpixels,
                        &output_dir.join(format!("{}_sp_overlay.pgm", a.id)),
                    )?;
                }
            }
            let (matrix, _) = stack_features(&outcome.artifacts)?;
            matrix.write_csv(&output_dir.join("features.csv"))?;
            let results = predict(&outcome.artifacts, &ensemble)?;
            write_pd_csv(&results, &output_dir.join("pd.csv"))?;
            write_manifest(
                &output_dir.join("manifest.txt"),
                &cfg,
                &outcome.inputs,
                &outcome.failures,
            )?;
            println!(
                "pipeline complete: {} images, {} failures",
                results.len(),
                outcome.failures.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
