//! Orchestration: the subcommand bodies composing generate, detect,
//! segment, evaluate and report, plus the run manifest (config snapshot,
//! output digests, per-stage timing).
//!
//! Ground-truth isolation: detection and segmentation receive only the
//! image (and, for segmentation, detection-derived ROIs). Ground truth is
//! read exclusively by the evaluator.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::boxseg;
use crate::config::{ConfigError, RunConfig};
use crate::detect::{self, DetectError, Detection};
use crate::imageio::{self, ImageIoError};
use crate::manifest::{self, DatasetManifest, ManifestError};
use crate::metrics::ImageInstances;
use crate::report::{self, EvalReport, ReportError, TimingSection};
use crate::synthgen::{self, GenError};
use crate::timing::TimingStats;
use crate::types::{DefectInstance, SemImage};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Exit code contract: 2 for config errors, 1 for systemic failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Detect(DetectError::InvalidConfig(_)) => 2,
            PipelineError::Detect(DetectError::UnknownBackend(_)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

/// Provenance record written next to each run's outputs. Timing fields are
/// machine-dependent and excluded from determinism guarantees; everything
/// else reproduces byte-identically for an identical config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Output file path (relative to the manifest) to SHA-256 digest.
    pub outputs: BTreeMap<String, String>,
    pub timing: Option<TimingSection>,
    pub notes: Vec<String>,
}

impl RunManifest {
    fn new(config: &RunConfig) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            outputs: BTreeMap::new(),
            timing: None,
            notes: Vec::new(),
        }
    }

    fn record(&mut self, label: &str, path: &Path) -> Result<(), PipelineError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let digest = Sha256::digest(&bytes);
        self.outputs.insert(label.to_string(), hex::encode(digest));
        Ok(())
    }

    fn write(&self, path: &Path) -> Result<(), PipelineError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json).map_err(io_err(path))
    }
}

fn in_pool<R: Send>(parallelism: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match parallelism {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

/// Generate the configured dataset and a run manifest beside it.
pub fn cmd_gen(config: &RunConfig) -> Result<DatasetManifest, PipelineError> {
    config.validate()?;
    let generator = config.generator();
    let dir = &config.paths.dataset_dir;
    let manifest = in_pool(config.parallelism, || synthgen::generate_dataset(&generator, dir))?;
    let mut run = RunManifest::new(config);
    run.record("manifest.json", &dir.join("manifest.json"))?;
    for record in manifest.images() {
        run.record(&record.file_name, &dir.join(&record.file_name))?;
    }
    run.write(&dir.join("run_manifest.json"))?;
    Ok(manifest)
}

fn load_dataset(config: &RunConfig) -> Result<(DatasetManifest, Vec<SemImage>), PipelineError> {
    let dir = &config.paths.dataset_dir;
    let manifest = manifest::load_manifest(dir.join("manifest.json"))?;
    let images: Vec<Result<SemImage, ImageIoError>> = manifest
        .images()
        .par_iter()
        .map(|r| {
            imageio::import_image(dir.join(&r.file_name), manifest.step())
                .map(|img| img.with_id(r.id.clone()))
        })
        .collect();
    let images = images.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, images))
}

fn predictions_manifest(
    gt: &DatasetManifest,
    per_image: &[(String, Vec<DefectInstance>)],
) -> Result<DatasetManifest, PipelineError> {
    let mut preds = DatasetManifest::new(gt.step());
    for record in gt.images() {
        preds.add_image(record.clone())?;
    }
    for (image_id, instances) in per_image {
        for inst in instances {
            preds.add_annotation(image_id, inst.clone())?;
        }
    }
    Ok(preds)
}

/// Run detection over the dataset and write the gated predictions file.
pub fn cmd_detect(config: &RunConfig) -> Result<DatasetManifest, PipelineError> {
    config.validate()?;
    let detector = config.detector();
    detector.validate()?;
    detect::backend_for(&detector.backend)?;
    let (gt, images) = load_dataset(config)?;
    let results: Vec<(String, Vec<DefectInstance>)> = in_pool(config.parallelism, || {
        images
            .par_iter()
            .map(|img| {
                let out = detect::detect(img, &detector).expect("config validated");
                (img.id().to_string(), out.detections.into_iter().map(|d| d.instance).collect())
            })
            .collect()
    });
    let preds = predictions_manifest(&gt, &results)?;
    manifest::save_manifest(&preds, &config.paths.predictions_file)?;
    Ok(preds)
}

/// Segment every predicted ROI and rewrite the predictions file with masks.
pub fn cmd_segment(config: &RunConfig) -> Result<DatasetManifest, PipelineError> {
    config.validate()?;
    let (gt, images) = load_dataset(config)?;
    let preds = manifest::load_manifest(&config.paths.predictions_file)?;
    let by_id: BTreeMap<&str, &SemImage> = images.iter().map(|i| (i.id(), i)).collect();
    let results: Vec<(String, Vec<DefectInstance>)> = in_pool(config.parallelism, || {
        preds
            .images()
            .par_iter()
            .map(|record| {
                let image = by_id[record.id.as_str()];
                let anns = preds.annotations_for(&record.id);
                let rois: Vec<_> =
                    anns.iter().map(|a| (a.instance.class, a.instance.bbox)).collect();
                let segs = boxseg::segment_pipeline(image, &rois, &config.segmentation());
                let instances = anns
                    .iter()
                    .zip(segs)
                    .map(|(a, seg)| {
                        let mut inst = a.instance.clone();
                        inst.bbox = seg.instance.bbox;
                        inst.mask = seg.instance.mask;
                        inst
                    })
                    .collect();
                (record.id.clone(), instances)
            })
            .collect()
    });
    let with_masks = predictions_manifest(&gt, &results)?;
    manifest::save_manifest(&with_masks, &config.paths.predictions_file)?;
    Ok(with_masks)
}

fn eval_data(gt: &DatasetManifest, preds: &DatasetManifest) -> Vec<ImageInstances> {
    gt.images()
        .iter()
        .map(|record| ImageInstances {
            image_id: record.id.clone(),
            preds: preds.annotations_for(&record.id).iter().map(|a| a.instance.clone()).collect(),
            gts: gt.annotations_for(&record.id).iter().map(|a| a.instance.clone()).collect(),
        })
        .collect()
}

/// Evaluate a predictions file against the dataset's ground truth.
pub fn cmd_eval(config: &RunConfig) -> Result<EvalReport, PipelineError> {
    config.validate()?;
    let dir = &config.paths.dataset_dir;
    let gt = manifest::load_manifest(dir.join("manifest.json"))?;
    let preds = manifest::load_manifest(&config.paths.predictions_file)?;
    let data = eval_data(&gt, &preds);
    let report = report::evaluate(&data, gt.step(), &config.metrics)?;
    write_report(config, &report, None)?;
    Ok(report)
}

fn write_report(
    config: &RunConfig,
    report: &EvalReport,
    run: Option<&mut RunManifest>,
) -> Result<(), PipelineError> {
    let dir = &config.paths.report_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json_path = dir.join("report.json");
    report::save_report(report, &json_path)?;
    let md_path = dir.join("report.md");
    fs::write(&md_path, report::render_markdown(report)).map_err(io_err(&md_path))?;
    if let Some(run) = run {
        run.record("report.json", &json_path)?;
        run.record("report.md", &md_path)?;
    }
    Ok(())
}

/// Full chain: generate (when the dataset is missing), detect, seed ROIs
/// into segmentation, evaluate, write predictions + report + run manifest.
///
/// Detection AP is evaluated over ungated ranked detections (the confidence
/// gate applies only to the manual metrics), so the detector runs with a
/// zero floor here; the query-budget truncation stays active.
pub fn cmd_pipeline(config: &RunConfig) -> Result<EvalReport, PipelineError> {
    config.validate()?;
    let mut run = RunManifest::new(config);
    if !config.paths.dataset_dir.join("manifest.json").exists() {
        cmd_gen(config)?;
    }
    let (gt, images) = load_dataset(config)?;
    let mut detector = config.detector();
    detector.confidence_floor = 0.0;
    detector.validate()?;
    detect::backend_for(&detector.backend)?;

    struct PerImage {
        id: String,
        instances: Vec<DefectInstance>,
        detect_ms: f64,
        segment_ms: f64,
        notes: Vec<String>,
    }

    let results: Vec<PerImage> = in_pool(config.parallelism, || {
        images
            .par_iter()
            .map(|img| {
                let mut notes = Vec::new();
                let t0 = Instant::now();
                let out = detect::detect(img, &detector).expect("config validated");
                let detect_ms = t0.elapsed().as_secs_f64() * 1e3;
                if let Some(diag) = &out.degraded {
                    notes.push(format!("{}: detection degraded: {diag}", img.id()));
                }
                let rois = detect::to_roi_seed(&out.detections);
                let t1 = Instant::now();
                let segs = boxseg::segment_pipeline(img, &rois, &config.segmentation());
                let segment_ms = t1.elapsed().as_secs_f64() * 1e3;
                let instances = out
                    .detections
                    .iter()
                    .zip(&segs)
                    .map(|(det, seg)| {
                        let mut inst = det.instance.clone();
                        inst.bbox = seg.instance.bbox;
                        inst.mask = seg.instance.mask.clone();
                        inst
                    })
                    .collect();
                for seg in &segs {
                    if let Some(diag) = &seg.diagnostic {
                        notes.push(format!("{}: segmentation: {diag}", img.id()));
                    }
                }
                PerImage { id: img.id().to_string(), instances, detect_ms, segment_ms, notes }
            })
            .collect()
    });
    // Merge deterministically by image id.
    let mut results = results;
    results.sort_by(|a, b| a.id.cmp(&b.id));
    let per_image: Vec<(String, Vec<DefectInstance>)> =
        results.iter().map(|r| (r.id.clone(), r.instances.clone())).collect();
    for r in &results {
        run.notes.extend(r.notes.iter().cloned());
    }
    run.timing = Some(TimingSection {
        detect: stats_of(results.iter().map(|r| r.detect_ms)),
        segment: stats_of(results.iter().map(|r| r.segment_ms)),
    });

    let preds = predictions_manifest(&gt, &per_image)?;
    if let Some(parent) = config.paths.predictions_file.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    manifest::save_manifest(&preds, &config.paths.predictions_file)?;

    let data = eval_data(&gt, &preds);
    let report = report::evaluate(&data, gt.step(), &config.metrics)?;
    run.record("predictions.json", &config.paths.predictions_file)?;
    write_report(config, &report, Some(&mut run))?;
    if config.overlays {
        write_overlays(config, &images, &preds)?;
    }
    run.write(&config.paths.report_dir.join("run_manifest.json"))?;
    Ok(report)
}

fn stats_of(samples: impl Iterator<Item = f64>) -> Option<TimingStats> {
    let samples: Vec<f64> = samples.collect();
    if samples.is_empty() {
        return None;
    }
    Some(TimingStats {
        samples: samples.len(),
        mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
        min_ms: samples.iter().cloned().fold(f64::INFINITY, f64::min),
        max_ms: samples.iter().cloned().fold(0.0, f64::max),
    })
}

/// Debug overlays: red box outlines, green mask pixels over the raster.
fn write_overlays(
    config: &RunConfig,
    images: &[SemImage],
    preds: &DatasetManifest,
) -> Result<(), PipelineError> {
    let dir = config.paths.report_dir.join("overlays");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for img in images {
        let mut rgb = image::RgbImage::new(img.width(), img.height());
        for (x, y, px) in rgb.enumerate_pixels_mut() {
            let v = img.get(x, y);
            *px = image::Rgb([v, v, v]);
        }
        for ann in preds.annotations_for(img.id()) {
            if let Some(mask) = &ann.instance.mask {
                for (x, y) in mask.pixels() {
                    let px = rgb.get_pixel_mut(x, y);
                    px.0 = [px.0[0] / 2, 255, px.0[2] / 2];
                }
            }
            let b = &ann.instance.bbox;
            for x in b.x_min..b.x_max.min(img.width()) {
                for y in [b.y_min, b.y_max.saturating_sub(1)] {
                    if y < img.height() {
                        rgb.get_pixel_mut(x, y).0 = [255, 0, 0];
                    }
                }
            }
            for y in b.y_min..b.y_max.min(img.height()) {
                for x in [b.x_min, b.x_max.saturating_sub(1)] {
                    if x < img.width() {
                        rgb.get_pixel_mut(x, y).0 = [255, 0, 0];
                    }
                }
            }
        }
        let path = dir.join(format!("{}.png", img.id()));
        rgb.save(&path).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
    }
    Ok(())
}

/// Side-by-side comparison of stored reports; labels are file stems.
pub fn cmd_report(paths: &[PathBuf]) -> Result<String, PipelineError> {
    if paths.is_empty() {
        return Err(PipelineError::Report(ReportError::Empty));
    }
    let mut reports = Vec::new();
    for path in paths {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        reports.push((label, report::load_report(path)?));
    }
    Ok(report::compare_reports(&reports)?)
}

/// Timing-only run: detection and segmentation stage statistics over the
/// dataset, written as a small markdown table.
pub fn cmd_bench(config: &RunConfig) -> Result<TimingSection, PipelineError> {
    config.validate()?;
    if !config.paths.dataset_dir.join("manifest.json").exists() {
        cmd_gen(config)?;
    }
    let (_, images) = load_dataset(config)?;
    let mut detector = config.detector();
    detector.confidence_floor = 0.0;
    let detect_stats =
        crate::timing::time_stage(|img| {
            let _ = detect::detect(img, &detector);
        }, &images);
    let rois: BTreeMap<String, Vec<_>> = images
        .iter()
        .map(|img| {
            let seeds = detect::detect(img, &detector)
                .map(|out| detect::to_roi_seed(&out.detections))
                .unwrap_or_default();
            (img.id().to_string(), seeds)
        })
        .collect();
    let segment_stats = crate::timing::time_stage(
        |img| {
            let _ = boxseg::segment_pipeline(img, &rois[img.id()], &config.segmentation());
        },
        &images,
    );
    let section = TimingSection { detect: detect_stats, segment: segment_stats };
    let dir = &config.paths.report_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut md = String::from("| Stage | Images | Mean (ms) | Min (ms) | Max (ms) |\n|---|---|---|---|---|\n");
    for (label, stats) in [("detect", &section.detect), ("segment", &section.segment)] {
        if let Some(s) = stats {
            md.push_str(&format!(
                "| {label} | {} | {:.2} | {:.2} | {:.2} |\n",
                s.samples, s.mean_ms, s.min_ms, s.max_ms
            ));
        }
    }
    let path = dir.join("bench.md");
    fs::write(&path, md).map_err(io_err(&path))?;
    Ok(section)
}

/// Ungated candidate detections for one image (used by tests and analysis
/// tooling rather than the CLI).
pub fn candidates_for(
    image: &SemImage,
    config: &RunConfig,
) -> Result<Vec<Detection>, PipelineError> {
    let detector = config.detector();
    Ok(detect::detect_candidates(image, &detector)?.detections)
}
