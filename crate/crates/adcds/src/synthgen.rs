//! Deterministic, seedable generator of line-space SEM-like images with
//! injected stochastic defects and exact ground truth.
//!
//! The generator exists as a desk-scale test oracle. It performs no
//! physics-based SEM simulation: lines are periodic intensity bars with
//! optional per-row edge jitter (line-edge roughness) and additive Gaussian
//! intensity noise. Defect geometry is injected on the clean two-valued
//! raster so every truth mask is exact; noise is applied afterwards.
//!
//! Determinism: the RNG is ChaCha8 (a portable, documented 64-bit-seedable
//! generator); each image derives an independent substream from
//! (seed, image index), so identical configs produce bit-identical datasets
//! regardless of generation order.

use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageio;
use crate::manifest::{DatasetManifest, ImageRecord};
use crate::mask::InstanceMask;
use crate::types::{BBox, ClassName, DefectClass, DefectInstance, ProcessStep, SemImage};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid pattern spec: {0}")]
    InvalidPattern(String),
    #[error("defect placement out of bounds: {0}")]
    OutOfBounds(String),
    #[error("defect placement overlaps an existing defect at line {line}, pos {pos}")]
    Overlap { line: u32, pos: u32 },
    #[error("class {0} cannot be injected into this pattern: {1}")]
    Unsupported(ClassName, String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] imageio::ImageIoError),
    #[error(transparent)]
    Manifest(#[from] crate::manifest::ManifestError),
}

/// Orientation of the printed lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    #[default]
    Vertical,
    Horizontal,
}

/// Parameters of the periodic line-space pattern.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternSpec {
    pub pitch: u32,
    pub line_width: u32,
    pub orientation: Orientation,
    pub line_intensity: u8,
    pub space_intensity: u8,
    pub edge_roughness_sigma: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PatternSpec {
    pub fn validate(&self, width: u32, height: u32) -> Result<(), GenError> {
        if self.line_width == 0 || self.line_width >= self.pitch {
            return Err(GenError::InvalidPattern(format!(
                "line_width {} must satisfy 0 < line_width < pitch {}",
                self.line_width, self.pitch
            )));
        }
        let along = match self.orientation {
            Orientation::Vertical => width,
            Orientation::Horizontal => height,
        };
        if along / self.pitch < 3 {
            return Err(GenError::InvalidPattern(format!(
                "pattern axis {} must fit at least 3 lines of pitch {}",
                along, self.pitch
            )));
        }
        if self.line_intensity == self.space_intensity {
            return Err(GenError::InvalidPattern("line and space intensity must differ".into()));
        }
        if self.edge_roughness_sigma < 0.0 || self.noise_sigma < 0.0 {
            return Err(GenError::InvalidPattern("sigmas must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A defect to inject: class, anchor on the line grid, extent and severity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefectSpec {
    pub class: ClassName,
    /// (line index, position in pixels along the line).
    pub anchor: (u32, u32),
    pub extent: u32,
    pub severity: f64,
}

/// An image plus its exact ground truth.
///
/// Internally the sample is always laid out with vertical lines; a
/// horizontal-orientation sample is transposed on [`finalize`].
///
/// [`finalize`]: GeneratedSample::finalize
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    image: SemImage,
    truth: Vec<DefectInstance>,
    clean_pattern_mask: InstanceMask,
    spec: PatternSpec,
    step: ProcessStep,
    /// Line pixels of the clean pattern, row-major.
    line_raster: Vec<bool>,
    /// Pixels claimed by injected defects (dilated), row-major.
    claimed: Vec<bool>,
    finalized: bool,
}

/// Separation margin between defect footprints, in pixels.
const CLAIM_MARGIN: u32 = 8;

/// Render the clean pattern for `spec` and return it together with the mask
/// of line pixels. With `noise_sigma = 0` and `edge_roughness_sigma = 0`
/// the image is two-valued.
pub fn render_pattern(
    spec: &PatternSpec,
    width: u32,
    height: u32,
    step: ProcessStep,
    id: &str,
) -> Result<(SemImage, InstanceMask), GenError> {
    let mut sample = GeneratedSample::render(spec, width, height, step, id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX); // noise stream, distinct from geometry
    sample.apply_noise(&mut rng);
    let mask = sample.clean_pattern_mask.clone();
    Ok((sample.into_image_transposed(), mask))
}

impl GeneratedSample {
    /// Render the clean (noise-free) pattern geometry. Edge roughness is part
    /// of the geometry; additive noise is applied by [`finalize`].
    ///
    /// [`finalize`]: GeneratedSample::finalize
    pub fn render(
        spec: &PatternSpec,
        width: u32,
        height: u32,
        step: ProcessStep,
        id: &str,
    ) -> Result<Self, GenError> {
        spec.validate(width, height)?;
        // Work in vertical-line coordinates; transpose on finalize.
        let (w, h) = match spec.orientation {
            Orientation::Vertical => (width, height),
            Orientation::Horizontal => (height, width),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1); // geometry stream
        let jitter = if spec.edge_roughness_sigma > 0.0 {
            Some(Normal::new(0.0, spec.edge_roughness_sigma).expect("sigma validated"))
        } else {
            None
        };
        let n_lines = w / spec.pitch;
        let mut pixels = vec![spec.space_intensity; w as usize * h as usize];
        let mut line_raster = vec![false; w as usize * h as usize];
        for line in 0..n_lines {
            let left = line * spec.pitch;
            let right = left + spec.line_width;
            for y in 0..h {
                let (l, r) = match &jitter {
                    Some(dist) => {
                        let jl = dist.sample(&mut rng).round() as i64;
                        let jr = dist.sample(&mut rng).round() as i64;
                        let l = (left as i64 + jl).clamp(0, w as i64) as u32;
                        let r = (right as i64 + jr).clamp(l as i64, w as i64) as u32;
                        (l, r)
                    }
                    None => (left, right),
                };
                for x in l..r {
                    let idx = y as usize * w as usize + x as usize;
                    pixels[idx] = spec.line_intensity;
                    line_raster[idx] = true;
                }
            }
        }
        let clean_pattern_mask = InstanceMask::from_raster(w, h, &line_raster)
            .expect("raster size matches dimensions");
        let image = SemImage::new(w, h, pixels, step, id).expect("buffer size matches");
        Ok(GeneratedSample {
            image,
            truth: Vec::new(),
            clean_pattern_mask,
            spec: spec.clone(),
            step,
            line_raster,
            claimed: vec![false; w as usize * h as usize],
            finalized: false,
        })
    }

    pub fn image(&self) -> &SemImage {
        &self.image
    }

    pub fn truth(&self) -> &[DefectInstance] {
        &self.truth
    }

    pub fn clean_pattern_mask(&self) -> &InstanceMask {
        &self.clean_pattern_mask
    }

    fn n_lines(&self) -> u32 {
        self.image.width() / self.spec.pitch
    }

    fn space_width(&self) -> u32 {
        self.spec.pitch - self.spec.line_width
    }

    /// Scan margin around nominal line edges that absorbs edge jitter.
    fn edge_margin(&self) -> u32 {
        let jitter = (3.0 * self.spec.edge_roughness_sigma).ceil() as u32 + 1;
        let space = self.space_width();
        jitter.min(if space >= 2 { (space - 1) / 2 } else { 0 })
    }

    fn set_pixel(&mut self, x: u32, y: u32, value: u8) {
        let w = self.image.width() as usize;
        self.image.pixels_mut()[y as usize * w + x as usize] = value;
    }

    fn is_line_pixel(&self, x: u32, y: u32) -> bool {
        self.line_raster[y as usize * self.image.width() as usize + x as usize]
    }

    /// Inject one defect. On success the image pixels are modified and a
    /// ground-truth instance with an exact mask and tight bbox is appended.
    pub fn inject(&mut self, spec: &DefectSpec) -> Result<(), GenError> {
        assert!(!self.finalized, "cannot inject into a finalized sample");
        let class = DefectClass::new(self.step, spec.class)
            .map_err(|e| GenError::Unsupported(spec.class, e.to_string()))?;
        let (line, pos) = spec.anchor;
        if spec.extent == 0 {
            return Err(GenError::OutOfBounds("extent must be >= 1".into()));
        }
        let plan = self.plan_defect(spec)?;
        // Reject overlap with previously claimed footprints.
        let w = self.image.width();
        let h = self.image.height();
        for &(x, y, _) in &plan.writes {
            let m = CLAIM_MARGIN;
            let x0 = x.saturating_sub(m);
            let y0 = y.saturating_sub(m);
            for cy in y0..(y + m + 1).min(h) {
                for cx in x0..(x + m + 1).min(w) {
                    if self.claimed[cy as usize * w as usize + cx as usize] {
                        return Err(GenError::Overlap { line, pos });
                    }
                }
            }
        }
        let mut modified = Vec::new();
        for &(x, y, value) in &plan.writes {
            if self.image.get(x, y) != value {
                modified.push((x, y));
            }
            self.set_pixel(x, y, value);
        }
        let mask_pixels: Vec<(u32, u32)> = if plan.mask_pixels.is_empty() {
            modified.clone()
        } else {
            plan.mask_pixels.clone()
        };
        if mask_pixels.is_empty() {
            return Err(GenError::Unsupported(spec.class, "defect produced an empty mask".into()));
        }
        for &(x, y, _) in &plan.writes {
            self.claimed[y as usize * w as usize + x as usize] = true;
        }
        for &(x, y) in &mask_pixels {
            self.claimed[y as usize * w as usize + x as usize] = true;
        }
        let mask = InstanceMask::from_pixels(w, h, mask_pixels).expect("pixels in bounds");
        let bbox = mask.tight_bbox().expect("mask nonempty");
        self.truth.push(DefectInstance::ground_truth(class, bbox, Some(mask)));
        Ok(())
    }

    /// Compute the pixel writes and the truth-mask support for a defect,
    /// without mutating anything.
    fn plan_defect(&self, spec: &DefectSpec) -> Result<DefectPlan, GenError> {
        let (line, pos) = spec.anchor;
        let p = &self.spec;
        let h = self.image.height();
        let n = self.n_lines();
        let s = self.space_width();
        let margin = self.edge_margin();
        if line >= n {
            return Err(GenError::OutOfBounds(format!("line {line} >= line count {n}")));
        }
        let li = line * p.pitch;
        let needs_rows = |rows: u32| -> Result<(), GenError> {
            if pos + rows > h {
                Err(GenError::OutOfBounds(format!(
                    "rows [{pos}, {}) exceed image height {h}",
                    pos + rows
                )))
            } else {
                Ok(())
            }
        };
        let needs_lines = |k: u32| -> Result<(), GenError> {
            if line + k >= n {
                Err(GenError::OutOfBounds(format!(
                    "defect needs line {} but only {n} lines exist",
                    line + k
                )))
            } else {
                Ok(())
            }
        };
        let mut writes: Vec<(u32, u32, u8)> = Vec::new();
        let mut mask_pixels: Vec<(u32, u32)> = Vec::new();

        // Clear every line pixel of `line` in the given rows, scanning a
        // jitter margin around the nominal edges.
        let clear_line = |writes: &mut Vec<(u32, u32, u8)>, x_lo: u32, x_hi: u32, y0: u32, y1: u32| {
            for y in y0..y1 {
                for x in x_lo..x_hi {
                    if self.is_line_pixel(x, y) {
                        writes.push((x, y, p.space_intensity));
                    }
                }
            }
        };

        match spec.class {
            ClassName::Gap | ClassName::ProbableGap => {
                needs_rows(spec.extent)?;
                let x_lo = li.saturating_sub(margin);
                let x_hi = (li + p.line_width + margin).min(self.image.width());
                let severity = if spec.class == ClassName::Gap { 1.0 } else { spec.severity };
                if !(0.0..=1.0).contains(&severity) || severity <= 0.0 {
                    return Err(GenError::OutOfBounds(format!("severity {severity} outside (0,1]")));
                }
                let value = (p.line_intensity as f64
                    + severity * (p.space_intensity as f64 - p.line_intensity as f64))
                    .round() as u8;
                for y in pos..pos + spec.extent {
                    for x in x_lo..x_hi {
                        if self.is_line_pixel(x, y) {
                            writes.push((x, y, value));
                        }
                    }
                }
            }
            ClassName::Microbridge => {
                let thickness = spec.extent.clamp(1, 2);
                needs_rows(thickness)?;
                needs_lines(1)?;
                if s < 3 {
                    return Err(GenError::Unsupported(spec.class, "space too narrow".into()));
                }
                let span = ((spec.severity * s as f64).round() as u32).clamp(1, s - 2);
                for y in pos..pos + thickness {
                    for x in li + p.line_width..li + p.line_width + span {
                        writes.push((x, y, p.line_intensity));
                    }
                }
            }
            ClassName::Bridge | ClassName::SingleBridge | ClassName::ThinBridge => {
                let thickness =
                    if spec.class == ClassName::ThinBridge { 1 } else { spec.extent };
                needs_rows(thickness)?;
                needs_lines(1)?;
                for y in pos..pos + thickness {
                    for x in li + p.line_width..li + p.pitch {
                        writes.push((x, y, p.line_intensity));
                    }
                }
            }
            ClassName::MultiBridgeH => {
                needs_rows(spec.extent)?;
                needs_lines(2)?;
                // One connected structure crossing two consecutive spaces at
                // the same position; the crossed line segment is part of it.
                for y in pos..pos + spec.extent {
                    for x in li + p.line_width..li + 2 * p.pitch {
                        writes.push((x, y, p.line_intensity));
                        mask_pixels.push((x, y));
                    }
                }
            }
            ClassName::MultiBridgeNH => {
                let thickness = 2u32;
                let offset = spec.extent.max(thickness + 1);
                needs_rows(offset + thickness)?;
                needs_lines(2)?;
                // Bridge A across space `line`, bridge B across space
                // `line+1` offset along the pattern, linked by the line
                // segment between them.
                for y in pos..pos + thickness {
                    for x in li + p.line_width..li + p.pitch {
                        writes.push((x, y, p.line_intensity));
                        mask_pixels.push((x, y));
                    }
                }
                for y in pos + offset..pos + offset + thickness {
                    for x in li + p.pitch + p.line_width..li + 2 * p.pitch {
                        writes.push((x, y, p.line_intensity));
                        mask_pixels.push((x, y));
                    }
                }
                for y in pos..pos + offset + thickness {
                    for x in li + p.pitch..li + p.pitch + p.line_width {
                        writes.push((x, y, p.line_intensity));
                        mask_pixels.push((x, y));
                    }
                }
            }
            ClassName::LineCollapse => {
                needs_rows(spec.extent)?;
                needs_lines(1)?;
                // Two adjacent lines lean into each other: the merged blob
                // spans center-of-line to center-of-next-line; outer halves
                // empty out.
                let half = p.line_width / 2;
                let blob_lo = li + half;
                let blob_hi = li + p.pitch + half;
                for y in pos..pos + spec.extent {
                    for x in blob_lo..blob_hi {
                        writes.push((x, y, p.line_intensity));
                        mask_pixels.push((x, y));
                    }
                }
                // Clear the outer halves (with jitter margin).
                clear_line(&mut writes, li.saturating_sub(margin), blob_lo, pos, pos + spec.extent);
                clear_line(
                    &mut writes,
                    blob_hi,
                    (li + p.pitch + p.line_width + margin).min(self.image.width()),
                    pos,
                    pos + spec.extent,
                );
            }
        }
        Ok(DefectPlan { writes, mask_pixels })
    }

    fn apply_noise(&mut self, rng: &mut ChaCha8Rng) {
        if self.spec.noise_sigma <= 0.0 {
            return;
        }
        let dist = Normal::new(0.0, self.spec.noise_sigma).expect("sigma validated");
        for px in self.image.pixels_mut() {
            let v = *px as f64 + dist.sample(rng);
            *px = v.round().clamp(0.0, 255.0) as u8;
        }
    }

    /// Apply additive noise and the configured orientation. After this the
    /// sample is immutable.
    pub fn finalize(&mut self) {
        assert!(!self.finalized, "finalize called twice");
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(u64::MAX);
        self.apply_noise(&mut rng);
        if self.spec.orientation == Orientation::Horizontal {
            self.transpose();
        }
        self.finalized = true;
    }

    fn into_image_transposed(mut self) -> SemImage {
        if self.spec.orientation == Orientation::Horizontal {
            self.transpose();
        }
        self.image
    }

    fn transpose(&mut self) {
        let w = self.image.width();
        let h = self.image.height();
        let src = self.image.pixels();
        let mut out = vec![0u8; src.len()];
        for y in 0..h {
            for x in 0..w {
                out[x as usize * h as usize + y as usize] = src[y as usize * w as usize + x as usize];
            }
        }
        self.image = SemImage::new(h, w, out, self.step, self.image.id()).expect("size preserved");
        let flip_mask = |m: &InstanceMask| {
            InstanceMask::from_pixels(m.height(), m.width(), m.pixels().map(|(x, y)| (y, x)))
                .expect("pixels in bounds after transpose")
        };
        self.clean_pattern_mask = flip_mask(&self.clean_pattern_mask);
        for inst in &mut self.truth {
            let mask = inst.mask.as_ref().map(flip_mask);
            let b = inst.bbox;
            inst.bbox = BBox { x_min: b.y_min, y_min: b.x_min, x_max: b.y_max, y_max: b.x_max };
            inst.mask = mask;
        }
    }
}

struct DefectPlan {
    /// (x, y, new value) pixel writes.
    writes: Vec<(u32, u32, u8)>,
    /// Truth-mask support; when empty the modified-pixel set is used.
    mask_pixels: Vec<(u32, u32)>,
}

// Dataset generation ---------------------------------------------------------

/// Full generator configuration: pattern, class mix, counts and seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub step: ProcessStep,
    pub n_images: u32,
    pub width: u32,
    pub height: u32,
    pub pattern: PatternSpec,
    /// Per-class weights; classes absent from the step's set are rejected.
    pub class_mix: Vec<(ClassName, f64)>,
    /// Inclusive range of defects per image.
    pub defects_per_image: (u32, u32),
    pub seed: u64,
}

impl GeneratorConfig {
    /// ADI preset: 1024x1024, dense defects, low SNR.
    pub fn adi_default(seed: u64) -> Self {
        GeneratorConfig {
            step: ProcessStep::Adi,
            n_images: 117,
            width: 1024,
            height: 1024,
            pattern: PatternSpec {
                pitch: 32,
                line_width: 16,
                orientation: Orientation::Vertical,
                line_intensity: 200,
                space_intensity: 50,
                edge_roughness_sigma: 0.7,
                noise_sigma: 18.0,
                seed,
            },
            class_mix: vec![
                (ClassName::Gap, 1046.0),
                (ClassName::ProbableGap, 315.0),
                (ClassName::Bridge, 238.0),
                (ClassName::Microbridge, 380.0),
                (ClassName::LineCollapse, 550.0),
            ],
            defects_per_image: (0, 40),
            seed,
        }
    }

    /// AEI preset: 480x480, at most one defect per image, high SNR.
    pub fn aei_default(seed: u64) -> Self {
        GeneratorConfig {
            step: ProcessStep::Aei,
            n_images: 131,
            width: 480,
            height: 480,
            pattern: PatternSpec {
                pitch: 32,
                line_width: 16,
                orientation: Orientation::Vertical,
                line_intensity: 210,
                space_intensity: 40,
                edge_roughness_sigma: 0.0,
                noise_sigma: 5.0,
                seed,
            },
            class_mix: vec![
                (ClassName::MultiBridgeNH, 179.0),
                (ClassName::MultiBridgeH, 90.0),
                (ClassName::SingleBridge, 271.0),
                (ClassName::ThinBridge, 270.0),
                (ClassName::LineCollapse, 236.0),
            ],
            defects_per_image: (0, 1),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        self.pattern.validate(self.width, self.height)?;
        if self.class_mix.is_empty() || self.class_mix.iter().all(|(_, w)| *w <= 0.0) {
            return Err(GenError::InvalidPattern("class mix must have a positive weight".into()));
        }
        for (name, w) in &self.class_mix {
            if *w < 0.0 {
                return Err(GenError::InvalidPattern(format!("negative weight for {name}")));
            }
            if !self.step.admits(*name) {
                return Err(GenError::InvalidPattern(format!(
                    "class {name} is not admitted by step {}",
                    self.step
                )));
            }
        }
        if self.defects_per_image.0 > self.defects_per_image.1 {
            return Err(GenError::InvalidPattern("defects_per_image range inverted".into()));
        }
        Ok(())
    }
}

/// Draw per-class geometry parameters for one defect.
fn sample_defect_spec(
    class: ClassName,
    n_lines: u32,
    height: u32,
    rng: &mut ChaCha8Rng,
) -> DefectSpec {
    let (extent, severity) = match class {
        ClassName::Gap => (rng.gen_range(8..=24), 1.0),
        ClassName::ProbableGap => (rng.gen_range(8..=24), rng.gen_range(0.5..0.7)),
        ClassName::Microbridge => (rng.gen_range(1..=2), rng.gen_range(0.4..0.7)),
        ClassName::Bridge | ClassName::SingleBridge => (rng.gen_range(3..=8), 1.0),
        ClassName::ThinBridge => (1, 1.0),
        ClassName::MultiBridgeH => (rng.gen_range(2..=4), 1.0),
        ClassName::MultiBridgeNH => (rng.gen_range(4..=12), 1.0),
        ClassName::LineCollapse => (rng.gen_range(30..=80), 1.0),
    };
    let needs_lines: u32 = match class {
        ClassName::MultiBridgeH | ClassName::MultiBridgeNH => 2,
        ClassName::Gap | ClassName::ProbableGap | ClassName::LineCollapse => 1,
        _ => 1,
    };
    let rows_needed = match class {
        ClassName::MultiBridgeNH => extent.max(3) + 2,
        ClassName::ThinBridge => 1,
        ClassName::Microbridge => extent.clamp(1, 2),
        _ => extent,
    };
    let max_line = n_lines.saturating_sub(needs_lines + 1);
    let line = rng.gen_range(0..=max_line.max(0));
    let pos_max = height.saturating_sub(rows_needed + CLAIM_MARGIN);
    let pos = rng.gen_range(CLAIM_MARGIN..=pos_max.max(CLAIM_MARGIN));
    DefectSpec { class, anchor: (line, pos), extent, severity }
}

/// Generate one sample of the configured dataset; deterministic in
/// (config, index).
pub fn generate_sample(config: &GeneratorConfig, index: u32) -> Result<GeneratedSample, GenError> {
    config.validate()?;
    let id = format!("{}_{:05}", config.step, index);
    let mut pattern = config.pattern.clone();
    pattern.seed = mix_seed(config.seed, index);
    let mut sample = GeneratedSample::render(&pattern, config.width, config.height, config.step, &id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(pattern.seed);
    rng.set_stream(2); // defect placement stream
    let (lo, hi) = config.defects_per_image;
    let count = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    let weights: Vec<f64> = config.class_mix.iter().map(|(_, w)| *w).collect();
    let class_dist = WeightedIndex::new(&weights).expect("validated weights");
    // Placement happens in vertical-line coordinates regardless of the
    // configured orientation; finalize() transposes when needed.
    let (along, inner_height) = match pattern.orientation {
        Orientation::Vertical => (config.width, config.height),
        Orientation::Horizontal => (config.height, config.width),
    };
    let n_lines = along / pattern.pitch;
    for _ in 0..count {
        let class = config.class_mix[class_dist.sample(&mut rng)].0;
        // Retry placement a bounded number of times; skip on persistent overlap.
        for _attempt in 0..50 {
            let spec = sample_defect_spec(class, n_lines, inner_height, &mut rng);
            match sample.inject(&spec) {
                Ok(()) => break,
                Err(GenError::Overlap { .. }) | Err(GenError::OutOfBounds(_)) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    sample.finalize();
    Ok(sample)
}

fn mix_seed(seed: u64, index: u32) -> u64 {
    // splitmix64 step over (seed, index) so per-image streams are independent.
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generate the full dataset: PNGs under `out_dir/images/` plus
/// `out_dir/manifest.json`. Returns the manifest.
pub fn generate_dataset(
    config: &GeneratorConfig,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest, GenError> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    let images_dir = out_dir.join("images");
    if config.n_images > 0 {
        fs::create_dir_all(&images_dir)
            .map_err(|e| GenError::Io { path: images_dir.display().to_string(), source: e })?;
    } else {
        fs::create_dir_all(out_dir)
            .map_err(|e| GenError::Io { path: out_dir.display().to_string(), source: e })?;
    }
    let samples: Vec<Result<GeneratedSample, GenError>> =
        (0..config.n_images).into_par_iter().map(|i| generate_sample(config, i)).collect();
    let mut manifest = DatasetManifest::new(config.step);
    for sample in samples {
        let sample = sample?;
        let image = sample.image();
        let file_name = format!("images/{}.png", image.id());
        imageio::export_png(image, out_dir.join(&file_name))?;
        manifest.add_image(ImageRecord {
            id: image.id().to_string(),
            file_name,
            width: image.width(),
            height: image.height(),
        })?;
        for inst in sample.truth() {
            manifest.add_annotation(image.id(), inst.clone())?;
        }
    }
    crate::manifest::save_manifest(&manifest, out_dir.join("manifest.json"))?;
    Ok(manifest)
}
