//! Box-supervised segmentation: pixel-precise instance masks from bounding
//! boxes alone, plus the mask-refinement chain (AND with a binary image,
//! neighbor-majority smoothing).
//!
//! This module never sees ground truth. Its whole input surface is
//! (image, ROI list, config); the ROI list is the projection of detection
//! results produced by [`crate::detect::to_roi_seed`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{InstanceMask, MaskError};
use crate::morph;
use crate::types::{BBox, DefectClass, DefectInstance, ProcessStep, SemImage};

#[derive(Debug, Error)]
pub enum SegError {
    #[error("ROI bbox ({0:?}) lies fully outside the image")]
    RoiOutsideImage(BBox),
    #[error("degenerate ROI: zero intensity variance within the dilated box")]
    DegenerateRoi,
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMethod {
    /// Otsu's method over the ROI (or image) histogram.
    #[default]
    Otsu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    /// Defect pixels darker than their surroundings.
    DefectDark,
    /// Defect pixels brighter than their surroundings.
    DefectBright,
    /// Compare ROI-interior mean against the ROI border ring.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Neighborhood {
    Four,
    Eight,
}

impl TryFrom<u8> for Neighborhood {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            4 => Ok(Neighborhood::Four),
            8 => Ok(Neighborhood::Eight),
            other => Err(format!("neighborhood must be 4 or 8, got {other}")),
        }
    }
}

impl From<Neighborhood> for u8 {
    fn from(n: Neighborhood) -> u8 {
        match n {
            Neighborhood::Four => 4,
            Neighborhood::Eight => 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegConfig {
    pub box_dilation: u32,
    pub local_threshold: ThresholdMethod,
    pub polarity: Polarity,
    pub refine_passes: u32,
    pub neighborhood: Neighborhood,
    /// Apply the AND-refinement with a binarized full image. None derives
    /// the default from the process step (ADI yes, AEI no).
    pub apply_and_refine: Option<bool>,
}

impl Default for SegConfig {
    fn default() -> Self {
        SegConfig {
            box_dilation: 2,
            local_threshold: ThresholdMethod::Otsu,
            polarity: Polarity::Auto,
            refine_passes: 2,
            neighborhood: Neighborhood::Eight,
            apply_and_refine: None,
        }
    }
}

impl SegConfig {
    /// Step preset. The noisy development step gets the full refinement
    /// chain; the clean etch step skips majority smoothing, which would
    /// erase 1-pixel-thick bridge structures.
    pub fn for_step(step: ProcessStep) -> Self {
        let refine_passes = match step {
            ProcessStep::Adi => 2,
            ProcessStep::Aei => 0,
        };
        SegConfig { refine_passes, ..SegConfig::default() }
    }
}

/// Segmentation result for one ROI.
#[derive(Debug, Clone)]
pub struct SegResult {
    pub instance: DefectInstance,
    /// Resolved polarity actually used for this ROI.
    pub polarity: Polarity,
    pub refined: bool,
    pub diagnostic: Option<String>,
}

fn clip_box(bbox: &BBox, width: u32, height: u32) -> Option<BBox> {
    let x_min = bbox.x_min.min(width);
    let y_min = bbox.y_min.min(height);
    let x_max = bbox.x_max.min(width);
    let y_max = bbox.y_max.min(height);
    BBox::new(x_min, y_min, x_max, y_max).ok()
}

/// Segment one ROI. The mask is computed only from pixels inside the
/// dilated box: threshold, suppress background structures connected to the
/// dilated-box border from outside the seed box, keep components touching
/// the box interior.
pub fn segment_in_box(
    image: &SemImage,
    roi: (DefectClass, BBox),
    config: &SegConfig,
) -> Result<SegResult, SegError> {
    let (class, bbox) = roi;
    let (w, h) = (image.width(), image.height());
    let seed = clip_box(&bbox, w, h).ok_or(SegError::RoiOutsideImage(bbox))?;
    let dilated = seed.dilate(config.box_dilation, w, h);

    let hist = morph::histogram(
        (dilated.y_min..dilated.y_max)
            .flat_map(|y| (dilated.x_min..dilated.x_max).map(move |x| (x, y)))
            .map(|(x, y)| image.get(x, y)),
    );
    let threshold = morph::otsu_threshold(&hist).ok_or(SegError::DegenerateRoi)?;

    let polarity = resolve_polarity(image, &seed, &dilated, config.polarity);
    let bright = polarity == Polarity::DefectBright;

    // Foreground bitmap local to the dilated box.
    let bw = (dilated.x_max - dilated.x_min) as usize;
    let bh = (dilated.y_max - dilated.y_min) as usize;
    let mut fg = vec![false; bw * bh];
    for y in dilated.y_min..dilated.y_max {
        for x in dilated.x_min..dilated.x_max {
            let v = image.get(x, y);
            let is_fg = if bright { v > threshold } else { v <= threshold };
            fg[(y - dilated.y_min) as usize * bw + (x - dilated.x_min) as usize] = is_fg;
        }
    }

    // Suppress foreground reachable from the dilated-box border through
    // pixels outside the seed box: background pattern structure entering
    // the margin, not defect material.
    suppress_border_background(&mut fg, bw, bh, &dilated, &seed);

    let mut union: Vec<(u32, u32)> = Vec::new();
    for comp in morph::connected_components(&fg, bw as u32, bh as u32) {
        let touches_interior = comp.pixels.iter().any(|&(lx, ly)| {
            seed.contains(lx + dilated.x_min, ly + dilated.y_min)
        });
        if touches_interior {
            union.extend(comp.pixels.iter().map(|&(lx, ly)| (lx + dilated.x_min, ly + dilated.y_min)));
        }
    }

    let mask = InstanceMask::from_pixels(w, h, union)?;
    let diagnostic =
        if mask.is_empty() { Some("no component touches the box interior".to_string()) } else { None };
    let out_bbox = mask.tight_bbox().unwrap_or(seed);
    Ok(SegResult {
        instance: DefectInstance::ground_truth(class, out_bbox, Some(mask)),
        polarity,
        refined: false,
        diagnostic,
    })
}

fn resolve_polarity(image: &SemImage, seed: &BBox, dilated: &BBox, requested: Polarity) -> Polarity {
    match requested {
        Polarity::Auto => {
            let mut interior_sum = 0u64;
            let mut interior_n = 0u64;
            for y in seed.y_min..seed.y_max {
                for x in seed.x_min..seed.x_max {
                    interior_sum += image.get(x, y) as u64;
                    interior_n += 1;
                }
            }
            let mut ring_sum = 0u64;
            let mut ring_n = 0u64;
            let ring = seed.dilate(1, image.width(), image.height());
            for y in ring.y_min..ring.y_max {
                for x in ring.x_min..ring.x_max {
                    if !seed.contains(x, y) {
                        ring_sum += image.get(x, y) as u64;
                        ring_n += 1;
                    }
                }
            }
            // Degenerate ring (box covers the whole image): compare against
            // the dilated-box mean instead.
            if ring_n == 0 {
                for y in dilated.y_min..dilated.y_max {
                    for x in dilated.x_min..dilated.x_max {
                        ring_sum += image.get(x, y) as u64;
                        ring_n += 1;
                    }
                }
            }
            let interior_mean = interior_sum as f64 / interior_n.max(1) as f64;
            let ring_mean = ring_sum as f64 / ring_n.max(1) as f64;
            if interior_mean > ring_mean {
                Polarity::DefectBright
            } else {
                Polarity::DefectDark
            }
        }
        p => p,
    }
}

fn suppress_border_background(fg: &mut [bool], bw: usize, bh: usize, dilated: &BBox, seed: &BBox) {
    let outside_seed = |lx: usize, ly: usize| {
        !seed.contains(lx as u32 + dilated.x_min, ly as u32 + dilated.y_min)
    };
    let mut stack = Vec::new();
    let mut kill = vec![false; bw * bh];
    for ly in 0..bh {
        for lx in 0..bw {
            let border = lx == 0 || ly == 0 || lx == bw - 1 || ly == bh - 1;
            if border && fg[ly * bw + lx] && outside_seed(lx, ly) && !kill[ly * bw + lx] {
                kill[ly * bw + lx] = true;
                stack.push((lx, ly));
            }
        }
    }
    while let Some((lx, ly)) = stack.pop() {
        let mut visit = |nx: usize, ny: usize| {
            let idx = ny * bw + nx;
            if fg[idx] && !kill[idx] && outside_seed(nx, ny) {
                kill[idx] = true;
                stack.push((nx, ny));
            }
        };
        if lx > 0 {
            visit(lx - 1, ly);
        }
        if lx + 1 < bw {
            visit(lx + 1, ly);
        }
        if ly > 0 {
            visit(lx, ly - 1);
        }
        if ly + 1 < bh {
            visit(lx, ly + 1);
        }
    }
    for (f, k) in fg.iter_mut().zip(&kill) {
        if *k {
            *f = false;
        }
    }
}

/// Global binarization of the full image. Polarity is chosen so that the
/// minority intensity class is foreground. A constant image yields an
/// all-background mask.
pub fn binarize_image(image: &SemImage, _method: ThresholdMethod) -> InstanceMask {
    let hist = morph::histogram(image.pixels().iter().copied());
    let Some(threshold) = morph::otsu_threshold(&hist) else {
        return InstanceMask::empty(image.width(), image.height());
    };
    let below: u64 = hist[..=threshold as usize].iter().sum();
    let above: u64 = hist[threshold as usize + 1..].iter().sum();
    let minority_is_above = above < below;
    binarize_with_threshold(image, threshold, minority_is_above)
}

/// Binarize with an explicit polarity: foreground is the side of the global
/// Otsu threshold that matches `bright`.
pub fn binarize_with_polarity(image: &SemImage, polarity: Polarity) -> InstanceMask {
    let hist = morph::histogram(image.pixels().iter().copied());
    let Some(threshold) = morph::otsu_threshold(&hist) else {
        return InstanceMask::empty(image.width(), image.height());
    };
    binarize_with_threshold(image, threshold, polarity == Polarity::DefectBright)
}

fn binarize_with_threshold(image: &SemImage, threshold: u8, bright: bool) -> InstanceMask {
    let w = image.width();
    let h = image.height();
    let raster: Vec<bool> = image
        .pixels()
        .iter()
        .map(|&v| if bright { v > threshold } else { v <= threshold })
        .collect();
    InstanceMask::from_raster(w, h, &raster).expect("raster size matches")
}

/// Pixelwise conjunction of a predicted mask with a binary image mask.
/// Never adds foreground: the result is a subset of `pred`.
pub fn and_refine(pred: &InstanceMask, image_binary: &InstanceMask) -> Result<InstanceMask, SegError> {
    Ok(pred.and(image_binary)?)
}

/// Synchronous majority smoothing: each pass recolors every pixel to the
/// majority value of its neighborhood; ties keep the current value.
/// `passes = 0` is the identity.
pub fn neighbor_fill(mask: &InstanceMask, passes: u32, neighborhood: Neighborhood) -> InstanceMask {
    if passes == 0 || mask.is_empty() {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    // Work in a window around the foreground; the rule cannot create
    // foreground farther than one pixel per pass from existing foreground.
    let bbox = mask.tight_bbox().expect("nonempty");
    let win = bbox.dilate(passes + 1, w, h);
    let ww = (win.x_max - win.x_min) as usize;
    let wh = (win.y_max - win.y_min) as usize;
    let mut cur = vec![false; ww * wh];
    for (x, y) in mask.pixels() {
        if win.contains(x, y) {
            cur[(y - win.y_min) as usize * ww + (x - win.x_min) as usize] = true;
        }
    }
    let (majority, minority) = match neighborhood {
        Neighborhood::Four => (2u32, 2u32),
        Neighborhood::Eight => (4u32, 4u32),
    };
    let offsets: &[(i32, i32)] = match neighborhood {
        Neighborhood::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Neighborhood::Eight => {
            &[(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
        }
    };
    let mut next = vec![false; ww * wh];
    for _ in 0..passes {
        for ly in 0..wh {
            for lx in 0..ww {
                let mut count = 0u32;
                for &(dx, dy) in offsets {
                    let nx = lx as i32 + dx;
                    let ny = ly as i32 + dy;
                    // Pixels outside the window are background unless they
                    // belong to the original mask outside the window (the
                    // window always covers the mask, so they are background).
                    if nx >= 0 && ny >= 0 && (nx as usize) < ww && (ny as usize) < wh {
                        if cur[ny as usize * ww + nx as usize] {
                            count += 1;
                        }
                    }
                }
                let idx = ly * ww + lx;
                next[idx] = if count > majority {
                    true
                } else if count < minority {
                    false
                } else {
                    cur[idx]
                };
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let pixels = (0..wh).flat_map(|ly| {
        let cur = &cur;
        (0..ww).filter_map(move |lx| {
            if cur[ly * ww + lx] {
                Some((lx as u32 + win.x_min, ly as u32 + win.y_min))
            } else {
                None
            }
        })
    });
    InstanceMask::from_pixels(w, h, pixels).expect("pixels in bounds")
}

/// Run segmentation over all ROIs of one image, applying the refinement
/// chain (AND with the binarized image for ADI presets, then neighbor
/// smoothing). Per-ROI failures become per-instance diagnostics.
pub fn segment_pipeline(
    image: &SemImage,
    rois: &[(DefectClass, BBox)],
    config: &SegConfig,
) -> Vec<SegResult> {
    let apply_and = config.apply_and_refine.unwrap_or(image.step() == ProcessStep::Adi);
    // Lazily binarized image, one per polarity actually used.
    let mut global_bright: Option<InstanceMask> = None;
    let mut global_dark: Option<InstanceMask> = None;
    let mut results = Vec::with_capacity(rois.len());
    for &(class, bbox) in rois {
        let mut result = match segment_in_box(image, (class, bbox), config) {
            Ok(r) => r,
            Err(e) => {
                results.push(SegResult {
                    instance: DefectInstance::ground_truth(
                        class,
                        clip_box(&bbox, image.width(), image.height()).unwrap_or(bbox),
                        Some(InstanceMask::empty(image.width(), image.height())),
                    ),
                    polarity: config.polarity,
                    refined: false,
                    diagnostic: Some(e.to_string()),
                });
                continue;
            }
        };
        let mut mask = result.instance.mask.clone().expect("segment_in_box always sets a mask");
        if apply_and && !mask.is_empty() {
            let global = match result.polarity {
                Polarity::DefectBright => global_bright
                    .get_or_insert_with(|| binarize_with_polarity(image, Polarity::DefectBright)),
                _ => global_dark
                    .get_or_insert_with(|| binarize_with_polarity(image, Polarity::DefectDark)),
            };
            mask = and_refine(&mask, global).expect("dimensions match by construction");
            result.refined = true;
        }
        if config.refine_passes > 0 && !mask.is_empty() {
            mask = neighbor_fill(&mask, config.refine_passes, config.neighborhood);
            result.refined = true;
        }
        // Confinement: refinement must not escape the dilated seed box.
        let dilated = clip_box(&bbox, image.width(), image.height())
            .map(|b| b.dilate(config.box_dilation, image.width(), image.height()));
        if let Some(dilated) = dilated {
            mask = confine(&mask, &dilated);
        }
        if mask.is_empty() && result.diagnostic.is_none() {
            result.diagnostic = Some("mask vanished during refinement".to_string());
        }
        result.instance.bbox = mask.tight_bbox().unwrap_or(result.instance.bbox);
        result.instance.mask = Some(mask);
        results.push(result);
    }
    results
}

fn confine(mask: &InstanceMask, bbox: &BBox) -> InstanceMask {
    InstanceMask::from_pixels(
        mask.width(),
        mask.height(),
        mask.pixels().filter(|&(x, y)| bbox.contains(x, y)),
    )
    .expect("subset of valid pixels")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Run;
    use crate::synthgen::{DefectSpec, GeneratedSample, Orientation, PatternSpec};
    use crate::types::ClassName;
    use proptest::prelude::*;

    fn flat_spec(seed: u64) -> PatternSpec {
        PatternSpec {
            pitch: 32,
            line_width: 16,
            orientation: Orientation::Vertical,
            line_intensity: 200,
            space_intensity: 50,
            edge_roughness_sigma: 0.0,
            noise_sigma: 0.0,
            seed,
        }
    }

    fn adi_class(name: ClassName) -> DefectClass {
        DefectClass::new(ProcessStep::Adi, name).unwrap()
    }

    #[test]
    fn gap_roi_recovers_truth_mask_exactly() {
        let mut sample =
            GeneratedSample::render(&flat_spec(1), 128, 128, ProcessStep::Adi, "t").unwrap();
        sample
            .inject(&DefectSpec { class: ClassName::Gap, anchor: (1, 40), extent: 12, severity: 1.0 })
            .unwrap();
        let truth = sample.truth()[0].clone();
        let result = segment_in_box(
            sample.image(),
            (truth.class, truth.bbox),
            &SegConfig::default(),
        )
        .unwrap();
        assert_eq!(result.instance.mask.as_ref().unwrap(), truth.mask.as_ref().unwrap());
        assert_eq!(result.polarity, Polarity::DefectDark);
    }

    #[test]
    fn bridge_roi_recovers_truth_mask_exactly() {
        let mut sample =
            GeneratedSample::render(&flat_spec(1), 128, 128, ProcessStep::Adi, "t").unwrap();
        sample
            .inject(&DefectSpec { class: ClassName::Bridge, anchor: (1, 60), extent: 5, severity: 1.0 })
            .unwrap();
        let truth = sample.truth()[0].clone();
        let result = segment_in_box(
            sample.image(),
            (truth.class, truth.bbox),
            &SegConfig::default(),
        )
        .unwrap();
        assert_eq!(result.instance.mask.as_ref().unwrap(), truth.mask.as_ref().unwrap());
        assert_eq!(result.polarity, Polarity::DefectBright);
    }

    #[test]
    fn uniform_roi_is_degenerate() {
        let sample =
            GeneratedSample::render(&flat_spec(1), 128, 128, ProcessStep::Adi, "t").unwrap();
        // ROI deep inside a line, dilated box still uniform.
        let img = sample.image();
        let roi = BBox::new(36, 20, 44, 40).unwrap();
        let err = segment_in_box(img, (adi_class(ClassName::Gap), roi), &SegConfig::default());
        assert!(matches!(err, Err(SegError::DegenerateRoi)));
    }

    #[test]
    fn roi_fully_outside_image_is_error() {
        let sample = GeneratedSample::render(&flat_spec(1), 128, 128, ProcessStep::Adi, "t").unwrap();
        let roi = BBox::new(200, 200, 220, 220).unwrap();
        let err = segment_in_box(sample.image(), (adi_class(ClassName::Gap), roi), &SegConfig::default());
        assert!(matches!(err, Err(SegError::RoiOutsideImage(_))));
    }

    #[test]
    fn binarize_two_valued_pattern_picks_minority() {
        let mut spec = flat_spec(1);
        spec.line_width = 12; // lines are the minority class
        let sample = GeneratedSample::render(&spec, 128, 128, ProcessStep::Adi, "t").unwrap();
        let mask = binarize_image(sample.image(), ThresholdMethod::Otsu);
        assert_eq!(&mask, sample.clean_pattern_mask());
    }

    #[test]
    fn binarize_constant_image_is_empty() {
        let img = SemImage::new(16, 16, vec![99; 256], ProcessStep::Adi, "c").unwrap();
        assert!(binarize_image(&img, ThresholdMethod::Otsu).is_empty());
    }

    #[test]
    fn binarize_noisy_pattern_close_to_clean() {
        let mut spec = flat_spec(9);
        spec.line_width = 12;
        spec.noise_sigma = 8.0;
        let noisy = GeneratedSample::render(&spec, 256, 256, ProcessStep::Adi, "t");
        let mut noisy = noisy.unwrap();
        noisy.finalize();
        spec.noise_sigma = 0.0;
        let clean = GeneratedSample::render(&spec, 256, 256, ProcessStep::Adi, "t").unwrap();
        let got = binarize_image(noisy.image(), ThresholdMethod::Otsu);
        let want = clean.clean_pattern_mask();
        let inter = got.intersection_area(want).unwrap();
        let hamming = (got.area() - inter) + (want.area() - inter);
        let total = (256 * 256) as f64;
        assert!(
            (hamming as f64) / total <= 0.02,
            "hamming distance {hamming} exceeds 2% of {total}"
        );
    }

    #[test]
    fn and_refine_identity_and_annihilator() {
        let all = InstanceMask::from_runs(8, 8, vec![Run { start: 0, len: 64 }]).unwrap();
        let some = InstanceMask::from_pixels(8, 8, vec![(1, 1), (2, 2), (3, 3)]).unwrap();
        let empty = InstanceMask::empty(8, 8);
        assert_eq!(and_refine(&all, &some).unwrap(), some);
        assert_eq!(and_refine(&some, &empty).unwrap(), empty);
        let once = and_refine(&some, &all).unwrap();
        assert_eq!(and_refine(&once, &all).unwrap(), once);
    }

    #[test]
    fn neighbor_fill_majority_cases() {
        // Isolated pixel removed.
        let lone = InstanceMask::from_pixels(16, 16, vec![(8, 8)]).unwrap();
        assert!(neighbor_fill(&lone, 1, Neighborhood::Eight).is_empty());
        // Solid block interior unchanged.
        let block = InstanceMask::from_pixels(
            16,
            16,
            (3..13).flat_map(|x| (3..13).map(move |y| (x, y))),
        )
        .unwrap();
        let filled = neighbor_fill(&block, 1, Neighborhood::Eight);
        for x in 4..12 {
            for y in 4..12 {
                assert!(filled.contains(x, y));
            }
        }
        // Single-pixel hole filled.
        let holed = InstanceMask::from_pixels(
            16,
            16,
            (3..13).flat_map(|x| (3..13).map(move |y| (x, y))).filter(|&p| p != (8, 8)),
        )
        .unwrap();
        assert!(neighbor_fill(&holed, 1, Neighborhood::Eight).contains(8, 8));
    }

    #[test]
    fn segment_pipeline_empty_rois() {
        let sample = GeneratedSample::render(&flat_spec(1), 128, 128, ProcessStep::Adi, "t").unwrap();
        assert!(segment_pipeline(sample.image(), &[], &SegConfig::default()).is_empty());
    }

    #[test]
    fn adi_pipeline_identity_on_clean_gap() {
        let mut sample =
            GeneratedSample::render(&flat_spec(1), 128, 128, ProcessStep::Adi, "t").unwrap();
        sample
            .inject(&DefectSpec { class: ClassName::Gap, anchor: (2, 30), extent: 14, severity: 1.0 })
            .unwrap();
        let truth = sample.truth()[0].clone();
        // Without smoothing the clean rectangle is recovered exactly.
        let exact_cfg = SegConfig { refine_passes: 0, ..SegConfig::default() };
        let results =
            segment_pipeline(sample.image(), &[(truth.class, truth.bbox)], &exact_cfg);
        assert_eq!(results.len(), 1);
        assert!(results[0].refined, "AND-refinement applies on this step");
        assert_eq!(results[0].instance.mask.as_ref().unwrap(), truth.mask.as_ref().unwrap());
        // Default smoothing may shave rectangle corners but stays close.
        let smoothed =
            segment_pipeline(sample.image(), &[(truth.class, truth.bbox)], &SegConfig::default());
        let m = smoothed[0].instance.mask.as_ref().unwrap();
        let t = truth.mask.as_ref().unwrap();
        let inter = m.intersection_area(t).unwrap();
        let union = m.area() + t.area() - inter;
        assert!(inter as f64 / union as f64 >= 0.95);
    }

    #[test]
    fn noisy_adi_bridge_iou_at_least_half() {
        let mut spec = flat_spec(17);
        spec.noise_sigma = 18.0;
        spec.edge_roughness_sigma = 0.7;
        let mut sample = GeneratedSample::render(&spec, 256, 256, ProcessStep::Adi, "t").unwrap();
        sample
            .inject(&DefectSpec { class: ClassName::Bridge, anchor: (3, 100), extent: 6, severity: 1.0 })
            .unwrap();
        sample.finalize();
        let truth = sample.truth()[0].clone();
        let results = segment_pipeline(
            sample.image(),
            &[(truth.class, truth.bbox)],
            &SegConfig::default(),
        );
        let mask = results[0].instance.mask.as_ref().unwrap();
        let tm = truth.mask.as_ref().unwrap();
        let inter = mask.intersection_area(tm).unwrap();
        let union = mask.area() + tm.area() - inter;
        let iou = inter as f64 / union as f64;
        assert!(iou >= 0.5, "mask IoU {iou} below 0.5");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mask_confined_to_dilated_box(
            x in 0u32..110,
            y in 0u32..110,
            bw in 2u32..24,
            bh in 2u32..24,
            seed in 0u64..50,
        ) {
            let mut spec = flat_spec(seed);
            spec.noise_sigma = 10.0;
            let mut sample = GeneratedSample::render(&spec, 128, 128, ProcessStep::Adi, "t").unwrap();
            sample.finalize();
            let bbox = BBox::new(x, y, (x + bw).min(128), (y + bh).min(128));
            prop_assume!(bbox.is_ok());
            let bbox = bbox.unwrap();
            let config = SegConfig::default();
            let results = segment_pipeline(
                sample.image(),
                &[(adi_class(ClassName::Gap), bbox)],
                &config,
            );
            let dilated = bbox.dilate(config.box_dilation, 128, 128);
            for (px, py) in results[0].instance.mask.as_ref().unwrap().pixels() {
                prop_assert!(dilated.contains(px, py), "pixel ({px},{py}) outside dilated box");
            }
        }

        #[test]
        fn neighbor_fill_zero_passes_is_identity(
            bits in proptest::collection::vec(any::<bool>(), 64),
        ) {
            let m = InstanceMask::from_raster(8, 8, &bits).unwrap();
            prop_assert_eq!(neighbor_fill(&m, 0, Neighborhood::Eight), m);
        }
    }
}
