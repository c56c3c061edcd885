//! Core domain types shared by every pipeline stage.
//!
//! All types here are immutable after construction and cheap to clone or
//! share across threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::InstanceMask;

#[derive(Debug, Error)]
pub enum TypeError {
    #[error("class {class:?} is not admitted by process step {step:?}")]
    ClassNotInStep { step: ProcessStep, class: ClassName },
    #[error("invalid bbox: ({x_min},{y_min})..({x_max},{y_max}) must have positive area")]
    InvalidBBox { x_min: u32, y_min: u32, x_max: u32, y_max: u32 },
    #[error("bbox ({0},{1})..({2},{3}) exceeds image bounds {4}x{5}")]
    BBoxOutOfBounds(u32, u32, u32, u32, u32, u32),
    #[error("pixel buffer has {got} bytes, expected {expected} for {width}x{height}")]
    PixelCountMismatch { got: usize, expected: usize, width: u32, height: u32 },
    #[error("confidence {0} outside [0,1]")]
    ConfidenceOutOfRange(f64),
    #[error("image has zero dimension: {0}x{1}")]
    ZeroDimension(u32, u32),
}

/// Inspection step a dataset belongs to. Each step admits a fixed set of
/// defect classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessStep {
    /// After-development inspection (post-litho): noisy, low-contrast images.
    Adi,
    /// After-etch inspection: cleaner, higher-contrast images.
    Aei,
}

impl ProcessStep {
    /// Admissible classes in registry order; position + 1 is the stable
    /// category id used in manifests and reports.
    pub fn class_registry(self) -> &'static [ClassName] {
        match self {
            ProcessStep::Adi => &[
                ClassName::Gap,
                ClassName::ProbableGap,
                ClassName::Bridge,
                ClassName::Microbridge,
                ClassName::LineCollapse,
            ],
            ProcessStep::Aei => &[
                ClassName::MultiBridgeNH,
                ClassName::MultiBridgeH,
                ClassName::SingleBridge,
                ClassName::ThinBridge,
                ClassName::LineCollapse,
            ],
        }
    }

    pub fn admits(self, name: ClassName) -> bool {
        self.class_registry().contains(&name)
    }

    /// Default square image resolution for this step.
    pub fn default_resolution(self) -> u32 {
        match self {
            ProcessStep::Adi => 1024,
            ProcessStep::Aei => 480,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProcessStep::Adi => "adi",
            ProcessStep::Aei => "aei",
        }
    }
}

impl std::fmt::Display for ProcessStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProcessStep {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "adi" => Ok(ProcessStep::Adi),
            "aei" => Ok(ProcessStep::Aei),
            other => Err(format!("unknown process step {other:?} (expected adi or aei)")),
        }
    }
}

/// Defect class label. `LineCollapse` appears in both steps; all other
/// labels belong to exactly one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassName {
    Gap,
    ProbableGap,
    Bridge,
    Microbridge,
    LineCollapse,
    ThinBridge,
    SingleBridge,
    MultiBridgeH,
    MultiBridgeNH,
}

impl ClassName {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassName::Gap => "gap",
            ClassName::ProbableGap => "probable_gap",
            ClassName::Bridge => "bridge",
            ClassName::Microbridge => "microbridge",
            ClassName::LineCollapse => "line_collapse",
            ClassName::ThinBridge => "thin_bridge",
            ClassName::SingleBridge => "single_bridge",
            ClassName::MultiBridgeH => "multi_bridge_h",
            ClassName::MultiBridgeNH => "multi_bridge_nh",
        }
    }

    pub fn parse(s: &str) -> Option<ClassName> {
        Some(match s {
            "gap" => ClassName::Gap,
            "probable_gap" | "pgap" => ClassName::ProbableGap,
            "bridge" => ClassName::Bridge,
            "microbridge" | "micro_bridge" => ClassName::Microbridge,
            "line_collapse" => ClassName::LineCollapse,
            "thin_bridge" => ClassName::ThinBridge,
            "single_bridge" => ClassName::SingleBridge,
            "multi_bridge_h" | "mbh" => ClassName::MultiBridgeH,
            "multi_bridge_nh" | "mbnh" => ClassName::MultiBridgeNH,
            _ => return None,
        })
    }

    /// Human-readable label matching the report table headers.
    pub fn display_name(self) -> &'static str {
        match self {
            ClassName::Gap => "Gap",
            ClassName::ProbableGap => "Probable gap",
            ClassName::Bridge => "Bridge",
            ClassName::Microbridge => "Microbridge",
            ClassName::LineCollapse => "Line collapse",
            ClassName::ThinBridge => "Thin bridge",
            ClassName::SingleBridge => "Single bridge",
            ClassName::MultiBridgeH => "MBH",
            ClassName::MultiBridgeNH => "MBNH",
        }
    }
}

impl std::fmt::Display for ClassName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A defect class bound to its process step. Construction rejects
/// cross-step mixing, so a valid `DefectClass` is always in its step's set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DefectClass {
    step: ProcessStep,
    name: ClassName,
}

impl DefectClass {
    pub fn new(step: ProcessStep, name: ClassName) -> Result<Self, TypeError> {
        if !step.admits(name) {
            return Err(TypeError::ClassNotInStep { step, class: name });
        }
        Ok(DefectClass { step, name })
    }

    pub fn step(&self) -> ProcessStep {
        self.step
    }

    pub fn name(&self) -> ClassName {
        self.name
    }

    /// Stable 1-based category id in the step's registry.
    pub fn category_id(&self) -> u32 {
        self.step
            .class_registry()
            .iter()
            .position(|&c| c == self.name)
            .expect("constructor guarantees membership") as u32
            + 1
    }

    pub fn from_category_id(step: ProcessStep, id: u32) -> Option<Self> {
        let registry = step.class_registry();
        if id == 0 || id as usize > registry.len() {
            return None;
        }
        Some(DefectClass { step, name: registry[id as usize - 1] })
    }
}

/// Single-channel 8-bit raster with process-step metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
    step: ProcessStep,
    id: String,
}

impl SemImage {
    pub fn new(
        width: u32,
        height: u32,
        pixels: Vec<u8>,
        step: ProcessStep,
        id: impl Into<String>,
    ) -> Result<Self, TypeError> {
        if width == 0 || height == 0 {
            return Err(TypeError::ZeroDimension(width, height));
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(TypeError::PixelCountMismatch { got: pixels.len(), expected, width, height });
        }
        Ok(SemImage { width, height, pixels, step, id: id.into() })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn step(&self) -> ProcessStep {
        self.step
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

/// Axis-aligned box with half-open pixel intervals: column `x` is inside
/// iff `x_min <= x < x_max`. Area is exactly `(x_max-x_min)*(y_max-y_min)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self, TypeError> {
        if x_min >= x_max || y_min >= y_max {
            return Err(TypeError::InvalidBBox { x_min, y_min, x_max, y_max });
        }
        Ok(BBox { x_min, y_min, x_max, y_max })
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    /// Intersection area in integer arithmetic.
    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let ix = (self.x_max.min(other.x_max)).saturating_sub(self.x_min.max(other.x_min));
        let iy = (self.y_max.min(other.y_max)).saturating_sub(self.y_min.max(other.y_min));
        ix as u64 * iy as u64
    }

    /// Expand by `margin` on each side, clamped to `width`x`height` bounds.
    pub fn dilate(&self, margin: u32, width: u32, height: u32) -> BBox {
        BBox {
            x_min: self.x_min.saturating_sub(margin),
            y_min: self.y_min.saturating_sub(margin),
            x_max: (self.x_max + margin).min(width),
            y_max: (self.y_max + margin).min(height),
        }
    }

    pub fn check_in_bounds(&self, width: u32, height: u32) -> Result<(), TypeError> {
        if self.x_max > width || self.y_max > height {
            return Err(TypeError::BBoxOutOfBounds(
                self.x_min, self.y_min, self.x_max, self.y_max, width, height,
            ));
        }
        Ok(())
    }
}

/// One defect occurrence: ground truth (no confidence) or prediction
/// (confidence present).
#[derive(Debug, Clone, PartialEq)]
pub struct DefectInstance {
    pub class: DefectClass,
    pub bbox: BBox,
    pub mask: Option<InstanceMask>,
    pub confidence: Option<f64>,
}

impl DefectInstance {
    pub fn ground_truth(class: DefectClass, bbox: BBox, mask: Option<InstanceMask>) -> Self {
        DefectInstance { class, bbox, mask, confidence: None }
    }

    pub fn prediction(
        class: DefectClass,
        bbox: BBox,
        confidence: f64,
        mask: Option<InstanceMask>,
    ) -> Result<Self, TypeError> {
        if !(0.0..=1.0).contains(&confidence) || confidence.is_nan() {
            return Err(TypeError::ConfidenceOutOfRange(confidence));
        }
        Ok(DefectInstance { class, bbox, mask, confidence: Some(confidence) })
    }

    pub fn is_prediction(&self) -> bool {
        self.confidence.is_some()
    }
}
