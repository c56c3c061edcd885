//! COCO-style dataset manifests: images + annotations + class registry.
//!
//! One JSON container serves both ground truth and predictions; predictions
//! carry a `score` field. Annotation bboxes are stored as
//! `[x_min, y_min, width, height]` and converted to half-open corners
//! internally. Masks use uncompressed column-major RLE counts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::InstanceMask;
use crate::types::{BBox, ClassName, DefectClass, DefectInstance, ProcessStep};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at byte offset {offset} (line {line}, column {column}): {message}")]
    Parse { offset: usize, line: usize, column: usize, message: String },
    #[error("unknown class name {0:?} for step {1}")]
    UnknownClass(String, ProcessStep),
    #[error("category id {id} does not match registry entry for {name:?} (expected {expected})")]
    CategoryIdMismatch { id: u32, name: String, expected: u32 },
    #[error("annotation references image id {0:?} absent from images")]
    DanglingImageId(String),
    #[error("annotation references category id {0} absent from registry")]
    DanglingCategoryId(u32),
    #[error("duplicate image id {0:?}")]
    DuplicateImageId(String),
    #[error("invalid annotation on image {image_id:?}: {message}")]
    InvalidAnnotation { image_id: String, message: String },
    #[error("missing or invalid step field: {0}")]
    BadStep(String),
}

/// One image entry of the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

/// One annotation: a defect instance attached to an image.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_id: String,
    pub instance: DefectInstance,
}

/// Images, annotations and the step's class registry.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    step: ProcessStep,
    images: Vec<ImageRecord>,
    annotations: Vec<Annotation>,
}

impl DatasetManifest {
    pub fn new(step: ProcessStep) -> Self {
        DatasetManifest { step, images: Vec::new(), annotations: Vec::new() }
    }

    pub fn step(&self) -> ProcessStep {
        self.step
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn image(&self, id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.id == id)
    }

    pub fn add_image(&mut self, record: ImageRecord) -> Result<(), ManifestError> {
        if self.images.iter().any(|r| r.id == record.id) {
            return Err(ManifestError::DuplicateImageId(record.id));
        }
        self.images.push(record);
        Ok(())
    }

    pub fn add_annotation(
        &mut self,
        image_id: &str,
        instance: DefectInstance,
    ) -> Result<(), ManifestError> {
        let record = self
            .image(image_id)
            .ok_or_else(|| ManifestError::DanglingImageId(image_id.to_string()))?;
        instance.bbox.check_in_bounds(record.width, record.height).map_err(|e| {
            ManifestError::InvalidAnnotation { image_id: image_id.to_string(), message: e.to_string() }
        })?;
        if instance.class.step() != self.step {
            return Err(ManifestError::InvalidAnnotation {
                image_id: image_id.to_string(),
                message: format!(
                    "class {} belongs to step {}, manifest step is {}",
                    instance.class.name(),
                    instance.class.step(),
                    self.step
                ),
            });
        }
        self.annotations.push(Annotation { image_id: image_id.to_string(), instance });
        Ok(())
    }

    /// Per-class instance counts, keyed in registry order.
    pub fn class_counts(&self) -> BTreeMap<ClassName, usize> {
        let mut counts: BTreeMap<ClassName, usize> = BTreeMap::new();
        for name in self.step.class_registry() {
            counts.insert(*name, 0);
        }
        for ann in &self.annotations {
            *counts.entry(ann.instance.class.name()).or_insert(0) += 1;
        }
        counts
    }

    pub fn total_instances(&self) -> usize {
        self.annotations.len()
    }

    /// Annotations of one image, in insertion order.
    pub fn annotations_for(&self, image_id: &str) -> Vec<&Annotation> {
        self.annotations.iter().filter(|a| a.image_id == image_id).collect()
    }
}

// Serialization schema ------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct JsonManifest {
    step: String,
    images: Vec<JsonImage>,
    annotations: Vec<JsonAnnotation>,
    categories: Vec<JsonCategory>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct JsonImage {
    id: String,
    file_name: String,
    width: u32,
    height: u32,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct JsonAnnotation {
    image_id: String,
    category_id: u32,
    /// [x_min, y_min, width, height]
    bbox: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    segmentation: Option<JsonRle>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct JsonRle {
    /// [height, width]
    size: [u32; 2],
    counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct JsonCategory {
    id: u32,
    name: String,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    // serde_json reports 1-based line and column.
    let mut offset = 0;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    offset
}

fn warn_extras(context: &str, extra: &BTreeMap<String, serde_json::Value>) {
    for key in extra.keys() {
        log::warn!("ignoring unknown field {key:?} in {context}");
    }
}

/// Load and validate a manifest from COCO-style JSON.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| ManifestError::Io { path: path.display().to_string(), source })?;
    let raw: JsonManifest = serde_json::from_str(&text).map_err(|e| ManifestError::Parse {
        offset: byte_offset(&text, e.line(), e.column()),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    warn_extras("manifest", &raw.extra);

    let step: ProcessStep = raw.step.parse().map_err(ManifestError::BadStep)?;
    let registry = step.class_registry();
    for cat in &raw.categories {
        warn_extras("category", &cat.extra);
        let name = ClassName::parse(&cat.name)
            .ok_or_else(|| ManifestError::UnknownClass(cat.name.clone(), step))?;
        let expected = registry
            .iter()
            .position(|&c| c == name)
            .map(|p| p as u32 + 1)
            .ok_or_else(|| ManifestError::UnknownClass(cat.name.clone(), step))?;
        if cat.id != expected {
            return Err(ManifestError::CategoryIdMismatch {
                id: cat.id,
                name: cat.name.clone(),
                expected,
            });
        }
    }

    let mut manifest = DatasetManifest::new(step);
    for img in &raw.images {
        warn_extras(&format!("image {:?}", img.id), &img.extra);
        manifest.add_image(ImageRecord {
            id: img.id.clone(),
            file_name: img.file_name.clone(),
            width: img.width,
            height: img.height,
        })?;
    }

    for ann in &raw.annotations {
        warn_extras(&format!("annotation on {:?}", ann.image_id), &ann.extra);
        let class = DefectClass::from_category_id(step, ann.category_id)
            .ok_or(ManifestError::DanglingCategoryId(ann.category_id))?;
        let [x, y, w, h] = ann.bbox;
        let to_u32 = |v: f64| v.round().max(0.0) as u32;
        let bbox = BBox::new(to_u32(x), to_u32(y), to_u32(x + w), to_u32(y + h)).map_err(|e| {
            ManifestError::InvalidAnnotation {
                image_id: ann.image_id.clone(),
                message: e.to_string(),
            }
        })?;
        let mask = match &ann.segmentation {
            Some(rle) => Some(
                InstanceMask::from_counts(rle.size[1], rle.size[0], &rle.counts).map_err(|e| {
                    ManifestError::InvalidAnnotation {
                        image_id: ann.image_id.clone(),
                        message: e.to_string(),
                    }
                })?,
            ),
            None => None,
        };
        let instance = match ann.score {
            Some(score) => {
                DefectInstance::prediction(class, bbox, score, mask).map_err(|e| {
                    ManifestError::InvalidAnnotation {
                        image_id: ann.image_id.clone(),
                        message: e.to_string(),
                    }
                })?
            }
            None => DefectInstance::ground_truth(class, bbox, mask),
        };
        manifest.add_annotation(&ann.image_id, instance)?;
    }

    Ok(manifest)
}

/// Serialize a manifest to COCO-style JSON. `load_manifest(save_manifest(m))`
/// is the identity on logical content.
pub fn save_manifest(
    manifest: &DatasetManifest,
    path: impl AsRef<Path>,
) -> Result<(), ManifestError> {
    let path = path.as_ref();
    let raw = JsonManifest {
        step: manifest.step().as_str().to_string(),
        images: manifest
            .images()
            .iter()
            .map(|r| JsonImage {
                id: r.id.clone(),
                file_name: r.file_name.clone(),
                width: r.width,
                height: r.height,
                extra: BTreeMap::new(),
            })
            .collect(),
        annotations: manifest
            .annotations()
            .iter()
            .map(|a| {
                let b = &a.instance.bbox;
                JsonAnnotation {
                    image_id: a.image_id.clone(),
                    category_id: a.instance.class.category_id(),
                    bbox: [b.x_min as f64, b.y_min as f64, b.width() as f64, b.height() as f64],
                    segmentation: a.instance.mask.as_ref().map(|m| JsonRle {
                        size: [m.height(), m.width()],
                        counts: m.to_counts(),
                    }),
                    score: a.instance.confidence,
                    extra: BTreeMap::new(),
                }
            })
            .collect(),
        categories: manifest
            .step()
            .class_registry()
            .iter()
            .enumerate()
            .map(|(i, name)| JsonCategory {
                id: i as u32 + 1,
                name: name.as_str().to_string(),
                extra: BTreeMap::new(),
            })
            .collect(),
        extra: BTreeMap::new(),
    };
    let text = serde_json::to_string_pretty(&raw).expect("manifest serialization cannot fail");
    fs::write(path, text)
        .map_err(|source| ManifestError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Run;
    use crate::types::ClassName::*;

    fn sample_manifest() -> DatasetManifest {
        let mut m = DatasetManifest::new(ProcessStep::Adi);
        m.add_image(ImageRecord {
            id: "img_0".into(),
            file_name: "images/img_0.png".into(),
            width: 64,
            height: 64,
        })
        .unwrap();
        let class = DefectClass::new(ProcessStep::Adi, Gap).unwrap();
        let bbox = BBox::new(4, 8, 12, 20).unwrap();
        let mask = InstanceMask::from_runs(64, 64, vec![Run { start: 300, len: 10 }]).unwrap();
        m.add_annotation("img_0", DefectInstance::ground_truth(class, bbox, Some(mask))).unwrap();
        m
    }

    #[test]
    fn roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = sample_manifest();
        save_manifest(&m, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded, m);
    }

    #[test]
    fn empty_manifest_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = DatasetManifest::new(ProcessStep::Aei);
        save_manifest(&m, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert!(loaded.images().is_empty());
        assert!(loaded.annotations().is_empty());
    }

    #[test]
    fn dangling_image_id_rejected() {
        let mut m = sample_manifest();
        let class = DefectClass::new(ProcessStep::Adi, Bridge).unwrap();
        let bbox = BBox::new(0, 0, 4, 4).unwrap();
        let err = m.add_annotation("x", DefectInstance::ground_truth(class, bbox, None));
        assert!(matches!(err, Err(ManifestError::DanglingImageId(_))));
    }

    #[test]
    fn dangling_image_id_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let text = r#"{
            "step": "adi",
            "images": [],
            "annotations": [{"image_id": "x", "category_id": 1, "bbox": [0,0,4,4]}],
            "categories": [{"id": 1, "name": "gap"}]
        }"#;
        fs::write(&path, text).unwrap();
        assert!(matches!(load_manifest(&path), Err(ManifestError::DanglingImageId(_))));
    }

    #[test]
    fn unknown_class_name_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let text = r#"{
            "step": "adi",
            "images": [],
            "annotations": [],
            "categories": [{"id": 1, "name": "wormhole"}]
        }"#;
        fs::write(&path, text).unwrap();
        match load_manifest(&path) {
            Err(ManifestError::UnknownClass(name, _)) => assert_eq!(name, "wormhole"),
            other => panic!("expected UnknownClass, got {other:?}"),
        }
    }

    #[test]
    fn aei_class_name_rejected_in_adi_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let text = r#"{
            "step": "adi",
            "images": [],
            "annotations": [],
            "categories": [{"id": 1, "name": "thin_bridge"}]
        }"#;
        fs::write(&path, text).unwrap();
        assert!(matches!(load_manifest(&path), Err(ManifestError::UnknownClass(_, _))));
    }

    #[test]
    fn malformed_json_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(&path, "{\n  \"step\": adi\n}").unwrap();
        match load_manifest(&path) {
            Err(ManifestError::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn class_counts_sum_to_total() {
        let mut m = sample_manifest();
        let class = DefectClass::new(ProcessStep::Adi, Bridge).unwrap();
        m.add_annotation(
            "img_0",
            DefectInstance::ground_truth(class, BBox::new(30, 30, 40, 40).unwrap(), None),
        )
        .unwrap();
        let counts = m.class_counts();
        assert_eq!(counts[&Gap], 1);
        assert_eq!(counts[&Bridge], 1);
        assert_eq!(counts.values().sum::<usize>(), m.total_instances());
    }

    #[test]
    fn table_counts_reproduce_exactly() {
        // ADI training distribution: per-class totals are queryable and match.
        let mut m = DatasetManifest::new(ProcessStep::Adi);
        m.add_image(ImageRecord {
            id: "i".into(),
            file_name: "i.png".into(),
            width: 1024,
            height: 1024,
        })
        .unwrap();
        let spec = [
            (Gap, 1046usize),
            (ProbableGap, 315),
            (Bridge, 238),
            (Microbridge, 380),
            (LineCollapse, 550),
        ];
        for (name, n) in spec {
            let class = DefectClass::new(ProcessStep::Adi, name).unwrap();
            for _ in 0..n {
                m.add_annotation(
                    "i",
                    DefectInstance::ground_truth(class, BBox::new(0, 0, 2, 2).unwrap(), None),
                )
                .unwrap();
            }
        }
        let counts = m.class_counts();
        for (name, n) in spec {
            assert_eq!(counts[&name], n);
        }
        assert_eq!(m.total_instances(), 2529);
    }

    #[test]
    fn aei_counts_roundtrip() {
        // AEI validation distribution from the dataset tables.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = DatasetManifest::new(ProcessStep::Aei);
        m.add_image(ImageRecord {
            id: "i".into(),
            file_name: "i.png".into(),
            width: 480,
            height: 480,
        })
        .unwrap();
        let spec = [
            (MultiBridgeNH, 179usize),
            (MultiBridgeH, 90),
            (SingleBridge, 271),
            (ThinBridge, 270),
            (LineCollapse, 236),
        ];
        for (name, n) in spec {
            let class = DefectClass::new(ProcessStep::Aei, name).unwrap();
            for _ in 0..n {
                m.add_annotation(
                    "i",
                    DefectInstance::ground_truth(class, BBox::new(0, 0, 2, 2).unwrap(), None),
                )
                .unwrap();
            }
        }
        save_manifest(&m, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        let counts = loaded.class_counts();
        for (name, n) in spec {
            assert_eq!(counts[&name], n);
        }
        assert_eq!(loaded.total_instances(), 1046);
    }
}
