//! Desk-scale defect-analysis pipeline for line-space SEM imagery.
//!
//! The crate is organised as a chain of stages sharing a small set of domain
//! types: a deterministic synthetic image generator ([`synthgen`]), a
//! detection stage emitting class/bbox/confidence triples ([`detect`]), a
//! box-supervised segmentation stage that derives pixel masks from bounding
//! boxes alone ([`boxseg`]), and an evaluation engine ([`metrics`]) covering
//! COCO-style AP/mAP, manual precision/recall metrics and timing.
//!
//! Detection and segmentation are pluggable: the shipped backends are
//! classical reference implementations behind the same interfaces a learned
//! backend would satisfy (image in, gated sorted detections out; ROI in,
//! mask out).

pub mod boxseg;
pub mod config;
pub mod detect;
pub mod imageio;
pub mod manifest;
pub mod mask;
pub mod metrics;
pub(crate) mod morph;
pub mod pipeline;
pub mod report;
pub mod synthgen;
pub mod timing;
pub mod types;

pub use mask::InstanceMask;
pub use types::{BBox, ClassName, DefectClass, DefectInstance, ProcessStep, SemImage};
