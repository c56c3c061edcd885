//! Wall-clock timing of a per-image pipeline stage.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::types::SemImage;

/// Per-image wall-clock statistics, in milliseconds.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TimingStats {
    pub samples: usize,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Time `stage` once per image. One warmup pass over the first image is
/// excluded from the statistics; only the stage call itself is measured,
/// not I/O or serialization. Returns None on an empty image list.
pub fn time_stage<F: FnMut(&SemImage)>(mut stage: F, images: &[SemImage]) -> Option<TimingStats> {
    let first = images.first()?;
    stage(first); // warmup, excluded
    let mut samples = Vec::with_capacity(images.len());
    for image in images {
        let t0 = Instant::now();
        stage(image);
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = samples.iter().sum::<f64>() / samples.len() as f64;
    let min_ms = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_ms = samples.iter().cloned().fold(0.0f64, f64::max);
    Some(TimingStats { samples: samples.len(), mean_ms, min_ms, max_ms })
}
