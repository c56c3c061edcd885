//! Run-length encoded binary instance masks.
//!
//! Runs are stored over the column-major flattening of the raster
//! (linear index = x * height + y), matching the common COCO uncompressed
//! RLE convention used at the JSON boundary. The run list is canonical:
//! sorted, non-overlapping, and non-adjacent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask dimensions {0}x{1} do not match {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("run [{start}, {start}+{len}) exceeds raster size {size}")]
    RunOutOfRange { start: u64, len: u64, size: u64 },
    #[error("RLE counts sum {got} does not match raster size {expected}")]
    CountsSizeMismatch { got: u64, expected: u64 },
    #[error("raster has {got} pixels, expected {expected}")]
    RasterSizeMismatch { got: usize, expected: usize },
}

/// A single foreground run in column-major linear index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub start: u64,
    pub len: u64,
}

/// Binary raster aligned to its image, encoded as foreground runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    width: u32,
    height: u32,
    runs: Vec<Run>,
}

impl InstanceMask {
    /// Empty mask (all background).
    pub fn empty(width: u32, height: u32) -> Self {
        InstanceMask { width, height, runs: Vec::new() }
    }

    /// Build from arbitrary runs; normalizes into canonical form.
    pub fn from_runs(width: u32, height: u32, mut runs: Vec<Run>) -> Result<Self, MaskError> {
        let size = width as u64 * height as u64;
        runs.retain(|r| r.len > 0);
        for r in &runs {
            if r.start + r.len > size {
                return Err(MaskError::RunOutOfRange { start: r.start, len: r.len, size });
            }
        }
        runs.sort_by_key(|r| r.start);
        let mut canonical: Vec<Run> = Vec::with_capacity(runs.len());
        for r in runs {
            match canonical.last_mut() {
                Some(last) if r.start <= last.start + last.len => {
                    let end = (r.start + r.len).max(last.start + last.len);
                    last.len = end - last.start;
                }
                _ => canonical.push(r),
            }
        }
        Ok(InstanceMask { width, height, runs: canonical })
    }

    /// Encode from a row-major boolean raster.
    pub fn from_raster(width: u32, height: u32, raster: &[bool]) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if raster.len() != expected {
            return Err(MaskError::RasterSizeMismatch { got: raster.len(), expected });
        }
        let mut runs = Vec::new();
        let mut open: Option<Run> = None;
        for x in 0..width as usize {
            for y in 0..height as usize {
                let idx = (x * height as usize + y) as u64;
                if raster[y * width as usize + x] {
                    match open.as_mut() {
                        Some(r) if r.start + r.len == idx => r.len += 1,
                        _ => {
                            if let Some(r) = open.take() {
                                runs.push(r);
                            }
                            open = Some(Run { start: idx, len: 1 });
                        }
                    }
                }
            }
        }
        if let Some(r) = open {
            runs.push(r);
        }
        Ok(InstanceMask { width, height, runs })
    }

    /// Build from a set of (x, y) foreground pixels.
    pub fn from_pixels(
        width: u32,
        height: u32,
        pixels: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self, MaskError> {
        let runs = pixels
            .into_iter()
            .map(|(x, y)| Run { start: x as u64 * height as u64 + y as u64, len: 1 })
            .collect();
        Self::from_runs(width, height, runs)
    }

    /// Decode into a row-major boolean raster.
    pub fn to_raster(&self) -> Vec<bool> {
        let w = self.width as usize;
        let h = self.height as usize;
        let mut raster = vec![false; w * h];
        for r in &self.runs {
            for idx in r.start..r.start + r.len {
                let x = (idx / self.height as u64) as usize;
                let y = (idx % self.height as u64) as usize;
                raster[y * w + x] = true;
            }
        }
        raster
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    /// Foreground pixel count: the sum of run lengths.
    pub fn area(&self) -> u64 {
        self.runs.iter().map(|r| r.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        let idx = x as u64 * self.height as u64 + y as u64;
        self.runs
            .binary_search_by(|r| {
                if idx < r.start {
                    std::cmp::Ordering::Greater
                } else if idx >= r.start + r.len {
                    std::cmp::Ordering::Less
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .is_ok()
    }

    /// Iterate foreground pixels as (x, y), column-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let h = self.height as u64;
        self.runs.iter().flat_map(move |r| {
            (r.start..r.start + r.len).map(move |idx| ((idx / h) as u32, (idx % h) as u32))
        })
    }

    /// Tight bounding box of the foreground, or None when empty.
    pub fn tight_bbox(&self) -> Option<crate::types::BBox> {
        let mut x0 = u32::MAX;
        let mut y0 = u32::MAX;
        let mut x1 = 0u32;
        let mut y1 = 0u32;
        for (x, y) in self.pixels() {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
        if x0 == u32::MAX {
            return None;
        }
        Some(crate::types::BBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 })
    }

    fn check_dims(&self, other: &InstanceMask) -> Result<(), MaskError> {
        if self.width != other.width || self.height != other.height {
            return Err(MaskError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Intersection area, computed on the run lists.
    pub fn intersection_area(&self, other: &InstanceMask) -> Result<u64, MaskError> {
        self.check_dims(other)?;
        let mut total = 0u64;
        let mut i = 0;
        let mut j = 0;
        while i < self.runs.len() && j < other.runs.len() {
            let a = self.runs[i];
            let b = other.runs[j];
            let lo = a.start.max(b.start);
            let hi = (a.start + a.len).min(b.start + b.len);
            if lo < hi {
                total += hi - lo;
            }
            if a.start + a.len <= b.start + b.len {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(total)
    }

    /// Pixelwise AND.
    pub fn and(&self, other: &InstanceMask) -> Result<InstanceMask, MaskError> {
        self.check_dims(other)?;
        let mut runs = Vec::new();
        let mut i = 0;
        let mut j = 0;
        while i < self.runs.len() && j < other.runs.len() {
            let a = self.runs[i];
            let b = other.runs[j];
            let lo = a.start.max(b.start);
            let hi = (a.start + a.len).min(b.start + b.len);
            if lo < hi {
                runs.push(Run { start: lo, len: hi - lo });
            }
            if a.start + a.len <= b.start + b.len {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(InstanceMask { width: self.width, height: self.height, runs })
    }

    /// COCO-style uncompressed counts: alternating background/foreground
    /// lengths over the column-major flattening, starting with background.
    pub fn to_counts(&self) -> Vec<u64> {
        let size = self.width as u64 * self.height as u64;
        let mut counts = Vec::with_capacity(self.runs.len() * 2 + 1);
        let mut cursor = 0u64;
        for r in &self.runs {
            counts.push(r.start - cursor);
            counts.push(r.len);
            cursor = r.start + r.len;
        }
        if cursor < size || counts.is_empty() {
            counts.push(size - cursor);
        }
        counts
    }

    pub fn from_counts(width: u32, height: u32, counts: &[u64]) -> Result<Self, MaskError> {
        let size = width as u64 * height as u64;
        let total: u64 = counts.iter().sum();
        if total != size {
            return Err(MaskError::CountsSizeMismatch { got: total, expected: size });
        }
        let mut runs = Vec::new();
        let mut cursor = 0u64;
        for (k, &c) in counts.iter().enumerate() {
            if k % 2 == 1 && c > 0 {
                runs.push(Run { start: cursor, len: c });
            }
            cursor += c;
        }
        Self::from_runs(width, height, runs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_mask_roundtrip() {
        let m = InstanceMask::empty(8, 8);
        assert_eq!(m.area(), 0);
        let counts = m.to_counts();
        assert_eq!(counts, vec![64]);
        assert_eq!(InstanceMask::from_counts(8, 8, &counts).unwrap(), m);
    }

    #[test]
    fn from_runs_normalizes_adjacent_and_overlapping() {
        let m = InstanceMask::from_runs(
            4,
            4,
            vec![Run { start: 4, len: 2 }, Run { start: 0, len: 4 }, Run { start: 5, len: 3 }],
        )
        .unwrap();
        assert_eq!(m.runs(), &[Run { start: 0, len: 8 }]);
        assert_eq!(m.area(), 8);
    }

    #[test]
    fn out_of_range_run_rejected() {
        assert!(InstanceMask::from_runs(4, 4, vec![Run { start: 15, len: 2 }]).is_err());
    }

    #[test]
    fn area_equals_sum_of_run_lengths() {
        let m = InstanceMask::from_pixels(5, 5, vec![(0, 0), (0, 1), (3, 4), (4, 4)]).unwrap();
        assert_eq!(m.area(), m.runs().iter().map(|r| r.len).sum::<u64>());
        assert_eq!(m.area(), 4);
    }

    #[test]
    fn contains_matches_raster() {
        let m = InstanceMask::from_pixels(6, 4, vec![(2, 1), (2, 2), (5, 3)]).unwrap();
        assert!(m.contains(2, 1));
        assert!(m.contains(5, 3));
        assert!(!m.contains(2, 3));
        assert!(!m.contains(0, 0));
    }

    #[test]
    fn tight_bbox_covers_exactly() {
        let m = InstanceMask::from_pixels(10, 10, vec![(2, 3), (4, 7)]).unwrap();
        let b = m.tight_bbox().unwrap();
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (2, 3, 5, 8));
        assert!(InstanceMask::empty(4, 4).tight_bbox().is_none());
    }

    #[test]
    fn and_with_disjoint_is_empty() {
        let a = InstanceMask::from_pixels(4, 4, vec![(0, 0)]).unwrap();
        let b = InstanceMask::from_pixels(4, 4, vec![(3, 3)]).unwrap();
        assert!(a.and(&b).unwrap().is_empty());
        assert_eq!(a.intersection_area(&b).unwrap(), 0);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let a = InstanceMask::empty(4, 4);
        let b = InstanceMask::empty(4, 5);
        assert!(a.and(&b).is_err());
    }

    proptest! {
        #[test]
        fn raster_roundtrip_is_identity(bits in proptest::collection::vec(any::<bool>(), 48)) {
            let m = InstanceMask::from_raster(8, 6, &bits).unwrap();
            prop_assert_eq!(m.to_raster(), bits.clone());
            prop_assert_eq!(m.area() as usize, bits.iter().filter(|&&b| b).count());
        }

        #[test]
        fn counts_roundtrip_is_identity(bits in proptest::collection::vec(any::<bool>(), 48)) {
            let m = InstanceMask::from_raster(6, 8, &bits).unwrap();
            let counts = m.to_counts();
            let back = InstanceMask::from_counts(6, 8, &counts).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn intersection_matches_raster_and(
            a in proptest::collection::vec(any::<bool>(), 30),
            b in proptest::collection::vec(any::<bool>(), 30),
        ) {
            let ma = InstanceMask::from_raster(5, 6, &a).unwrap();
            let mb = InstanceMask::from_raster(5, 6, &b).unwrap();
            let expected: u64 = a.iter().zip(&b).filter(|(x, y)| **x && **y).count() as u64;
            prop_assert_eq!(ma.intersection_area(&mb).unwrap(), expected);
            prop_assert_eq!(ma.and(&mb).unwrap().area(), expected);
        }
    }
}
