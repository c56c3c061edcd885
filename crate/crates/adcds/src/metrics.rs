//! Evaluation engine: IoU, greedy matching, COCO-style 101-point AP and
//! mAP over IoU 0.5:0.05:0.95, plus manual precision/recall metrics
//! (P@R=0.5) for the no-truth-mask workflow.
//!
//! All interpolation thresholds are evaluated in integer arithmetic
//! (`100 * tp >= i * n_gt`) so results are exactly reproducible and match
//! the brute-force staircase oracle used in the test suite bit for bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::InstanceMask;
use crate::types::{BBox, ClassName, DefectClass, DefectInstance, ProcessStep};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(u32, u32, u32, u32),
    #[error("mask mode requires masks on every instance")]
    MissingMask,
    #[error("predictions must carry a confidence")]
    MissingConfidence,
}

/// Whether IoU is computed on bounding boxes or instance masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Box,
    Mask,
}

/// Exact box IoU: integer intersection/union areas, converted once.
pub fn iou_box(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

/// Mask IoU. Both masks empty counts as 1.0; exactly one empty as 0.0.
pub fn iou_mask(a: &InstanceMask, b: &InstanceMask) -> Result<f64, MetricError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricError::ShapeMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let inter = a.intersection_area(b).expect("dimensions checked");
    let union = a.area() + b.area() - inter;
    Ok(inter as f64 / union as f64)
}

fn instance_iou(a: &DefectInstance, b: &DefectInstance, mode: MatchMode) -> Result<f64, MetricError> {
    match mode {
        MatchMode::Box => Ok(iou_box(&a.bbox, &b.bbox)),
        MatchMode::Mask => {
            let (ma, mb) = (
                a.mask.as_ref().ok_or(MetricError::MissingMask)?,
                b.mask.as_ref().ok_or(MetricError::MissingMask)?,
            );
            iou_mask(ma, mb)
        }
    }
}

/// Per-detection outcome, in prediction input order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchFlag {
    /// Matched the ground truth at this input index.
    Tp { gt: usize },
    Fp,
}

#[derive(Debug, Clone)]
pub struct MatchResult {
    /// One flag per prediction, in input order.
    pub flags: Vec<MatchFlag>,
    /// Input indices of unmatched ground truths (the FN set).
    pub unmatched_gts: Vec<usize>,
    pub iou_threshold: f64,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.flags.iter().filter(|f| matches!(f, MatchFlag::Tp { .. })).count()
    }

    pub fn fp(&self) -> usize {
        self.flags.len() - self.tp()
    }
}

/// Greedy matching within one image: predictions in descending confidence
/// (ties by input order) each claim the unmatched same-class ground truth
/// with the highest IoU >= `iou_thresh`.
pub fn match_detections(
    preds: &[DefectInstance],
    gts: &[DefectInstance],
    iou_thresh: f64,
    mode: MatchMode,
) -> Result<MatchResult, MetricError> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    for p in preds {
        if p.confidence.is_none() {
            return Err(MetricError::MissingConfidence);
        }
    }
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .unwrap()
            .partial_cmp(&preds[a].confidence.unwrap())
            .expect("finite confidences")
            .then(a.cmp(&b))
    });
    let mut taken = vec![false; gts.len()];
    let mut flags = vec![MatchFlag::Fp; preds.len()];
    for &pi in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if taken[gi] || gt.class != preds[pi].class {
                continue;
            }
            let iou = instance_iou(&preds[pi], gt, mode)?;
            if iou >= iou_thresh && best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            taken[gi] = true;
            flags[pi] = MatchFlag::Tp { gt: gi };
        }
    }
    let unmatched_gts = (0..gts.len()).filter(|&i| !taken[i]).collect();
    Ok(MatchResult { flags, unmatched_gts, iou_threshold: iou_thresh })
}

/// Predictions and ground truths of one image.
#[derive(Debug, Clone, Default)]
pub struct ImageInstances {
    pub image_id: String,
    pub preds: Vec<DefectInstance>,
    pub gts: Vec<DefectInstance>,
}

/// Class TP flags in global rank order (confidence desc, image id asc,
/// input index asc), plus the ground-truth count. The deterministic merge
/// key makes results independent of evaluation order.
fn ranked_tp_flags(
    data: &[ImageInstances],
    class: DefectClass,
    iou_thresh: f64,
    mode: MatchMode,
    confidence_floor: f64,
) -> Result<(Vec<bool>, u64), MetricError> {
    let n_gt: u64 = data
        .iter()
        .map(|img| img.gts.iter().filter(|g| g.class == class).count() as u64)
        .sum();
    // (neg confidence, image id, input index) ascending == rank order.
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    for (ii, img) in data.iter().enumerate() {
        for (pi, p) in img.preds.iter().enumerate() {
            if p.class != class {
                continue;
            }
            let conf = p.confidence.ok_or(MetricError::MissingConfidence)?;
            if conf >= confidence_floor {
                entries.push((ii, pi, conf));
            }
        }
    }
    entries.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .expect("finite confidences")
            .then_with(|| data[a.0].image_id.cmp(&data[b.0].image_id))
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let mut taken: Vec<Vec<bool>> = data.iter().map(|img| vec![false; img.gts.len()]).collect();
    let mut flags = Vec::with_capacity(entries.len());
    for &(ii, pi, _) in &entries {
        let img = &data[ii];
        let pred = &img.preds[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in img.gts.iter().enumerate() {
            if taken[ii][gi] || gt.class != class {
                continue;
            }
            let iou = instance_iou(pred, gt, mode)?;
            if iou >= iou_thresh && best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, _)) => {
                taken[ii][gi] = true;
                flags.push(true);
            }
            None => flags.push(false),
        }
    }
    Ok((flags, n_gt))
}

/// 101-point interpolated AP over ranked TP/FP flags. `p(r)` is the maximum
/// precision among rank prefixes whose recall reaches `r`; the recall test
/// `100 * tp >= i * n_gt` is exact integer arithmetic.
fn ap_101(flags: &[bool], n_gt: u64) -> f64 {
    debug_assert!(n_gt > 0);
    let mut points: Vec<(u64, f64)> = Vec::with_capacity(flags.len());
    let mut tp = 0u64;
    for (k, &is_tp) in flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        points.push((tp, tp as f64 / (k as u64 + 1) as f64));
    }
    // Suffix max of precision: interpolated precision at each prefix.
    let mut suffix = points.clone();
    for k in (0..suffix.len().saturating_sub(1)).rev() {
        if suffix[k + 1].1 > suffix[k].1 {
            suffix[k].1 = suffix[k + 1].1;
        }
    }
    let mut sum = 0.0;
    for i in 0..=100u64 {
        // First prefix reaching recall i/100, if any.
        let p = suffix
            .iter()
            .find(|&&(tp_cum, _)| 100 * tp_cum >= i * n_gt)
            .map(|&(_, prec)| prec)
            .unwrap_or(0.0);
        sum += p;
    }
    sum / 101.0
}

/// COCO-style AP for one class at one IoU threshold. `None` when the class
/// has zero ground truth (AP undefined; excluded from mAP and reported).
pub fn average_precision(
    data: &[ImageInstances],
    class: DefectClass,
    iou_thresh: f64,
    mode: MatchMode,
) -> Result<Option<f64>, MetricError> {
    let (flags, n_gt) = ranked_tp_flags(data, class, iou_thresh, mode, 0.0)?;
    if n_gt == 0 {
        return Ok(None);
    }
    Ok(Some(ap_101(&flags, n_gt)))
}

/// The standard IoU threshold sweep 0.50:0.05:0.95.
pub fn iou_range() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Per-class AP at IoU 0.5 and averaged over a threshold set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: ClassName,
    pub ap50: f64,
    pub ap_range: f64,
}

/// AP table fragment: per-class APs plus their means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApTable {
    pub per_class: Vec<ClassAp>,
    pub map50: Option<f64>,
    pub map_range: Option<f64>,
    /// Classes with zero ground truth, excluded from the means.
    pub excluded: Vec<ClassName>,
}

/// Evaluate every class of `step` over `iou_set`, aggregating mAP as the
/// arithmetic mean of the included per-class APs.
pub fn map_over_range(
    data: &[ImageInstances],
    step: ProcessStep,
    iou_set: &[f64],
    mode: MatchMode,
) -> Result<ApTable, MetricError> {
    let mut per_class = Vec::new();
    let mut excluded = Vec::new();
    for &name in step.class_registry() {
        let class = DefectClass::new(step, name).expect("registry class");
        let ap50 = average_precision(data, class, 0.5, mode)?;
        let Some(ap50) = ap50 else {
            excluded.push(name);
            continue;
        };
        let mut aps = Vec::with_capacity(iou_set.len());
        for &t in iou_set {
            aps.push(average_precision(data, class, t, mode)?.expect("n_gt > 0 established"));
        }
        per_class.push(ClassAp { class: name, ap50, ap_range: aggregate_map(&aps) });
    }
    let map50 = if per_class.is_empty() {
        None
    } else {
        Some(aggregate_map(&per_class.iter().map(|c| c.ap50).collect::<Vec<_>>()))
    };
    let map_range = if per_class.is_empty() {
        None
    } else {
        Some(aggregate_map(&per_class.iter().map(|c| c.ap_range).collect::<Vec<_>>()))
    };
    Ok(ApTable { per_class, map50, map_range, excluded })
}

/// mAP aggregation step: plain arithmetic mean.
pub fn aggregate_map(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.iter().sum::<f64>() / values.len() as f64
}

/// Round a percentage half-up to 2 decimals, the table convention.
pub fn round_percent(value: f64) -> f64 {
    (value * 100.0).round() / 100.0
}

/// Fraction in [0,1] to a rounded percentage.
pub fn percent(fraction: f64) -> f64 {
    round_percent(fraction * 100.0)
}

/// Manual TP/FP/FN counts for one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PRCounts {
    pub class: ClassName,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_count: u64,
}

/// Precision and recall from counts; `None` on a zero denominator.
pub fn manual_pr(counts: &PRCounts) -> (Option<f64>, Option<f64>) {
    let precision = if counts.tp + counts.fp > 0 {
        Some(counts.tp as f64 / (counts.tp + counts.fp) as f64)
    } else {
        None
    };
    let recall = if counts.tp + counts.fn_count > 0 {
        Some(counts.tp as f64 / (counts.tp + counts.fn_count) as f64)
    } else {
        None
    };
    (precision, recall)
}

/// Manual counts for one class: detections gated at `confidence_floor`,
/// matched greedily at `iou_thresh`.
pub fn manual_counts(
    data: &[ImageInstances],
    class: DefectClass,
    iou_thresh: f64,
    mode: MatchMode,
    confidence_floor: f64,
) -> Result<PRCounts, MetricError> {
    let (flags, n_gt) = ranked_tp_flags(data, class, iou_thresh, mode, confidence_floor)?;
    let tp = flags.iter().filter(|&&f| f).count() as u64;
    let fp = flags.len() as u64 - tp;
    Ok(PRCounts { class: class.name(), tp, fp, fn_count: n_gt - tp })
}

/// Manual AP surrogate: interpolated precision at recall 0.5 (the maximum
/// precision among rank prefixes with recall >= 0.5), over detections gated
/// at `confidence_floor`. 0.0 when recall 0.5 is never reached; `None` when
/// the class has zero ground truth.
pub fn manual_ap(
    data: &[ImageInstances],
    class: DefectClass,
    iou_thresh: f64,
    mode: MatchMode,
    confidence_floor: f64,
) -> Result<Option<f64>, MetricError> {
    let (flags, n_gt) = ranked_tp_flags(data, class, iou_thresh, mode, confidence_floor)?;
    if n_gt == 0 {
        return Ok(None);
    }
    let need = n_gt.div_ceil(2);
    let mut tp = 0u64;
    let mut best = 0.0f64;
    for (k, &is_tp) in flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        if tp >= need {
            let prec = tp as f64 / (k as u64 + 1) as f64;
            if prec > best {
                best = prec;
            }
        }
    }
    Ok(Some(best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn class(step: ProcessStep, name: ClassName) -> DefectClass {
        DefectClass::new(step, name).unwrap()
    }

    fn gt(name: ClassName, b: (u32, u32, u32, u32)) -> DefectInstance {
        DefectInstance::ground_truth(
            class(ProcessStep::Adi, name),
            BBox::new(b.0, b.1, b.2, b.3).unwrap(),
            None,
        )
    }

    fn pred(name: ClassName, b: (u32, u32, u32, u32), conf: f64) -> DefectInstance {
        DefectInstance::prediction(
            class(ProcessStep::Adi, name),
            BBox::new(b.0, b.1, b.2, b.3).unwrap(),
            conf,
            None,
        )
        .unwrap()
    }

    #[test]
    fn iou_box_examples() {
        let a = BBox::new(0, 0, 10, 10).unwrap();
        assert_eq!(iou_box(&a, &a), 1.0);
        let b = BBox::new(20, 20, 30, 30).unwrap();
        assert_eq!(iou_box(&a, &b), 0.0);
        let c = BBox::new(5, 0, 15, 10).unwrap();
        let v = iou_box(&a, &c);
        assert!((v - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(v, iou_box(&c, &a));
    }

    #[test]
    fn iou_mask_examples_and_conventions() {
        let block = |x0: u32| {
            InstanceMask::from_pixels(
                40,
                10,
                (0..10u32).flat_map(move |y| (x0..x0 + 10).map(move |x| (x, y))),
            )
            .unwrap()
        };
        let a = block(0);
        assert_eq!(iou_mask(&a, &a).unwrap(), 1.0);
        let b = block(20);
        assert_eq!(iou_mask(&a, &b).unwrap(), 0.0);
        let c = block(4); // overlap 6 columns x 10 rows = 60 px
        let v = iou_mask(&a, &c).unwrap();
        assert!((v - 60.0 / 140.0).abs() < 1e-12);
        let empty = InstanceMask::empty(40, 10);
        assert_eq!(iou_mask(&empty, &empty).unwrap(), 1.0);
        assert_eq!(iou_mask(&a, &empty).unwrap(), 0.0);
        let other = InstanceMask::empty(10, 10);
        assert!(matches!(iou_mask(&a, &other), Err(MetricError::ShapeMismatch(..))));
    }

    #[test]
    fn match_empty_preds_yields_all_fns() {
        let gts = vec![gt(ClassName::Gap, (0, 0, 5, 5)), gt(ClassName::Bridge, (10, 0, 15, 5))];
        let r = match_detections(&[], &gts, 0.5, MatchMode::Box).unwrap();
        assert!(r.flags.is_empty());
        assert_eq!(r.unmatched_gts, vec![0, 1]);
    }

    #[test]
    fn match_exact_pred_is_tp() {
        let gts = vec![gt(ClassName::Gap, (0, 0, 5, 5))];
        let preds = vec![pred(ClassName::Gap, (0, 0, 5, 5), 0.9)];
        let r = match_detections(&preds, &gts, 0.5, MatchMode::Box).unwrap();
        assert_eq!(r.flags, vec![MatchFlag::Tp { gt: 0 }]);
        assert!(r.unmatched_gts.is_empty());
    }

    #[test]
    fn higher_confidence_wins_the_single_gt() {
        // conf 0.9 with IoU 0.6 beats conf 0.8 with IoU 0.9.
        let gts = vec![gt(ClassName::Gap, (0, 0, 10, 10))];
        let preds = vec![
            pred(ClassName::Gap, (0, 0, 10, 6), 0.9),  // IoU 0.6
            pred(ClassName::Gap, (0, 0, 10, 9), 0.8),  // IoU 0.9
        ];
        let r = match_detections(&preds, &gts, 0.5, MatchMode::Box).unwrap();
        assert_eq!(r.flags, vec![MatchFlag::Tp { gt: 0 }, MatchFlag::Fp]);
    }

    #[test]
    fn class_mismatch_never_matches() {
        let gts = vec![gt(ClassName::Gap, (0, 0, 5, 5))];
        let preds = vec![pred(ClassName::Bridge, (0, 0, 5, 5), 0.9)];
        let r = match_detections(&preds, &gts, 0.5, MatchMode::Box).unwrap();
        assert_eq!(r.flags, vec![MatchFlag::Fp]);
        assert_eq!(r.unmatched_gts, vec![0]);
    }

    fn single_image(preds: Vec<DefectInstance>, gts: Vec<DefectInstance>) -> Vec<ImageInstances> {
        vec![ImageInstances { image_id: "img".into(), preds, gts }]
    }

    #[test]
    fn ap_perfect_detector_is_one() {
        let gts = vec![gt(ClassName::Gap, (0, 0, 5, 5)), gt(ClassName::Gap, (10, 0, 15, 5))];
        let preds = vec![
            pred(ClassName::Gap, (0, 0, 5, 5), 1.0),
            pred(ClassName::Gap, (10, 0, 15, 5), 1.0),
        ];
        let data = single_image(preds, gts);
        let ap = average_precision(&data, class(ProcessStep::Adi, ClassName::Gap), 0.5, MatchMode::Box)
            .unwrap()
            .unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn ap_tp_then_fp_is_one() {
        let gts = vec![gt(ClassName::Gap, (0, 0, 5, 5))];
        let preds = vec![
            pred(ClassName::Gap, (0, 0, 5, 5), 0.9),
            pred(ClassName::Gap, (20, 20, 25, 25), 0.3),
        ];
        let data = single_image(preds, gts);
        let ap = average_precision(&data, class(ProcessStep::Adi, ClassName::Gap), 0.5, MatchMode::Box)
            .unwrap()
            .unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn ap_fp_then_tp_is_half() {
        let gts = vec![gt(ClassName::Gap, (0, 0, 5, 5))];
        let preds = vec![
            pred(ClassName::Gap, (20, 20, 25, 25), 0.9),
            pred(ClassName::Gap, (0, 0, 5, 5), 0.3),
        ];
        let data = single_image(preds, gts);
        let ap = average_precision(&data, class(ProcessStep::Adi, ClassName::Gap), 0.5, MatchMode::Box)
            .unwrap()
            .unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn zero_ground_truth_is_undefined() {
        let preds = vec![pred(ClassName::Gap, (0, 0, 5, 5), 0.9)];
        let data = single_image(preds, vec![]);
        assert!(average_precision(&data, class(ProcessStep::Adi, ClassName::Gap), 0.5, MatchMode::Box)
            .unwrap()
            .is_none());
    }

    #[test]
    fn map_aggregation_reproduces_published_tables() {
        let t7 = [99.53, 96.40, 84.25, 97.21, 100.00];
        assert_eq!(round_percent(aggregate_map(&t7)), 95.48);
        let t3 = [76.63, 86.92, 68.84, 28.64, 99.93];
        assert_eq!(round_percent(aggregate_map(&t3)), 72.19);
        let t5 = [72.58, 100.00, 91.30, 30.43, 100.00];
        assert_eq!(round_percent(aggregate_map(&t5)), 78.86);
    }

    #[test]
    fn manual_pr_published_counts() {
        let bridge = PRCounts { class: ClassName::Bridge, tp: 19, fp: 0, fn_count: 0 };
        let (p, r) = manual_pr(&bridge);
        assert_eq!(p.unwrap(), 1.0);
        assert_eq!(r.unwrap(), 1.0);
        let collapse = PRCounts { class: ClassName::LineCollapse, tp: 66, fp: 0, fn_count: 0 };
        let (p, r) = manual_pr(&collapse);
        assert_eq!((p.unwrap(), r.unwrap()), (1.0, 1.0));
        let gap = PRCounts { class: ClassName::Gap, tp: 147, fp: 9, fn_count: 1 };
        let (_, r) = manual_pr(&gap);
        assert!((r.unwrap() - 147.0 / 148.0).abs() < 1e-12);
        let nothing = PRCounts { class: ClassName::Gap, tp: 0, fp: 0, fn_count: 0 };
        assert_eq!(manual_pr(&nothing), (None, None));
    }

    #[test]
    fn manual_ap_perfect_and_low_recall() {
        let gts = vec![gt(ClassName::Gap, (0, 0, 5, 5)), gt(ClassName::Gap, (10, 0, 15, 5))];
        let preds = vec![
            pred(ClassName::Gap, (0, 0, 5, 5), 0.95),
            pred(ClassName::Gap, (10, 0, 15, 5), 0.9),
        ];
        let data = single_image(preds, gts);
        let c = class(ProcessStep::Adi, ClassName::Gap);
        assert_eq!(manual_ap(&data, c, 0.5, MatchMode::Box, 0.7).unwrap().unwrap(), 1.0);

        // Five gts, at most two detected: max recall 0.4 -> manual AP 0.0.
        let gts: Vec<DefectInstance> =
            (0..5u32).map(|i| gt(ClassName::Gap, (i * 10, 0, i * 10 + 5, 5))).collect();
        let preds = vec![
            pred(ClassName::Gap, (0, 0, 5, 5), 0.9),
            pred(ClassName::Gap, (10, 0, 15, 5), 0.8),
        ];
        let data = single_image(preds, gts);
        assert_eq!(manual_ap(&data, c, 0.5, MatchMode::Box, 0.7).unwrap().unwrap(), 0.0);
    }

    #[test]
    fn gating_applies_to_manual_metrics() {
        let gts = vec![gt(ClassName::Gap, (0, 0, 5, 5))];
        let preds = vec![pred(ClassName::Gap, (0, 0, 5, 5), 0.6)];
        let data = single_image(preds, gts);
        let c = class(ProcessStep::Adi, ClassName::Gap);
        let counts = manual_counts(&data, c, 0.5, MatchMode::Box, 0.7).unwrap();
        assert_eq!((counts.tp, counts.fp, counts.fn_count), (0, 0, 1));
        // Ungated AP still sees the detection.
        let ap = average_precision(&data, c, 0.5, MatchMode::Box).unwrap().unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn single_class_map_equals_class_ap() {
        let gts = vec![gt(ClassName::Gap, (0, 0, 5, 5))];
        let preds = vec![pred(ClassName::Gap, (0, 0, 5, 5), 0.9)];
        let data = single_image(preds, gts);
        let table = map_over_range(&data, ProcessStep::Adi, &iou_range(), MatchMode::Box).unwrap();
        assert_eq!(table.per_class.len(), 1);
        assert_eq!(table.map50.unwrap(), table.per_class[0].ap50);
        assert_eq!(table.excluded.len(), 4);
    }

    // Brute-force oracle: enumerate the PR staircase directly and sample the
    // 101 recall points with the same integer recall test.
    fn oracle_ap(flags: &[bool], n_gt: u64) -> f64 {
        let mut points = Vec::new();
        let mut tp = 0u64;
        for (k, &f) in flags.iter().enumerate() {
            if f {
                tp += 1;
            }
            points.push((tp, tp as f64 / (k + 1) as f64));
        }
        let mut sum = 0.0;
        for i in 0..=100u64 {
            let mut best = 0.0f64;
            for &(tp_cum, prec) in &points {
                if 100 * tp_cum >= i * n_gt && prec > best {
                    best = prec;
                }
            }
            sum += best;
        }
        sum / 101.0
    }

    fn random_eval_strategy() -> impl Strategy<Value = (Vec<ImageInstances>, DefectClass)> {
        let b = (0u32..20, 0u32..20, 1u32..10, 1u32..10)
            .prop_map(|(x, y, w, h)| (x, y, x + w, y + h));
        let p = (b.clone(), 0.0f64..=1.0).prop_map(|(b, c)| pred(ClassName::Gap, b, c));
        let g = b.prop_map(|b| gt(ClassName::Gap, b));
        (proptest::collection::vec(p, 0..=10), proptest::collection::vec(g, 0..=5)).prop_map(
            |(preds, gts)| {
                (single_image(preds, gts), class(ProcessStep::Adi, ClassName::Gap))
            },
        )
    }

    proptest! {
        #[test]
        fn ap_matches_staircase_oracle((data, c) in random_eval_strategy()) {
            let (flags, n_gt) = ranked_tp_flags(&data, c, 0.5, MatchMode::Box, 0.0).unwrap();
            if n_gt > 0 {
                let ap = average_precision(&data, c, 0.5, MatchMode::Box).unwrap().unwrap();
                prop_assert_eq!(ap, oracle_ap(&flags, n_gt));
                prop_assert!((0.0..=1.0).contains(&ap));
            }
        }

        #[test]
        fn matching_conserves_counts((data, c) in random_eval_strategy()) {
            for t in iou_range() {
                let counts = manual_counts(&data, c, t, MatchMode::Box, 0.0).unwrap();
                let n_gt = data[0].gts.len() as u64;
                let n_pred = data[0].preds.len() as u64;
                prop_assert_eq!(counts.tp + counts.fn_count, n_gt);
                prop_assert_eq!(counts.tp + counts.fp, n_pred);
            }
        }

        #[test]
        fn ap_monotone_in_iou_threshold((data, c) in random_eval_strategy()) {
            let mut prev = f64::INFINITY;
            for t in iou_range() {
                if let Some(ap) = average_precision(&data, c, t, MatchMode::Box).unwrap() {
                    prop_assert!(ap <= prev + 1e-12);
                    prev = ap;
                }
            }
        }
    }
}
