//! Evaluation reports: the structured result of an evaluation run, its
//! markdown rendering, and side-by-side comparison of multiple runs.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    self, ApTable, ImageInstances, MatchMode, MetricError, PRCounts,
};
use crate::timing::TimingStats;
use crate::types::{ClassName, DefectClass, ProcessStep};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("no reports given")]
    Empty,
    #[error("cannot compare runs from different process steps: {0} vs {1}")]
    MixedSteps(ProcessStep, ProcessStep),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// One AP table plus the IoU mode it was computed in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApSection {
    pub mode: MatchMode,
    pub table: ApTable,
}

/// Manual metrics for one class: gated counts plus the P@R=0.5 surrogate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManualClass {
    pub counts: PRCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub manual_ap: Option<f64>,
}

/// Manual metric block, computed over gated detections. Box IoU is used for
/// truth-mask-free ground truth; the header note records that choice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManualSection {
    pub mode: MatchMode,
    pub iou_threshold: f64,
    pub confidence_floor: f64,
    pub per_class: Vec<ManualClass>,
    pub manual_map: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: ProcessStep,
    /// Box-IoU AP over ungated ranked detections.
    pub detection: ApSection,
    /// Mask-IoU AP; present when every ground truth carries a mask.
    pub segmentation: Option<ApSection>,
    /// Manual metrics in the no-truth-mask mode.
    pub manual: Option<ManualSection>,
    pub timing: Option<TimingSection>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TimingSection {
    pub detect: Option<TimingStats>,
    pub segment: Option<TimingStats>,
}

/// Evaluation options; `manual_metrics` additionally emits the gated
/// TP/FP/FN block in the no-truth-mask mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    pub iou_set: Vec<f64>,
    pub confidence_floor: f64,
    pub manual_metrics: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { iou_set: metrics::iou_range(), confidence_floor: 0.7, manual_metrics: true }
    }
}

/// Build the full report. Detection AP is box-based over ungated
/// detections; segmentation AP is mask-based and computed only when every
/// ground truth has a mask; manual metrics gate at `confidence_floor` and
/// match on box IoU 0.5.
pub fn evaluate(
    data: &[ImageInstances],
    step: ProcessStep,
    opts: &EvalOptions,
) -> Result<EvalReport, ReportError> {
    let detection = ApSection {
        mode: MatchMode::Box,
        table: metrics::map_over_range(data, step, &opts.iou_set, MatchMode::Box)?,
    };
    let all_masks = data
        .iter()
        .flat_map(|img| img.gts.iter().chain(img.preds.iter()))
        .all(|inst| inst.mask.is_some());
    let has_instances = data.iter().any(|img| !img.gts.is_empty() || !img.preds.is_empty());
    let segmentation = if all_masks && has_instances {
        Some(ApSection {
            mode: MatchMode::Mask,
            table: metrics::map_over_range(data, step, &opts.iou_set, MatchMode::Mask)?,
        })
    } else {
        None
    };
    let mut notes = Vec::new();
    let manual = if opts.manual_metrics {
        let section = manual_section(data, step, opts.confidence_floor)?;
        let flagged = inconsistent_manual_aps(&section);
        if !flagged.is_empty() {
            let list: Vec<&str> = flagged.iter().map(|c| c.as_str()).collect();
            notes.push(format!(
                "manual AP (interpolated precision at recall 0.5) differs from tp/(tp+fp) for: {}",
                list.join(", ")
            ));
        }
        Some(section)
    } else {
        None
    };
    notes.push("manual metrics match on box IoU >= 0.5 over detections gated at the confidence floor".into());
    Ok(EvalReport { step, detection, segmentation, manual, timing: None, notes })
}

fn manual_section(
    data: &[ImageInstances],
    step: ProcessStep,
    confidence_floor: f64,
) -> Result<ManualSection, ReportError> {
    let mode = MatchMode::Box;
    let iou_threshold = 0.5;
    let mut per_class = Vec::new();
    let mut aps = Vec::new();
    for &name in step.class_registry() {
        let class = DefectClass::new(step, name).expect("registry class");
        let counts = metrics::manual_counts(data, class, iou_threshold, mode, confidence_floor)?;
        let (precision, recall) = metrics::manual_pr(&counts);
        let manual_ap = metrics::manual_ap(data, class, iou_threshold, mode, confidence_floor)?;
        if let Some(ap) = manual_ap {
            aps.push(ap);
        }
        per_class.push(ManualClass { counts, precision, recall, manual_ap });
    }
    let manual_map = if aps.is_empty() { None } else { Some(metrics::aggregate_map(&aps)) };
    Ok(ManualSection { mode, iou_threshold, confidence_floor, per_class, manual_map })
}

/// Classes whose manual AP does not equal the plain precision quotient
/// after 2-decimal percentage rounding. Such rows are flagged in the
/// report rather than silently reconciled.
pub fn inconsistent_manual_aps(section: &ManualSection) -> Vec<ClassName> {
    section
        .per_class
        .iter()
        .filter_map(|c| {
            let ap = c.manual_ap?;
            let precision = c.precision?;
            if metrics::percent(ap) != metrics::percent(precision) {
                Some(c.counts.class)
            } else {
                None
            }
        })
        .collect()
}

fn fmt_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}", metrics::percent(v)),
        None => "n/a".into(),
    }
}

/// Render the report as markdown tables: per-class AP columns with a mAP
/// row, a manual TP/FP/FN block, and timing.
pub fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Evaluation report ({})\n", report.step);
    render_ap_section(&mut out, "Detection (box IoU)", &report.detection);
    if let Some(seg) = &report.segmentation {
        render_ap_section(&mut out, "Segmentation (mask IoU)", seg);
    }
    if let Some(manual) = &report.manual {
        render_manual_section(&mut out, manual);
    }
    if let Some(timing) = &report.timing {
        let _ = writeln!(out, "## Inference speed\n");
        let _ = writeln!(out, "| Stage | Mean (ms) | Min (ms) | Max (ms) |");
        let _ = writeln!(out, "|---|---|---|---|");
        for (label, stats) in [("detect", &timing.detect), ("segment", &timing.segment)] {
            if let Some(s) = stats {
                let _ = writeln!(
                    out,
                    "| {label} | {:.2} | {:.2} | {:.2} |",
                    s.mean_ms, s.min_ms, s.max_ms
                );
            }
        }
        let _ = writeln!(out);
    }
    if !report.notes.is_empty() {
        let _ = writeln!(out, "## Notes\n");
        for note in &report.notes {
            let _ = writeln!(out, "- {note}");
        }
    }
    out
}

fn render_ap_section(out: &mut String, title: &str, section: &ApSection) {
    let _ = writeln!(out, "## {title}\n");
    let _ = writeln!(out, "| Class | AP @ IoU 0.5 (%) | AP @ IoU 0.5:0.95 (%) |");
    let _ = writeln!(out, "|---|---|---|");
    for c in &section.table.per_class {
        let _ = writeln!(
            out,
            "| {} | {} | {} |",
            c.class.as_str(),
            fmt_pct(Some(c.ap50)),
            fmt_pct(Some(c.ap_range))
        );
    }
    let _ = writeln!(
        out,
        "| mAP | {} | {} |",
        fmt_pct(section.table.map50),
        fmt_pct(section.table.map_range)
    );
    for excluded in &section.table.excluded {
        let _ = writeln!(out, "| {} | n/a (no ground truth) | n/a |", excluded.as_str());
    }
    let _ = writeln!(out);
}

fn render_manual_section(out: &mut String, manual: &ManualSection) {
    let _ = writeln!(
        out,
        "## Manual metrics (gated at confidence {:.2}, IoU {:.2})\n",
        manual.confidence_floor, manual.iou_threshold
    );
    let mut header = String::from("| Metric |");
    let mut rule = String::from("|---|");
    for c in &manual.per_class {
        let _ = write!(header, " {} |", c.counts.class.as_str());
        rule.push_str("---|");
    }
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{rule}");
    let row = |label: &str, cells: Vec<String>| {
        let mut line = format!("| {label} |");
        for cell in cells {
            let _ = write!(line, " {cell} |");
        }
        line
    };
    let _ = writeln!(
        out,
        "{}",
        row("Manual AP (%)", manual.per_class.iter().map(|c| fmt_pct(c.manual_ap)).collect())
    );
    let _ = writeln!(
        out,
        "{}",
        row("True positives", manual.per_class.iter().map(|c| c.counts.tp.to_string()).collect())
    );
    let _ = writeln!(
        out,
        "{}",
        row("False positives", manual.per_class.iter().map(|c| c.counts.fp.to_string()).collect())
    );
    let _ = writeln!(
        out,
        "{}",
        row(
            "False negatives",
            manual.per_class.iter().map(|c| c.counts.fn_count.to_string()).collect()
        )
    );
    let _ = writeln!(
        out,
        "{}",
        row("Precision (%)", manual.per_class.iter().map(|c| fmt_pct(c.precision)).collect())
    );
    let _ = writeln!(
        out,
        "{}",
        row("Recall (%)", manual.per_class.iter().map(|c| fmt_pct(c.recall)).collect())
    );
    let _ = writeln!(out, "\nManual mAP: {}\n", fmt_pct(manual.manual_map));
}

/// Side-by-side comparison of runs of the same process step: one row per
/// run, per-class AP@0.5 columns plus mAP, best value per column in bold.
pub fn compare_reports(reports: &[(String, EvalReport)]) -> Result<String, ReportError> {
    let (_, first) = reports.first().ok_or(ReportError::Empty)?;
    for (_, r) in reports {
        if r.step != first.step {
            return Err(ReportError::MixedSteps(first.step, r.step));
        }
    }
    let classes: Vec<ClassName> = first.step.class_registry().to_vec();
    // value grid: per run, per class AP@0.5 plus mAP@0.5 (fractions).
    let grid: Vec<Vec<Option<f64>>> = reports
        .iter()
        .map(|(_, r)| {
            let mut row: Vec<Option<f64>> = classes
                .iter()
                .map(|&c| {
                    r.detection.table.per_class.iter().find(|x| x.class == c).map(|x| x.ap50)
                })
                .collect();
            row.push(r.detection.table.map50);
            row
        })
        .collect();
    let n_cols = classes.len() + 1;
    let best: Vec<Option<f64>> = (0..n_cols)
        .map(|c| {
            grid.iter()
                .filter_map(|row| row[c])
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        })
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "# Detection AP @ IoU 0.5 (%) comparison ({})\n", first.step);
    let mut header = String::from("| Run |");
    let mut rule = String::from("|---|");
    for c in &classes {
        let _ = write!(header, " {} |", c.as_str());
        rule.push_str("---|");
    }
    header.push_str(" mAP |");
    rule.push_str("---|");
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{rule}");
    for ((label, _), row) in reports.iter().zip(&grid) {
        let mut line = format!("| {label} |");
        for (c, v) in row.iter().enumerate() {
            let cell = match v {
                Some(v) => {
                    let txt = format!("{:.2}", metrics::percent(*v));
                    if best[c].map_or(false, |b| (*v - b).abs() < 1e-12) {
                        format!("**{txt}**")
                    } else {
                        txt
                    }
                }
                None => "n/a".into(),
            };
            let _ = write!(line, " {cell} |");
        }
        let _ = writeln!(out, "{line}");
    }
    Ok(out)
}

pub fn save_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<(), ReportError> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json)
        .map_err(|source| ReportError::Io { path: path.display().to_string(), source })
}

pub fn load_report(path: impl AsRef<Path>) -> Result<EvalReport, ReportError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ReportError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text)
        .map_err(|source| ReportError::Json { path: path.display().to_string(), source })
}
