//! Detection metrics, the evaluation report, and throughput timing.

mod fps;
mod metrics;

use std::fmt::Write as _;

pub use fps::{fps_bench, FpsReport, LOW_CONFIDENCE_ITERS};
pub use metrics::{
    average_precision, iou, iou_thresholds, map_range, match_detections, parse_detection,
    pooled_match, precision_recall, BoundingBox, Detection, MapResult, MatchEntry, MatchResult,
    RECALL_POINTS,
};

use crate::error::Result;

/// Confidence cut for reported precision/recall.
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;
/// Confidence floor for detections entering the AP computation.
pub const MAP_CONF_THRESHOLD: f64 = 0.001;
pub const DEFAULT_NMS_IOU: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub map50: f64,
    pub map50_95: f64,
    pub precision: f64,
    pub recall: f64,
    pub fps: f64,
    pub conf_threshold: f64,
    pub images: usize,
    pub warning: Option<String>,
}

impl MetricReport {
    /// Metrics over a dataset. `dets` should be decoded at a low confidence
    /// floor; precision and recall only count those above `conf_threshold`.
    pub fn compute(
        dets: &[Vec<Detection>],
        gts: &[Vec<BoundingBox>],
        conf_threshold: f64,
        fps: f64,
    ) -> Result<Self> {
        let map = map_range(dets, gts)?;
        let confident: Vec<Vec<Detection>> = dets
            .iter()
            .map(|d| {
                d.iter()
                    .filter(|d| d.confidence > conf_threshold)
                    .copied()
                    .collect()
            })
            .collect();
        let (precision, recall) = precision_recall(&pooled_match(&confident, gts, 0.5)?);
        Ok(MetricReport {
            map50: map.map50,
            map50_95: map.map50_95,
            precision,
            recall,
            fps,
            conf_threshold,
            images: gts.len(),
            warning: map.warning,
        })
    }

    /// Machine-readable `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "map50={:.6}", self.map50);
        let _ = writeln!(s, "map50_95={:.6}", self.map50_95);
        let _ = writeln!(s, "precision={:.6}", self.precision);
        let _ = writeln!(s, "recall={:.6}", self.recall);
        let _ = writeln!(s, "fps={:.3}", self.fps);
        let _ = writeln!(s, "interpolation=coco101");
        let _ = writeln!(s, "conf_threshold={}", self.conf_threshold);
        let _ = writeln!(s, "images={}", self.images);
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "AP interpolation: 101-point (COCO)");
        let _ = writeln!(s, "P/R confidence threshold: {}", self.conf_threshold);
        let _ = writeln!(s, "{:<12}{:>10}", "images", self.images);
        for (k, v) in [
            ("mAP@0.5", self.map50),
            ("mAP@.5:.95", self.map50_95),
            ("precision", self.precision),
            ("recall", self.recall),
        ] {
            let _ = writeln!(s, "{k:<12}{v:>10.4}");
        }
        let _ = writeln!(s, "{:<12}{:>10.2}", "fps", self.fps);
        if let Some(w) = &self.warning {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}
