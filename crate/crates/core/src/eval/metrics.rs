//! Box overlap, greedy matching, precision/recall and 101-point AP.

use std::fmt;

use crate::error::{Error, Result};

/// Axis-aligned box in normalized center format.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BoundingBox { cx, cy, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BoundingBox {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// `(x0, y0, x1, y1)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    /// Area from the corners, so a box's self-intersection equals its area exactly.
    pub fn area(&self) -> f64 {
        let (x0, y0, x1, y1) = self.corners();
        (x1 - x0).max(0.0) * (y1 - y0).max(0.0)
    }

    /// Corners clipped to the unit square.
    pub fn clipped(&self) -> Self {
        let (x0, y0, x1, y1) = self.corners();
        let c = |v: f64| v.clamp(0.0, 1.0);
        BoundingBox::from_corners(c(x0), c(y0), c(x1), c(y1))
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub class_id: u32,
}

impl Detection {
    pub fn new(bbox: BoundingBox, confidence: f64) -> Self {
        Detection {
            bbox,
            confidence,
            class_id: 0,
        }
    }
}

impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.bbox;
        write!(
            f,
            "{} {:.6} {:.6} {:.6} {:.6} {:.6}",
            self.class_id, self.confidence, b.cx, b.cy, b.w, b.h
        )
    }
}

/// Parses one `class_id conf cx cy w h` line.
pub fn parse_detection(line: &str) -> Result<Detection> {
    let f: Vec<&str> = line.split_whitespace().collect();
    let bad = || Error::InvalidArgument(format!("malformed detection line {line:?}"));
    if f.len() != 6 {
        return Err(bad());
    }
    let class_id = f[0].parse().map_err(|_| bad())?;
    let mut v = [0.0; 5];
    for (dst, s) in v.iter_mut().zip(&f[1..]) {
        *dst = s.parse().map_err(|_| bad())?;
    }
    Ok(Detection {
        bbox: BoundingBox::new(v[1], v[2], v[3], v[4]),
        confidence: v[0],
        class_id,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchEntry {
    pub confidence: f64,
    pub true_positive: bool,
    pub gt: Option<usize>,
}

/// Per-detection match flags plus the ground-truth count they were matched against.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    pub entries: Vec<MatchEntry>,
    pub total_gt: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.entries.iter().filter(|e| e.true_positive).count()
    }

    /// Pools another image's result; its ground-truth ids are offset past ours.
    pub fn merge(&mut self, other: MatchResult) {
        let offset = self.total_gt;
        self.entries
            .extend(other.entries.into_iter().map(|e| MatchEntry {
                gt: e.gt.map(|g| g + offset),
                ..e
            }));
        self.total_gt += other.total_gt;
    }

    /// Entries ordered by descending confidence; ties keep their order.
    pub fn ranked(&self) -> Vec<MatchEntry> {
        let mut e = self.entries.clone();
        e.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        e
    }
}

/// Slack on IoU threshold comparisons, so an overlap constructed to equal a
/// threshold is not lost to rounding.
pub const IOU_TOLERANCE: f64 = 1e-9;

/// Greedy matching: in descending confidence, each detection takes the
/// highest-IoU unmatched ground truth if that IoU reaches `threshold`.
pub fn match_detections(dets: &[Detection], gts: &[BoundingBox], threshold: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    let mut taken = vec![false; gts.len()];
    let entries = order
        .into_iter()
        .map(|i| {
            let d = &dets[i];
            let best = gts
                .iter()
                .enumerate()
                .filter(|(j, _)| !taken[*j])
                .map(|(j, g)| (j, iou(&d.bbox, g)))
                .filter(|&(_, o)| o >= threshold - IOU_TOLERANCE)
                .fold(None, |best: Option<(usize, f64)>, (j, o)| match best {
                    Some((_, bo)) if bo >= o => best,
                    _ => Some((j, o)),
                });
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            MatchEntry {
                confidence: d.confidence,
                true_positive: best.is_some(),
                gt: best.map(|b| b.0),
            }
        })
        .collect();
    MatchResult {
        entries,
        total_gt: gts.len(),
    }
}

/// `(precision, recall)`. Precision is 1 when there are no detections;
/// recall is 1 when there is no ground truth.
pub fn precision_recall(m: &MatchResult) -> (f64, f64) {
    let tp = m.true_positives() as f64;
    let p = if m.entries.is_empty() {
        1.0
    } else {
        tp / m.entries.len() as f64
    };
    let r = if m.total_gt == 0 {
        1.0
    } else {
        tp / m.total_gt as f64
    };
    (p, r)
}

/// Recall levels sampled by [`average_precision`].
pub const RECALL_POINTS: usize = 101;

/// Mean over recall levels `r = 0, 0.01, ..., 1` of the best precision
/// reached at recall `>= r`. Zero when there is no ground truth.
pub fn average_precision(m: &MatchResult) -> f64 {
    let n = m.total_gt;
    if n == 0 {
        return 0.0;
    }
    // (tp, precision) after each ranked detection.
    let mut curve = Vec::with_capacity(m.entries.len());
    let mut tp = 0usize;
    for (k, e) in m.ranked().iter().enumerate() {
        tp += e.true_positive as usize;
        curve.push((tp, tp as f64 / (k + 1) as f64));
    }
    // Running maximum from the right gives the precision envelope.
    let mut envelope = vec![0.0f64; curve.len()];
    let mut best = 0.0f64;
    for i in (0..curve.len()).rev() {
        best = best.max(curve[i].1);
        envelope[i] = best;
    }
    let mut total = 0.0;
    let mut idx = 0;
    for level in 0..RECALL_POINTS {
        // recall >= level/100, compared in integers: tp·100 >= level·n.
        while idx < curve.len() && curve[idx].0 * 100 < level * n {
            idx += 1;
        }
        if idx < curve.len() {
            total += envelope[idx];
        }
    }
    total / RECALL_POINTS as f64
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    pub map50: f64,
    pub map50_95: f64,
    pub per_threshold: [f64; 10],
    /// Set when the dataset has no ground truth and the result is the (0, 0) convention.
    pub warning: Option<String>,
}

/// Pooled single-class matching of every image at `threshold`.
pub fn pooled_match(
    dets: &[Vec<Detection>],
    gts: &[Vec<BoundingBox>],
    threshold: f64,
) -> Result<MatchResult> {
    if dets.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} detection lists for {} ground-truth lists",
            dets.len(),
            gts.len()
        )));
    }
    let mut pooled = MatchResult::default();
    for (d, g) in dets.iter().zip(gts) {
        pooled.merge(match_detections(d, g, threshold));
    }
    Ok(pooled)
}

pub fn map_range(dets: &[Vec<Detection>], gts: &[Vec<BoundingBox>]) -> Result<MapResult> {
    if gts.iter().all(Vec::is_empty) {
        pooled_match(dets, gts, 0.5)?;
        return Ok(MapResult {
            map50: 0.0,
            map50_95: 0.0,
            per_threshold: [0.0; 10],
            warning: Some("no ground truth in the evaluated set; mAP reported as 0".into()),
        });
    }
    let mut per_threshold = [0.0; 10];
    for (ap, thr) in per_threshold.iter_mut().zip(iou_thresholds()) {
        *ap = average_precision(&pooled_match(dets, gts, thr)?);
    }
    Ok(MapResult {
        map50: per_threshold[0],
        map50_95: per_threshold.iter().sum::<f64>() / 10.0,
        per_threshold,
        warning: None,
    })
}
