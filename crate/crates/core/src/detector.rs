//! Single-class grid detection head, its training loss, and decoding.
//!
//! Each 8×8 pixel cell predicts an objectness logit and a box
//! `(dx, dy, log w, log h)`: the center offset from the cell center in cell
//! units and the size in log cell units.

use crate::dataset::Annotation;
use crate::error::{Error, Result};
use crate::eval::{iou, BoundingBox, Detection};
use crate::graph::{Graph, Var};
use crate::net::{padded_len, Bound, ConvIds, Init, Layout, ParamId, PAD_MULTIPLE};
use crate::tensor::{Real, Shape, Tensor};

/// Pixel size of one grid cell.
pub const CELL: usize = PAD_MULTIPLE;
/// Weight of the box term in [`detection_loss`].
pub const BOX_WEIGHT: f64 = 1.0;
/// Log-size predictions are capped here before exponentiation.
const MAX_LOG_SIZE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    /// Output channels of the three stride-2 blocks.
    pub widths: [usize; 3],
    pub leaky_slope: f64,
    /// Initial objectness probability of every cell; sets the starting
    /// objectness bias so empty cells do not dominate the first steps.
    pub objectness_prior: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            widths: [16, 32, 32],
            leaky_slope: 0.01,
            objectness_prior: 0.01,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "head widths must be positive".into(),
            ));
        }
        if !(self.objectness_prior > 0.0 && self.objectness_prior < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "objectness prior must lie in (0, 1), got {}",
                self.objectness_prior
            )));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::InvalidArgument(
                "leaky slope must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Bias of the objectness logit at initialization.
    pub fn prior_logit(&self) -> f64 {
        let p = self.objectness_prior;
        (p / (1.0 - p)).ln()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorHead {
    pub config: HeadConfig,
    pub blocks: [ConvIds; 3],
    pub objectness: ConvIds,
    pub boxes: ConvIds,
    first: ParamId,
    last: ParamId,
}

/// Head output for one image of `height × width` pixels.
#[derive(Clone, Copy, Debug)]
pub struct GridPrediction {
    /// `(1, 1, G_h, G_w)` logits.
    pub objectness: Var,
    /// `(1, 4, G_h, G_w)` box parameters.
    pub boxes: Var,
    pub height: usize,
    pub width: usize,
}

impl DetectorHead {
    pub fn new(config: HeadConfig, layout: &mut Layout, prefix: &str) -> Result<Self> {
        config.validate()?;
        let first = layout.len();
        let [a, b, c] = config.widths;
        let blocks = [
            ConvIds::he(layout, &format!("{prefix}block0"), 3, a, 3),
            ConvIds::he(layout, &format!("{prefix}block1"), a, b, 3),
            ConvIds::he(layout, &format!("{prefix}block2"), b, c, 3),
        ];
        let objectness = ConvIds::with_bias(
            layout,
            &format!("{prefix}objectness"),
            c,
            1,
            1,
            Init::HeUniform { fan_in: c },
            Init::Constant(config.prior_logit()),
        );
        let boxes = ConvIds::he(layout, &format!("{prefix}box"), c, 4, 1);
        Ok(DetectorHead {
            config,
            blocks,
            objectness,
            boxes,
            first: ParamId::from_index(first),
            last: ParamId::from_index(layout.len() - 1),
        })
    }

    pub fn owns(&self, id: ParamId) -> bool {
        (self.first..=self.last).contains(&id)
    }

    /// Runs the head on a `(1, 3, H, W)` image.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        image: Var,
    ) -> Result<GridPrediction> {
        let s = g.shape(image);
        if s.c() != 3 || s.h() < CELL || s.w() < CELL {
            return Err(Error::InvalidArgument(format!(
                "detector expects a 3-channel image of at least {CELL}x{CELL}, got {s}"
            )));
        }
        let (ph, pw) = (padded_len(s.h()), padded_len(s.w()));
        let mut x = if (ph, pw) == (s.h(), s.w()) {
            image
        } else {
            g.reflect_pad(image, ph, pw)?
        };
        let slope = T::lit(self.config.leaky_slope);
        for block in &self.blocks {
            let y = block.apply(g, b, x, 2, 1)?;
            x = g.leaky_relu(y, slope);
        }
        Ok(GridPrediction {
            objectness: self.objectness.apply(g, b, x, 1, 0)?,
            boxes: self.boxes.apply(g, b, x, 1, 0)?,
            height: s.h(),
            width: s.w(),
        })
    }
}

/// Grid dimensions `(G_h, G_w)` for an image.
pub fn grid_size(height: usize, width: usize) -> (usize, usize) {
    (padded_len(height) / CELL, padded_len(width) / CELL)
}

/// Objectness mask and encoded box targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets<T> {
    pub mask: Tensor<T>,
    pub boxes: Tensor<T>,
}

/// Assigns each ground truth to the cell containing its center. When two
/// share a cell the larger box wins; zero-area boxes are ignored.
pub fn encode_targets<T: Real>(gts: &[Annotation], height: usize, width: usize) -> Targets<T> {
    let (gh, gw) = grid_size(height, width);
    let mut owner: Vec<Option<&Annotation>> = vec![None; gh * gw];
    for a in gts.iter().filter(|a| a.w > 0.0 && a.h > 0.0) {
        let px = a.cx * width as f64 / CELL as f64;
        let py = a.cy * height as f64 / CELL as f64;
        let col = (px.floor().max(0.0) as usize).min(gw - 1);
        let row = (py.floor().max(0.0) as usize).min(gh - 1);
        let slot = &mut owner[row * gw + col];
        if slot.is_none_or(|o| a.w * a.h > o.w * o.h) {
            *slot = Some(a);
        }
    }
    let mut mask = Tensor::zeros(Shape::new(1, 1, gh, gw));
    let mut boxes = Tensor::zeros(Shape::new(1, 4, gh, gw));
    for (i, a) in owner.iter().enumerate() {
        let Some(a) = a else { continue };
        let (row, col) = (i / gw, i % gw);
        let cell = CELL as f64;
        let enc = [
            a.cx * width as f64 / cell - (col as f64 + 0.5),
            a.cy * height as f64 / cell - (row as f64 + 0.5),
            (a.w * width as f64 / cell).ln(),
            (a.h * height as f64 / cell).ln(),
        ];
        mask.set(0, 0, row, col, T::one());
        for (c, v) in enc.iter().enumerate() {
            boxes.set(0, c, row, col, T::lit(*v));
        }
    }
    Targets { mask, boxes }
}

/// `Σ BCE(objectness, mask) + λ·Σ SmoothL1(box − target)` over assigned cells.
pub fn detection_loss<T: Real>(
    g: &mut Graph<T>,
    pred: &GridPrediction,
    gts: &[Annotation],
) -> Result<Var> {
    let t = encode_targets::<T>(gts, pred.height, pred.width);
    let bce = g.bce_with_logits(pred.objectness, t.mask.clone())?;
    let obj = g.sum(bce);
    let target = g.constant(t.boxes);
    let mask = g.constant(t.mask);
    let diff = g.sub(pred.boxes, target)?;
    let diff = g.mul(diff, mask)?;
    let l1 = g.smooth_l1(diff, T::one());
    let l1 = g.sum(l1);
    let l1 = g.scale(l1, T::lit(BOX_WEIGHT));
    g.add(obj, l1)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Greedy non-maximum suppression; input order is the priority order.
pub fn nms(sorted: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Boxes with confidence above `conf_threshold`, after NMS, by descending confidence.
pub fn decode_predictions<T: Real>(
    objectness: &Tensor<T>,
    boxes: &Tensor<T>,
    height: usize,
    width: usize,
    conf_threshold: f64,
    nms_iou: f64,
) -> Vec<Detection> {
    let s = objectness.shape();
    let (gh, gw) = (s.h(), s.w());
    let cell = CELL as f64;
    let mut dets = Vec::new();
    for row in 0..gh {
        for col in 0..gw {
            let conf = sigmoid(objectness.at(0, 0, row, col).as_f64());
            if conf.is_nan() || conf <= conf_threshold {
                continue;
            }
            let p = |c| boxes.at(0, c, row, col).as_f64();
            let bbox = BoundingBox::new(
                (col as f64 + 0.5 + p(0)) * cell / width as f64,
                (row as f64 + 0.5 + p(1)) * cell / height as f64,
                p(2).min(MAX_LOG_SIZE).exp() * cell / width as f64,
                p(3).min(MAX_LOG_SIZE).exp() * cell / height as f64,
            )
            .clipped();
            dets.push(Detection::new(bbox, conf));
        }
    }
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    nms(dets, nms_iou)
}

impl GridPrediction {
    pub fn decode<T: Real>(
        &self,
        g: &Graph<T>,
        conf_threshold: f64,
        nms_iou: f64,
    ) -> Vec<Detection> {
        decode_predictions(
            g.value(self.objectness),
            g.value(self.boxes),
            self.height,
            self.width,
            conf_threshold,
            nms_iou,
        )
    }
}
