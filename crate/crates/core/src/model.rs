//! Enhancer and detection head sharing one parameter layout.

use crate::dataset::Annotation;
use crate::detector::{detection_loss, DetectorHead, GridPrediction, HeadConfig};
use crate::error::Result;
use crate::eval::Detection;
use crate::graph::{Graph, Var};
use crate::image::Image;
use crate::net::{AquaFeat, Bound, Layout, NetConfig, ParamStore};
use crate::tensor::Real;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub net: NetConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    /// Small widths that train in about a minute per 500 steps on one core.
    pub fn desk() -> Self {
        ModelConfig {
            net: NetConfig {
                cf_channels: 16,
                growth: 4,
                ..NetConfig::default()
            },
            head: HeadConfig {
                widths: [8, 8, 8],
                ..HeadConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub layout: Layout,
    pub net: AquaFeat,
    pub head: DetectorHead,
}

/// Whether the head sees the enhanced image or the raw input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Enhancer {
    On,
    /// Skips the enhancer entirely: the baseline that detects on raw images.
    Bypassed,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut layout = Layout::new();
        let net = AquaFeat::new(config.net.clone(), &mut layout, "enh.")?;
        let head = DetectorHead::new(config.head.clone(), &mut layout, "head.")?;
        Ok(Model {
            config,
            layout,
            net,
            head,
        })
    }

    pub fn init<T: Real>(&self, seed: u64) -> ParamStore<T> {
        self.layout.init(seed)
    }

    /// Records enhancement (unless bypassed) and the head on `g`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        image: &Image,
        enhancer: Enhancer,
    ) -> Result<GridPrediction> {
        let x = match enhancer {
            Enhancer::On => self.net.forward(g, b, image)?.output,
            Enhancer::Bypassed => image.constant(g),
        };
        self.head.forward(g, b, x)
    }

    pub fn loss<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        image: &Image,
        annotations: &[Annotation],
        enhancer: Enhancer,
    ) -> Result<Var> {
        let pred = self.forward(g, b, image, enhancer)?;
        detection_loss(g, &pred, annotations)
    }

    /// Decoded detections for one image with frozen parameters.
    pub fn detect(
        &self,
        store: &ParamStore<f32>,
        image: &Image,
        enhancer: Enhancer,
        conf_threshold: f64,
        nms_iou: f64,
    ) -> Result<Vec<Detection>> {
        let mut g = Graph::new();
        let b = Bound::frozen(&mut g, store);
        let pred = self.forward(&mut g, &b, image, enhancer)?;
        Ok(pred.decode(&g, conf_threshold, nms_iou))
    }

    pub fn enhance(&self, store: &ParamStore<f32>, image: &Image) -> Result<Image> {
        self.net.enhance(store, image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ParamId;

    #[test]
    fn ownership_partitions_the_layout() {
        let m = Model::new(ModelConfig::default()).unwrap();
        let ids: Vec<ParamId> = m.layout.ids().collect();
        assert!(ids.iter().all(|&id| m.net.owns(id) != m.head.owns(id)));
        assert!(m
            .layout
            .specs()
            .iter()
            .all(|s| s.name.starts_with("enh.") || s.name.starts_with("head.")));
    }

    #[test]
    fn bypass_equals_identity_enhancer_at_init() {
        let m = Model::new(ModelConfig::default()).unwrap();
        let store = m.init::<f32>(3);
        let img = Image::from_fn(24, 32, |y, x| [y as f32 / 24.0, 0.4, x as f32 / 32.0]).unwrap();
        let a = m.detect(&store, &img, Enhancer::On, 0.0, 1.0).unwrap();
        let b = m
            .detect(&store, &img, Enhancer::Bypassed, 0.0, 1.0)
            .unwrap();
        assert_eq!(a, b);
    }
}
