//! Procedural underwater scenes with known boxes, for tests and benches.
//!
//! Each scene has a depth gradient under a random blue-green cast, sensor
//! noise and up to 3 separated elliptical objects whose only cue is a faint warm tint that
//! the cast mostly absorbs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Annotation;
use crate::image::Image;
use crate::train::Sample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub max_objects: usize,
    /// Fraction of the side length; object sides are drawn in [min, max].
    pub min_extent: f64,
    pub max_extent: f64,
    pub noise: f32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            max_objects: 3,
            min_extent: 0.3,
            max_extent: 0.5,
            noise: 0.02,
        }
    }
}

pub fn scene(config: &SceneConfig, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (config.height, config.width);
    let cast = [
        rng.random_range(0.15..0.35f32),
        rng.random_range(0.55..0.8f32),
        rng.random_range(0.65..0.95f32),
    ];
    let depth = rng.random_range(0.2..0.5f32);
    let n = rng.random_range(1..=config.max_objects.max(1));
    let mut annotations: Vec<Annotation> = Vec::with_capacity(n);
    // Rejection sampling keeps objects apart, so no two share a grid cell.
    for _ in 0..n {
        for _ in 0..100 {
            let bw = rng.random_range(config.min_extent..=config.max_extent);
            let bh = rng.random_range(config.min_extent..=config.max_extent);
            let cx = rng.random_range(bw / 2.0..=1.0 - bw / 2.0);
            let cy = rng.random_range(bh / 2.0..=1.0 - bh / 2.0);
            let a = Annotation::new(0, cx, cy, bw, bh);
            let apart = annotations.iter().all(|b| {
                (a.cx - b.cx).abs() > (a.w + b.w) / 2.0 || (a.cy - b.cy).abs() > (a.h + b.h) / 2.0
            });
            if apart {
                annotations.push(a);
                break;
            }
        }
    }
    let tint = [0.45f32, 0.1, -0.1];
    let noise: Vec<f32> = (0..h * w * 3)
        .map(|_| rng.random_range(-config.noise..=config.noise))
        .collect();
    let image = Image::from_fn(h, w, |y, x| {
        let (fy, fx) = ((y as f64 + 0.5) / h as f64, (x as f64 + 0.5) / w as f64);
        let base = 0.55 - depth * fy as f32;
        let inside = annotations.iter().any(|a| {
            let dx = (fx - a.cx) / (a.w / 2.0);
            let dy = (fy - a.cy) / (a.h / 2.0);
            dx * dx + dy * dy <= 1.0
        });
        let mut px = [0.0f32; 3];
        for c in 0..3 {
            let albedo = base + if inside { tint[c] } else { 0.0 };
            let v = albedo * cast[c] + noise[(y * w + x) * 3 + c];
            px[c] = v.clamp(0.0, 1.0);
        }
        px
    })
    .expect("scene dimensions are positive");
    Sample { image, annotations }
}

/// `count` scenes drawn from consecutive seeds.
pub fn scenes(config: &SceneConfig, count: usize, seed: u64) -> Vec<Sample> {
    (0..count as u64)
        .map(|i| scene(config, seed.wrapping_mul(0x9e37_79b9).wrapping_add(i)))
        .collect()
}
