//! Deterministic inputs shared by the benchmarks.

use aquafeat_core::eval::{BoundingBox, Detection};
use aquafeat_core::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: Shape, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// `images` images with `per_image` ground-truth boxes and twice as many
/// detections, half of them jittered copies of the ground truth.
pub fn detection_set(
    images: usize,
    per_image: usize,
    seed: u64,
) -> (Vec<Vec<Detection>>, Vec<Vec<BoundingBox>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dets = Vec::with_capacity(images);
    let mut gts = Vec::with_capacity(images);
    for _ in 0..images {
        let g: Vec<BoundingBox> = (0..per_image)
            .map(|_| {
                BoundingBox::new(
                    rng.random_range(0.2..0.8),
                    rng.random_range(0.2..0.8),
                    rng.random_range(0.05..0.3),
                    rng.random_range(0.05..0.3),
                )
            })
            .collect();
        let mut d: Vec<Detection> = g
            .iter()
            .map(|b| {
                let j = BoundingBox::new(
                    b.cx + rng.random_range(-0.02..0.02),
                    b.cy + rng.random_range(-0.02..0.02),
                    b.w,
                    b.h,
                );
                Detection::new(j, rng.random_range(0.3..1.0))
            })
            .collect();
        for _ in 0..per_image {
            let b = BoundingBox::new(
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                0.1,
                0.1,
            );
            d.push(Detection::new(b, rng.random_range(0.0..0.7)));
        }
        dets.push(d);
        gts.push(g);
    }
    (dets, gts)
}
