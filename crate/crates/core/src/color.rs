//! Median-channel white balance.
//!
//! Each channel is scaled so its mean moves to the mean of the median
//! channel. The correction has no trainable parameters.

use crate::image::Image;

pub const MIN_GAIN: f64 = 0.1;
pub const MAX_GAIN: f64 = 10.0;
/// Channels with a mean below this carry no usable colour information.
pub const MIN_CHANNEL_MEAN: f64 = 1e-6;

/// Per-channel multiplicative gains `(R, G, B)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorGains(pub [f64; 3]);

impl ColorGains {
    pub fn identity() -> Self {
        ColorGains([1.0; 3])
    }
}

/// Index of the median of three values (ties resolved by channel order).
fn median_index(v: [f64; 3]) -> usize {
    let mut idx = [0, 1, 2];
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    idx[1]
}

pub fn compute_gains(image: &Image) -> ColorGains {
    let means = image.channel_means();
    let median = means[median_index(means)];
    ColorGains(means.map(|m| {
        if m < MIN_CHANNEL_MEAN {
            1.0
        } else {
            (median / m).clamp(MIN_GAIN, MAX_GAIN)
        }
    }))
}

pub fn apply_gains(image: &Image, gains: ColorGains) -> Image {
    image.map_channels(|c, v| {
        let g = gains.0[c];
        if g == 1.0 {
            v
        } else {
            ((v as f64) * g).clamp(0.0, 1.0) as f32
        }
    })
}

pub fn apply_white_balance(image: &Image) -> Image {
    apply_gains(image, compute_gains(image))
}
