//! Bilinear resampling (half-pixel centers) and reflect padding.

use crate::tensor::{Real, Shape, Tensor};

/// Source taps along one axis: `(i0, i1, frac)` per output coordinate.
fn taps<T: Real>(in_len: usize, out_len: usize) -> Vec<(usize, usize, T)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, T::lit(frac))
        })
        .collect()
}

/// Interpolates as `a + f·(b − a)` so constant inputs are reproduced bit-exactly.
pub(crate) fn bilinear<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let [n, c, h, w] = input.shape().0;
    let ty = taps::<T>(h, out_h);
    let tx = taps::<T>(w, out_w);
    let mut out = Tensor::zeros(Shape::new(n, c, out_h, out_w));
    let src = input.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut dst[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let a = s[y0 * w + x0];
                let b = s[y0 * w + x1];
                let cc = s[y1 * w + x0];
                let dd = s[y1 * w + x1];
                let top = a + fx * (b - a);
                let bottom = cc + fx * (dd - cc);
                d[oy * out_w + ox] = top + fy * (bottom - top);
            }
        }
    }
    out
}

pub(crate) fn bilinear_backward<T: Real>(grad_out: &Tensor<T>, in_shape: Shape) -> Tensor<T> {
    let [n, c, h, w] = in_shape.0;
    let [_, _, out_h, out_w] = grad_out.shape().0;
    let ty = taps::<T>(h, out_h);
    let tx = taps::<T>(w, out_w);
    let mut grad = Tensor::zeros(in_shape);
    let g = grad_out.data();
    let dst = grad.data_mut();
    let one = T::one();
    for plane in 0..n * c {
        let gs = &g[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        let d = &mut dst[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = gs[oy * out_w + ox];
                let top = v * (one - fy);
                let bottom = v * fy;
                d[y0 * w + x0] += top * (one - fx);
                d[y0 * w + x1] += top * fx;
                d[y1 * w + x0] += bottom * (one - fx);
                d[y1 * w + x1] += bottom * fx;
            }
        }
    }
    grad
}

/// Reflected source index (edge not repeated) for padding past the end.
fn reflect(i: usize, len: usize) -> usize {
    if i < len {
        i
    } else {
        2 * (len - 1) - i
    }
}

/// Pads bottom and right by reflection to `out_h × out_w`.
pub(crate) fn reflect_pad<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let [n, c, h, w] = input.shape().0;
    Tensor::from_fn(Shape::new(n, c, out_h, out_w), |b, ch, y, x| {
        input.at(b, ch, reflect(y, h), reflect(x, w))
    })
}

pub(crate) fn reflect_pad_backward<T: Real>(grad_out: &Tensor<T>, in_shape: Shape) -> Tensor<T> {
    let [n, c, h, w] = in_shape.0;
    let [_, _, out_h, out_w] = grad_out.shape().0;
    let mut grad = Tensor::zeros(in_shape);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..out_h {
                for x in 0..out_w {
                    let (sy, sx) = (reflect(y, h), reflect(x, w));
                    let v = grad.at(b, ch, sy, sx) + grad_out.at(b, ch, y, x);
                    grad.set(b, ch, sy, sx, v);
                }
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_excludes_edge() {
        assert_eq!(reflect(5, 6), 5);
        assert_eq!(reflect(6, 6), 4);
        assert_eq!(reflect(7, 6), 3);
    }

    #[test]
    fn downsample_by_four_averages_centre_pair() {
        // Half-pixel centers: output 0 of 8→2 samples at source 1.5.
        let t = Tensor::<f64>::from_fn(Shape::new(1, 1, 1, 8), |_, _, _, x| x as f64);
        let d = bilinear(&t, 1, 2);
        assert_eq!(d.data(), &[1.5, 5.5]);
    }
}
