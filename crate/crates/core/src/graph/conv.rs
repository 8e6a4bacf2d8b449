//! im2col convolution kernels.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape, weight: Shape, stride: usize, pad: usize) -> Result<Self> {
        let [_, in_c, in_h, in_w] = input.0;
        let [out_c, w_in, kh, kw] = weight.0;
        if w_in != in_c || kh == 0 || kw == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input,
                rhs: weight,
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be >= 1".into()));
        }
        if in_h + 2 * pad < kh || in_w + 2 * pad < kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d (kernel larger than padded input)",
                lhs: input,
                rhs: weight,
            });
        }
        Ok(ConvGeometry {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            out_h: (in_h + 2 * pad - kh) / stride + 1,
            out_w: (in_w + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// A 1×1, stride-1, unpadded conv reads the input plane directly.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `ox` whose tap `kx` lands inside the input row.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        // ix = ox·s + kx − p < in_w
        let hi = if self.in_w + p > kx {
            ((self.in_w + p - kx - 1) / s + 1).min(self.out_w)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Unfolds one image (`in_c × in_h × in_w`) into a `patch_len × out_plane` matrix.
    fn im2col<T: Real>(&self, image: &[T], cols: &mut [T]) {
        let p_len = self.out_plane();
        let mut row = 0;
        for c in 0..self.in_c {
            let plane = &image[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let (lo, hi) = self.valid_cols(kx);
                    let dst = &mut cols[row * p_len..(row + 1) * p_len];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.in_h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        if lo < hi {
                            let start = lo * self.stride + kx - self.pad;
                            if self.stride == 1 {
                                line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                            } else {
                                for (out, v) in line[lo..hi]
                                    .iter_mut()
                                    .zip(src[start..].iter().step_by(self.stride))
                                {
                                    *out = *v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`im2col`]: scatters column gradients back onto the image.
    fn col2im<T: Real>(&self, cols: &[T], image: &mut [T]) {
        let p_len = self.out_plane();
        let mut row = 0;
        for c in 0..self.in_c {
            let plane = &mut image[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let (lo, hi) = self.valid_cols(kx);
                    let src = &cols[row * p_len..(row + 1) * p_len];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let dst =
                            &mut plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        if lo < hi {
                            let start = lo * self.stride + kx - self.pad;
                            if self.stride == 1 {
                                for (d, v) in
                                    dst[start..start + hi - lo].iter_mut().zip(&line[lo..hi])
                                {
                                    *d += *v;
                                }
                            } else {
                                for (d, v) in dst[start..]
                                    .iter_mut()
                                    .step_by(self.stride)
                                    .zip(&line[lo..hi])
                                {
                                    *d += *v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let geo = ConvGeometry::new(input.shape(), weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.len() != geo.out_c {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: weight.shape(),
                rhs: b.shape(),
            });
        }
    }
    let n = input.shape().n();
    let in_len = geo.in_c * geo.in_h * geo.in_w;
    let (k_len, p_len) = (geo.patch_len(), geo.out_plane());
    let mut out = Tensor::zeros(Shape::new(n, geo.out_c, geo.out_h, geo.out_w));
    let cols_len = if geo.is_pointwise() { 0 } else { k_len * p_len };
    T::with_scratch(cols_len, |cols| {
        for b in 0..n {
            let image = &input.data()[b * in_len..(b + 1) * in_len];
            let dst = &mut out.data_mut()[b * geo.out_c * p_len..(b + 1) * geo.out_c * p_len];
            if let Some(bias) = bias {
                for (oc, chunk) in dst.chunks_mut(p_len).enumerate() {
                    chunk.fill(bias.data()[oc]);
                }
            }
            let rhs: &[T] = if geo.is_pointwise() {
                image
            } else {
                geo.im2col(image, cols);
                cols
            };
            T::gemm(
                geo.out_c,
                k_len,
                p_len,
                weight.data(),
                (k_len as isize, 1),
                rhs,
                (p_len as isize, 1),
                T::one(),
                dst,
            );
        }
    });
    Ok(out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub(crate) fn backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let geo = ConvGeometry::new(input.shape(), weight.shape(), stride, pad)?;
    let n = input.shape().n();
    let in_len = geo.in_c * geo.in_h * geo.in_w;
    let (k_len, p_len) = (geo.patch_len(), geo.out_plane());
    let (need_x, need_w, need_b) = need;

    let mut dx = need_x.then(|| Tensor::zeros(input.shape()));
    let mut dw = need_w.then(|| Tensor::zeros(weight.shape()));
    let mut db = need_b.then(|| Tensor::zeros(Shape::new(1, geo.out_c, 1, 1)));

    let cols_len = if geo.is_pointwise() || !need_w {
        0
    } else {
        k_len * p_len
    };
    let dcols_len = if geo.is_pointwise() || !need_x {
        0
    } else {
        k_len * p_len
    };
    T::with_scratch(cols_len, |cols| {
        T::with_scratch(dcols_len, |dcols| {
            for b in 0..n {
                let g = &grad_out.data()[b * geo.out_c * p_len..(b + 1) * geo.out_c * p_len];
                if let Some(db) = db.as_mut() {
                    for (oc, chunk) in g.chunks(p_len).enumerate() {
                        db.data_mut()[oc] += chunk.iter().copied().sum::<T>();
                    }
                }
                if let Some(dw) = dw.as_mut() {
                    let image = &input.data()[b * in_len..(b + 1) * in_len];
                    let rhs: &[T] = if geo.is_pointwise() {
                        image
                    } else {
                        geo.im2col(image, cols);
                        cols
                    };
                    // dW (out_c × K) += g (out_c × P) · colsᵀ (P × K)
                    T::gemm(
                        geo.out_c,
                        p_len,
                        k_len,
                        g,
                        (p_len as isize, 1),
                        rhs,
                        (1, p_len as isize),
                        T::one(),
                        dw.data_mut(),
                    );
                }
                if let Some(dx) = dx.as_mut() {
                    let dst = &mut dx.data_mut()[b * in_len..(b + 1) * in_len];
                    // dcols (K × P) = Wᵀ (K × out_c) · g (out_c × P)
                    if geo.is_pointwise() {
                        T::gemm(
                            k_len,
                            geo.out_c,
                            p_len,
                            weight.data(),
                            (1, k_len as isize),
                            g,
                            (p_len as isize, 1),
                            T::zero(),
                            dst,
                        );
                    } else {
                        T::gemm(
                            k_len,
                            geo.out_c,
                            p_len,
                            weight.data(),
                            (1, k_len as isize),
                            g,
                            (p_len as isize, 1),
                            T::zero(),
                            dcols,
                        );
                        geo.col2im(dcols, dst);
                    }
                }
            }
        })
    });
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}
