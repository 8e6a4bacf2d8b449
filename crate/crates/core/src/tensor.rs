//! Dense NCHW tensors and the scalar trait the network is generic over.

use std::cell::RefCell;
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::thread::LocalKey;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type. Training runs in `f32`; gradient checks use `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// `c = a · b + beta · c` for row-major `a` (m×k) and `b` (k×n), with
    /// explicit element strides so callers can pass transposed views.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );

    /// Lends a per-thread buffer of `len` elements with unspecified contents.
    fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [Self]) -> R) -> R;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f32]) -> R) -> R {
        thread_local!(static POOL: ScratchPool<f32> = const { RefCell::new(Vec::new()) });
        scratch(&POOL, len, f)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        (rsa, csa): (isize, isize),
        b: &[f32],
        (rsb, csb): (isize, isize),
        beta: f32,
        c: &mut [f32],
    ) {
        check_gemm_bounds(m, k, n, a.len(), (rsa, csa), b.len(), (rsb, csb), c.len());
        // SAFETY: every index reachable through the strides was checked above.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Real for f64 {
    fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
        thread_local!(static POOL: ScratchPool<f64> = const { RefCell::new(Vec::new()) });
        scratch(&POOL, len, f)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        (rsa, csa): (isize, isize),
        b: &[f64],
        (rsb, csb): (isize, isize),
        beta: f64,
        c: &mut [f64],
    ) {
        check_gemm_bounds(m, k, n, a.len(), (rsa, csa), b.len(), (rsb, csb), c.len());
        // SAFETY: every index reachable through the strides was checked above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

type ScratchPool<T> = RefCell<Vec<Vec<T>>>;

fn scratch<T: Copy + Default, R>(
    pool: &'static LocalKey<ScratchPool<T>>,
    len: usize,
    f: impl FnOnce(&mut [T]) -> R,
) -> R {
    let mut buf = pool.with(|p| p.borrow_mut().pop()).unwrap_or_default();
    if buf.len() < len {
        buf.resize(len, T::default());
    }
    let r = f(&mut buf[..len]);
    pool.with(|p| p.borrow_mut().push(buf));
    r
}

#[allow(clippy::too_many_arguments)]
fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    (rsa, csa): (isize, isize),
    b_len: usize,
    (rsb, csb): (isize, isize),
    c_len: usize,
) {
    let last = |rows: usize, cols: usize, rs: isize, cs: isize| -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
        }
    };
    assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0);
    assert!(last(m, k, rsa, csa) <= a_len, "gemm: lhs out of bounds");
    assert!(last(k, n, rsb, csb) <= b_len, "gemm: rhs out of bounds");
    assert!(m * n <= c_len, "gemm: output out of bounds");
}

/// Shape of a 4-D tensor: (batch, channels, height, width).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Spatial plane size `h * w`.
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    /// Row-major strides.
    pub fn strides(&self) -> [usize; 4] {
        let [_, c, h, w] = self.0;
        [c * h * w, h * w, w, 1]
    }

    /// True if `other` can be broadcast onto `self` (each dim equal or 1).
    pub fn accepts_broadcast(&self, other: &Shape) -> bool {
        self.0
            .iter()
            .zip(other.0.iter())
            .all(|(&a, &b)| a == b || b == 1)
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n},{c},{h},{w})")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Dense row-major tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let [n, c, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(b, ch, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape.strides();
        n * s[0] + c * s[1] + y * s[2] + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::NotScalar(self.shape));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Converts every element to another precision.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Copies channels `start..start + len`.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let [n, c, h, w] = self.shape.0;
        if start + len > c {
            return Err(Error::InvalidArgument(format!(
                "channel slice {start}..{} out of range for {}",
                start + len,
                self.shape
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Ok(Tensor {
            shape: Shape::new(n, len, h, w),
            data,
        })
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 2, 2, 2), vec![0.0; 7]).is_err());
        let t = Tensor::<f32>::from_vec(Shape::new(1, 2, 2, 2), (0..8).map(|v| v as f32).collect())
            .unwrap();
        assert_eq!(t.at(0, 1, 0, 1), 5.0);
    }

    #[test]
    fn gemm_matches_naive_with_transposed_lhs() {
        // a stored as k×m, used transposed.
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f64> = (0..k * m).map(|v| v as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64).sin()).collect();
        let mut c = vec![1.0; m * n];
        f64::gemm(
            m,
            k,
            n,
            &a,
            (1, m as isize),
            &b,
            (n as isize, 1),
            1.0,
            &mut c,
        );
        for i in 0..m {
            for j in 0..n {
                let mut want = 1.0;
                for p in 0..k {
                    want += a[p * m + i] * b[p * n + j];
                }
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn slice_channels_round_trip() {
        let t = Tensor::<f32>::from_fn(Shape::new(2, 3, 2, 2), |n, c, y, x| {
            (n * 100 + c * 10 + y * 2 + x) as f32
        });
        let s = t.slice_channels(1, 2).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 2, 2));
        assert_eq!(s.at(1, 0, 1, 1), t.at(1, 1, 1, 1));
        assert!(t.slice_channels(2, 2).is_err());
    }
}
