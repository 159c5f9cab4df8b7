//! Rank-4 NCHW tensors.
//!
//! All images, feature maps, weights and gradients are stored as a flat
//! row-major buffer with dimensions `(n, c, h, w)`. The element type is
//! generic so the gradient oracle can run the same code in 64-bit.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{shape_err, Result};

/// Floating-point element type of a [`Tensor`].
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` for an `m x k` by `k x n` product on
    /// strided layouts.
    ///
    /// # Safety
    /// Every element addressed by the dimensions and strides must lie inside
    /// the corresponding allocation, and `c` must not alias `a` or `b`.
    #[doc(hidden)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        a_strides: (isize, isize),
        b: *const Self,
        b_strides: (isize, isize),
        beta: Self,
        c: *mut Self,
        c_strides: (isize, isize),
    );
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        (rsa, csa): (isize, isize),
        b: *const Self,
        (rsb, csb): (isize, isize),
        beta: Self,
        c: *mut Self,
        (rsc, csc): (isize, isize),
    ) {
        unsafe { matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        (rsa, csa): (isize, isize),
        b: *const Self,
        (rsb, csb): (isize, isize),
        beta: Self,
        c: *mut Self,
        (rsc, csc): (isize, isize),
    ) {
        unsafe { matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
    }
}

/// Tensor dimensions in NCHW order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one sample (`c * h * w`).
    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub const fn offset(&self, i: usize, j: usize, y: usize, x: usize) -> usize {
        ((i * self.c + j) * self.h + y) * self.w + x
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return shape_err(format!("all dimensions must be >= 1, got {self}"));
        }
        Ok(())
    }
}

impl Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Dims {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Dims { n, c, h, w }
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<S = f32> {
    dims: Dims,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// # Panics
    ///
    /// Panics if any dimension is zero. Use [`Tensor::from_vec`] for checked
    /// construction from untrusted sizes.
    pub fn zeros(dims: impl Into<Dims>) -> Self {
        Self::full(dims, S::zero())
    }

    pub fn full(dims: impl Into<Dims>, value: S) -> Self {
        let dims = dims.into();
        dims.validate().expect("tensor dimensions");
        Tensor {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: impl Into<Dims>, data: Vec<S>) -> Result<Self> {
        let dims = dims.into();
        dims.validate()?;
        if data.len() != dims.len() {
            return shape_err(format!(
                "data length {} does not match dims {dims} ({} elements)",
                data.len(),
                dims.len()
            ));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_fn(dims: impl Into<Dims>, mut f: impl FnMut(usize, usize, usize, usize) -> S) -> Self {
        let dims = dims.into();
        dims.validate().expect("tensor dimensions");
        let mut data = Vec::with_capacity(dims.len());
        for i in 0..dims.n {
            for j in 0..dims.c {
                for y in 0..dims.h {
                    for x in 0..dims.w {
                        data.push(f(i, j, y, x));
                    }
                }
            }
        }
        Tensor { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, y: usize, x: usize) -> S {
        self.data[self.dims.offset(i, j, y, x)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, y: usize, x: usize, v: S) {
        let off = self.dims.offset(i, j, y, x);
        self.data[off] = v;
    }

    pub fn sample(&self, i: usize) -> &[S] {
        let len = self.dims.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [S] {
        let len = self.dims.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn map_unary(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return shape_err(format!("add: {} vs {}", self.dims, other.dims));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Tensor { dims: self.dims, data })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return shape_err(format!("add_assign: {} vs {}", self.dims, other.dims));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, k: S) -> Self {
        self.map_unary(|v| v * k)
    }

    /// Joins three tensors along the channel axis in the order `a, b, c`.
    pub fn concat_channels(a: &Self, b: &Self, c: &Self) -> Result<Self> {
        Self::concat(&[a, b, c])
    }

    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let first = match parts.first() {
            Some(t) => t.dims,
            None => return shape_err("concat of zero tensors"),
        };
        for p in parts {
            let d = p.dims;
            if d.n != first.n || d.h != first.h || d.w != first.w {
                return shape_err(format!("concat: {d} incompatible with {first}"));
            }
        }
        let channels = parts.iter().map(|p| p.dims.c).sum();
        let dims = Dims::new(first.n, channels, first.h, first.w);
        let mut data = Vec::with_capacity(dims.len());
        for i in 0..first.n {
            for p in parts {
                data.extend_from_slice(p.sample(i));
            }
        }
        Ok(Tensor { dims, data })
    }

    /// Copies channels `start..start + count` into a new tensor.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.dims.c {
            return shape_err(format!(
                "slice_channels {start}..{} out of range for {}",
                start + count,
                self.dims
            ));
        }
        let plane = self.dims.plane_len();
        let dims = Dims::new(self.dims.n, count, self.dims.h, self.dims.w);
        let mut data = Vec::with_capacity(dims.len());
        for i in 0..self.dims.n {
            let s = self.sample(i);
            data.extend_from_slice(&s[start * plane..(start + count) * plane]);
        }
        Ok(Tensor { dims, data })
    }

    /// Stacks single-sample tensors with matching `(c, h, w)` along `n`.
    pub fn stack(samples: &[&Self]) -> Result<Self> {
        let first = match samples.first() {
            Some(t) => t.dims,
            None => return shape_err("stack of zero tensors"),
        };
        let mut data = Vec::with_capacity(first.len() * samples.len());
        let mut n = 0;
        for s in samples {
            let d = s.dims;
            if (d.c, d.h, d.w) != (first.c, first.h, first.w) {
                return shape_err(format!("stack: {d} incompatible with {first}"));
            }
            data.extend_from_slice(&s.data);
            n += d.n;
        }
        Tensor::from_vec(Dims::new(n, first.c, first.h, first.w), data)
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    /// Inner product of the flattened buffers, accumulated in 64-bit.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return shape_err(format!("dot: {} vs {}", self.dims, other.dims));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        if self.dims != other.dims {
            return shape_err(format!("max_abs_diff: {} vs {}", self.dims, other.dims));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }
}

impl<S: Debug> Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("dims", &self.dims)
            .field("data", &format_args!("{preview:?}{}", if self.data.len() > 8 { " .." } else { "" }))
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(dims: (usize, usize, usize, usize), v: &[f32]) -> Tensor {
        Tensor::from_vec(dims, v.to_vec()).unwrap()
    }

    #[test]
    fn offset_is_nchw_row_major() {
        let d = Dims::new(2, 3, 4, 5);
        assert_eq!(d.offset(0, 0, 0, 1), 1);
        assert_eq!(d.offset(0, 0, 1, 0), 5);
        assert_eq!(d.offset(0, 1, 0, 0), 20);
        assert_eq!(d.offset(1, 0, 0, 0), 60);
        assert_eq!(d.offset(1, 2, 3, 4), 119);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Tensor::<f32>::from_vec((1, 1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::from_vec((1, 0, 2, 2), vec![]).is_err());
    }

    #[test]
    fn concat_three_feature_maps() {
        let a = Tensor::<f32>::zeros((1, 64, 5, 7));
        let out = Tensor::concat_channels(&a, &a, &a).unwrap();
        assert_eq!(out.dims(), Dims::new(1, 192, 5, 7));
    }

    #[test]
    fn concat_preserves_values_and_order() {
        let v = Tensor::full((1, 1, 2, 2), 0.25f32);
        let out = Tensor::concat_channels(&v, &v, &v).unwrap();
        assert_eq!(out.dims(), Dims::new(1, 3, 2, 2));
        assert!(out.data().iter().all(|&x| x == 0.25));

        let a = t((1, 1, 1, 1), &[1.0]);
        let b = t((1, 1, 1, 1), &[2.0]);
        let c = t((1, 1, 1, 1), &[3.0]);
        assert_eq!(Tensor::concat_channels(&a, &b, &c).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn concat_interleaves_per_sample() {
        let a = t((2, 1, 1, 1), &[1.0, 10.0]);
        let b = t((2, 2, 1, 1), &[2.0, 3.0, 20.0, 30.0]);
        let out = Tensor::concat(&[&a, &b]).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f32>::zeros((1, 1, 2, 2));
        let b = Tensor::<f32>::zeros((1, 1, 2, 3));
        assert!(Tensor::concat_channels(&a, &a, &b).is_err());
        let c = Tensor::<f32>::zeros((2, 1, 2, 2));
        assert!(Tensor::concat_channels(&a, &c, &a).is_err());
    }

    #[test]
    fn add_cases() {
        let x = t((1, 1, 1, 2), &[1.0, 2.0]);
        let y = t((1, 1, 1, 2), &[3.0, 4.0]);
        assert_eq!(x.add(&y).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(x.add(&Tensor::zeros(x.dims())).unwrap(), x);
        assert!(x.add(&x.scale(-1.0)).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(x.add(&Tensor::zeros((1, 1, 2, 1))).is_err());
    }

    #[test]
    fn map_unary_cases() {
        let x = t((1, 1, 1, 2), &[1.0, -3.0]);
        assert_eq!(x.map_unary(|v| v), x);
        assert_eq!(x.map_unary(|v| v * 2.0).data(), &[2.0, -6.0]);
        let y = t((1, 1, 1, 3), &[5.0, -5.0, 0.5]);
        assert_eq!(y.map_unary(|v| v.clamp(-1.0, 1.0)).data(), &[1.0, -1.0, 0.5]);
    }

    fn dims_strategy() -> impl Strategy<Value = Dims> {
        (1usize..3, 1usize..4, 1usize..5, 1usize..5).prop_map(|(n, c, h, w)| Dims::new(n, c, h, w))
    }

    proptest! {
        #[test]
        fn write_then_read(d in dims_strategy(), v in -10.0f32..10.0, seed in 0usize..1000) {
            let mut x = Tensor::<f32>::zeros(d);
            let (i, j, y, xx) = (seed % d.n, (seed / 3) % d.c, (seed / 7) % d.h, (seed / 11) % d.w);
            x.set(i, j, y, xx, v);
            prop_assert_eq!(x.get(i, j, y, xx), v);
            prop_assert_eq!(x.data().iter().filter(|&&e| e != 0.0).count(), usize::from(v != 0.0));
        }

        #[test]
        fn concat_then_slice_recovers_inputs(
            d in dims_strategy(),
            cb in 1usize..3,
            cc in 1usize..3,
            base in -5.0f32..5.0,
        ) {
            let a = Tensor::from_fn(d, |i, j, y, x| base + (i * 1000 + j * 100 + y * 10 + x) as f32);
            let b = Tensor::from_fn((d.n, cb, d.h, d.w), |i, j, y, x| -((i + j + y + x) as f32));
            let c = Tensor::from_fn((d.n, cc, d.h, d.w), |_, j, _, x| (j * x) as f32 * 0.5);
            let cat = Tensor::concat_channels(&a, &b, &c).unwrap();
            prop_assert_eq!(cat.slice_channels(0, d.c).unwrap(), a);
            prop_assert_eq!(cat.slice_channels(d.c, cb).unwrap(), b);
            prop_assert_eq!(cat.slice_channels(d.c + cb, cc).unwrap(), c);
        }

        #[test]
        fn add_commutes_and_associates_on_small_integers(
            d in dims_strategy(),
            k in -50i32..50,
        ) {
            let a = Tensor::from_fn(d, |i, j, y, x| (i as i32 + j as i32 * 3 - y as i32 + x as i32 * k) as f32);
            let b = Tensor::from_fn(d, |_, j, y, _| (k - j as i32 * y as i32) as f32);
            let c = Tensor::full(d, k as f32 * 0.5);
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
            prop_assert_eq!(
                a.add(&b).unwrap().add(&c).unwrap(),
                a.add(&b.add(&c).unwrap()).unwrap()
            );
        }
    }
}
