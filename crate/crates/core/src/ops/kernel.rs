//! The strided-window index map shared by convolution and transposed
//! convolution.
//!
//! A "coarse" grid `a` of shape `(ca, ha, wa)` and a "fine" grid `b` of shape
//! `(cb, hb, wb)` are related through a weight tensor laid out
//! `(ca, cb, k, k)`: tap `(ky, kx)` pairs `a[y][x]` with
//! `b[y * stride + ky - pad][x * stride + kx - pad]`, and pairs that fall
//! outside `b` read as zero.
//!
//! * convolution forward gathers `b = input` into `a = output`;
//! * its data gradient scatters `a = grad_out` into `b = grad_input`;
//! * transposed convolution forward scatters `a = input` into `b = output`;
//! * its data gradient gathers `b = grad_out` into `a = grad_input`;
//! * both weight gradients are the same correlation of `a` with `b`.

use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub ca: usize,
    pub ha: usize,
    pub wa: usize,
    pub cb: usize,
    pub hb: usize,
    pub wb: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Valid coarse indices `a0..a1` for one tap; fine index is
/// `b0 + (a - a0) * stride`.
#[derive(Clone, Copy, Debug)]
struct Span {
    a0: usize,
    a1: usize,
    b0: usize,
}

fn span(na: usize, nb: usize, tap: usize, stride: usize, pad: usize) -> Option<Span> {
    // a * stride + tap - pad in [0, nb)
    let a0 = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let top = nb + pad;
    if top <= tap {
        return None;
    }
    let a_last = (top - 1 - tap) / stride;
    let a1 = (a_last + 1).min(na);
    if a0 >= a1 {
        return None;
    }
    Some(Span {
        a0,
        a1,
        b0: a0 * stride + tap - pad,
    })
}

/// Row-major `c (m x n) += op(a) * op(b)`, where `a` holds `m x k` (stored
/// `k x m` when `a_t`) and `b` holds `k x n` (stored `n x k` when `b_t`).
#[allow(clippy::too_many_arguments)]
fn gemm_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], a_t: bool, b: &[S], b_t: bool, c: &mut [S]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let a_strides = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let b_strides = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths cover every index the strides address,
    // and `c` is a distinct mutable borrow.
    unsafe {
        S::gemm(
            m,
            k,
            n,
            S::one(),
            a.as_ptr(),
            a_strides,
            b.as_ptr(),
            b_strides,
            S::one(),
            c.as_mut_ptr(),
            (n as isize, 1),
        );
    }
}

impl Geometry {
    fn spans(&self) -> (Vec<Option<Span>>, Vec<Option<Span>>) {
        let ys = (0..self.k).map(|t| span(self.ha, self.hb, t, self.stride, self.pad)).collect();
        let xs = (0..self.k).map(|t| span(self.wa, self.wb, t, self.stride, self.pad)).collect();
        (ys, xs)
    }

    pub fn weight_len(&self) -> usize {
        self.ca * self.cb * self.k * self.k
    }

    /// Rows of the unfolded fine grid, one per `(cb, ky, kx)`.
    fn col_rows(&self) -> usize {
        self.cb * self.k * self.k
    }

    /// A 1x1 stride-1 unpadded window needs no unfolding.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Visits every in-bounds pairing as (column row, coarse row offset,
    /// fine row offset, run length), where consecutive coarse elements map to
    /// fine elements `stride` apart.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (ys, xs) = self.spans();
        let (pb, kk) = (self.hb * self.wb, self.k * self.k);
        for bc in 0..self.cb {
            for (ky, sy) in ys.iter().enumerate() {
                let Some(sy) = sy else { continue };
                for (kx, sx) in xs.iter().enumerate() {
                    let Some(sx) = sx else { continue };
                    let row = bc * kk + ky * self.k + kx;
                    let len = sx.a1 - sx.a0;
                    for (r, ay) in (sy.a0..sy.a1).enumerate() {
                        let by = sy.b0 + r * self.stride;
                        f(row, ay * self.wa + sx.a0, bc * pb + by * self.wb + sx.b0, len);
                    }
                }
            }
        }
    }

    /// `cols[(cb, ky, kx)][ay, ax] = b[cb][window]`, zero where the window
    /// leaves the fine grid.
    fn unfold<S: Scalar>(&self, b: &[S]) -> Vec<S> {
        let pa = self.ha * self.wa;
        let mut cols = vec![S::zero(); self.col_rows() * pa];
        let s = self.stride;
        self.for_each_run(|row, ao, bo, len| {
            let dst = &mut cols[row * pa + ao..][..len];
            for (d, &v) in dst.iter_mut().zip(b[bo..].iter().step_by(s)) {
                *d = v;
            }
        });
        cols
    }

    /// Adds every unfolded column back onto the fine grid it came from.
    fn fold_add<S: Scalar>(&self, cols: &[S], b: &mut [S]) {
        let pa = self.ha * self.wa;
        let s = self.stride;
        self.for_each_run(|row, ao, bo, len| {
            let src = &cols[row * pa + ao..][..len];
            for (d, &v) in b[bo..].iter_mut().step_by(s).zip(src) {
                *d += v;
            }
        });
    }

    /// `a[ca] += sum_cb w[ca, cb] (*) b[cb]` for one sample.
    pub fn gather<S: Scalar>(&self, weight: &[S], b: &[S], a: &mut [S]) {
        let pa = self.ha * self.wa;
        if self.is_pointwise() {
            gemm_acc(self.ca, self.cb, pa, weight, false, b, false, a);
            return;
        }
        let cols = self.unfold(b);
        gemm_acc(self.ca, self.col_rows(), pa, weight, false, &cols, false, a);
    }

    /// `b[cb] += sum_ca w[ca, cb] * a[ca]` spread over the tap window, for
    /// one sample.
    pub fn scatter<S: Scalar>(&self, weight: &[S], a: &[S], b: &mut [S]) {
        let pa = self.ha * self.wa;
        if self.is_pointwise() {
            gemm_acc(self.cb, self.ca, pa, weight, true, a, false, b);
            return;
        }
        let mut cols = vec![S::zero(); self.col_rows() * pa];
        gemm_acc(self.col_rows(), self.ca, pa, weight, true, a, false, &mut cols);
        self.fold_add(&cols, b);
    }

    /// `w[ca, cb, ky, kx] += sum_{y,x} a[ca][y][x] * b[cb][window]` for one
    /// sample.
    pub fn weight_grad<S: Scalar>(&self, a: &[S], b: &[S], grad_w: &mut [S]) {
        let pa = self.ha * self.wa;
        if self.is_pointwise() {
            gemm_acc(self.ca, pa, self.cb, a, false, b, true, grad_w);
            return;
        }
        let cols = self.unfold(b);
        gemm_acc(self.ca, pa, self.col_rows(), a, false, &cols, true, grad_w);
    }
}
