use rayon::prelude::*;

use super::kernel::Geometry;
use crate::error::{shape_err, Result};
use crate::tensor::{Dims, Scalar, Tensor};

/// Parameters of a 2-D cross-correlation layer.
///
/// `weight` is laid out `(out_c, in_c, k, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dParams<S = f32> {
    pub weight: Tensor<S>,
    pub bias: Vec<S>,
    pub stride: usize,
    pub padding: usize,
}

/// Parameters of a 2-D transposed convolution.
///
/// `weight` is laid out `(in_c, out_c, k, k)`, the layout of the convolution
/// whose adjoint this is.
#[derive(Clone, Debug, PartialEq)]
pub struct TransposedConv2dParams<S = f32> {
    pub weight: Tensor<S>,
    pub bias: Vec<S>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<S = f32> {
    pub grad_x: Tensor<S>,
    pub grad_weight: Tensor<S>,
    pub grad_bias: Vec<S>,
}

fn check_layer<S: Scalar>(weight: &Tensor<S>, bias: &[S], stride: usize, bias_len: usize) -> Result<()> {
    let d = weight.dims();
    if d.h != d.w {
        return shape_err(format!("kernel must be square, got {d}"));
    }
    if stride == 0 {
        return shape_err("stride must be positive");
    }
    if bias.len() != bias_len {
        return shape_err(format!("bias length {} != {bias_len}", bias.len()));
    }
    Ok(())
}

impl<S: Scalar> Conv2dParams<S> {
    pub fn new(weight: Tensor<S>, bias: Vec<S>, stride: usize, padding: usize) -> Result<Self> {
        check_layer(&weight, &bias, stride, weight.dims().n)?;
        Ok(Conv2dParams {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn zeros(in_c: usize, out_c: usize, k: usize, stride: usize, padding: usize) -> Self {
        Conv2dParams {
            weight: Tensor::zeros((out_c, in_c, k, k)),
            bias: vec![S::zero(); out_c],
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims().c
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims().h
    }

    pub fn param_count(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }

    /// `floor((n + 2 pad - k) / stride) + 1` per axis.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (k, s, p) = (self.kernel(), self.stride, self.padding);
        let axis = |n: usize| {
            let padded = n + 2 * p;
            if padded < k {
                None
            } else {
                Some((padded - k) / s + 1)
            }
        };
        match (axis(h), axis(w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => shape_err(format!("conv k={k} pad={p} yields empty output for {h}x{w} input")),
        }
    }

    fn geometry(&self, x: Dims) -> Result<(Geometry, Dims)> {
        if x.c != self.in_channels() {
            return shape_err(format!(
                "conv2d expects {} input channels, got {}",
                self.in_channels(),
                x.c
            ));
        }
        let (oh, ow) = self.output_size(x.h, x.w)?;
        let geo = Geometry {
            ca: self.out_channels(),
            ha: oh,
            wa: ow,
            cb: x.c,
            hb: x.h,
            wb: x.w,
            k: self.kernel(),
            stride: self.stride,
            pad: self.padding,
        };
        Ok((geo, Dims::new(x.n, self.out_channels(), oh, ow)))
    }

    pub fn cast<T: Scalar>(&self) -> Conv2dParams<T> {
        Conv2dParams {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|b| T::from_f64(b.as_f64())).collect(),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

impl<S: Scalar> TransposedConv2dParams<S> {
    pub fn new(weight: Tensor<S>, bias: Vec<S>, stride: usize, padding: usize) -> Result<Self> {
        check_layer(&weight, &bias, stride, weight.dims().c)?;
        Ok(TransposedConv2dParams {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn zeros(in_c: usize, out_c: usize, k: usize, stride: usize, padding: usize) -> Self {
        TransposedConv2dParams {
            weight: Tensor::zeros((in_c, out_c, k, k)),
            bias: vec![S::zero(); out_c],
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims().n
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims().c
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims().h
    }

    pub fn param_count(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }

    /// `(n - 1) * stride - 2 pad + k` per axis.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (k, s, p) = (self.kernel(), self.stride, self.padding);
        let axis = |n: usize| {
            let full = (n - 1) * s + k;
            (full > 2 * p).then(|| full - 2 * p)
        };
        match (axis(h), axis(w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => shape_err(format!(
                "transposed conv k={k} stride={s} pad={p} yields empty output for {h}x{w} input"
            )),
        }
    }

    fn geometry(&self, x: Dims) -> Result<(Geometry, Dims)> {
        if x.c != self.in_channels() {
            return shape_err(format!(
                "transposed_conv2d expects {} input channels, got {}",
                self.in_channels(),
                x.c
            ));
        }
        let (oh, ow) = self.output_size(x.h, x.w)?;
        let geo = Geometry {
            ca: x.c,
            ha: x.h,
            wa: x.w,
            cb: self.out_channels(),
            hb: oh,
            wb: ow,
            k: self.kernel(),
            stride: self.stride,
            pad: self.padding,
        };
        Ok((geo, Dims::new(x.n, self.out_channels(), oh, ow)))
    }

    pub fn cast<T: Scalar>(&self) -> TransposedConv2dParams<T> {
        TransposedConv2dParams {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|b| T::from_f64(b.as_f64())).collect(),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

fn add_bias<S: Scalar>(out: &mut Tensor<S>, bias: &[S]) {
    let plane = out.dims().plane_len();
    let n = out.dims().n;
    for i in 0..n {
        for (plane_vals, &b) in out.sample_mut(i).chunks_mut(plane).zip(bias) {
            for v in plane_vals {
                *v += b;
            }
        }
    }
}

fn bias_grad<S: Scalar>(grad_out: &Tensor<S>) -> Vec<S> {
    let d = grad_out.dims();
    let mut g = vec![S::zero(); d.c];
    for i in 0..d.n {
        for (acc, plane) in g.iter_mut().zip(grad_out.sample(i).chunks(d.plane_len())) {
            *acc += plane.iter().copied().sum::<S>();
        }
    }
    g
}

/// Per-sample weight gradients reduced in sample order.
fn reduce_weight_grad<'t, S: Scalar>(
    geo: &Geometry,
    n: usize,
    a: impl Fn(usize) -> &'t [S] + Sync,
    b: impl Fn(usize) -> &'t [S] + Sync,
) -> Vec<S> {
    let partials: Vec<Vec<S>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut gw = vec![S::zero(); geo.weight_len()];
            geo.weight_grad(a(i), b(i), &mut gw);
            gw
        })
        .collect();
    let mut total = vec![S::zero(); geo.weight_len()];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

/// Cross-correlation with zero padding; bias added per output channel.
pub fn conv2d_forward<S: Scalar>(x: &Tensor<S>, p: &Conv2dParams<S>) -> Result<Tensor<S>> {
    let (geo, out_dims) = p.geometry(x.dims())?;
    let mut out = Tensor::zeros(out_dims);
    let w = p.weight.data();
    out.data_mut()
        .par_chunks_mut(out_dims.sample_len())
        .enumerate()
        .for_each(|(i, o)| geo.gather(w, x.sample(i), o));
    add_bias(&mut out, &p.bias);
    Ok(out)
}

pub fn conv2d_backward<S: Scalar>(x: &Tensor<S>, p: &Conv2dParams<S>, grad_out: &Tensor<S>) -> Result<ConvGrads<S>> {
    let (geo, out_dims) = p.geometry(x.dims())?;
    if grad_out.dims() != out_dims {
        return shape_err(format!("conv2d_backward: grad_out {} != output {out_dims}", grad_out.dims()));
    }
    let mut grad_x = Tensor::zeros(x.dims());
    let w = p.weight.data();
    grad_x
        .data_mut()
        .par_chunks_mut(x.dims().sample_len())
        .enumerate()
        .for_each(|(i, gx)| geo.scatter(w, grad_out.sample(i), gx));
    let gw = reduce_weight_grad(
        &geo,
        x.dims().n,
        |i| grad_out.sample(i),
        |i| x.sample(i),
    );
    Ok(ConvGrads {
        grad_x,
        grad_weight: Tensor::from_vec(p.weight.dims(), gw)?,
        grad_bias: bias_grad(grad_out),
    })
}

/// Adjoint of strided convolution: every input value scatters a scaled copy
/// of its kernel into the output at stride-spaced positions, cropped by
/// `padding` on each side.
pub fn transposed_conv2d_forward<S: Scalar>(x: &Tensor<S>, p: &TransposedConv2dParams<S>) -> Result<Tensor<S>> {
    let (geo, out_dims) = p.geometry(x.dims())?;
    let mut out = Tensor::zeros(out_dims);
    let w = p.weight.data();
    out.data_mut()
        .par_chunks_mut(out_dims.sample_len())
        .enumerate()
        .for_each(|(i, o)| geo.scatter(w, x.sample(i), o));
    add_bias(&mut out, &p.bias);
    Ok(out)
}

/// The data gradient is an ordinary strided convolution of `grad_out` with
/// the same kernel.
pub fn transposed_conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    p: &TransposedConv2dParams<S>,
    grad_out: &Tensor<S>,
) -> Result<ConvGrads<S>> {
    let (geo, out_dims) = p.geometry(x.dims())?;
    if grad_out.dims() != out_dims {
        return shape_err(format!(
            "transposed_conv2d_backward: grad_out {} != output {out_dims}",
            grad_out.dims()
        ));
    }
    let mut grad_x = Tensor::zeros(x.dims());
    let w = p.weight.data();
    grad_x
        .data_mut()
        .par_chunks_mut(x.dims().sample_len())
        .enumerate()
        .for_each(|(i, gx)| geo.gather(w, grad_out.sample(i), gx));
    let gw = reduce_weight_grad(
        &geo,
        x.dims().n,
        |i| x.sample(i),
        |i| grad_out.sample(i),
    );
    Ok(ConvGrads {
        grad_x,
        grad_weight: Tensor::from_vec(p.weight.dims(), gw)?,
        grad_bias: bias_grad(grad_out),
    })
}
