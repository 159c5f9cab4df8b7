use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Initial value of every PReLU slope.
pub const PRELU_INIT_SLOPE: f64 = 0.33;

/// Per-channel PReLU slopes.
#[derive(Clone, Debug, PartialEq)]
pub struct PReluParams<S = f32> {
    pub slope: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct PReluGrads<S = f32> {
    pub grad_x: Tensor<S>,
    pub grad_slope: Vec<S>,
}

impl<S: Scalar> PReluParams<S> {
    pub fn new(channels: usize) -> Self {
        Self::with_slope(channels, S::from_f64(PRELU_INIT_SLOPE))
    }

    pub fn with_slope(channels: usize, slope: S) -> Self {
        PReluParams {
            slope: vec![slope; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.slope.len()
    }

    pub fn cast<T: Scalar>(&self) -> PReluParams<T> {
        PReluParams {
            slope: self.slope.iter().map(|s| T::from_f64(s.as_f64())).collect(),
        }
    }
}

fn check<S: Scalar>(x: &Tensor<S>, p: &PReluParams<S>) -> Result<()> {
    if p.slope.len() != x.dims().c {
        return shape_err(format!(
            "prelu has {} slopes for {} channels",
            p.slope.len(),
            x.dims().c
        ));
    }
    Ok(())
}

pub fn prelu_forward<S: Scalar>(x: &Tensor<S>, p: &PReluParams<S>) -> Result<Tensor<S>> {
    check(x, p)?;
    let d = x.dims();
    let mut out = x.clone();
    for i in 0..d.n {
        for (plane, &a) in out.sample_mut(i).chunks_mut(d.plane_len()).zip(&p.slope) {
            for v in plane {
                if *v < S::zero() {
                    *v *= a;
                }
            }
        }
    }
    Ok(out)
}

/// Exact zeros take the positive branch.
pub fn prelu_backward<S: Scalar>(x: &Tensor<S>, p: &PReluParams<S>, grad_out: &Tensor<S>) -> Result<PReluGrads<S>> {
    check(x, p)?;
    if grad_out.dims() != x.dims() {
        return shape_err(format!("prelu_backward: grad_out {} != input {}", grad_out.dims(), x.dims()));
    }
    let d = x.dims();
    let plane = d.plane_len();
    let mut grad_x = grad_out.clone();
    let mut grad_slope = vec![S::zero(); d.c];
    for i in 0..d.n {
        let xs = x.sample(i);
        let gx = grad_x.sample_mut(i);
        for j in 0..d.c {
            let a = p.slope[j];
            let mut acc = S::zero();
            for (g, &v) in gx[j * plane..(j + 1) * plane].iter_mut().zip(&xs[j * plane..(j + 1) * plane]) {
                if v < S::zero() {
                    acc += *g * v;
                    *g *= a;
                }
            }
            grad_slope[j] += acc;
        }
    }
    Ok(PReluGrads { grad_x, grad_slope })
}
