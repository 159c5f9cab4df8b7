use crate::error::{shape_err, Result};
use crate::ops::{
    conv2d_backward, conv2d_forward, prelu_backward, prelu_forward, Conv2dParams, ConvGrads, PReluParams,
};
use crate::tensor::{Scalar, Tensor};

/// Residual unit whose three convolutions are reused on every cycle:
///
/// ```text
/// x_k = conv_c(prelu_b(conv_b(prelu_a(conv_a(x_{k-1}))))) + x_{k-1}
/// ```
///
/// All convolutions are 3x3, channels to channels, stride 1, padding 1.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentResidualBlock<S = f32> {
    pub conv_a: Conv2dParams<S>,
    pub conv_b: Conv2dParams<S>,
    pub conv_c: Conv2dParams<S>,
    pub prelu_a: PReluParams<S>,
    pub prelu_b: PReluParams<S>,
    pub cycles: usize,
}

/// Intermediates of one cycle.
#[derive(Clone, Debug)]
pub struct CycleTape<S = f32> {
    pub input: Tensor<S>,
    pub a_pre: Tensor<S>,
    pub a_act: Tensor<S>,
    pub b_pre: Tensor<S>,
    pub b_act: Tensor<S>,
}

#[derive(Clone, Debug)]
pub struct BlockTape<S = f32> {
    pub cycles: Vec<CycleTape<S>>,
}

pub(crate) fn accumulate_conv<S: Scalar>(dst: &mut Conv2dParams<S>, g: &ConvGrads<S>) -> Result<()> {
    dst.weight.add_assign(&g.grad_weight)?;
    for (b, &gb) in dst.bias.iter_mut().zip(&g.grad_bias) {
        *b += gb;
    }
    Ok(())
}

pub(crate) fn accumulate_slope<S: Scalar>(dst: &mut PReluParams<S>, g: &[S]) {
    for (s, &gs) in dst.slope.iter_mut().zip(g) {
        *s += gs;
    }
}

impl<S: Scalar> RecurrentResidualBlock<S> {
    /// All weights zero, slopes at their initial value.
    pub fn zeros(channels: usize, cycles: usize) -> Self {
        let conv = || Conv2dParams::zeros(channels, channels, 3, 1, 1);
        RecurrentResidualBlock {
            conv_a: conv(),
            conv_b: conv(),
            conv_c: conv(),
            prelu_a: PReluParams::new(channels),
            prelu_b: PReluParams::new(channels),
            cycles,
        }
    }

    pub fn channels(&self) -> usize {
        self.conv_a.out_channels()
    }

    /// Same parameters, different recurrence depth.
    pub fn with_cycles(&self, cycles: usize) -> Self {
        RecurrentResidualBlock { cycles, ..self.clone() }
    }

    /// Learnable scalars in the three convolutions, counted once.
    pub fn conv_param_count(&self) -> usize {
        self.conv_a.param_count() + self.conv_b.param_count() + self.conv_c.param_count()
    }

    /// Learnable scalars of all layers, counted once.
    pub fn param_count(&self) -> usize {
        self.conv_param_count() + self.prelu_a.channels() + self.prelu_b.channels()
    }

    /// Convolution parameters an unshared stack of `cycles` copies would hold.
    pub fn unrolled_conv_param_count(&self) -> usize {
        self.conv_param_count() * self.cycles
    }

    pub fn cast<T: Scalar>(&self) -> RecurrentResidualBlock<T> {
        RecurrentResidualBlock {
            conv_a: self.conv_a.cast(),
            conv_b: self.conv_b.cast(),
            conv_c: self.conv_c.cast(),
            prelu_a: self.prelu_a.cast(),
            prelu_b: self.prelu_b.cast(),
            cycles: self.cycles,
        }
    }

    /// A block-shaped container with every parameter set to zero, used to
    /// accumulate gradients.
    pub(crate) fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.channels(), self.cycles);
        z.prelu_a.slope.fill(S::zero());
        z.prelu_b.slope.fill(S::zero());
        z
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, BlockTape<S>)> {
        if x.dims().c != self.channels() {
            return shape_err(format!(
                "recurrent block expects {} channels, got {}",
                self.channels(),
                x.dims().c
            ));
        }
        let mut cycles = Vec::with_capacity(self.cycles);
        let mut state = x.clone();
        for _ in 0..self.cycles {
            let a_pre = conv2d_forward(&state, &self.conv_a)?;
            let a_act = prelu_forward(&a_pre, &self.prelu_a)?;
            let b_pre = conv2d_forward(&a_act, &self.conv_b)?;
            let b_act = prelu_forward(&b_pre, &self.prelu_b)?;
            let mut next = conv2d_forward(&b_act, &self.conv_c)?;
            next.add_assign(&state)?;
            cycles.push(CycleTape {
                input: state,
                a_pre,
                a_act,
                b_pre,
                b_act,
            });
            state = next;
        }
        Ok((state, BlockTape { cycles }))
    }

    /// Returns the gradient with respect to the block input and a
    /// block-shaped container holding parameter gradients summed over every
    /// cycle.
    pub fn backward(&self, tape: &BlockTape<S>, grad_out: &Tensor<S>) -> Result<(Tensor<S>, Self)> {
        let mut grads = self.zeros_like();
        let mut g = grad_out.clone();
        for cyc in tape.cycles.iter().rev() {
            let gc = conv2d_backward(&cyc.b_act, &self.conv_c, &g)?;
            accumulate_conv(&mut grads.conv_c, &gc)?;
            let pb = prelu_backward(&cyc.b_pre, &self.prelu_b, &gc.grad_x)?;
            accumulate_slope(&mut grads.prelu_b, &pb.grad_slope);
            let gb = conv2d_backward(&cyc.a_act, &self.conv_b, &pb.grad_x)?;
            accumulate_conv(&mut grads.conv_b, &gb)?;
            let pa = prelu_backward(&cyc.a_pre, &self.prelu_a, &gb.grad_x)?;
            accumulate_slope(&mut grads.prelu_a, &pa.grad_slope);
            let ga = conv2d_backward(&cyc.input, &self.conv_a, &pa.grad_x)?;
            accumulate_conv(&mut grads.conv_a, &ga)?;
            // skip connection
            g.add_assign(&ga.grad_x)?;
        }
        Ok((g, grads))
    }
}
