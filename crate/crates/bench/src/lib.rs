//! Deterministic fixtures shared by the benchmarks in `benches/`.

use drfn_core::data::ImageY;
use drfn_core::ops::{Conv2dParams, TransposedConv2dParams};
use drfn_core::Tensor;

/// Smooth, non-constant values without an RNG.
fn wave(i: usize) -> f32 {
    0.5 + 0.4 * ((i as f32) * 0.618).sin()
}

pub fn tensor(n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let mut i = 0;
    Tensor::from_fn((n, c, h, w), |_, _, _, _| {
        i += 1;
        wave(i)
    })
}

pub fn conv3x3(channels: usize) -> Conv2dParams {
    let weight = tensor(channels, channels, 3, 3).map_unary(|v| (v - 0.5) * 0.2);
    Conv2dParams::new(weight, vec![0.01; channels], 1, 1).expect("valid kernel")
}

pub fn doubling(in_c: usize, out_c: usize) -> TransposedConv2dParams {
    let weight = tensor(in_c, out_c, 4, 4).map_unary(|v| (v - 0.5) * 0.2);
    TransposedConv2dParams::new(weight, vec![0.0; out_c], 2, 1).expect("valid kernel")
}

pub fn image(h: usize, w: usize) -> ImageY {
    ImageY::from_fn(h, w, |y, x| wave(y * 131 + x)).expect("nonempty")
}
