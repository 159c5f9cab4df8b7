//! The recurrent fusion network.
//!
//! ```text
//! LR (1ch) ─▶ [tconv ×2 ─▶ PReLU]×s ─┬─▶ block1 ─┬─▶ block2 ─┐
//!                                    │           │           │
//!                                 level1      level2      level3
//!                                    └─────── concat ────────┘
//!                                               │
//!                                          fusion conv ─▶ HR (1ch)
//! ```
//!
//! The front end upsamples with learned transposed convolutions, so both
//! recurrent blocks work at the output resolution. Each block reuses its
//! convolution weights on every cycle. The level convolutions tap the
//! feature maps after the front end and after each block, and a final
//! convolution fuses the concatenated taps into the luminance output.

mod block;
mod checkpoint;
mod registry;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use block::{BlockTape, CycleTape, RecurrentResidualBlock};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub(crate) use checkpoint::Reader;
pub use registry::{GradMap, ParamEntry, ParamEntryMut, ParamKind};

use crate::error::{shape_err, Error, Result};
use crate::ops::{
    conv2d_backward, conv2d_forward, prelu_backward, prelu_forward, transposed_conv2d_backward,
    transposed_conv2d_forward, Conv2dParams, PReluParams, TransposedConv2dParams,
};
use crate::tensor::{Dims, Scalar, Tensor};
use block::{accumulate_conv, accumulate_slope};

pub const SUPPORTED_SCALES: [u32; 4] = [2, 3, 4, 8];

/// Network hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub scale: u32,
    pub channels: usize,
    pub cycles: usize,
    pub blocks: usize,
    pub levels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scale: 4,
            channels: 64,
            cycles: 10,
            blocks: 2,
            levels: 3,
        }
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "scale=x{} channels={} cycles={} blocks={} levels={}",
            self.scale, self.channels, self.cycles, self.blocks, self.levels
        )
    }
}

/// Kernel, stride and padding of one upsampling stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Exact doubling: `(n - 1) * 2 - 2 + 4 = 2n`.
pub const DOUBLING_STAGE: StageGeometry = StageGeometry {
    kernel: 4,
    stride: 2,
    padding: 1,
};

/// Exact tripling: `(n - 1) * 3 - 2 + 5 = 3n`.
pub const TRIPLING_STAGE: StageGeometry = StageGeometry {
    kernel: 5,
    stride: 3,
    padding: 1,
};

/// Where a level convolution reads its features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevelTap {
    FrontEnd,
    Block1,
    Block2,
}

impl LevelTap {
    pub fn name(self) -> &'static str {
        match self {
            LevelTap::FrontEnd => "level1",
            LevelTap::Block1 => "level2",
            LevelTap::Block2 => "level3",
        }
    }
}

impl ModelConfig {
    pub fn with_scale(scale: u32) -> Self {
        ModelConfig {
            scale,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_SCALES.contains(&self.scale) {
            return Err(Error::Config(format!(
                "scale must be one of {SUPPORTED_SCALES:?}, got {}",
                self.scale
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be >= 1".into()));
        }
        if self.cycles == 0 {
            return Err(Error::Config("cycles must be >= 1".into()));
        }
        if self.blocks != 2 {
            return Err(Error::Config(format!("the network has exactly 2 recurrent blocks, got {}", self.blocks)));
        }
        if !(1..=3).contains(&self.levels) {
            return Err(Error::Config(format!("levels must be 1, 2 or 3, got {}", self.levels)));
        }
        Ok(())
    }

    /// ×2/×4/×8 iterate the doubling stage 1/2/3 times; ×3 uses one
    /// tripling stage.
    pub fn upsample_plan(&self) -> Vec<StageGeometry> {
        match self.scale {
            2 => vec![DOUBLING_STAGE],
            3 => vec![TRIPLING_STAGE],
            4 => vec![DOUBLING_STAGE; 2],
            8 => vec![DOUBLING_STAGE; 3],
            _ => Vec::new(),
        }
    }

    /// Three levels tap every stage; two drop the middle tap; one keeps only
    /// the last block.
    pub fn taps(&self) -> Vec<LevelTap> {
        match self.levels {
            1 => vec![LevelTap::Block2],
            2 => vec![LevelTap::FrontEnd, LevelTap::Block2],
            _ => vec![LevelTap::FrontEnd, LevelTap::Block1, LevelTap::Block2],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpsampleStage<S = f32> {
    pub tconv: TransposedConv2dParams<S>,
    pub prelu: PReluParams<S>,
}

/// The assembled network. Every field is a distinct learnable tensor; the
/// recurrent blocks hold their shared weights once.
#[derive(Clone, Debug, PartialEq)]
pub struct DrfnModel<S = f32> {
    config: ModelConfig,
    pub stages: Vec<UpsampleStage<S>>,
    pub block1: RecurrentResidualBlock<S>,
    pub block2: RecurrentResidualBlock<S>,
    /// One convolution per entry of [`ModelConfig::taps`], in that order.
    pub level_convs: Vec<Conv2dParams<S>>,
    pub fusion: Conv2dParams<S>,
}

#[derive(Clone, Debug)]
struct StageTape<S> {
    input: Tensor<S>,
    pre: Tensor<S>,
}

/// Everything [`DrfnModel::backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTape<S = f32> {
    stages: Vec<StageTape<S>>,
    front: Tensor<S>,
    block1: BlockTape<S>,
    block1_out: Tensor<S>,
    block2: BlockTape<S>,
    block2_out: Tensor<S>,
    fused_input: Tensor<S>,
    output_dims: Dims,
}

impl<S> ForwardTape<S> {
    pub fn output_dims(&self) -> Dims {
        self.output_dims
    }
}

impl<S: Scalar> ForwardTape<S> {
    /// Every tensor fed to a PReLU, in forward order. The network is not
    /// differentiable where one of these is exactly zero.
    pub fn preactivations(&self) -> impl Iterator<Item = &Tensor<S>> {
        let blocks = [&self.block1, &self.block2]
            .into_iter()
            .flat_map(|b| b.cycles.iter().flat_map(|c| [&c.a_pre, &c.b_pre]));
        self.stages.iter().map(|s| &s.pre).chain(blocks)
    }
}

/// He initialization: zero-mean normal with std `sqrt(2 / fan_in)`.
fn he_fill<S: Scalar>(t: &mut Tensor<S>, fan_in: usize, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    for v in t.data_mut() {
        *v = S::from_f64(normal.sample(rng));
    }
}

fn he_conv<S: Scalar>(p: &mut Conv2dParams<S>, rng: &mut ChaCha8Rng) {
    let fan_in = p.in_channels() * p.kernel() * p.kernel();
    he_fill(&mut p.weight, fan_in, rng);
}

impl<S: Scalar> DrfnModel<S> {
    /// Every weight, bias and slope zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let mut in_c = 1;
        let stages = config
            .upsample_plan()
            .into_iter()
            .map(|g| {
                let stage = UpsampleStage {
                    tconv: TransposedConv2dParams::zeros(in_c, c, g.kernel, g.stride, g.padding),
                    prelu: PReluParams::with_slope(c, S::zero()),
                };
                in_c = c;
                stage
            })
            .collect();
        let mut block = RecurrentResidualBlock::zeros(c, config.cycles);
        block.prelu_a.slope.fill(S::zero());
        block.prelu_b.slope.fill(S::zero());
        let taps = config.taps().len();
        Ok(DrfnModel {
            config,
            stages,
            block1: block.clone(),
            block2: block,
            level_convs: (0..taps).map(|_| Conv2dParams::zeros(c, c, 3, 1, 1)).collect(),
            fusion: Conv2dParams::zeros(c * taps, 1, 3, 1, 1),
        })
    }

    /// He-initialized weights, zero biases, PReLU slopes at 0.33.
    /// Deterministic in `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for stage in &mut m.stages {
            let t = &mut stage.tconv;
            let fan_in = t.in_channels() * t.kernel() * t.kernel();
            he_fill(&mut t.weight, fan_in, &mut rng);
            stage.prelu = PReluParams::new(config.channels);
        }
        for block in [&mut m.block1, &mut m.block2] {
            he_conv(&mut block.conv_a, &mut rng);
            he_conv(&mut block.conv_b, &mut rng);
            he_conv(&mut block.conv_c, &mut rng);
            block.prelu_a = PReluParams::new(config.channels);
            block.prelu_b = PReluParams::new(config.channels);
        }
        for conv in &mut m.level_convs {
            he_conv(conv, &mut rng);
        }
        he_conv(&mut m.fusion, &mut rng);
        Ok(m)
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    /// Changes the recurrence depth of both blocks; the learnable
    /// parameters are untouched.
    pub fn set_cycles(&mut self, cycles: usize) -> Result<()> {
        let cfg = ModelConfig { cycles, ..self.config };
        cfg.validate()?;
        self.config = cfg;
        self.block1.cycles = cycles;
        self.block2.cycles = cycles;
        Ok(())
    }

    pub fn with_cycles(mut self, cycles: usize) -> Result<Self> {
        self.set_cycles(cycles)?;
        Ok(self)
    }

    pub fn cast<T: Scalar>(&self) -> DrfnModel<T> {
        DrfnModel {
            config: self.config,
            stages: self
                .stages
                .iter()
                .map(|s| UpsampleStage {
                    tconv: s.tconv.cast(),
                    prelu: s.prelu.cast(),
                })
                .collect(),
            block1: self.block1.cast(),
            block2: self.block2.cast(),
            level_convs: self.level_convs.iter().map(Conv2dParams::cast).collect(),
            fusion: self.fusion.cast(),
        }
    }

    /// Every learnable tensor exactly once, in a fixed order.
    pub fn registry(&self) -> Vec<ParamEntry<'_, S>> {
        let mut out = Vec::new();
        fn push_conv<'a, S: Scalar>(out: &mut Vec<ParamEntry<'a, S>>, prefix: &str, weight: &'a Tensor<S>, bias: &'a [S]) {
            out.push(ParamEntry {
                name: format!("{prefix}.weight"),
                kind: ParamKind::Weight,
                shape: weight.dims().as_array().to_vec(),
                values: weight.data(),
            });
            out.push(ParamEntry {
                name: format!("{prefix}.bias"),
                kind: ParamKind::Bias,
                shape: vec![bias.len()],
                values: bias,
            });
        }
        fn push_slope<'a, S: Scalar>(out: &mut Vec<ParamEntry<'a, S>>, name: String, p: &'a PReluParams<S>) {
            out.push(ParamEntry {
                name,
                kind: ParamKind::Slope,
                shape: vec![p.slope.len()],
                values: &p.slope,
            });
        }
        for (i, s) in self.stages.iter().enumerate() {
            push_conv(&mut out, &format!("upsample{}", i + 1), &s.tconv.weight, &s.tconv.bias);
            push_slope(&mut out, format!("upsample{}.prelu", i + 1), &s.prelu);
        }
        for (b, block) in [("block1", &self.block1), ("block2", &self.block2)] {
            push_conv(&mut out, &format!("{b}.conv_a"), &block.conv_a.weight, &block.conv_a.bias);
            push_slope(&mut out, format!("{b}.prelu_a"), &block.prelu_a);
            push_conv(&mut out, &format!("{b}.conv_b"), &block.conv_b.weight, &block.conv_b.bias);
            push_slope(&mut out, format!("{b}.prelu_b"), &block.prelu_b);
            push_conv(&mut out, &format!("{b}.conv_c"), &block.conv_c.weight, &block.conv_c.bias);
        }
        for (tap, conv) in self.config.taps().into_iter().zip(&self.level_convs) {
            push_conv(&mut out, tap.name(), &conv.weight, &conv.bias);
        }
        push_conv(&mut out, "fusion", &self.fusion.weight, &self.fusion.bias);
        out
    }

    /// Mutable counterpart of [`DrfnModel::registry`], same order.
    pub fn registry_mut(&mut self) -> Vec<ParamEntryMut<'_, S>> {
        let mut out = Vec::new();
        fn push_conv<'a, S: Scalar>(out: &mut Vec<ParamEntryMut<'a, S>>, prefix: &str, p: &'a mut Conv2dParams<S>) {
            let shape = p.weight.dims().as_array().to_vec();
            let bias_len = p.bias.len();
            out.push(ParamEntryMut {
                name: format!("{prefix}.weight"),
                kind: ParamKind::Weight,
                shape,
                values: p.weight.data_mut(),
            });
            out.push(ParamEntryMut {
                name: format!("{prefix}.bias"),
                kind: ParamKind::Bias,
                shape: vec![bias_len],
                values: &mut p.bias,
            });
        }
        fn push_tconv<'a, S: Scalar>(
            out: &mut Vec<ParamEntryMut<'a, S>>,
            prefix: &str,
            p: &'a mut TransposedConv2dParams<S>,
        ) {
            let shape = p.weight.dims().as_array().to_vec();
            let bias_len = p.bias.len();
            out.push(ParamEntryMut {
                name: format!("{prefix}.weight"),
                kind: ParamKind::Weight,
                shape,
                values: p.weight.data_mut(),
            });
            out.push(ParamEntryMut {
                name: format!("{prefix}.bias"),
                kind: ParamKind::Bias,
                shape: vec![bias_len],
                values: &mut p.bias,
            });
        }
        fn push_slope<'a, S: Scalar>(out: &mut Vec<ParamEntryMut<'a, S>>, name: String, p: &'a mut PReluParams<S>) {
            out.push(ParamEntryMut {
                name,
                kind: ParamKind::Slope,
                shape: vec![p.slope.len()],
                values: &mut p.slope,
            });
        }
        for (i, s) in self.stages.iter_mut().enumerate() {
            push_tconv(&mut out, &format!("upsample{}", i + 1), &mut s.tconv);
            push_slope(&mut out, format!("upsample{}.prelu", i + 1), &mut s.prelu);
        }
        for (b, block) in [("block1", &mut self.block1), ("block2", &mut self.block2)] {
            push_conv(&mut out, &format!("{b}.conv_a"), &mut block.conv_a);
            push_slope(&mut out, format!("{b}.prelu_a"), &mut block.prelu_a);
            push_conv(&mut out, &format!("{b}.conv_b"), &mut block.conv_b);
            push_slope(&mut out, format!("{b}.prelu_b"), &mut block.prelu_b);
            push_conv(&mut out, &format!("{b}.conv_c"), &mut block.conv_c);
        }
        for (tap, conv) in self.config.taps().into_iter().zip(&mut self.level_convs) {
            push_conv(&mut out, tap.name(), conv);
        }
        push_conv(&mut out, "fusion", &mut self.fusion);
        out
    }

    /// Total learnable scalars, each shared tensor counted once.
    pub fn param_count(&self) -> usize {
        self.registry().iter().map(|e| e.values.len()).sum()
    }

    /// Maps `(n, 1, h, w)` luminance to `(n, 1, scale·h, scale·w)`.
    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, ForwardTape<S>)> {
        if x.dims().c != 1 {
            return shape_err(format!("network input must have 1 channel, got {}", x.dims()));
        }
        let mut stages = Vec::with_capacity(self.stages.len());
        let mut feat = x.clone();
        for stage in &self.stages {
            let pre = transposed_conv2d_forward(&feat, &stage.tconv)?;
            let act = prelu_forward(&pre, &stage.prelu)?;
            stages.push(StageTape { input: feat, pre });
            feat = act;
        }
        let front = feat;
        let (block1_out, block1) = self.block1.forward(&front)?;
        let (block2_out, block2) = self.block2.forward(&block1_out)?;

        let taps = self.config.taps();
        let mut level_outs = Vec::with_capacity(taps.len());
        for (tap, conv) in taps.iter().zip(&self.level_convs) {
            let src = match tap {
                LevelTap::FrontEnd => &front,
                LevelTap::Block1 => &block1_out,
                LevelTap::Block2 => &block2_out,
            };
            level_outs.push(conv2d_forward(src, conv)?);
        }
        let fused_input = Tensor::concat(&level_outs.iter().collect::<Vec<_>>())?;
        let hr = conv2d_forward(&fused_input, &self.fusion)?;
        let output_dims = hr.dims();
        Ok((
            hr,
            ForwardTape {
                stages,
                front,
                block1,
                block1_out,
                block2,
                block2_out,
                fused_input,
                output_dims,
            },
        ))
    }

    /// Output only.
    pub fn predict(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.forward(x)?.0)
    }

    /// Gradients of every registry entry; shared recurrent weights receive
    /// the sum of their per-cycle contributions.
    pub fn backward(&self, tape: &ForwardTape<S>, grad_hr: &Tensor<S>) -> Result<GradMap<S>> {
        if grad_hr.dims() != tape.output_dims {
            return shape_err(format!(
                "backward: grad_hr {} != output {}",
                grad_hr.dims(),
                tape.output_dims
            ));
        }
        let mut grads = Self::zeros(self.config)?;

        let gf = conv2d_backward(&tape.fused_input, &self.fusion, grad_hr)?;
        accumulate_conv(&mut grads.fusion, &gf)?;

        let c = self.config.channels;
        let mut g_front = Tensor::zeros(tape.front.dims());
        let mut g_block1 = Tensor::zeros(tape.block1_out.dims());
        let mut g_block2 = Tensor::zeros(tape.block2_out.dims());
        for (i, tap) in self.config.taps().into_iter().enumerate() {
            let part = gf.grad_x.slice_channels(i * c, c)?;
            let (src, dst) = match tap {
                LevelTap::FrontEnd => (&tape.front, &mut g_front),
                LevelTap::Block1 => (&tape.block1_out, &mut g_block1),
                LevelTap::Block2 => (&tape.block2_out, &mut g_block2),
            };
            let gl = conv2d_backward(src, &self.level_convs[i], &part)?;
            accumulate_conv(&mut grads.level_convs[i], &gl)?;
            dst.add_assign(&gl.grad_x)?;
        }

        let (g_in2, b2) = self.block2.backward(&tape.block2, &g_block2)?;
        grads.block2 = b2;
        g_block1.add_assign(&g_in2)?;
        let (g_in1, b1) = self.block1.backward(&tape.block1, &g_block1)?;
        grads.block1 = b1;
        g_front.add_assign(&g_in1)?;

        let mut g = g_front;
        for (i, (stage, st)) in self.stages.iter().zip(&tape.stages).enumerate().rev() {
            let pg = prelu_backward(&st.pre, &stage.prelu, &g)?;
            accumulate_slope(&mut grads.stages[i].prelu, &pg.grad_slope);
            let tg = transposed_conv2d_backward(&st.input, &stage.tconv, &pg.grad_x)?;
            grads.stages[i].tconv.weight.add_assign(&tg.grad_weight)?;
            for (b, gb) in grads.stages[i].tconv.bias.iter_mut().zip(&tg.grad_bias) {
                *b += *gb;
            }
            g = tg.grad_x;
        }

        Ok(GradMap::from_entries(grads.registry()))
    }

    /// Applies `update(name, kind, values, grad)` to every registry entry.
    pub fn update_params(
        &mut self,
        grads: &GradMap<S>,
        mut update: impl FnMut(&str, ParamKind, &mut [S], &[S]) -> Result<()>,
    ) -> Result<()> {
        if grads.len() != self.registry().len() {
            return Err(Error::State(format!(
                "gradient map has {} entries, registry has {}",
                grads.len(),
                self.registry().len()
            )));
        }
        for entry in self.registry_mut() {
            let g = grads.require(&entry.name)?;
            if g.len() != entry.values.len() {
                return Err(Error::State(format!("gradient `{}` has wrong length", entry.name)));
            }
            update(&entry.name, entry.kind, entry.values, g)?;
        }
        Ok(())
    }
}

/// Per-layer parameter counts of a model, in registry order, with the
/// tensors of each layer grouped.
pub fn layer_param_counts<S: Scalar>(model: &DrfnModel<S>) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for e in model.registry() {
        let layer = e
            .name
            .rsplit_once('.')
            .filter(|(_, leaf)| matches!(*leaf, "weight" | "bias"))
            .map(|(l, _)| l.to_string())
            .unwrap_or(e.name.clone());
        match out.last_mut() {
            Some((name, n)) if *name == layer => *n += e.values.len(),
            _ => out.push((layer, e.values.len())),
        }
    }
    out
}

#[cfg(test)]
mod tests;
