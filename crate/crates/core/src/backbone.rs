//! Dilated residual backbone with four stage outputs at strides (2, 4, 8, 8).
//!
//! The stem is a 3×3 stride-2 convolution with BN and ReLU followed by a 3×3
//! stride-1 max pool, so the first stage already runs at stride 2. Stages use
//! strides (1, 2, 2, 1) and dilations (1, 1, 2, 4); a strided convolution
//! always runs at dilation 1 and the stage dilation applies from the next
//! convolution on.

use hopa_tensor::layers::join;
use hopa_tensor::{
    ops, BatchNormParams, Conv2dParams, ConvGeometry, Module, NamedParam, Shape4, Tensor4,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STAGE_STRIDES: [usize; 4] = [1, 2, 2, 1];
pub const STAGE_DILATIONS: [usize; 4] = [1, 1, 2, 4];
const STEM_STRIDE: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub blocks_per_stage: [usize; 4],
    pub stem_width: usize,
    pub widths: [usize; 4],
}

impl BackboneConfig {
    /// Desk-scale net: two basic blocks per stage.
    pub fn toy() -> Self {
        BackboneConfig {
            blocks_per_stage: [2, 2, 2, 2],
            stem_width: 8,
            widths: [8, 16, 16, 16],
        }
    }

    /// ResNet-101 depth with basic blocks. Constructible, too slow to train here.
    pub fn paper() -> Self {
        BackboneConfig {
            blocks_per_stage: [3, 4, 23, 3],
            stem_width: 64,
            widths: [64, 128, 256, 512],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::config(
                "backbone",
                format!("unknown preset {other:?}, expected toy or paper"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks_per_stage.contains(&0) {
            return Err(Error::config(
                "backbone.blocks_per_stage",
                "every stage needs at least one block",
            ));
        }
        if self.stem_width == 0 || self.widths.contains(&0) {
            return Err(Error::config("backbone.widths", "widths must be positive"));
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn divisor(&self) -> usize {
        STEM_STRIDE * STAGE_STRIDES.iter().product::<usize>()
    }

    /// Per-stage (stride, dilation, c_in, c_out) of every block.
    fn block_plan(&self) -> Vec<Vec<(usize, usize, usize, usize)>> {
        let mut c_in = self.stem_width;
        (0..4)
            .map(|s| {
                (0..self.blocks_per_stage[s])
                    .map(|b| {
                        let stride = if b == 0 { STAGE_STRIDES[s] } else { 1 };
                        let spec = (stride, STAGE_DILATIONS[s], c_in, self.widths[s]);
                        c_in = self.widths[s];
                        spec
                    })
                    .collect()
            })
            .collect()
    }

    /// Output shapes of X_1..X_4 for an input shape, without running anything.
    pub fn output_shapes(&self, input: Shape4) -> Result<[Shape4; 4]> {
        check_input(input, self.divisor())?;
        let mut h = input.h / STEM_STRIDE;
        let mut w = input.w / STEM_STRIDE;
        let mut out = [Shape4::scalar(); 4];
        for s in 0..4 {
            h /= STAGE_STRIDES[s];
            w /= STAGE_STRIDES[s];
            out[s] = Shape4::new(input.n, self.widths[s], h, w);
        }
        Ok(out)
    }
}

fn check_input(shape: Shape4, divisor: usize) -> Result<()> {
    if shape.c != 3 {
        return Err(Error::Validation(format!(
            "backbone expects 3 input channels, got {shape}"
        )));
    }
    if shape.h == 0
        || shape.w == 0
        || !shape.h.is_multiple_of(divisor)
        || !shape.w.is_multiple_of(divisor)
    {
        return Err(Error::Validation(format!(
            "input sides of {shape} must be positive multiples of {divisor}"
        )));
    }
    Ok(())
}

/// Output stride `j`, receptive field `r` and width `c` of each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageInfo {
    pub stride: usize,
    pub receptive_field: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageMetadata {
    pub stages: [StageInfo; 4],
}

/// Running `(r, j)` fold over a chain of windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfState {
    pub r: usize,
    pub j: usize,
}

impl RfState {
    pub const INPUT: RfState = RfState { r: 1, j: 1 };

    /// `r += (k − 1)·d·j`, then `j *= s`.
    pub fn push(self, k: usize, stride: usize, dilation: usize) -> RfState {
        RfState {
            r: self.r + (k - 1) * dilation * self.j,
            j: self.j * stride,
        }
    }
}

pub fn stage_metadata(cfg: &BackboneConfig) -> StageMetadata {
    let mut st = RfState::INPUT.push(3, STEM_STRIDE, 1).push(3, 1, 1);
    let plan = cfg.block_plan();
    let mut stages = [StageInfo {
        stride: 0,
        receptive_field: 0,
        channels: 0,
    }; 4];
    for (s, blocks) in plan.iter().enumerate() {
        for &(stride, dil, _, _) in blocks {
            st = st
                .push(3, stride, conv1_dilation(stride, dil))
                .push(3, 1, dil);
        }
        stages[s] = StageInfo {
            stride: st.j,
            receptive_field: st.r,
            channels: cfg.widths[s],
        };
    }
    StageMetadata { stages }
}

fn conv1_dilation(stride: usize, dilation: usize) -> usize {
    if stride > 1 {
        1
    } else {
        dilation
    }
}

#[derive(Debug, Clone)]
pub struct BasicBlock {
    pub conv1: Conv2dParams,
    pub bn1: BatchNormParams,
    pub conv2: Conv2dParams,
    pub bn2: BatchNormParams,
    pub downsample: Option<(Conv2dParams, BatchNormParams)>,
}

impl BasicBlock {
    pub fn new<R: Rng + ?Sized>(
        stride: usize,
        dilation: usize,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        let d1 = conv1_dilation(stride, dilation);
        let g1 = ConvGeometry::new(stride, d1, d1);
        let g2 = ConvGeometry::same(3, dilation);
        let downsample = (stride != 1 || c_in != c_out).then(|| {
            (
                Conv2dParams::kaiming(c_in, c_out, 1, false, ConvGeometry::new(stride, 1, 0), rng),
                BatchNormParams::new(c_out),
            )
        });
        BasicBlock {
            conv1: Conv2dParams::kaiming(c_in, c_out, 3, false, g1, rng),
            bn1: BatchNormParams::new(c_out),
            conv2: Conv2dParams::kaiming(c_out, c_out, 3, false, g2, rng),
            bn2: BatchNormParams::zero_gamma(c_out),
            downsample,
        }
    }

    pub fn forward(&self, x: &Tensor4, training: bool) -> Result<Tensor4> {
        let y = ops::relu(&self.bn1.forward(&self.conv1.forward(x)?, training)?);
        let y = self.bn2.forward(&self.conv2.forward(&y)?, training)?;
        let shortcut = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, training)?,
            None => x.clone(),
        };
        Ok(ops::relu(&ops::add(&y, &shortcut)?))
    }
}

impl Module for BasicBlock {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        self.conv1.collect_params(&join(prefix, "conv1"), out);
        self.bn1.collect_params(&join(prefix, "bn1"), out);
        self.conv2.collect_params(&join(prefix, "conv2"), out);
        self.bn2.collect_params(&join(prefix, "bn2"), out);
        if let Some((conv, bn)) = &self.downsample {
            conv.collect_params(&join(prefix, "down.conv"), out);
            bn.collect_params(&join(prefix, "down.bn"), out);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub stem_conv: Conv2dParams,
    pub stem_bn: BatchNormParams,
    pub stages: Vec<Vec<BasicBlock>>,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(config: BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let stem_conv = Conv2dParams::kaiming(
            3,
            config.stem_width,
            3,
            false,
            ConvGeometry::new(STEM_STRIDE, 1, 1),
            rng,
        );
        let stem_bn = BatchNormParams::new(config.stem_width);
        let stages = config
            .block_plan()
            .into_iter()
            .map(|blocks| {
                blocks
                    .into_iter()
                    .map(|(s, d, ci, co)| BasicBlock::new(s, d, ci, co, rng))
                    .collect()
            })
            .collect();
        Ok(Backbone {
            config,
            stem_conv,
            stem_bn,
            stages,
        })
    }

    /// X_1..X_4.
    pub fn forward(&self, img: &Tensor4, training: bool) -> Result<[Tensor4; 4]> {
        check_input(img.shape(), self.config.divisor())?;
        let mut x = ops::relu(
            &self
                .stem_bn
                .forward(&self.stem_conv.forward(img)?, training)?,
        );
        x = ops::max_pool(&x, 3, 1, 1)?;
        let mut outs = Vec::with_capacity(4);
        for blocks in &self.stages {
            for block in blocks {
                x = block.forward(&x, training)?;
            }
            outs.push(x.clone());
        }
        Ok(outs.try_into().expect("four stages"))
    }
}

impl Module for Backbone {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        self.stem_conv
            .collect_params(&join(prefix, "stem.conv"), out);
        self.stem_bn.collect_params(&join(prefix, "stem.bn"), out);
        for (s, blocks) in self.stages.iter().enumerate() {
            for (b, block) in blocks.iter().enumerate() {
                block.collect_params(&join(prefix, &format!("layer{}.{b}", s + 1)), out);
            }
        }
    }
}
