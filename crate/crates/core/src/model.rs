//! backbone → one HR module per stage → paired ASPP → 1×1 classifier →
//! bilinear upsample to the input size.

use hopa_tensor::{ops, Conv2dParams, ConvGeometry, Module, NamedParam, Tensor4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::hr::{HrConfig, HrParams};
use crate::paired_aspp::{PairedAspp, PairedAsppConfig};

/// HR hyperparameters shared by the four stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HrSettings {
    pub order: usize,
    pub rank: usize,
    pub out_per_degree: usize,
}

impl HrSettings {
    pub fn for_stage(&self, in_channels: usize) -> HrConfig {
        HrConfig::uniform(in_channels, self.order, self.rank, self.out_per_degree)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub backbone: BackboneConfig,
    pub hr: HrSettings,
    pub paired_aspp: PairedAsppConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 255 {
            return Err(Error::config("num_classes", "must be in 2..=255"));
        }
        self.backbone.validate()?;
        self.hr.for_stage(1).validate()?;
        self.paired_aspp.validate()
    }
}

/// Names of the parameter groups, in forward order.
pub const GROUPS: [&str; 7] = ["backbone", "hr1", "hr2", "hr3", "hr4", "pa", "cls"];

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub hr: Vec<HrParams>,
    pub pa: PairedAspp,
    pub classifier: Conv2dParams,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(config.backbone.clone(), rng)?;
        let hr = config
            .backbone
            .widths
            .iter()
            .map(|&c| HrParams::new(config.hr.for_stage(c), rng))
            .collect::<Result<Vec<_>>>()?;
        let hr_out = [0, 1, 2, 3].map(|i| hr[i].out_channels());
        let pa = PairedAspp::new(config.paired_aspp.clone(), hr_out, rng)?;
        let classifier = Conv2dParams::kaiming(
            pa.out_channels(),
            config.num_classes,
            1,
            true,
            ConvGeometry::default(),
            rng,
        );
        Ok(Model {
            config,
            backbone,
            hr,
            pa,
            classifier,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Logits at the stride-8 grid, before upsampling.
    pub fn forward_coarse(&self, img: &Tensor4, training: bool) -> Result<Tensor4> {
        let xs = self.backbone.forward(img, training)?;
        let ys: Vec<Tensor4> = xs
            .iter()
            .zip(&self.hr)
            .map(|(x, hr)| hr.forward(x))
            .collect::<Result<_>>()?;
        let ys: [Tensor4; 4] = ys.try_into().expect("four stages");
        let fused = self.pa.forward(&ys, training)?;
        Ok(self.classifier.forward(&fused)?)
    }

    /// Logits (n, K, h, w) at the input resolution.
    pub fn forward(&self, img: &Tensor4, training: bool) -> Result<Tensor4> {
        let coarse = self.forward_coarse(img, training)?;
        let s = img.shape();
        Ok(ops::bilinear_resize(&coarse, s.h, s.w)?)
    }

    /// Parameters of one group of [`GROUPS`].
    pub fn group_params(&self, group: &str) -> Vec<NamedParam> {
        let mut out = Vec::new();
        match group {
            "backbone" => self.backbone.collect_params("backbone", &mut out),
            "pa" => self.pa.collect_params("pa", &mut out),
            "cls" => self.classifier.collect_params("cls", &mut out),
            g => {
                if let Some(i) = g.strip_prefix("hr").and_then(|i| i.parse::<usize>().ok()) {
                    if (1..=self.hr.len()).contains(&i) {
                        self.hr[i - 1].collect_params(g, &mut out);
                    }
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params("")
            .iter()
            .filter(|p| p.kind != hopa_tensor::ParamKind::Buffer)
            .map(|p| p.tensor.shape().numel())
            .sum()
    }
}

impl Module for Model {
    fn collect_params(&self, _prefix: &str, out: &mut Vec<NamedParam>) {
        for g in GROUPS {
            out.extend(self.group_params(g));
        }
    }
}
