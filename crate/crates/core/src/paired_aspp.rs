//! Paired atrous spatial pyramid pooling.
//!
//! Each early stage map `Y_i` (i = 1..3) is resized to the last stage's grid
//! and concatenated with `Y_4`, giving `V_{i,4}`. Five branches read
//! `V_{1,4}`, `V_{2,4}`, `V_{3,4}`, `Y_4` (3×3 atrous conv, BN, ReLU) and
//! `GAP(Y_4)` (1×1 conv, ReLU, broadcast), and a 1×1 projection with BN and
//! ReLU fuses their concatenation.

use std::fmt;

use hopa_tensor::layers::join;
use hopa_tensor::{ops, BatchNormParams, Conv2dParams, ConvGeometry, Module, NamedParam, Tensor4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::StageMetadata;
use crate::error::{Error, Result};

/// Which pair gets which rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Combination {
    /// Largest rate on the deepest pair: V34←rates[0], V24←rates[1], V14←rates[2].
    One,
    /// Largest rate on the shallowest pair: V34←rates[2], V14←rates[0].
    Two,
}

impl TryFrom<u8> for Combination {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Combination::One),
            2 => Ok(Combination::Two),
            other => Err(format!("combination must be 1 or 2, got {other}")),
        }
    }
}

impl From<Combination> for u8 {
    fn from(c: Combination) -> u8 {
        match c {
            Combination::One => 1,
            Combination::Two => 2,
        }
    }
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "combination-{}", u8::from(*self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchSource {
    /// `V_{i,4}` for i in 1..=3.
    Pair(usize),
    Stage4,
    Stage4Gap,
}

impl fmt::Display for BranchSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchSource::Pair(i) => write!(f, "V{i}4"),
            BranchSource::Stage4 => write!(f, "Y4"),
            BranchSource::Stage4Gap => write!(f, "GAP(Y4)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchSpec {
    pub source: BranchSource,
    /// `None` for the pooling branch.
    pub rate: Option<usize>,
    pub c_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairedAsppConfig {
    pub combination: Combination,
    /// Rates in combination-1 order: V34, V24, V14, Y4.
    #[serde(default = "default_rates")]
    pub rates: [usize; 4],
    pub branch_width: usize,
    pub proj_width: usize,
}

fn default_rates() -> [usize; 4] {
    [18, 12, 6, 1]
}

impl PairedAsppConfig {
    pub fn new(combination: Combination, branch_width: usize, proj_width: usize) -> Self {
        PairedAsppConfig {
            combination,
            rates: default_rates(),
            branch_width,
            proj_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.contains(&0) {
            return Err(Error::config("paired_aspp.rates", "rates must be positive"));
        }
        if self.branch_width == 0 || self.proj_width == 0 {
            return Err(Error::config("paired_aspp", "widths must be positive"));
        }
        Ok(())
    }

    /// The five branches in fixed source order V14, V24, V34, Y4, GAP.
    pub fn branches(&self) -> [BranchSpec; 5] {
        let [r34, r24, r14, r4] = self.rates;
        let (r14, r34) = match self.combination {
            Combination::One => (r14, r34),
            Combination::Two => (r34, r14),
        };
        let c_out = self.branch_width;
        let b = |source, rate| BranchSpec {
            source,
            rate,
            c_out,
        };
        [
            b(BranchSource::Pair(1), Some(r14)),
            b(BranchSource::Pair(2), Some(r24)),
            b(BranchSource::Pair(3), Some(r34)),
            b(BranchSource::Stage4, Some(r4)),
            b(BranchSource::Stage4Gap, None),
        ]
    }
}

/// `V_{i,4} = concat(resize(Y_i), Y_4)` for i = 1, 2, 3.
pub fn pair(ys: &[Tensor4; 4]) -> Result<[Tensor4; 3]> {
    let y4 = &ys[3];
    let s4 = y4.shape();
    let mut out = Vec::with_capacity(3);
    for y in &ys[..3] {
        let s = y.shape();
        if s.n != s4.n {
            return Err(Error::Tensor(hopa_tensor::TensorError::ShapeMismatch {
                op: "pair",
                left: s,
                right: s4,
            }));
        }
        let aligned = if (s.h, s.w) == (s4.h, s4.w) {
            y.clone()
        } else {
            ops::bilinear_resize(y, s4.h, s4.w)?
        };
        out.push(ops::concat_channels(&[aligned, y4.clone()])?);
    }
    Ok(out.try_into().expect("three pairs"))
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub spec: BranchSpec,
    pub conv: Conv2dParams,
    /// Atrous branches only.
    pub bn: Option<BatchNormParams>,
}

#[derive(Debug, Clone)]
pub struct PairedAspp {
    pub config: PairedAsppConfig,
    pub in_channels: [usize; 4],
    pub branches: Vec<Branch>,
    pub proj: Conv2dParams,
    pub proj_bn: BatchNormParams,
}

impl PairedAspp {
    /// `in_channels` are the widths of Y_1..Y_4.
    pub fn new<R: Rng + ?Sized>(
        config: PairedAsppConfig,
        in_channels: [usize; 4],
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c4 = in_channels[3];
        let branches = config
            .branches()
            .into_iter()
            .map(|spec| {
                let (c_in, kernel, geom) = match (spec.source, spec.rate) {
                    (BranchSource::Pair(i), Some(d)) => {
                        (in_channels[i - 1] + c4, 3, ConvGeometry::same(3, d))
                    }
                    (BranchSource::Stage4, Some(d)) => (c4, 3, ConvGeometry::same(3, d)),
                    _ => (c4, 1, ConvGeometry::default()),
                };
                let pooled = spec.source == BranchSource::Stage4Gap;
                Branch {
                    spec,
                    conv: Conv2dParams::kaiming(c_in, spec.c_out, kernel, pooled, geom, rng),
                    bn: (!pooled).then(|| BatchNormParams::new(spec.c_out)),
                }
            })
            .collect::<Vec<_>>();
        let total: usize = branches.iter().map(|b| b.spec.c_out).sum();
        let proj = Conv2dParams::kaiming(
            total,
            config.proj_width,
            1,
            true,
            ConvGeometry::default(),
            rng,
        );
        Ok(PairedAspp {
            proj_bn: BatchNormParams::new(config.proj_width),
            config,
            in_channels,
            branches,
            proj,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.config.proj_width
    }

    fn check_inputs(&self, ys: &[Tensor4; 4]) -> Result<()> {
        for (i, (y, &c)) in ys.iter().zip(&self.in_channels).enumerate() {
            if y.shape().c != c {
                return Err(Error::Validation(format!(
                    "Y{} has shape {}, module expects {c} channels",
                    i + 1,
                    y.shape()
                )));
            }
        }
        Ok(())
    }

    /// U_1..U_5, each (n, c_out, h4, w4).
    pub fn branch_outputs(&self, ys: &[Tensor4; 4], training: bool) -> Result<Vec<Tensor4>> {
        self.check_inputs(ys)?;
        let pairs = pair(ys)?;
        let y4 = &ys[3];
        let (h, w) = (y4.shape().h, y4.shape().w);
        self.branches
            .iter()
            .map(|b| {
                let input = match b.spec.source {
                    BranchSource::Pair(i) => &pairs[i - 1],
                    BranchSource::Stage4 => y4,
                    BranchSource::Stage4Gap => {
                        let pooled = ops::relu(&b.conv.forward(&ops::global_avg_pool(y4))?);
                        return Ok(ops::broadcast_spatial(&pooled, h, w)?);
                    }
                };
                let bn = b.bn.as_ref().expect("atrous branches carry BN");
                Ok(ops::relu(&bn.forward(&b.conv.forward(input)?, training)?))
            })
            .collect()
    }

    pub fn forward(&self, ys: &[Tensor4; 4], training: bool) -> Result<Tensor4> {
        let cat = ops::concat_channels(&self.branch_outputs(ys, training)?)?;
        let fused = self.proj_bn.forward(&self.proj.forward(&cat)?, training)?;
        Ok(ops::relu(&fused))
    }
}

impl Module for PairedAspp {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        for (k, b) in self.branches.iter().enumerate() {
            let name = join(prefix, &format!("branch.{}", k + 1));
            b.conv.collect_params(&join(&name, "conv"), out);
            if let Some(bn) = &b.bn {
                bn.collect_params(&join(&name, "bn"), out);
            }
        }
        self.proj.collect_params(&join(prefix, "proj"), out);
        self.proj_bn.collect_params(&join(prefix, "proj.bn"), out);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BranchInterval {
    pub source: String,
    pub rate: usize,
    pub lo: usize,
    pub hi: usize,
}

impl BranchInterval {
    pub fn overlaps(&self, other: &BranchInterval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScaleCoverage {
    pub intervals: Vec<BranchInterval>,
    /// `max(hi) − min(lo)` over all atrous branches.
    pub union_span: usize,
    /// Pairs of branch intervals that intersect.
    pub overlaps: usize,
}

/// Receptive-field interval of every atrous branch.
///
/// A 3×3 conv at rate `d` on the stride-`j_4` grid adds `2·d·j_4` to the
/// receptive field of whatever it reads. A pair branch reads two stages, so
/// its interval runs from the smaller to the larger source field, both grown
/// by that amount. The pooling branch sees the whole image and is left out.
pub fn scale_coverage(cfg: &PairedAsppConfig, meta: &StageMetadata) -> ScaleCoverage {
    let j4 = meta.stages[3].stride;
    let r4 = meta.stages[3].receptive_field;
    let intervals: Vec<BranchInterval> = cfg
        .branches()
        .iter()
        .filter_map(|b| {
            let d = b.rate?;
            let (lo, hi) = match b.source {
                BranchSource::Pair(i) => {
                    let ri = meta.stages[i - 1].receptive_field;
                    (ri.min(r4), ri.max(r4))
                }
                BranchSource::Stage4 => (r4, r4),
                BranchSource::Stage4Gap => return None,
            };
            let grow = 2 * d * j4;
            Some(BranchInterval {
                source: b.source.to_string(),
                rate: d,
                lo: lo + grow,
                hi: hi + grow,
            })
        })
        .collect();
    let lo = intervals.iter().map(|i| i.lo).min().unwrap_or(0);
    let hi = intervals.iter().map(|i| i.hi).max().unwrap_or(0);
    let mut overlaps = 0;
    for (a, x) in intervals.iter().enumerate() {
        overlaps += intervals[a + 1..].iter().filter(|y| x.overlaps(y)).count();
    }
    ScaleCoverage {
        intervals,
        union_span: hi - lo,
        overlaps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{stage_metadata, BackboneConfig};
    use hopa_tensor::Array4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::constant(Array4::from_fn(shape, |_, _, _, _| {
            rng.gen_range(-1.0..1.0)
        }))
    }

    #[test]
    fn rate_wiring() {
        let rates = |c| {
            PairedAsppConfig::new(c, 4, 4)
                .branches()
                .iter()
                .map(|b| b.rate)
                .collect::<Vec<_>>()
        };
        assert_eq!(
            rates(Combination::One),
            [Some(6), Some(12), Some(18), Some(1), None]
        );
        assert_eq!(
            rates(Combination::Two),
            [Some(18), Some(12), Some(6), Some(1), None]
        );
    }

    #[test]
    fn pair_shapes_and_inverse() {
        let y1 = random([1, 5, 56, 56], 1);
        let y4 = random([1, 5, 14, 14], 4);
        let v = pair(&[
            y1,
            random([1, 5, 28, 28], 2),
            random([1, 5, 14, 14], 3),
            y4.clone(),
        ])
        .unwrap();
        for vi in &v {
            assert_eq!(vi.shape().dims(), [1, 10, 14, 14]);
        }
        assert_eq!(
            *ops::slice_channels(&v[0], 5, 5).unwrap().value(),
            *y4.value()
        );
    }

    #[test]
    fn batch_mismatch_rejected() {
        let ys = [
            random([2, 2, 4, 4], 0),
            random([1, 2, 4, 4], 1),
            random([1, 2, 4, 4], 2),
            random([1, 2, 4, 4], 3),
        ];
        assert!(pair(&ys).is_err());
    }

    #[test]
    fn combinations_share_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = PairedAspp::new(
            PairedAsppConfig::new(Combination::One, 4, 6),
            [3, 4, 5, 6],
            &mut rng,
        )
        .unwrap();
        let b = PairedAspp::new(
            PairedAsppConfig::new(Combination::Two, 4, 6),
            [3, 4, 5, 6],
            &mut rng,
        )
        .unwrap();
        let shapes = |m: &PairedAspp| {
            m.params("pa")
                .into_iter()
                .map(|p| (p.name, p.tensor.shape()))
                .collect::<Vec<_>>()
        };
        assert_eq!(shapes(&a), shapes(&b));
        let ys = [
            random([1, 3, 8, 8], 1),
            random([1, 4, 4, 4], 2),
            random([1, 5, 2, 2], 3),
            random([1, 6, 2, 2], 4),
        ];
        assert_eq!(
            a.forward(&ys, true).unwrap().shape(),
            b.forward(&ys, true).unwrap().shape()
        );
    }

    #[test]
    fn param_names() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = PairedAspp::new(
            PairedAsppConfig::new(Combination::One, 2, 2),
            [1, 1, 1, 1],
            &mut rng,
        )
        .unwrap();
        let names: Vec<String> = m.params("pa").into_iter().map(|p| p.name).collect();
        assert!(names.contains(&"pa.branch.1.conv".to_string()));
        assert!(names.contains(&"pa.branch.5.conv.bias".to_string()));
        assert!(names.contains(&"pa.proj".to_string()));
        assert!(!names.iter().any(|n| n.starts_with("pa.branch.5.bn")));
    }

    #[test]
    fn zero_branches_give_projection_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = PairedAspp::new(
            PairedAsppConfig::new(Combination::One, 3, 2),
            [2, 2, 2, 2],
            &mut rng,
        )
        .unwrap();
        for b in &m.branches {
            b.conv.weight.value_mut().fill(0.0);
        }
        m.proj
            .bias
            .as_ref()
            .unwrap()
            .value_mut()
            .data_mut()
            .copy_from_slice(&[0.7, 1.9]);
        m.proj_bn
            .running_mean
            .value_mut()
            .data_mut()
            .copy_from_slice(&[0.2, -0.1]);
        let ys = [
            random([1, 2, 4, 4], 1),
            random([1, 2, 2, 2], 2),
            random([1, 2, 2, 2], 3),
            random([1, 2, 2, 2], 4),
        ];
        let y = m.forward(&ys, false).unwrap();
        let s = (1.0 + BatchNormParams::DEFAULT_EPS).sqrt();
        for (c, beta) in [(0, 0.7 - 0.2), (1, 1.9 + 0.1)] {
            for v in y.value().plane(0, c) {
                assert!((v - beta / s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn toy_coverage() {
        let meta = stage_metadata(&BackboneConfig::toy());
        let one = scale_coverage(&PairedAsppConfig::new(Combination::One, 1, 1), &meta);
        let two = scale_coverage(&PairedAsppConfig::new(Combination::Two, 1, 1), &meta);
        assert_eq!((one.union_span, one.overlaps), (580, 5));
        assert_eq!((two.union_span, two.overlaps), (456, 6));
        assert_eq!(
            one.intervals[3],
            BranchInterval {
                source: "Y4".into(),
                rate: 1,
                lo: 427,
                hi: 427
            }
        );
    }
}
