//! High-order representation module.
//!
//! A degree-`r` homogeneous polynomial predictor `⟨w^r, ⊗_r x⟩` on the local
//! descriptor `x ∈ R^C` is approximated by a sum of `D^r` rank-one terms, each
//! the product of `r` linear forms `⟨u_s^{r,d}, x⟩`. Every family of linear
//! forms `{u_s^{r,d}}_d` is one bias-free 1×1 convolution with `D^r` filters,
//! so the degree-`r` statistics are the element-wise product of `r` projected
//! maps. A 1×1 mixing convolution with ReLU then weights the `D^r` monomials,
//! and the `R` degree branches are concatenated.

use hopa_tensor::layers::join;
use hopa_tensor::{ops, Array4, Conv2dParams, ConvGeometry, Module, NamedParam, Tensor4};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HrConfig {
    pub in_channels: usize,
    pub order: usize,
    /// `D^r` for r = 1..=order.
    pub ranks: Vec<usize>,
    /// Output channels of each degree branch.
    pub out_per_degree: usize,
}

impl HrConfig {
    /// Same rank `D` for every degree.
    pub fn uniform(in_channels: usize, order: usize, rank: usize, out_per_degree: usize) -> Self {
        HrConfig {
            in_channels,
            order,
            ranks: vec![rank; order],
            out_per_degree,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::config("hr.order", "must be at least 1"));
        }
        if self.ranks.len() != self.order {
            return Err(Error::config(
                "hr.rank",
                format!("{} ranks given for order {}", self.ranks.len(), self.order),
            ));
        }
        if self.ranks.contains(&0) || self.in_channels == 0 || self.out_per_degree == 0 {
            return Err(Error::config(
                "hr",
                "ranks and channel counts must be positive",
            ));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.order * self.out_per_degree
    }
}

/// Projection banks `proj[r-1][s-1]` (C → D^r, no bias) and mixers
/// `mix[r-1]` (D^r → D_out, with bias).
#[derive(Debug, Clone)]
pub struct HrParams {
    pub config: HrConfig,
    pub proj: Vec<Vec<Conv2dParams>>,
    pub mix: Vec<Conv2dParams>,
}

/// The degree maps `z[r-1]` of shape (n, D^r, h, w), before mixing.
#[derive(Debug, Clone)]
pub struct DegreeMaps {
    pub z: Vec<Tensor4>,
}

impl HrParams {
    /// Projections draw from N(0, 1/C) so each linear form keeps the input
    /// scale and degree-r products stay O(1); mixers use N(0, 2/D^r).
    pub fn new<R: Rng + ?Sized>(config: HrConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.in_channels;
        let pw = ConvGeometry::default();
        let proj = config
            .ranks
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                (0..=i)
                    .map(|_| {
                        let conv = Conv2dParams::zeros(c, d, 1, false, pw);
                        let normal =
                            Normal::new(0.0, (1.0 / c as f64).sqrt()).expect("positive std");
                        for v in conv.weight.value_mut().data_mut() {
                            *v = normal.sample(rng);
                        }
                        conv
                    })
                    .collect()
            })
            .collect();
        let mix = config
            .ranks
            .iter()
            .map(|&d| Conv2dParams::kaiming(d, config.out_per_degree, 1, true, pw, rng))
            .collect();
        Ok(HrParams { config, proj, mix })
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn out_channels(&self) -> usize {
        self.config.out_channels()
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let c = x.shape().c;
        if c != self.config.in_channels {
            return Err(Error::Tensor(hopa_tensor::TensorError::InvalidArgument {
                op: "hr_project",
                msg: format!(
                    "input {} has {c} channels, module expects {}",
                    x.shape(),
                    self.config.in_channels
                ),
            }));
        }
        Ok(())
    }

    /// `z[r] = ⊙_s proj[r][s](x)`.
    pub fn project(&self, x: &Tensor4) -> Result<DegreeMaps> {
        self.check_input(x)?;
        let z = self
            .proj
            .iter()
            .map(|banks| {
                let factors = banks
                    .iter()
                    .map(|b| b.forward(x))
                    .collect::<hopa_tensor::Result<Vec<_>>>()?;
                Ok(ops::mul_all(&factors)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DegreeMaps { z })
    }

    /// `concat_r relu(mix[r](z[r]))`, shape (n, R·D_out, h, w).
    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let maps = self.project(x)?;
        let branches = maps
            .z
            .iter()
            .zip(&self.mix)
            .map(|(z, mix)| Ok(ops::relu(&mix.forward(z)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ops::concat_channels(&branches)?)
    }

    /// Linear form `u_s^{r,d}` as a plain vector (r, s are 1-based).
    pub fn linear_form(&self, r: usize, s: usize, d: usize) -> Vec<f64> {
        let w = self.proj[r - 1][s - 1].weight.value();
        (0..self.config.in_channels)
            .map(|c| w.at(d, c, 0, 0))
            .collect()
    }

    /// Evaluates the scalar predictor `Σ_r ⟨α^r, z^r⟩` at one descriptor two
    /// ways and returns their difference: through [`HrParams::project`] on a
    /// 1×1 map, and by expanding `Σ_r Σ_d α^{r,d} Π_s ⟨u_s^{r,d}, x⟩` with
    /// explicit dot products. `readout[r-1]` supplies `α^r`.
    pub fn predictor_check(&self, x: &[f64], readout: &[Vec<f64>]) -> Result<f64> {
        let c = self.config.in_channels;
        if x.len() != c {
            return Err(Error::Validation(format!(
                "descriptor has {} entries, module expects {c}",
                x.len()
            )));
        }
        if readout.len() != self.order()
            || readout
                .iter()
                .zip(&self.config.ranks)
                .any(|(a, &d)| a.len() != d)
        {
            return Err(Error::Validation(
                "readout must hold one weight per rank-one term of every degree".into(),
            ));
        }

        let input = Tensor4::constant(Array4::from_vec([1, c, 1, 1], x.to_vec())?);
        let maps = hopa_tensor::no_grad(|| self.project(&input))?;
        let via_maps: f64 = maps
            .z
            .iter()
            .zip(readout)
            .map(|(z, alpha)| {
                z.value()
                    .data()
                    .iter()
                    .zip(alpha)
                    .map(|(z, a)| z * a)
                    .sum::<f64>()
            })
            .sum();

        let mut direct = 0.0;
        for (ri, alpha) in readout.iter().enumerate() {
            let r = ri + 1;
            for (d, &a) in alpha.iter().enumerate() {
                let mut prod = 1.0;
                for s in 1..=r {
                    let u = self.linear_form(r, s, d);
                    prod *= u.iter().zip(x).map(|(u, x)| u * x).sum::<f64>();
                }
                direct += a * prod;
            }
        }
        Ok(via_maps - direct)
    }
}

impl Module for HrParams {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        for (ri, banks) in self.proj.iter().enumerate() {
            for (si, bank) in banks.iter().enumerate() {
                bank.collect_params(&join(prefix, &format!("proj.{}.{}", ri + 1, si + 1)), out);
            }
        }
        for (ri, mix) in self.mix.iter().enumerate() {
            mix.collect_params(&join(prefix, &format!("mix.{}", ri + 1)), out);
        }
    }
}
