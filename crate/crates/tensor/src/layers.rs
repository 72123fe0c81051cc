//! Parameter containers for the two trainable operators.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::array::Array4;
use crate::error::Result;
use crate::graph::Tensor4;
use crate::ops;
use crate::shape::{ConvGeometry, Shape4};

/// What a named tensor is, which decides how the optimizer treats it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    Bias,
    NormAffine,
    /// Running statistics: serialized but never updated by gradients.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct NamedParam {
    pub name: String,
    pub tensor: Tensor4,
    pub kind: ParamKind,
}

/// Anything that owns named tensors.
pub trait Module {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>);

    fn params(&self, prefix: &str) -> Vec<NamedParam> {
        let mut out = Vec::new();
        self.collect_params(prefix, &mut out);
        out
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Weight (c_out, c_in, k, k), optional bias (1, c_out, 1, 1) and window geometry.
#[derive(Debug, Clone)]
pub struct Conv2dParams {
    pub weight: Tensor4,
    pub bias: Option<Tensor4>,
    pub geom: ConvGeometry,
}

impl Conv2dParams {
    pub fn zeros(c_in: usize, c_out: usize, kernel: usize, bias: bool, geom: ConvGeometry) -> Self {
        Conv2dParams {
            weight: Tensor4::parameter(Array4::zeros([c_out, c_in, kernel, kernel])),
            bias: bias.then(|| Tensor4::parameter(Array4::zeros([1, c_out, 1, 1]))),
            geom,
        }
    }

    /// Fan-in scaled Gaussian weights (variance `2 / fan_in`), zero bias.
    pub fn kaiming<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        bias: bool,
        geom: ConvGeometry,
        rng: &mut R,
    ) -> Self {
        let p = Self::zeros(c_in, c_out, kernel, bias, geom);
        let fan_in = (c_in * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        for v in p.weight.value_mut().data_mut() {
            *v = normal.sample(rng);
        }
        p
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape().c
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape().n
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape().h
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        ops::conv2d_output_shape(input, self.weight.shape(), self.geom)
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        ops::conv2d(x, &self.weight, self.bias.as_ref(), self.geom)
    }
}

impl Module for Conv2dParams {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        out.push(NamedParam {
            name: prefix.to_string(),
            tensor: self.weight.clone(),
            kind: ParamKind::ConvWeight,
        });
        if let Some(b) = &self.bias {
            out.push(NamedParam {
                name: join(prefix, "bias"),
                tensor: b.clone(),
                kind: ParamKind::Bias,
            });
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormParams {
    pub gamma: Tensor4,
    pub beta: Tensor4,
    pub running_mean: Tensor4,
    pub running_var: Tensor4,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormParams {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    /// γ = 1, β = 0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Self {
        let shape = [1, channels, 1, 1];
        BatchNormParams {
            gamma: Tensor4::parameter(Array4::ones(shape)),
            beta: Tensor4::parameter(Array4::zeros(shape)),
            running_mean: Tensor4::constant(Array4::zeros(shape)),
            running_var: Tensor4::constant(Array4::ones(shape)),
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    /// γ = 0: the normalized branch starts switched off.
    pub fn zero_gamma(channels: usize) -> Self {
        let p = Self::new(channels);
        p.gamma.value_mut().fill(0.0);
        p
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape().c
    }

    pub fn forward(&self, x: &Tensor4, training: bool) -> Result<Tensor4> {
        ops::batch_norm(x, self, training)
    }
}

impl Module for BatchNormParams {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        let entries = [
            ("gamma", &self.gamma, ParamKind::NormAffine),
            ("beta", &self.beta, ParamKind::NormAffine),
            ("running_mean", &self.running_mean, ParamKind::Buffer),
            ("running_var", &self.running_var, ParamKind::Buffer),
        ];
        for (name, tensor, kind) in entries {
            out.push(NamedParam {
                name: join(prefix, name),
                tensor: tensor.clone(),
                kind,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn kaiming_variance_is_two_over_fan_in() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2dParams::kaiming(32, 64, 3, false, ConvGeometry::same(3, 1), &mut rng);
        let w = conv.weight.to_array();
        let n = w.data().len() as f64;
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / n;
        let expected = 2.0 / (32.0 * 9.0);
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }

    #[test]
    fn param_names() {
        let conv = Conv2dParams::zeros(2, 3, 1, true, ConvGeometry::default());
        let names: Vec<String> = conv
            .params("hr1.mix.2")
            .into_iter()
            .map(|p| p.name)
            .collect();
        assert_eq!(names, ["hr1.mix.2", "hr1.mix.2.bias"]);
        let bn = BatchNormParams::new(4);
        let kinds: Vec<ParamKind> = bn.params("bn").into_iter().map(|p| p.kind).collect();
        assert_eq!(kinds.iter().filter(|k| **k == ParamKind::Buffer).count(), 2);
    }
}
