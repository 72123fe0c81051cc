//! Multi-scale and flipped inference, and evaluation into a confusion matrix.

use hopa_tensor::ops::resize_bilinear_array;
use hopa_tensor::{no_grad, Array4, Tensor4};
use serde::{Deserialize, Serialize};

use crate::data::SegSample;
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferConfig {
    pub scales: Vec<f64>,
    pub flip: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            scales: vec![1.0],
            flip: false,
        }
    }
}

impl InferConfig {
    /// 0.5, 0.75, …, 1.75 with flipping.
    pub fn multi_scale() -> Self {
        InferConfig {
            scales: (0..6).map(|i| 0.5 + 0.25 * i as f64).collect(),
            flip: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::config(
                "infer.scales",
                "at least one scale is required",
            ));
        }
        if self.scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config("infer.scales", "scales must be positive"));
        }
        Ok(())
    }
}

/// Side length at scale `s`, rounded to the nearest positive multiple of 8.
pub fn scaled_side(side: usize, s: f64) -> usize {
    (((side as f64 * s) / 8.0).round() as usize).max(1) * 8
}

/// Softmax of the eval-mode logits for a batch at its own resolution.
pub fn predict_probs(model: &Model, img: &Array4) -> Result<Array4> {
    no_grad(|| {
        let logits = model.forward(&Tensor4::constant(img.clone()), false)?;
        let probs = logits.value().softmax_channels();
        Ok(probs)
    })
}

/// Averages class probabilities over every scale (and its mirror when
/// `cfg.flip`), each resized back to the input size.
pub fn infer_multiscale(model: &Model, img: &Array4, cfg: &InferConfig) -> Result<Array4> {
    cfg.validate()?;
    let s = img.shape();
    let mut acc = Array4::zeros([s.n, model.num_classes(), s.h, s.w]);
    let mut count = 0usize;
    for &scale in &cfg.scales {
        let (h, w) = (scaled_side(s.h, scale), scaled_side(s.w, scale));
        let scaled = if (h, w) == (s.h, s.w) {
            img.clone()
        } else {
            resize_bilinear_array(img, h, w)?
        };
        let mut views = vec![(scaled.clone(), false)];
        if cfg.flip {
            views.push((scaled.flip_w(), true));
        }
        for (view, flipped) in views {
            let mut p = predict_probs(model, &view)?;
            if flipped {
                p = p.flip_w();
            }
            if (h, w) != (s.h, s.w) {
                p = resize_bilinear_array(&p, s.h, s.w)?;
            }
            acc.add_assign(&p)?;
            count += 1;
        }
    }
    acc.scale_in_place(1.0 / count as f64);
    Ok(acc)
}

/// Accumulates predictions over samples, `batch` at a time.
pub fn evaluate(
    model: &Model,
    samples: &[SegSample],
    cfg: &InferConfig,
    batch: usize,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.num_classes());
    for chunk in samples.chunks(batch.max(1)) {
        let (images, labels) = crate::train::collate(chunk)?;
        let probs = infer_multiscale(model, &images, cfg)?;
        cm.update(&labels, &probs.argmax_channels())?;
    }
    Ok(cm)
}
