//! Training-time augmentation: random scale, horizontal flip, brightness
//! shift, then a random crop padded where the scaled sample is too small.

use hopa_tensor::ops::resize_bilinear_array;
use hopa_tensor::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SegSample, IGNORE_LABEL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// (h, w) of the output.
    pub crop: [usize; 2],
    pub scale_range: [f64; 2],
    pub flip: bool,
    /// Brightness offset drawn from U(−j, j), added to all channels.
    pub brightness_jitter: f64,
}

impl AugmentConfig {
    /// No randomness beyond the crop position.
    pub fn crop_only(crop: [usize; 2]) -> Self {
        AugmentConfig {
            crop,
            scale_range: [1.0, 1.0],
            flip: false,
            brightness_jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config(
                "train.scale_range",
                format!("need 0 < lo <= hi, got [{lo}, {hi}]"),
            ));
        }
        if self.crop.contains(&0) {
            return Err(Error::config("train.crop", "crop sides must be positive"));
        }
        if !(self.brightness_jitter >= 0.0 && self.brightness_jitter < 1.0) {
            return Err(Error::config(
                "train.brightness_jitter",
                "must lie in [0, 1)",
            ));
        }
        Ok(())
    }
}

/// Nearest-neighbor label resize with half-pixel centers.
pub fn resize_labels(label: &[u8], h: usize, w: usize, new_h: usize, new_w: usize) -> Vec<u8> {
    let src = |i: usize, n: usize, m: usize| {
        (((i as f64 + 0.5) * n as f64 / m as f64) as usize).min(n - 1)
    };
    let mut out = Vec::with_capacity(new_h * new_w);
    for y in 0..new_h {
        let sy = src(y, h, new_h);
        for x in 0..new_w {
            out.push(label[sy * w + src(x, w, new_w)]);
        }
    }
    out
}

pub fn flip_sample(s: &SegSample) -> SegSample {
    let w = s.width();
    let label = s
        .label
        .chunks(w)
        .flat_map(|row| row.iter().rev().copied())
        .collect();
    SegSample {
        image: s.image.flip_w(),
        label,
    }
}

pub fn augment<R: Rng + ?Sized>(
    s: &SegSample,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<SegSample> {
    let (h, w) = (s.height(), s.width());
    let [lo, hi] = cfg.scale_range;
    let scale = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
    let (sh, sw) = (
        ((h as f64 * scale).round() as usize).max(1),
        ((w as f64 * scale).round() as usize).max(1),
    );
    let mut out = if (sh, sw) == (h, w) {
        s.clone()
    } else {
        SegSample {
            image: resize_bilinear_array(&s.image, sh, sw)?,
            label: resize_labels(&s.label, h, w, sh, sw),
        }
    };
    if cfg.flip && rng.gen::<bool>() {
        out = flip_sample(&out);
    }
    if cfg.brightness_jitter > 0.0 {
        let delta = rng.gen_range(-cfg.brightness_jitter..=cfg.brightness_jitter);
        out.image = out.image.map(|v| (v + delta).clamp(0.0, 1.0));
    }
    let [ch, cw] = cfg.crop;
    let oy = rng.gen_range(0..=sh.saturating_sub(ch));
    let ox = rng.gen_range(0..=sw.saturating_sub(cw));
    let image = Array4::from_fn([1, 3, ch, cw], |_, c, y, x| {
        let (yy, xx) = (oy + y, ox + x);
        if yy < sh && xx < sw {
            out.image.at(0, c, yy, xx)
        } else {
            0.0
        }
    });
    let mut label = vec![IGNORE_LABEL; ch * cw];
    for y in 0..ch.min(sh - oy) {
        for x in 0..cw.min(sw - ox) {
            label[y * cw + x] = out.label[(oy + y) * sw + ox + x];
        }
    }
    Ok(SegSample { image, label })
}
