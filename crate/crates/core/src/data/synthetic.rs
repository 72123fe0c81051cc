//! Synthetic texture segmentation with controlled statistical separability.
//!
//! Classes come in pairs that share a base gray level. Pixels are grouped in
//! square cells; each cell draws independent signs `s1, s2, s3 ∈ {±1}` and a
//! pixel of a class with role `σ = ±1` in a pair of order `o` gets
//!
//! ```text
//! o = 1:  base + σ·shift + a·(s1, s2, s3)
//! o = 2:  base + a·(s1, σ·s1, s3)
//! o = 3:  base + a·(s1, s2, σ·s1·s2)
//! ```
//!
//! plus Gaussian noise. The two classes of an order-`o` pair agree in every
//! joint moment below order `o` and differ in sign at order `o`.

use std::fs;
use std::path::Path;

use hopa_tensor::Array4;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{quantize, write_split, SegSample};
use crate::error::{Error, Result};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rect,
    Disc,
    Bar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TexturePair {
    pub a: u8,
    pub b: u8,
    pub order: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub pairs: Vec<TexturePair>,
    pub shapes: Vec<ShapeKind>,
    /// Texture amplitude `a`.
    pub amplitude: f64,
    /// Mean offset of order-1 classes.
    #[serde(default = "default_shift")]
    pub shift: f64,
    pub noise: f64,
    /// Side of the texture cells in pixels.
    pub cell: usize,
    pub train_count: usize,
    pub val_count: usize,
}

fn default_shift() -> f64 {
    0.15
}

impl SyntheticSpec {
    /// K = 4, two order-3 pairs, 512 + 128 images of 64×64.
    pub fn order3() -> Self {
        SyntheticSpec {
            num_classes: 4,
            height: 64,
            width: 64,
            pairs: vec![
                TexturePair {
                    a: 0,
                    b: 1,
                    order: 3,
                },
                TexturePair {
                    a: 2,
                    b: 3,
                    order: 3,
                },
            ],
            shapes: vec![ShapeKind::Rect, ShapeKind::Disc, ShapeKind::Bar],
            amplitude: 0.3,
            shift: default_shift(),
            noise: 0.01,
            cell: 4,
            train_count: 512,
            val_count: 128,
        }
    }

    /// K = 2 with distinct mean colors.
    pub fn first_order() -> Self {
        SyntheticSpec {
            num_classes: 2,
            pairs: vec![TexturePair {
                a: 0,
                b: 1,
                order: 1,
            }],
            amplitude: 0.15,
            noise: 0.02,
            ..Self::order3()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "order3" => Ok(Self::order3()),
            "first_order" => Ok(Self::first_order()),
            other => Err(Error::config(
                "spec",
                format!("unknown preset {other:?}, expected order3 or first_order"),
            )),
        }
    }

    /// Pair index and role (+1 for `a`, −1 for `b`) of every class.
    pub fn roles(&self) -> Result<Vec<(usize, f64)>> {
        if self.num_classes < 2 || self.num_classes > 255 {
            return Err(Error::Generation(format!(
                "num_classes {} outside 2..=255",
                self.num_classes
            )));
        }
        let mut roles = vec![None; self.num_classes];
        for (p, pair) in self.pairs.iter().enumerate() {
            if !(1..=3).contains(&pair.order) {
                return Err(Error::Generation(format!(
                    "pair {p} has order {}, expected 1, 2 or 3",
                    pair.order
                )));
            }
            if pair.a == pair.b {
                return Err(Error::Generation(format!(
                    "pair {p} pairs class {} with itself",
                    pair.a
                )));
            }
            for (class, role) in [(pair.a, 1.0), (pair.b, -1.0)] {
                let slot = roles.get_mut(class as usize).ok_or_else(|| {
                    Error::Generation(format!(
                        "pair {p} names class {class}, but num_classes is {}",
                        self.num_classes
                    ))
                })?;
                if slot.is_some() {
                    return Err(Error::Generation(format!(
                        "class {class} appears in more than one pair"
                    )));
                }
                *slot = Some((p, role));
            }
        }
        roles
            .into_iter()
            .enumerate()
            .map(|(k, r)| {
                r.ok_or_else(|| {
                    Error::Generation(format!(
                        "class {k} is in no texture pair, so no pixel can be generated for it"
                    ))
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.roles()?;
        if self.shapes.is_empty() {
            return Err(Error::Generation("shape vocabulary is empty".into()));
        }
        if self.height < 8 || self.width < 8 || self.cell == 0 {
            return Err(Error::Generation(
                "canvas must be at least 8×8 and cells nonempty".into(),
            ));
        }
        if !(self.amplitude >= 0.0 && self.noise >= 0.0 && self.shift >= 0.0) {
            return Err(Error::Generation(
                "amplitude, shift and noise must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Base gray level of pair `p`, evenly spread over [0.34, 0.66].
    pub fn base_level(&self, p: usize) -> f64 {
        match self.pairs.len() {
            1 => 0.5,
            n => 0.34 + 0.32 * p as f64 / (n - 1) as f64,
        }
    }
}

/// Noise-free color of a pixel of `class` in a cell with signs `s`.
pub fn texture_color(
    spec: &SyntheticSpec,
    roles: &[(usize, f64)],
    class: usize,
    s: [f64; 3],
) -> [f64; 3] {
    let (p, sigma) = roles[class];
    let base = spec.base_level(p);
    let a = spec.amplitude;
    match spec.pairs[p].order {
        1 => s.map(|si| base + sigma * spec.shift + a * si),
        2 => [base + a * s[0], base + a * sigma * s[0], base + a * s[2]],
        _ => [
            base + a * s[0],
            base + a * s[1],
            base + a * sigma * s[0] * s[1],
        ],
    }
}

fn sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.gen::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Class layout: a background class with two to four shapes painted over it.
fn layout<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Vec<u8> {
    let (h, w) = (spec.height, spec.width);
    let k = spec.num_classes as u8;
    let mut label = vec![rng.gen_range(0..k); h * w];
    let side = h.min(w) as f64;
    for _ in 0..rng.gen_range(2..=4) {
        let class = rng.gen_range(0..k);
        let kind = spec.shapes[rng.gen_range(0..spec.shapes.len())];
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let (hy, hx, disc) = match kind {
            ShapeKind::Rect => (
                rng.gen_range(side / 8.0..side / 3.0),
                rng.gen_range(side / 8.0..side / 3.0),
                false,
            ),
            ShapeKind::Disc => {
                let r = rng.gen_range(side / 8.0..side / 3.5);
                (r, r, true)
            }
            ShapeKind::Bar => {
                let thick = rng.gen_range(1.5..3.5);
                let long = rng.gen_range(side / 3.0..side / 1.5);
                if rng.gen::<bool>() {
                    (thick, long, false)
                } else {
                    (long, thick, false)
                }
            }
        };
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f64 + 0.5 - cy) / hy;
                let dx = (x as f64 + 0.5 - cx) / hx;
                let inside = if disc {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    label[y * w + x] = class;
                }
            }
        }
    }
    label
}

pub fn gen_sample<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    roles: &[(usize, f64)],
    rng: &mut R,
) -> SegSample {
    let (h, w, cell) = (spec.height, spec.width, spec.cell);
    let label = layout(spec, rng);
    let (ch, cw) = (h.div_ceil(cell), w.div_ceil(cell));
    let signs: Vec<[f64; 3]> = (0..ch * cw)
        .map(|_| [sign(rng), sign(rng), sign(rng)])
        .collect();
    let noise = Normal::new(0.0, spec.noise).expect("nonnegative noise");
    let mut image = Array4::zeros([1, 3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let s = signs[(y / cell) * cw + x / cell];
            let color = texture_color(spec, roles, label[y * w + x] as usize, s);
            for (c, v) in color.into_iter().enumerate() {
                let v = v + noise.sample(rng);
                image.set(0, c, y, x, quantize(v) as f64 / 255.0);
            }
        }
    }
    SegSample { image, label }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// One split in memory. Sample `i` depends only on (seed, split, i).
pub fn generate_split(spec: &SyntheticSpec, seed: u64, split: Split) -> Result<Vec<SegSample>> {
    spec.validate()?;
    let roles = spec.roles()?;
    let (tag, count) = match split {
        Split::Train => (stream::TRAIN_SPLIT, spec.train_count),
        Split::Val => (stream::VAL_SPLIT, spec.val_count),
    };
    Ok((0..count)
        .map(|i| gen_sample(spec, &roles, &mut seed::rng(&[seed, tag, i as u64])))
        .collect())
}

pub const SPEC_FILE: &str = "spec.toml";

/// Writes `train/`, `val/` and a copy of the spec under `out`.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64, out: &Path) -> Result<()> {
    for split in [Split::Train, Split::Val] {
        write_split(&out.join(split.name()), &generate_split(spec, seed, split)?)?;
    }
    let text = toml::to_string(spec).map_err(|e| Error::Generation(e.to_string()))?;
    let path = out.join(SPEC_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Per-class channel means, variances and the joint third central moment
/// `E[Π_c (x_c − μ_c)]`, estimated over all labelled pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMoments {
    pub count: usize,
    pub mean: [f64; 3],
    pub var: [f64; 3],
    pub third: f64,
}

pub fn class_moments(samples: &[SegSample], num_classes: usize) -> Vec<ClassMoments> {
    let mut pixels: Vec<Vec<[f64; 3]>> = vec![Vec::new(); num_classes];
    for s in samples {
        let w = s.width();
        for (i, &l) in s.label.iter().enumerate() {
            if (l as usize) < num_classes {
                let (y, x) = (i / w, i % w);
                pixels[l as usize].push([0, 1, 2].map(|c| s.image.at(0, c, y, x)));
            }
        }
    }
    pixels
        .iter()
        .map(|px| {
            let n = px.len().max(1) as f64;
            let mean = [0, 1, 2].map(|c| px.iter().map(|p| p[c]).sum::<f64>() / n);
            let var =
                [0, 1, 2].map(|c| px.iter().map(|p| (p[c] - mean[c]).powi(2)).sum::<f64>() / n);
            let third = px
                .iter()
                .map(|p| (0..3).map(|c| p[c] - mean[c]).product::<f64>())
                .sum::<f64>()
                / n;
            ClassMoments {
                count: px.len(),
                mean,
                var,
                third,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mut spec: SyntheticSpec) -> SyntheticSpec {
        spec.height = 32;
        spec.width = 32;
        spec.train_count = 6;
        spec.val_count = 2;
        spec
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = small(SyntheticSpec::order3());
        let a = generate_split(&spec, 7, Split::Train).unwrap();
        let b = generate_split(&spec, 7, Split::Train).unwrap();
        let c = generate_split(&spec, 8, Split::Train).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn unreachable_class_rejected() {
        let mut spec = small(SyntheticSpec::order3());
        spec.num_classes = 5;
        assert!(matches!(spec.validate(), Err(Error::Generation(_))));
        spec.num_classes = 3;
        assert!(matches!(spec.validate(), Err(Error::Generation(_))));
    }

    #[test]
    fn order_two_matches_means_not_covariance() {
        let spec = SyntheticSpec {
            pairs: vec![TexturePair {
                a: 0,
                b: 1,
                order: 2,
            }],
            num_classes: 2,
            ..SyntheticSpec::order3()
        };
        let roles = spec.roles().unwrap();
        let mut cov = [0.0; 2];
        for k in 0..2 {
            for s in [[1.0, 1.0, 1.0], [-1.0, 1.0, -1.0]] {
                let c = texture_color(&spec, &roles, k, s);
                cov[k] += (c[0] - 0.5) * (c[1] - 0.5);
            }
        }
        assert!(cov[0] > 0.0 && cov[1] < 0.0);
    }

    #[test]
    fn labels_in_range() {
        let spec = small(SyntheticSpec::order3());
        for s in generate_split(&spec, 1, Split::Val).unwrap() {
            s.validate_labels(spec.num_classes).unwrap();
        }
    }
}
