//! Segmentation samples on disk: a split directory holds `index.txt` with one
//! `image_path label_path` pair per line (relative to the directory), P6
//! images and P5 label maps.

use std::fs;
use std::path::{Path, PathBuf};

use hopa_tensor::Array4;

use super::pnm::Raster;
use crate::error::{Error, Result};

pub const IGNORE_LABEL: u8 = 255;
pub const INDEX_FILE: &str = "index.txt";

/// Image (1, 3, h, w) in [0, 1] and its label map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub image: Array4,
    pub label: Vec<u8>,
}

impl SegSample {
    pub fn new(image: Array4, label: Vec<u8>) -> Result<Self> {
        let s = image.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::Validation(format!(
                "sample image must be (1, 3, h, w), got {s}"
            )));
        }
        if label.len() != s.h * s.w {
            return Err(Error::Validation(format!(
                "label has {} pixels, image {s} has {}",
                label.len(),
                s.h * s.w
            )));
        }
        Ok(SegSample { image, label })
    }

    pub fn height(&self) -> usize {
        self.image.shape().h
    }

    pub fn width(&self) -> usize {
        self.image.shape().w
    }

    /// Every label is a class below `num_classes` or the ignore label.
    pub fn validate_labels(&self, num_classes: usize) -> Result<()> {
        match self
            .label
            .iter()
            .position(|&l| l != IGNORE_LABEL && l as usize >= num_classes)
        {
            Some(i) => Err(Error::Validation(format!(
                "label {} at pixel ({}, {}) is not below {num_classes} and is not {IGNORE_LABEL}",
                self.label[i],
                i / self.width(),
                i % self.width()
            ))),
            None => Ok(()),
        }
    }

    pub fn image_raster(&self) -> Raster {
        let (h, w) = (self.height(), self.width());
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data.push(quantize(self.image.at(0, c, y, x)));
                }
            }
        }
        Raster {
            width: w,
            height: h,
            channels: 3,
            data,
        }
    }

    pub fn label_raster(&self) -> Raster {
        Raster {
            width: self.width(),
            height: self.height(),
            channels: 1,
            data: self.label.clone(),
        }
    }

    pub fn from_rasters(image: &Raster, label: &Raster) -> Result<Self> {
        if (image.width, image.height) != (label.width, label.height) {
            return Err(Error::Validation(format!(
                "image is {}×{} but label is {}×{}",
                image.width, image.height, label.width, label.height
            )));
        }
        let (w, h) = (image.width, image.height);
        let img = Array4::from_fn([1, 3, h, w], |_, c, y, x| {
            image.data[(y * w + x) * 3 + c] as f64 / 255.0
        });
        SegSample::new(img, label.data.clone())
    }
}

/// Nearest 8-bit level of a value in [0, 1].
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_sample(sample: &SegSample, image_path: &Path, label_path: &Path) -> Result<()> {
    sample.image_raster().write(image_path)?;
    sample.label_raster().write(label_path)
}

pub fn read_sample(image_path: &Path, label_path: &Path) -> Result<SegSample> {
    let image = Raster::read(image_path, 3)?;
    let label = Raster::read(label_path, 1)?;
    SegSample::from_rasters(&image, &label).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", image_path.display())),
        other => other,
    })
}

/// Writes samples as `{i:05}.ppm` / `{i:05}.pgm` plus the index.
pub fn write_split(dir: &Path, samples: &[SegSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::new();
    for (i, s) in samples.iter().enumerate() {
        let (img, lbl) = (format!("{i:05}.ppm"), format!("{i:05}.pgm"));
        save_sample(s, &dir.join(&img), &dir.join(&lbl))?;
        index.push_str(&format!("{img} {lbl}\n"));
    }
    let path = dir.join(INDEX_FILE);
    fs::write(&path, index).map_err(|e| Error::io(&path, e))
}

/// Parsed index: (image, label) paths resolved against the split directory.
pub fn read_index(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let body = line.trim();
        if !body.is_empty() && !body.starts_with('#') {
            let parts: Vec<&str> = body.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(Error::Parse {
                    path: path.clone(),
                    offset,
                    msg: format!("expected `image_path label_path`, got {body:?}"),
                });
            }
            entries.push((dir.join(parts[0]), dir.join(parts[1])));
        }
        offset += line.len() as u64;
    }
    Ok(entries)
}

/// Lazily reads the samples of a split in index order, checking labels
/// against `num_classes`.
pub fn load_dataset(
    dir: &Path,
    num_classes: usize,
) -> Result<impl Iterator<Item = Result<SegSample>>> {
    let entries = read_index(dir)?;
    Ok(entries.into_iter().map(move |(img, lbl)| {
        let s = read_sample(&img, &lbl)?;
        s.validate_labels(num_classes)
            .map_err(|e| Error::Validation(format!("{}: {e}", lbl.display())))?;
        Ok(s)
    }))
}

pub fn load_all(dir: &Path, num_classes: usize) -> Result<Vec<SegSample>> {
    load_dataset(dir, num_classes)?.collect()
}
