//! Checkpoint directories: `params.bin` holds HOT4 records back to back,
//! `manifest.json` lists their names, shapes and byte offsets together with
//! the iteration, the sampling seed and the experiment configuration.

use std::collections::HashMap;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use hopa_tensor::serialize::{encoded_len, read_tensor_at, write_tensor};
use hopa_tensor::{Array4, Module, ParamKind, Shape4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::train::Sgd;

pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "hopa-checkpoint/1";
const MOMENTUM_PREFIX: &str = "opt.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    pub kind: String,
    pub offset: u64,
}

/// Sampling is a pure function of (seed, iteration), so these two numbers
/// are the whole RNG state of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub iteration: usize,
    pub rng: RngState,
    /// The experiment configuration as TOML.
    pub config: String,
    pub tensors: Vec<TensorEntry>,
}

fn kind_name(kind: ParamKind) -> &'static str {
    match kind {
        ParamKind::ConvWeight => "conv_weight",
        ParamKind::Bias => "bias",
        ParamKind::NormAffine => "norm_affine",
        ParamKind::Buffer => "buffer",
    }
}

pub fn save(
    dir: &Path,
    model: &Model,
    sgd: Option<&Sgd>,
    iteration: usize,
    seed: u64,
    config: &str,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records: Vec<(String, &'static str, Array4)> = model
        .params("")
        .into_iter()
        .map(|p| (p.name, kind_name(p.kind), p.tensor.to_array()))
        .collect();
    if let Some(sgd) = sgd {
        let mut names: Vec<&String> = sgd.velocity.keys().collect();
        names.sort();
        for name in names {
            records.push((
                format!("{MOMENTUM_PREFIX}{name}"),
                "momentum",
                sgd.velocity[name].clone(),
            ));
        }
    }
    let mut bytes = Vec::new();
    let mut tensors = Vec::with_capacity(records.len());
    for (name, kind, a) in &records {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: a.shape().dims(),
            kind: kind.to_string(),
            offset: bytes.len() as u64,
        });
        write_tensor(&mut bytes, a)?;
    }
    let path = dir.join(PARAMS_FILE);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    let manifest = Manifest {
        format: FORMAT.to_string(),
        iteration,
        rng: RngState {
            seed,
            next_iteration: iteration,
        },
        config: config.to_string(),
        tensors,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: HashMap<String, Array4>,
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: mpath.clone(),
        offset: byte_offset(&text, e.line(), e.column()),
        msg: e.to_string(),
    })?;
    if manifest.format != FORMAT {
        return Err(Error::Validation(format!(
            "{}: unsupported format {:?}",
            mpath.display(),
            manifest.format
        )));
    }
    let ppath = dir.join(PARAMS_FILE);
    let file = fs::File::open(&ppath).map_err(|e| Error::io(&ppath, e))?;
    let mut reader = BufReader::new(file);
    let mut tensors = HashMap::new();
    let mut offset = 0u64;
    for entry in &manifest.tensors {
        if entry.offset != offset {
            return Err(Error::Validation(format!(
                "{}: {} recorded at byte {}, expected {offset}",
                mpath.display(),
                entry.name,
                entry.offset
            )));
        }
        let a = read_tensor_at(&mut reader, offset).map_err(|e| match e {
            hopa_tensor::TensorError::Format { offset, msg } => Error::Parse {
                path: ppath.clone(),
                offset,
                msg,
            },
            other => Error::Tensor(other),
        })?;
        if a.shape().dims() != entry.shape {
            return Err(Error::Validation(format!(
                "{}: {} has shape {}, manifest says {:?}",
                ppath.display(),
                entry.name,
                a.shape(),
                entry.shape
            )));
        }
        offset += encoded_len(a.shape());
        tensors.insert(entry.name.clone(), a);
    }
    Ok(Checkpoint { manifest, tensors })
}

fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let before: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (before + column.saturating_sub(1)) as u64
}

impl Checkpoint {
    /// Copies every model tensor from the checkpoint; names and shapes must match.
    pub fn restore_model(&self, model: &Model) -> Result<()> {
        for p in model.params("") {
            let a = self
                .tensors
                .get(&p.name)
                .ok_or_else(|| Error::Validation(format!("checkpoint lacks tensor {}", p.name)))?;
            let want: Shape4 = p.tensor.shape();
            if a.shape() != want {
                return Err(Error::Validation(format!(
                    "{}: checkpoint shape {} but model expects {want}",
                    p.name,
                    a.shape()
                )));
            }
            *p.tensor.value_mut() = a.clone();
        }
        Ok(())
    }

    pub fn restore_sgd(&self, sgd: &mut Sgd) {
        sgd.velocity = self
            .tensors
            .iter()
            .filter_map(|(k, v)| {
                k.strip_prefix(MOMENTUM_PREFIX)
                    .map(|n| (n.to_string(), v.clone()))
            })
            .collect();
    }
}
