//! Versioned training checkpoints for exact resume.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "SPLATSPA" | u32 version | u64 header length | JSON header | f64 columns
//! ```
//!
//! The header carries every scalar of the run plus the name and length of each
//! payload column, in payload order. Columns hold the Gaussian parameters, the
//! Adam moments and the sparsifier's `z` and `λ`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::{GaussianCloud, ParamGroup};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::optim::{AdamConfig, Moments, OptimizerState};
use crate::sparsify::SparsifierState;
use crate::train::{TrainConfig, TrainLog, TrainMode, TrainSchedule, Trainer};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SPLATSPA";
const PREAMBLE: usize = 8 + 4 + 8;

/// Loop counters of a run in progress.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub iter: usize,
    pub outer: usize,
    pub sparsify_done: bool,
    pub finished: bool,
}

/// Everything needed to continue a run, except the target image.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointModel {
    pub image_size: [usize; 2],
    pub cloud: GaussianCloud,
    pub optimizer: OptimizerState,
    pub sparsifier: Option<SparsifierState>,
    pub schedule: TrainSchedule,
    pub config: TrainConfig,
    pub mode: TrainMode,
    pub progress: Progress,
    pub log: TrainLog,
    /// Training draws no random numbers after initialization, so the seed is
    /// the complete generator state.
    pub rng_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SparsifierScalars {
    delta: f64,
    kappa: usize,
    epsilon: f64,
    max_outer: usize,
    interval: usize,
}

#[derive(Serialize, Deserialize)]
struct ColumnSpec {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    image_size: [usize; 2],
    schedule: TrainSchedule,
    config: TrainConfig,
    mode: TrainMode,
    progress: Progress,
    log: TrainLog,
    rng_seed: u64,
    adam: AdamConfig,
    adam_step: u64,
    sparsifier: Option<SparsifierScalars>,
    columns: Vec<ColumnSpec>,
}

impl Trainer {
    pub fn checkpoint(&self) -> CheckpointModel {
        CheckpointModel {
            image_size: [self.gt.width, self.gt.height],
            cloud: self.cloud.clone(),
            optimizer: self.optimizer.clone(),
            sparsifier: self.sparsifier.clone(),
            schedule: self.schedule.clone(),
            config: self.config.clone(),
            mode: self.mode.clone(),
            progress: Progress {
                iter: self.iter,
                outer: self.outer,
                sparsify_done: self.sparsify_done,
                finished: self.finished,
            },
            log: self.log.clone(),
            rng_seed: self.schedule.rng_seed,
        }
    }

    /// Rebuilds a trainer from `model`. `gt` must be the image the run was fitting.
    pub fn from_checkpoint(model: CheckpointModel, gt: Image) -> Result<Self> {
        if [gt.width, gt.height] != model.image_size {
            return Err(Error::InvalidArgument(format!(
                "checkpoint was trained on a {}x{} image, got {}x{}",
                model.image_size[0], model.image_size[1], gt.width, gt.height
            )));
        }
        let mut trainer = Trainer::new(model.cloud.clone(), gt, model.config, model.schedule, model.mode)?;
        trainer.cloud = model.cloud;
        trainer.optimizer = model.optimizer;
        trainer.sparsifier = model.sparsifier;
        trainer.iter = model.progress.iter;
        trainer.outer = model.progress.outer;
        trainer.sparsify_done = model.progress.sparsify_done;
        trainer.finished = model.progress.finished;
        trainer.log = model.log;
        Ok(trainer)
    }
}

fn columns(model: &CheckpointModel) -> Vec<(String, Vec<f64>)> {
    let c = &model.cloud;
    let mut cols = vec![
        ("mu".to_string(), c.mu.as_flattened().to_vec()),
        ("theta".to_string(), c.theta.clone()),
        ("log_s".to_string(), c.log_s.as_flattened().to_vec()),
        ("opacity_logit".to_string(), c.opacity_logit.clone()),
        ("color".to_string(), c.color.as_flattened().to_vec()),
        ("order_key".to_string(), c.order_key.clone()),
        ("alive".to_string(), c.alive.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect()),
    ];
    for (group, m) in ParamGroup::ALL.into_iter().zip(&model.optimizer.moments) {
        cols.push((format!("adam_m.{}", group.name()), m.m.clone()));
        cols.push((format!("adam_v.{}", group.name()), m.v.clone()));
    }
    if let Some(s) = &model.sparsifier {
        cols.push(("z".to_string(), s.z.clone()));
        cols.push(("lambda".to_string(), s.lambda.clone()));
    }
    cols
}

pub fn encode_checkpoint(model: &CheckpointModel) -> Result<Vec<u8>> {
    let cols = columns(model);
    let header = Header {
        n: model.cloud.len(),
        image_size: model.image_size,
        schedule: model.schedule.clone(),
        config: model.config.clone(),
        mode: model.mode.clone(),
        progress: model.progress.clone(),
        log: model.log.clone(),
        rng_seed: model.rng_seed,
        adam: model.optimizer.config.clone(),
        adam_step: model.optimizer.step,
        sparsifier: model.sparsifier.as_ref().map(|s| SparsifierScalars {
            delta: s.delta,
            kappa: s.kappa,
            epsilon: s.epsilon,
            max_outer: s.max_outer,
            interval: s.interval,
        }),
        columns: cols
            .iter()
            .map(|(name, v)| ColumnSpec {
                name: name.clone(),
                len: v.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidArgument(format!("cannot encode checkpoint header: {e}")))?;
    let payload_len: usize = cols.iter().map(|(_, v)| v.len() * 8).sum();
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, v) in &cols {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CheckpointModel> {
    if bytes.len() < PREAMBLE {
        return Err(corrupt(format!("file is {} bytes, shorter than the {PREAMBLE}-byte preamble", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| PREAMBLE.checked_add(l))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt(format!("header length {header_len} runs past the end of the file")))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end]).map_err(|e| corrupt(format!("header: {e}")))?;

    let mut payload = &bytes[header_end..];
    let mut cols = std::collections::HashMap::new();
    for spec in &header.columns {
        let nbytes = spec.len.checked_mul(8).filter(|&b| b <= payload.len()).ok_or_else(|| {
            corrupt(format!("column `{}` needs {} values but the payload is truncated", spec.name, spec.len))
        })?;
        let (head, rest) = payload.split_at(nbytes);
        let values: Vec<f64> = head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if cols.insert(spec.name.clone(), values).is_some() {
            return Err(corrupt(format!("duplicate column `{}`", spec.name)));
        }
        payload = rest;
    }
    if !payload.is_empty() {
        return Err(corrupt(format!("{} trailing bytes after the last column", payload.len())));
    }

    let n = header.n;
    let mut take = |name: &str, width: usize| -> Result<Vec<f64>> {
        let v = cols.remove(name).ok_or_else(|| corrupt(format!("missing column `{name}`")))?;
        if v.len() != n * width {
            return Err(corrupt(format!("column `{name}` has {} values, expected {}", v.len(), n * width)));
        }
        Ok(v)
    };
    let pairs = |v: Vec<f64>| -> Vec<[f64; 2]> { v.chunks_exact(2).map(|c| [c[0], c[1]]).collect() };
    let cloud = GaussianCloud {
        mu: pairs(take("mu", 2)?),
        theta: take("theta", 1)?,
        log_s: pairs(take("log_s", 2)?),
        opacity_logit: take("opacity_logit", 1)?,
        color: take("color", 3)?.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        order_key: take("order_key", 1)?,
        alive: take("alive", 1)?.into_iter().map(|v| v != 0.0).collect(),
    };
    let mut moments = Vec::new();
    for group in ParamGroup::ALL {
        moments.push(Moments {
            m: take(&format!("adam_m.{}", group.name()), group.width())?,
            v: take(&format!("adam_v.{}", group.name()), group.width())?,
        });
    }
    let sparsifier = match header.sparsifier {
        Some(s) => Some(SparsifierState {
            z: take("z", 1)?,
            lambda: take("lambda", 1)?,
            delta: s.delta,
            kappa: s.kappa,
            epsilon: s.epsilon,
            max_outer: s.max_outer,
            interval: s.interval,
        }),
        None => None,
    };
    if let Some(extra) = cols.keys().next() {
        return Err(corrupt(format!("unexpected column `{extra}`")));
    }
    Ok(CheckpointModel {
        image_size: header.image_size,
        cloud,
        optimizer: OptimizerState {
            config: header.adam,
            step: header.adam_step,
            moments,
        },
        sparsifier,
        schedule: header.schedule,
        config: header.config,
        mode: header.mode,
        progress: header.progress,
        log: header.log,
        rng_seed: header.rng_seed,
    })
}

pub fn save_checkpoint(model: &CheckpointModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointModel> {
    let path = path.as_ref();
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
