//! Supervised training: losses, AdamW with a per-step cosine schedule and a
//! seed-determined data stream.

mod data;
mod loss;
mod optim;

pub use data::{sub_seed, validation_set, write_dataset, DatasetSpec, Manifest, PairEntry, MANIFEST_NAME};
pub use loss::{loss, loss_tensor, LossKind, DEFAULT_CHARBONNIER_EPS};
pub use optim::{adamw_step, cosine_lr, AdamState, AdamW};

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::bayer::{IspParams, RawImage};
use crate::error::{Error, Result};
use crate::evaluation::eval_pair;
use crate::kv::KeyValues;
use crate::network::{build, forward_graph, forward_tensor, Checkpoint, ElmformerConfig, ElmformerWeights, OptimizerMoments};
use crate::numerics::{Graph, Tensor};
use data::Dataset;

/// Optimization and data settings. Batch, patch and step counts are not
/// known from any reference recipe; the defaults are desk-scale choices.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ElmformerConfig,
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub optimizer: AdamW,
    pub loss: LossKind,
    pub val_every: u64,
    pub val_count: usize,
    pub val_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ElmformerConfig::default(),
            batch_size: 4,
            patch_size: 64,
            lr0: 4e-4,
            lr_min: 1e-6,
            optimizer: AdamW::default(),
            loss: LossKind::L1,
            val_every: 100,
            val_count: 4,
            val_size: 64,
        }
    }
}

impl TrainConfig {
    /// Reads model and training keys, rejecting anything else, and runs
    /// [`check`](Self::check).
    pub fn from_kv(kv: KeyValues) -> Result<Self> {
        let config = TrainConfig::from_kv_unchecked(kv)?;
        config.check()?;
        Ok(config)
    }

    /// [`from_kv`](Self::from_kv) without the patch-size checks, for callers
    /// that only need the model.
    pub fn from_kv_unchecked(mut kv: KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let model = ElmformerConfig::from_kv(&mut kv)?;
        let eps = kv.take_or("charbonnier_eps", DEFAULT_CHARBONNIER_EPS)?;
        let loss_tag: String = kv.take_or("loss", "l1".to_string())?;
        let patch_size = kv.take_or("patch_size", d.patch_size)?;
        let config = TrainConfig {
            model,
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            patch_size,
            lr0: kv.take_or("lr0", d.lr0)?,
            lr_min: kv.take_or("lr_min", d.lr_min)?,
            optimizer: AdamW {
                beta1: kv.take_or("beta1", d.optimizer.beta1)?,
                beta2: kv.take_or("beta2", d.optimizer.beta2)?,
                eps: kv.take_or("adam_eps", d.optimizer.eps)?,
                weight_decay: kv.take_or("weight_decay", d.optimizer.weight_decay)?,
            },
            loss: LossKind::parse(&loss_tag, eps)?,
            val_every: kv.take_or("val_every", d.val_every)?,
            val_count: kv.take_or("val_count", d.val_count)?,
            val_size: kv.take_or("val_size", patch_size)?,
        };
        kv.reject_unknown()?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        TrainConfig::from_kv(KeyValues::parse(text)?)
    }

    pub fn parse_unchecked(text: &str) -> Result<Self> {
        TrainConfig::from_kv_unchecked(KeyValues::parse(text)?)
    }

    pub fn check(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr0 >= self.lr_min && self.lr_min >= 0.0) {
            return Err(Error::Config(format!("need lr0 >= lr_min >= 0, got {} and {}", self.lr0, self.lr_min)));
        }
        self.model.validate(self.patch_size, self.patch_size)?;
        if self.val_count > 0 {
            self.model.validate(self.val_size, self.val_size)?;
        }
        Ok(())
    }
}

/// Mean validation scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Validation {
    pub psnr_rr: f64,
    pub psnr_rs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    /// 1-based step.
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub validation: Option<Validation>,
}

pub const METRICS_HEADER: &str = "step,lr,loss,val_psnr_rr,val_psnr_rs";

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = write!(out, "{},{},{}", r.step, r.lr, r.loss);
        match r.validation {
            Some(v) => {
                let _ = writeln!(out, ",{},{}", v.psnr_rr, v.psnr_rs);
            }
            None => out.push_str(",,\n"),
        }
    }
    out
}

pub fn write_metrics(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metrics_to_csv(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<MetricsRow>,
    /// Scores of the unrestored noisy validation inputs.
    pub noisy_baseline: Option<Validation>,
}

fn validate(weights: &ElmformerWeights<Tensor>, set: &[(RawImage, RawImage)]) -> Result<Validation> {
    let isp = IspParams::default();
    let (mut rr, mut rs) = (0.0, 0.0);
    for (noisy, clean) in set {
        let restored = RawImage::from_tensor(&forward_tensor(&noisy.to_tensor(), weights)?)?;
        let m = eval_pair(&restored, clean, &isp)?;
        rr += m.psnr_rr;
        rs += m.psnr_rs;
    }
    let n = set.len() as f64;
    Ok(Validation {
        psnr_rr: rr / n,
        psnr_rs: rs / n,
    })
}

fn baseline(set: &[(RawImage, RawImage)]) -> Result<Validation> {
    let isp = IspParams::default();
    let (mut rr, mut rs) = (0.0, 0.0);
    for (noisy, clean) in set {
        let m = eval_pair(noisy, clean, &isp)?;
        rr += m.psnr_rr;
        rs += m.psnr_rs;
    }
    let n = set.len() as f64;
    Ok(Validation {
        psnr_rr: rr / n,
        psnr_rs: rs / n,
    })
}

/// One optimization step over a batch; returns the mean loss.
fn train_step(
    weights: &ElmformerWeights<Tensor>,
    batch: &[(RawImage, RawImage)],
    loss: LossKind,
) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let bound = weights.bind(&mut g);
    let mut total = None;
    for (degraded, clean) in batch {
        let x = g.constant(degraded.to_tensor());
        let out = forward_graph(&mut g, x, &bound)?;
        let l = g.penalty(out, Arc::new(clean.to_tensor()), loss.penalty())?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    let total = total.expect("non-empty batch");
    let mean = g.scale(total, 1.0 / batch.len() as f64);
    let grads = g.backward(mean);
    let mut flat = Vec::with_capacity(weights.parameter_count());
    bound.map(&mut |v| match grads.slice(*v) {
        Some(s) => flat.extend_from_slice(s),
        None => flat.extend(std::iter::repeat(0.0).take(g.value(*v).len())),
    });
    Ok((g.value(mean).data()[0], flat))
}

/// Trains from a fresh initialization seeded by `seed`. Every random choice
/// (initial weights, patch sampling, augmentation, noise, validation set)
/// derives from `seed`, so equal inputs give bit-identical results.
pub fn train(config: &TrainConfig, dataset: &DatasetSpec, steps: u64, seed: u64) -> Result<TrainOutcome> {
    train_with_progress(config, dataset, steps, seed, |_| {})
}

/// [`train`] with a callback after every step.
pub fn train_with_progress(
    config: &TrainConfig,
    dataset: &DatasetSpec,
    steps: u64,
    seed: u64,
    mut progress: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    config.check()?;
    let mut model = config.model.clone();
    model.seed = seed;
    let mut weights = build(&model)?;
    let data = Dataset::load(dataset, seed)?;
    if data.min_extent() < config.patch_size {
        return Err(Error::Config(format!(
            "patch_size {} exceeds the smallest training image ({} pixels)",
            config.patch_size,
            data.min_extent()
        )));
    }
    let val_set = if config.val_count > 0 {
        validation_set(data.noise, config.val_count, config.val_size, seed)?
    } else {
        Vec::new()
    };
    let noisy_baseline = if val_set.is_empty() { None } else { Some(baseline(&val_set)?) };

    let mut params = weights.to_flat();
    let mut state = AdamState::new(params.len());
    let mut log = Vec::with_capacity(steps as usize);
    let mut sample_index = 0u64;
    for step in 0..steps {
        let lr = cosine_lr(step, steps, config.lr0, config.lr_min)?;
        let batch = (0..config.batch_size)
            .map(|_| {
                let s = data.sample(config.patch_size, seed, sample_index);
                sample_index += 1;
                s
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = train_step(&weights, &batch, config.loss)?;
        adamw_step(&mut params, &grads, &mut state, lr, &config.optimizer)?;
        weights = weights.with_flat(&params)?;

        let done = step + 1;
        let validation = if !val_set.is_empty()
            && config.val_every > 0
            && (done % config.val_every == 0 || done == steps)
        {
            Some(validate(&weights, &val_set)?)
        } else {
            None
        };
        let row = MetricsRow {
            step: done,
            lr,
            loss,
            validation,
        };
        progress(&row);
        log.push(row);
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: model,
            params,
            step: steps,
            moments: Some(OptimizerMoments {
                first: state.first,
                second: state.second,
            }),
        },
        log,
        noisy_baseline,
    })
}

/// Scores of `weights` on the validation set `train` would use.
pub fn evaluate_validation(
    weights: &ElmformerWeights<Tensor>,
    noise: crate::bayer::NoiseModel,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<(Validation, Validation)> {
    let set = validation_set(noise, count, size, seed)?;
    Ok((validate(weights, &set)?, baseline(&set)?))
}
