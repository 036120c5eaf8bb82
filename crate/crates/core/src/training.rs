//! Adam training loop over augmented windows, with validation, logging and
//! resumable checkpoints.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AugmentedSample, Dataset, Sampler, Split};
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::model::{self, ParamTensor, Tensor, UNetConfig, UNetParams};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const TRAIN_LOG: &str = "train.log";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    /// Steps between validations; 0 validates only at the start and the end.
    pub val_every: u64,
    /// Frame stride of the validation sweep.
    pub val_stride: usize,
    pub checkpoint_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            lr: 1e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
            val_every: 100,
            val_stride: 1,
            checkpoint_dir: PathBuf::from("checkpoints"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.val_stride == 0 {
            return Err(Error::InvalidValue(
                "batch_size and val_stride must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidValue(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) || !(self.eps > 0.0) {
            return Err(Error::InvalidValue(
                "Adam betas must lie in [0, 1) and eps be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub params: UNetParams<f32>,
    pub m: UNetParams<f32>,
    pub v: UNetParams<f32>,
    pub rng: ChaCha8Rng,
    /// Lowest validation MSE and the step it was recorded at.
    pub best_val: Option<(f64, u64)>,
}

/// Sampling stream, kept apart from parameter initialisation.
const SAMPLE_STREAM: u64 = 1;

impl TrainState {
    pub fn new(unet: UNetConfig, seed: u64) -> Result<Self> {
        let params = UNetParams::init(unet, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SAMPLE_STREAM);
        Ok(Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            params,
            rng,
            best_val: None,
        })
    }

    pub fn config(&self) -> UNetConfig {
        self.params.config
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let saved = SavedState {
            step: self.step,
            rng_seed: hex::encode(self.rng.get_seed()),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            best_val_mse: self.best_val.map(|b| b.0),
            best_val_step: self.best_val.map(|b| b.1),
        };
        Checkpoint {
            params: self.params.clone(),
            moments: Some((self.m.clone(), self.v.clone())),
            extra: Some(serde_json::to_value(saved).expect("serializable state")),
        }
    }

    /// Rebuild a state written by [`fit`].
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let bad =
            |what: &str| Error::Checkpoint(format!("checkpoint has no usable {what} for resuming"));
        let (m, v) = ck.moments.ok_or_else(|| bad("optimizer moments"))?;
        let saved: SavedState =
            serde_json::from_value(ck.extra.ok_or_else(|| bad("training state"))?)?;
        let seed: [u8; 32] = hex::decode(&saved.rng_seed)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| bad("rng seed"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(saved.rng_stream);
        rng.set_word_pos(
            saved
                .rng_word_pos
                .parse()
                .map_err(|_| bad("rng position"))?,
        );
        Ok(Self {
            step: saved.step,
            params: ck.params,
            m,
            v,
            rng,
            best_val: saved.best_val_mse.zip(saved.best_val_step),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SavedState {
    step: u64,
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
    best_val_mse: Option<f64>,
    best_val_step: Option<u64>,
}

/// Loss and gradient of one sample, with the gradient scaled by `scale`.
fn sample_gradient(
    p: &UNetParams<f32>,
    s: &AugmentedSample,
    scale: f64,
) -> Result<(f64, UNetParams<f32>)> {
    let x: Tensor<f32> = model::window_tensor(&s.window, &p.config)?;
    let target = s.target.data();
    let (out, cache) = model::forward(p, x)?;
    let loss = model::mse_loss(&out.data, target)?;
    let g = model::backward(p, &cache, &model::loss_grad(&out, target, scale));
    Ok((loss, g))
}

/// One Adam update on the mean MSE of `batch`; returns that mean.
///
/// Per-sample gradients may be computed in parallel but are summed in batch
/// order, so the result does not depend on the worker count.
pub fn train_step(
    state: &mut TrainState,
    batch: &[AugmentedSample],
    cfg: &TrainConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidValue("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let params = &state.params;
    let results: Vec<Result<(f64, UNetParams<f32>)>> = batch
        .par_iter()
        .map(|s| sample_gradient(params, s, scale))
        .collect();
    let mut loss = 0.0;
    let mut grad: Option<UNetParams<f32>> = None;
    for (r, s) in results.into_iter().zip(batch) {
        let (l, g) = r?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: state.step,
                detail: format!(
                    "episode `{}` frame {} transform {}",
                    s.episode_id, s.t, s.transform_id
                ),
            });
        }
        loss += l;
        match grad.as_mut() {
            None => grad = Some(g),
            Some(acc) => add_into(acc, &g),
        }
    }
    let loss = loss * scale;
    let grad = grad.expect("non-empty batch");
    if grad
        .tensors
        .iter()
        .any(|t| t.data.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            detail: "gradient contains non-finite values".into(),
        });
    }
    state.step += 1;
    adam_update(state, &grad, cfg);
    Ok(loss)
}

fn add_into(acc: &mut UNetParams<f32>, g: &UNetParams<f32>) {
    for (a, b) in acc.tensors.iter_mut().zip(&g.tensors) {
        for (x, y) in a.data.iter_mut().zip(&b.data) {
            *x += *y;
        }
    }
}

fn adam_update(state: &mut TrainState, grad: &UNetParams<f32>, cfg: &TrainConfig) {
    let (b1, b2) = cfg.betas;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let tensors = state
        .params
        .tensors
        .iter_mut()
        .zip(&mut state.m.tensors)
        .zip(&mut state.v.tensors)
        .zip(&grad.tensors);
    for (((p, m), v), g) in tensors {
        update_tensor(p, m, v, g, cfg, c1, c2);
    }
}

fn update_tensor(
    p: &mut ParamTensor<f32>,
    m: &mut ParamTensor<f32>,
    v: &mut ParamTensor<f32>,
    g: &ParamTensor<f32>,
    cfg: &TrainConfig,
    c1: f64,
    c2: f64,
) {
    let (b1, b2) = cfg.betas;
    for i in 0..p.data.len() {
        let gi = g.data[i] as f64;
        let mi = b1 * m.data[i] as f64 + (1.0 - b1) * gi;
        let vi = b2 * v.data[i] as f64 + (1.0 - b2) * gi * gi;
        m.data[i] = mi as f32;
        v.data[i] = vi as f32;
        let update = cfg.lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
        p.data[i] = (p.data[i] as f64 - update) as f32;
    }
}

/// Draw a batch of augmented training windows.
pub fn sample_batch(
    sampler: &Sampler,
    rng: &mut ChaCha8Rng,
    n: usize,
) -> Result<Vec<AugmentedSample>> {
    (0..n).map(|_| sampler.sample(rng)).collect()
}

/// Pooled-pixel validation metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    /// Mean squared error of the raw output.
    pub mse: f64,
    /// Mean absolute error in kPa after clamping at zero.
    pub mae: f64,
    pub windows: usize,
}

/// Un-augmented sweep over every `stride`-th full window of the episodes in `split`.
pub fn validate_split(
    params: &UNetParams<f32>,
    dataset: &Dataset,
    split: Split,
    stride: usize,
) -> Result<ValMetrics> {
    let h = params.config.h;
    let stride = stride.max(1);
    let jobs: Vec<(usize, usize)> = dataset
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| dataset.split_of(&r.id) == Some(split) && r.len() >= h)
        .flat_map(|(i, r)| (h - 1..r.len()).step_by(stride).map(move |t| (i, t)))
        .collect();
    if jobs.is_empty() {
        return Err(Error::UndefinedMetric("validation"));
    }
    let sums: Vec<Result<(f64, f64)>> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let r = &dataset.records()[i];
            let raw = model::predict_window(params, &r.window(t, h)?)?;
            let (mut se, mut ae) = (0.0, 0.0);
            for (&p, &q) in raw.iter().zip(r.pressure(t)) {
                let d = p as f64 - q as f64;
                se += d * d;
                ae += (p.max(0.0) as f64 - q as f64).abs();
            }
            Ok((se, ae))
        })
        .collect();
    let (mut se, mut ae) = (0.0, 0.0);
    for s in sums {
        let (a, b) = s?;
        se += a;
        ae += b;
    }
    let n = (jobs.len() * params.config.grid * params.config.grid) as f64;
    Ok(ValMetrics {
        mse: se / n,
        mae: ae / n,
        windows: jobs.len(),
    })
}

/// Validation on the `val` split.
pub fn validate(params: &UNetParams<f32>, dataset: &Dataset, stride: usize) -> Result<ValMetrics> {
    validate_split(params, dataset, Split::Val, stride)
}

fn check_geometry(unet: &UNetConfig, dataset: &Dataset) -> Result<()> {
    if dataset.geometry().grid != unet.grid {
        return Err(Error::Shape(format!(
            "dataset grid {} does not match network grid {}",
            dataset.geometry().grid,
            unet.grid
        )));
    }
    Ok(())
}

/// Train from scratch; returns the path of the best checkpoint.
pub fn fit(cfg: &TrainConfig, unet: UNetConfig, dataset: &Dataset) -> Result<PathBuf> {
    cfg.validate()?;
    unet.validate()?;
    fs::create_dir_all(&cfg.checkpoint_dir).map_err(|e| Error::io(&cfg.checkpoint_dir, e))?;
    let log = cfg.checkpoint_dir.join(TRAIN_LOG);
    fs::write(&log, "").map_err(|e| Error::io(&log, e))?;
    run(cfg, TrainState::new(unet, cfg.seed)?, dataset)
}

/// Continue from a checkpoint written by [`fit`] until `cfg.steps` in total.
pub fn resume(cfg: &TrainConfig, checkpoint: &Path, dataset: &Dataset) -> Result<PathBuf> {
    cfg.validate()?;
    let state = TrainState::from_checkpoint(Checkpoint::load(checkpoint)?)?;
    fs::create_dir_all(&cfg.checkpoint_dir).map_err(|e| Error::io(&cfg.checkpoint_dir, e))?;
    run(cfg, state, dataset)
}

fn run(cfg: &TrainConfig, mut state: TrainState, dataset: &Dataset) -> Result<PathBuf> {
    let unet = state.config();
    check_geometry(&unet, dataset)?;
    let dir = &cfg.checkpoint_dir;
    let best = dir.join(BEST_CHECKPOINT);
    let latest = dir.join(LATEST_CHECKPOINT);
    let log_path = dir.join(TRAIN_LOG);
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let has_val = !dataset.records_in(Split::Val).is_empty();
    let sampler = if state.step < cfg.steps {
        Some(Sampler::new(dataset, unet.h)?)
    } else {
        None
    };

    // A fresh run validates its initial parameters.
    if state.step == 0 && state.best_val.is_none() {
        if has_val {
            let vm = validate(&state.params, dataset, cfg.val_stride)?;
            writeln!(log, "0, , {}, {}", vm.mse, vm.mae).map_err(|e| Error::io(&log_path, e))?;
            state.best_val = Some((vm.mse, 0));
        }
        let ck = state.to_checkpoint();
        ck.save(&best)?;
        ck.save(&latest)?;
    }

    while state.step < cfg.steps {
        let sampler = sampler.as_ref().expect("sampler built when steps remain");
        let batch = sample_batch(sampler, &mut state.rng, cfg.batch_size)?;
        let loss = train_step(&mut state, &batch, cfg)?;
        let step = state.step;
        let due = (cfg.val_every > 0 && step % cfg.val_every == 0) || step == cfg.steps;
        let mut improved = false;
        if due && has_val {
            let vm = validate(&state.params, dataset, cfg.val_stride)?;
            writeln!(log, "{step}, {loss}, {}, {}", vm.mse, vm.mae)
                .map_err(|e| Error::io(&log_path, e))?;
            if state.best_val.is_none_or(|(b, _)| vm.mse < b) {
                state.best_val = Some((vm.mse, step));
                improved = true;
            }
        } else {
            writeln!(log, "{step}, {loss}").map_err(|e| Error::io(&log_path, e))?;
        }
        log::info!("step {step}: train mse {loss:.4}");
        if due || improved {
            let ck = state.to_checkpoint();
            if improved || !has_val {
                ck.save(&best)?;
            }
            ck.save(&latest)?;
        }
    }
    Ok(best)
}
