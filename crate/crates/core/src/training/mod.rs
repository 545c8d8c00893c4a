//! Joint training of all source paths with shared scheduling and early
//! stopping.
//!
//! Parameters are kept at `f32` precision after every update so that a saved
//! checkpoint reproduces the trained model bit for bit.

mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, Excerpt, ExcerptSampler, Track};
use crate::dsp::{magnitude, stft, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::losses::{separation_loss, LossConfig, LossTargets, DEFAULT_ALPHA};
use crate::metrics::csv_err;
use crate::model::{forward, init_params, InputNorm, Model, ModelConfig, ModelParams, NetConfig, ParamVars};
use crate::tensor::{Tape, Tensor};

/// Minimum decrease of the validation loss that counts as an improvement.
pub const PLATEAU_MIN_DELTA: f64 = 1e-6;

/// Which of the three training-time changes are enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub use_mdl: bool,
    pub use_cl: bool,
    pub use_bridging: bool,
}

/// Variant names in ablation order.
pub const VARIANT_NAMES: [&str; 8] = ["C1", "C2", "C3", "C4", "C5", "C6", "C7", "P"];

impl VariantConfig {
    pub const fn new(use_mdl: bool, use_cl: bool, use_bridging: bool) -> Self {
        Self {
            use_mdl,
            use_cl,
            use_bridging,
        }
    }

    /// Short name used in ablation tables.
    pub fn name(&self) -> &'static str {
        match (self.use_mdl, self.use_cl, self.use_bridging) {
            (false, false, false) => "C1",
            (true, false, false) => "C2",
            (false, true, false) => "C3",
            (false, false, true) => "C4",
            (true, true, false) => "C5",
            (true, false, true) => "C6",
            (false, true, true) => "C7",
            (true, true, true) => "P",
        }
    }

    pub fn loss(&self, alpha: f64) -> LossConfig {
        LossConfig {
            alpha,
            use_mdl: self.use_mdl,
            use_cl: self.use_cl,
        }
    }
}

impl FromStr for VariantConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s.trim() {
            "C1" => Self::new(false, false, false),
            "C2" => Self::new(true, false, false),
            "C3" => Self::new(false, true, false),
            "C4" => Self::new(false, false, true),
            "C5" => Self::new(true, true, false),
            "C6" => Self::new(true, false, true),
            "C7" => Self::new(false, true, true),
            "P" => Self::new(true, true, true),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown variant {other:?}, expected one of {}",
                    VARIANT_NAMES.join(", ")
                )))
            }
        };
        Ok(v)
    }
}

impl fmt::Display for VariantConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: VariantConfig,
    pub alpha: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training excerpt length in seconds.
    pub excerpt_s: f64,
    /// Excerpts drawn per training track and epoch.
    pub samples_per_track: usize,
    pub plateau_patience: usize,
    pub lr_decay: f64,
    pub early_stop_patience: usize,
    /// Global gradient-norm limit; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Abort once a batch loss exceeds this multiple of the first batch
    /// loss (or of 1, if larger); `None` only aborts on non-finite values.
    pub divergence_factor: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: VariantConfig::new(true, true, true),
            alpha: DEFAULT_ALPHA,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            epochs: 200,
            batch_size: 8,
            excerpt_s: 2.0,
            samples_per_track: 4,
            plateau_patience: 8,
            lr_decay: 0.3,
            early_stop_patience: 14,
            max_grad_norm: None,
            divergence_factor: Some(1e6),
            seed: 42,
        }
    }
}

impl TrainConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be a finite value >= 0");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad("lr_decay must lie in (0, 1)");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite value >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be positive");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be >= 0");
        }
        if self.batch_size == 0 || self.samples_per_track == 0 {
            return bad("batch_size and samples_per_track must be positive");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be >= 1");
        }
        if !(self.excerpt_s > 0.0) {
            return bad("excerpt_s must be positive");
        }
        if matches!(self.max_grad_norm, Some(n) if !(n > 0.0)) {
            return bad("max_grad_norm must be positive");
        }
        if matches!(self.divergence_factor, Some(f) if !(f > 1.0)) {
            return bad("divergence_factor must exceed 1");
        }
        Ok(())
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let g = g + self.weight_decay * *p;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Rounds every parameter to the nearest `f32`.
pub fn round_to_f32(params: &mut ModelParams) {
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

/// Learning rate for the next epoch given all validation losses so far.
///
/// Replays a counter of consecutive epochs without improvement (a decrease
/// below the best loss by more than [`PLATEAU_MIN_DELTA`]). When it reaches
/// `patience` at the latest epoch the rate is multiplied by `factor` and the
/// counter restarts.
pub fn reduce_on_plateau(valid_losses: &[f64], patience: usize, factor: f64, current_lr: f64) -> f64 {
    let mut best = f64::INFINITY;
    let mut bad = 0;
    let mut reduce = false;
    for &l in valid_losses {
        reduce = false;
        if l < best - PLATEAU_MIN_DELTA {
            best = l;
            bad = 0;
        } else {
            bad += 1;
            if bad >= patience.max(1) {
                reduce = true;
                bad = 0;
            }
        }
    }
    if reduce {
        current_lr * factor
    } else {
        current_lr
    }
}

/// Index of the smallest loss; ties resolve to the earliest epoch.
pub fn best_epoch(valid_losses: &[f64]) -> Option<usize> {
    valid_losses
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &l)| match best {
            Some((_, b)) if l >= b => best,
            _ => Some((i, l)),
        })
        .map(|(i, _)| i)
}

/// True once `patience` epochs have passed without a new minimum.
pub fn early_stop(valid_losses: &[f64], patience: usize) -> bool {
    best_epoch(valid_losses).is_some_and(|b| valid_losses.len() - 1 - b >= patience.max(1))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn valid_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.valid_loss).collect()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }

    /// CSV with columns `epoch,train_loss,valid_loss,lr`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.epochs {
            w.serialize(e).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything that is fixed while training runs.
struct Context<'a> {
    net: NetConfig,
    norm: &'a InputNorm,
    stft: &'a StftConfig,
    loss: LossConfig,
}

impl Context<'_> {
    /// Loss of one example and, when `with_grads`, its parameter gradients.
    fn example(
        &self,
        params: &ModelParams,
        mixture: &Waveform,
        stems: &[Waveform],
        with_grads: bool,
    ) -> Result<(f64, Option<Vec<Tensor>>)> {
        let spec = stft(mixture, self.stft)?;
        let input = self.norm.apply(&magnitude(&spec))?;
        let tape = Tape::new();
        let vars = if with_grads {
            ParamVars::trainable(&tape, &self.net, params)?
        } else {
            ParamVars::frozen(&tape, &self.net, params)?
        };
        let masks = forward(&vars, &self.net, &input)?;
        let targets = LossTargets {
            mixture_spec: &spec,
            references: stems,
            mixture,
        };
        let out = separation_loss(&masks, &targets, &self.loss)?;
        let value = out.report.total;
        if !with_grads || !value.is_finite() {
            return Ok((value, None));
        }
        let grads = tape.backward(out.total)?;
        let list = vars
            .all
            .iter()
            .map(|&v| grads.get(v).cloned().expect("every parameter has a gradient"))
            .collect();
        Ok((value, Some(list)))
    }

    /// Mean loss and mean gradient over a batch; items run in parallel and
    /// are reduced in order.
    fn batch(&self, params: &ModelParams, batch: &[Excerpt]) -> Result<(f64, Vec<Tensor>)> {
        let results: Vec<(f64, Option<Vec<Tensor>>)> = batch
            .par_iter()
            .map(|e| self.example(params, &e.mixture, &e.stems, true))
            .collect::<Result<_>>()?;
        let n = results.len() as f64;
        let mut loss = 0.0;
        let mut sum: Vec<Tensor> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        for (l, g) in results {
            loss += l;
            if let Some(g) = g {
                for (acc, g) in sum.iter_mut().zip(&g) {
                    acc.accumulate(g);
                }
            }
        }
        for t in &mut sum {
            t.data_mut().iter_mut().for_each(|v| *v /= n);
        }
        Ok((loss / n, sum))
    }

    fn validation(&self, params: &ModelParams, tracks: &[Track]) -> Result<f64> {
        let losses: Vec<f64> = tracks
            .par_iter()
            .map(|t| self.example(params, &t.mixture, &t.stems, false).map(|r| r.0))
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

/// Loss of `model` on whole tracks, averaged over tracks, using the same
/// objective as training.
pub fn validation_loss(model: &Model, stft: &StftConfig, loss: LossConfig, tracks: &[Track]) -> Result<f64> {
    if tracks.is_empty() {
        return Err(Error::InvalidArgument("no validation tracks".into()));
    }
    let ctx = Context {
        net: model.config,
        norm: &model.norm,
        stft,
        loss,
    };
    ctx.validation(&model.params, tracks)
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng.random()
}

fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Per-bin statistics of the training mixtures.
pub fn fit_norm(tracks: &[Track], stft_cfg: &StftConfig) -> Result<InputNorm> {
    let mags = tracks
        .iter()
        .map(|t| Ok(magnitude(&stft(&t.mixture, stft_cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    InputNorm::fit(&mags)
}

fn check_split(split: &DatasetSplit) -> Result<(Vec<String>, u32)> {
    if split.train.is_empty() || split.valid.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs at least one train and one validation track".into(),
        ));
    }
    let first = &split.train[0];
    for t in split.train.iter().chain(&split.valid).chain(&split.test) {
        if t.sources != first.sources {
            return Err(Error::InvalidArgument(format!(
                "track {} has sources {:?}, expected {:?}",
                t.name, t.sources, first.sources
            )));
        }
        if t.sample_rate() != first.sample_rate() {
            return Err(Error::SampleRateMismatch {
                expected: first.sample_rate(),
                actual: t.sample_rate(),
            });
        }
    }
    Ok((first.sources.clone(), first.sample_rate()))
}

/// Trains one joint model and returns the parameters of the epoch with the
/// lowest validation loss.
pub fn train(
    cfg: &TrainConfig,
    arch: &ModelConfig,
    stft_cfg: &StftConfig,
    split: &DatasetSplit,
) -> Result<(Checkpoint, TrainHistory)> {
    cfg.validate()?;
    stft_cfg.validate()?;
    let (sources, sample_rate) = check_split(split)?;
    let net = arch.net(sources.len(), stft_cfg.bins(), cfg.variant.use_bridging);
    let norm = fit_norm(&split.train, stft_cfg)?;
    let excerpt_len = (cfg.excerpt_s * sample_rate as f64).round() as usize;

    let mut params = init_params(&net, cfg.seed)?;
    round_to_f32(&mut params);
    let mut adam = Adam::new(cfg, &params);
    let ctx = Context {
        net,
        norm: &norm,
        stft: stft_cfg,
        loss: cfg.variant.loss(cfg.alpha),
    };

    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, params.clone());
    let mut lr = cfg.lr;
    let per_epoch = split.train.len() * cfg.samples_per_track;
    let mut first_loss = None;
    for epoch in 1..=cfg.epochs {
        let mut sampler = ExcerptSampler::new(&split.train, excerpt_len, epoch_seed(cfg.seed, epoch))?;
        let excerpts = sampler.batch(per_epoch);
        let mut train_loss = 0.0;
        for (b, batch) in excerpts.chunks(cfg.batch_size).enumerate() {
            let abort = |reason: String| Error::TrainingAborted {
                epoch,
                batch: b + 1,
                reason,
            };
            let (loss, mut grads) = ctx.batch(&params, batch)?;
            if !loss.is_finite() {
                return Err(abort(format!("loss is {loss}")));
            }
            let reference = *first_loss.get_or_insert(loss.abs().max(1.0));
            if let Some(factor) = cfg.divergence_factor {
                if loss.abs() > factor * reference {
                    return Err(abort(format!(
                        "loss {loss:.3e} diverged beyond {factor:.0e} times the initial {reference:.3e}"
                    )));
                }
            }
            let norm = global_norm(&grads);
            if !norm.is_finite() {
                return Err(abort(format!("gradient norm is {norm}")));
            }
            if let Some(max) = cfg.max_grad_norm {
                if norm > max {
                    grads
                        .iter_mut()
                        .for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= max / norm));
                }
            }
            adam.step(&mut params, &grads, lr);
            round_to_f32(&mut params);
            if !params.is_finite() {
                return Err(abort("parameters became non-finite".into()));
            }
            train_loss += loss * batch.len() as f64;
        }
        train_loss /= excerpts.len() as f64;

        let valid_loss = ctx.validation(&params, &split.valid)?;
        if !valid_loss.is_finite() {
            return Err(Error::TrainingAborted {
                epoch,
                batch: 0,
                reason: format!("validation loss is {valid_loss}"),
            });
        }
        log::info!("epoch {epoch}: train {train_loss:.6} valid {valid_loss:.6} lr {lr:.3e}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
            lr,
        });
        if valid_loss < best.0 {
            best = (valid_loss, params.clone());
            history.best_epoch = epoch;
        }
        let losses = history.valid_losses();
        lr = reduce_on_plateau(&losses, cfg.plateau_patience, cfg.lr_decay, lr);
        if early_stop(&losses, cfg.early_stop_patience) {
            log::info!("early stop after epoch {epoch}; best epoch {}", history.best_epoch);
            break;
        }
    }

    let model = Model::new(net, best.1, norm)?;
    let checkpoint = Checkpoint {
        model,
        stft: *stft_cfg,
        sample_rate,
        sources,
        train: cfg.clone(),
    };
    Ok((checkpoint, history))
}
