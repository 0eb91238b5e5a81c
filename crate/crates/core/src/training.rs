//! Next-token training: windowing, masked MSE, step-decay schedule, early
//! stopping and the epoch loop.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{save_checkpoint, ModelKind, SeismoGpt};
use crate::nn::{Bound, Dropout};
use crate::params::ParameterStore;
use crate::synth::Dataset;
use crate::tensor::{AdamConfig, AdamState, Graph, Tensor};
use crate::tokenizer::{random_padding_mask, Normalization, PaddingMask, Waveform, CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// When false the loop always runs `max_epochs`.
    pub early_stopping: bool,
    pub batch_size: usize,
    pub min_keep_tokens: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub dropout: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
    /// Offset between consecutive training windows, in samples.
    pub window_stride: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 5e-4,
            decay_factor: 0.8,
            decay_every_epochs: 5,
            max_epochs: 100,
            patience: 3,
            early_stopping: true,
            batch_size: 32,
            min_keep_tokens: 8,
            val_fraction: 0.1,
            seed: 0,
            dropout: 0.1,
            clip_norm: 1.0,
            window_stride: 16,
            checkpoint_path: None,
            report_path: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with the batch size used for `kind` (32 single, 8 array).
    pub fn for_kind(kind: ModelKind) -> Self {
        Self {
            batch_size: match kind {
                ModelKind::Single => 32,
                ModelKind::Array => 8,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Contract(msg));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be finite and non-negative, got {}", self.lr0));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad(format!("decay_factor must lie in (0, 1), got {}", self.decay_factor));
        }
        if self.decay_every_epochs == 0 {
            return bad("decay_every_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if self.batch_size == 0 || self.min_keep_tokens == 0 || self.window_stride == 0 {
            return bad("batch_size, min_keep_tokens and window_stride must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.clip_norm >= 0.0) {
            return bad(format!("clip_norm must be non-negative, got {}", self.clip_norm));
        }
        Ok(())
    }
}

/// `lr0 · decay_factor^floor(epoch / decay_every_epochs)`, epochs counted from 0.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr0 * cfg.decay_factor.powi((epoch / cfg.decay_every_epochs) as i32)
}

/// Mean squared error over positions whose token is kept. `pad` flags the
/// leading axis of `pred` (or its second axis for rank-4 array samples).
pub fn mse_loss(pred: &Tensor, target: &Tensor, pad: Option<&PaddingMask>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "mse_loss",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let weights = loss_weights(pred.shape(), pad)?;
    let count: f64 = weights.data().iter().sum();
    if count == 0.0 {
        return Err(Error::contract("every position of the loss is masked"));
    }
    let sse: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .zip(weights.data())
        .map(|((p, t), w)| w * (p - t) * (p - t))
        .sum();
    Ok(sse / count)
}

/// 0/1 weights over a `[N, ...]` or `[S, N, ...]` sample.
fn loss_weights(shape: &[usize], pad: Option<&PaddingMask>) -> Result<Tensor> {
    let Some(pad) = pad else {
        return Ok(Tensor::full(shape, 1.0));
    };
    let time_axis = if shape.len() >= 4 { 1 } else { 0 };
    if shape.get(time_axis) != Some(&pad.len()) {
        return Err(Error::Shape {
            op: "mse_loss mask",
            lhs: shape.to_vec(),
            rhs: vec![pad.len()],
        });
    }
    let inner: usize = shape[time_axis + 1..].iter().product();
    let n = pad.len();
    Ok(Tensor::from_fn(shape, |i| {
        if pad.is_kept((i / inner) % n) {
            1.0
        } else {
            0.0
        }
    }))
}

/// Where one training window starts: trace group `group`, sample `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub group: usize,
    pub start: usize,
}

/// Sliding windows of `context_tokens + 1` tokens over station-aligned trace
/// groups. Each group holds one trace per station.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub kind: ModelKind,
    pub groups: Vec<Vec<Waveform>>,
    pub windows: Vec<WindowRef>,
    pub context_tokens: usize,
    pub token_len: usize,
    pub stride: usize,
    /// Groups too short for a single window.
    pub skipped: usize,
}

/// One materialized window, normalized per station with statistics of the
/// kept input tokens; padded input tokens are zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    /// `[N, L, 3]` single or `[S, N, L, 3]` array.
    pub input: Tensor,
    pub target: Tensor,
    pub pad: PaddingMask,
}

/// Number of windows of `window` samples at `stride` over `t` samples.
pub fn window_count(t: usize, window: usize, stride: usize) -> usize {
    if t < window {
        0
    } else {
        (t - window) / stride + 1
    }
}

impl TrainingSet {
    pub fn new(
        kind: ModelKind,
        groups: Vec<Vec<Waveform>>,
        context_tokens: usize,
        token_len: usize,
        stride: usize,
    ) -> Result<Self> {
        if context_tokens == 0 || token_len == 0 || stride == 0 {
            return Err(Error::contract("context, token length and stride must be positive"));
        }
        let window = (context_tokens + 1) * token_len;
        let mut windows = Vec::new();
        let mut skipped = 0;
        for (gi, group) in groups.iter().enumerate() {
            let Some(first) = group.first() else {
                return Err(Error::contract("empty trace group"));
            };
            if kind == ModelKind::Single && group.len() != 1 {
                return Err(Error::contract("single-station groups hold exactly one trace"));
            }
            if group.iter().any(|w| w.len() != first.len()) {
                return Err(Error::contract("station traces in a group differ in length"));
            }
            let count = window_count(first.len(), window, stride);
            if count == 0 {
                skipped += 1;
            }
            windows.extend((0..count).map(|k| WindowRef {
                group: gi,
                start: k * stride,
            }));
        }
        if skipped > 0 {
            log::warn!("skipped {skipped} trace(s) shorter than one {window}-sample window");
        }
        Ok(Self {
            kind,
            groups,
            windows,
            context_tokens,
            token_len,
            stride,
            skipped,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn n_stations(&self) -> usize {
        self.groups.first().map_or(0, Vec::len)
    }

    /// Materializes window `i` with padding mask `pad` (all kept if `None`).
    pub fn pair(&self, i: usize, pad: Option<&PaddingMask>) -> Result<TrainingPair> {
        let w = self.windows[i];
        let n = self.context_tokens;
        let l = self.token_len;
        let pad = match pad {
            Some(p) if p.len() != n => {
                return Err(Error::contract(format!(
                    "padding mask has {} positions, context has {n}",
                    p.len()
                )))
            }
            Some(p) => p.clone(),
            None => PaddingMask::all(n),
        };
        let first = pad.first_kept();
        let token_width = l * CHANNELS;
        let group = &self.groups[w.group];
        let mut input = Vec::with_capacity(group.len() * n * token_width);
        let mut target = Vec::with_capacity(group.len() * n * token_width);
        for trace in group {
            let raw = &trace.samples()[w.start * CHANNELS..(w.start + (n + 1) * l) * CHANNELS];
            let norm = Normalization::fit(&raw[first * token_width..n * token_width]);
            let normed = norm.apply(raw);
            input.extend(
                normed[..n * token_width]
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| if k / token_width < first { 0.0 } else { v }),
            );
            target.extend_from_slice(&normed[token_width..]);
        }
        let shape = if self.kind == ModelKind::Single {
            vec![n, l, CHANNELS]
        } else {
            vec![group.len(), n, l, CHANNELS]
        };
        Ok(TrainingPair {
            input: Tensor::new(shape.clone(), input)?,
            target: Tensor::new(shape, target)?,
            pad,
        })
    }
}

/// Windows over every trace of `dataset`. The single-station model treats
/// each station of an event as an independent trace; the array model takes
/// all stations of an event together.
pub fn make_training_pairs(
    dataset: &Dataset,
    kind: ModelKind,
    context_tokens: usize,
    token_len: usize,
    stride: usize,
) -> Result<TrainingSet> {
    let groups = match kind {
        ModelKind::Single => dataset
            .events
            .iter()
            .flat_map(|e| e.waveforms.iter().map(|w| vec![w.clone()]))
            .collect(),
        ModelKind::Array => dataset.events.iter().map(|e| e.waveforms.clone()).collect(),
    };
    TrainingSet::new(kind, groups, context_tokens, token_len, stride)
}

/// Splits `0..n_events` into sorted (train, validation) index lists.
pub fn split_by_event(n_events: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_events < 2 {
        return Err(Error::contract("need at least two events to split train/validation"));
    }
    let mut order: Vec<usize> = (0..n_events).collect();
    order.shuffle(&mut derive_rng(seed, Stream::Split, 0, 0));
    let n_val = ((n_events as f64 * val_fraction).round() as usize).clamp(1, n_events - 1);
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stream {
    Split,
    Shuffle,
    Mask,
    Dropout,
}

fn derive_rng(seed: u64, stream: Stream, a: usize, b: usize) -> ChaCha8Rng {
    let tag = stream as u64 + 1;
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    r.set_stream(((a as u64) << 32) ^ b as u64);
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strictly lower
/// validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            StopDecision::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::NoImprovement
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Index of the last completed epoch.
    pub stopped_epoch: usize,
    pub early_stopped: bool,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub checkpoint: Option<PathBuf>,
}

/// Replay record written when a batch produces a non-finite loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub epoch: usize,
    pub batch: usize,
    pub windows: Vec<usize>,
}

fn sample_gradients(
    model: &SeismoGpt,
    pair: &TrainingPair,
    scale: f64,
    mut dropout: Option<Dropout>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let p = Bound::bind(&mut g, model.params());
    let y = model.forward_sample(&mut g, &p, &pair.input, Some(&pair.pad), dropout.as_mut())?;
    let w = loss_weights(pair.target.shape(), Some(&pair.pad))?;
    let loss = g.weighted_sse(y, &pair.target, &w, scale)?;
    let value = g.value(loss).data()[0] / scale;
    g.backward(loss)?;
    Ok((value, p.gradients(&g)))
}

fn kept_scalars(pair: &TrainingPair) -> usize {
    pair.target.numel() / pair.pad.len() * pair.pad.kept_count()
}

/// Mean per-position MSE over all windows of `set` with full context and no
/// dropout.
pub fn evaluate_loss(model: &SeismoGpt, set: &TrainingSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::contract("evaluation set has no windows"));
    }
    let parts = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let pair = set.pair(i, None)?;
            let pred = model.predict(&pair.input, None)?;
            let sse: f64 = pred
                .data()
                .iter()
                .zip(pair.target.data())
                .map(|(p, t)| (p - t) * (p - t))
                .sum();
            Ok((sse, pair.target.numel()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (sse, n) = parts
        .iter()
        .fold((0.0, 0usize), |(s, n), &(ps, pn)| (s + ps, n + pn));
    Ok(sse / n as f64)
}

fn check_compatible(model: &SeismoGpt, set: &TrainingSet) -> Result<()> {
    let cfg = model.config();
    if set.kind != cfg.kind || set.token_len != cfg.token_len {
        return Err(Error::Mismatch(format!(
            "{} model with token length {} cannot train on {} windows of token length {}",
            cfg.kind, cfg.token_len, set.kind, set.token_len
        )));
    }
    if cfg.kind == ModelKind::Array && set.n_stations() != cfg.n_stations {
        return Err(Error::Mismatch(format!(
            "array model expects {} stations, data has {}",
            cfg.n_stations,
            set.n_stations()
        )));
    }
    Ok(())
}

fn global_norm_clip(grads: &mut [Vec<f64>], clip: f64) {
    if clip <= 0.0 {
        return;
    }
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > clip {
        let s = clip / norm;
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v *= s);
    }
}

fn write_abort(cfg: &TrainConfig, record: &AbortRecord) -> Option<PathBuf> {
    let base = cfg.checkpoint_path.as_ref().or(cfg.report_path.as_ref())?;
    let path = base.with_extension("abort.json");
    let body = serde_json::to_string(record).expect("abort record serializes");
    match fs::write(&path, body) {
        Ok(()) => Some(path),
        Err(e) => {
            log::error!("could not write {}: {e}", path.display());
            None
        }
    }
}

/// Runs the epoch loop. On return the model holds the parameters of the
/// epoch with the lowest validation loss.
pub fn fit(
    model: &mut SeismoGpt,
    train: &TrainingSet,
    val: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_compatible(model, train)?;
    check_compatible(model, val)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::contract("training and validation sets need at least one window"));
    }
    if train.context_tokens != val.context_tokens {
        return Err(Error::contract("training and validation windows differ in length"));
    }
    let n_ctx = train.context_tokens;
    let min_keep = cfg.min_keep_tokens.min(n_ctx);
    let mut report_file = match &cfg.report_path {
        Some(p) => Some(fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };

    let mut adam = AdamState::new(model.params(), AdamConfig::default());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params: Option<ParameterStore> = None;
    let mut epochs = Vec::new();
    let mut early_stopped = false;

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at_epoch(cfg, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut derive_rng(cfg.seed, Stream::Shuffle, epoch, 0));
        let (mut epoch_sse, mut epoch_count) = (0.0, 0usize);

        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let pairs = idx
                .iter()
                .map(|&i| {
                    let mut r = derive_rng(cfg.seed, Stream::Mask, epoch, i);
                    let pad = random_padding_mask(n_ctx, min_keep, &mut r)?;
                    train.pair(i, Some(&pad))
                })
                .collect::<Result<Vec<_>>>()?;
            let count: usize = pairs.iter().map(kept_scalars).sum();
            let scale = 1.0 / count as f64;
            let results = pairs
                .par_iter()
                .zip(idx.par_iter())
                .map(|(pair, &i)| {
                    let drop = (cfg.dropout > 0.0).then(|| {
                        Dropout::new(cfg.dropout, derive_rng(cfg.seed, Stream::Dropout, epoch, i))
                    });
                    sample_gradients(model, pair, scale, drop)
                })
                .collect::<Result<Vec<_>>>()?;

            let batch_sse: f64 = results.iter().map(|r| r.0).sum();
            if !batch_sse.is_finite() {
                let record = AbortRecord {
                    epoch,
                    batch,
                    windows: idx.to_vec(),
                };
                if let Some(p) = write_abort(cfg, &record) {
                    log::error!("non-finite loss; replay record at {}", p.display());
                }
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            let mut iter = results.into_iter();
            let (_, mut grads) = iter.next().expect("batch is non-empty");
            for (_, g) in iter {
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
                }
            }
            global_norm_clip(&mut grads, cfg.clip_norm);
            adam.step(model.params_mut(), &grads, lr)?;
            epoch_sse += batch_sse;
            epoch_count += count;
        }

        let train_loss = epoch_sse / epoch_count as f64;
        let val_loss = evaluate_loss(model, val)?;
        let decision = stopper.observe(epoch, val_loss);
        let improved = decision == StopDecision::Improved;
        if improved {
            best_params = Some(model.params().clone());
            if let Some(path) = &cfg.checkpoint_path {
                save_checkpoint(model, path)?;
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            improved,
        };
        log::info!(
            "epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:.3e}{}",
            if improved { " *" } else { "" }
        );
        if let (Some(f), Some(p)) = (report_file.as_mut(), cfg.report_path.as_ref()) {
            let line = serde_json::to_string(&record).expect("epoch record serializes");
            writeln!(f, "{line}").map_err(|e| Error::io(p, e))?;
        }
        epochs.push(record);
        if cfg.early_stopping && decision == StopDecision::Stop {
            early_stopped = true;
            break;
        }
    }

    let Some((best_epoch, best_val_loss)) = stopper.best() else {
        return Err(Error::contract(
            "no epoch produced a finite validation loss (max_epochs may be 0)",
        ));
    };
    if let Some(best) = best_params {
        model.params_mut().load_from(&best)?;
    }
    Ok(TrainReport {
        stopped_epoch: epochs.len() - 1,
        epochs,
        early_stopped,
        best_epoch,
        best_val_loss,
        checkpoint: cfg.checkpoint_path.clone(),
    })
}

/// Splits `dataset` by event, windows both parts and runs [`fit`].
pub fn train_on_dataset(model: &mut SeismoGpt, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let (tr, va) = split_by_event(dataset.len(), cfg.val_fraction, cfg.seed)?;
    let mc = *model.config();
    let make = |idx: &[usize]| {
        make_training_pairs(
            &dataset.subset(idx),
            mc.kind,
            mc.context_tokens,
            mc.token_len,
            cfg.window_stride,
        )
    };
    fit(model, &make(&tr)?, &make(&va)?, cfg)
}

/// Reads a JSON-lines report back.
pub fn read_report(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;
    use rand::Rng;

    fn trace(t: usize, seed: u64) -> Waveform {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..t * CHANNELS).map(|_| r.gen_range(-1.0..1.0)).collect();
        Waveform::new(samples, 1.9, "ST00", 0.0).unwrap()
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            kind: ModelKind::Single,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            token_len: 4,
            context_tokens: 6,
            n_stations: 1,
        }
    }

    #[test]
    fn lr_schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(&cfg, 0), 5e-4);
        assert!((lr_at_epoch(&cfg, 4) - 5e-4).abs() < 1e-18);
        assert!((lr_at_epoch(&cfg, 5) - 4e-4).abs() < 1e-15);
        assert!((lr_at_epoch(&cfg, 10) - 3.2e-4).abs() < 1e-15);
    }

    #[test]
    fn mse_examples() {
        let a = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let z = Tensor::zeros(&[2]);
        assert_eq!(mse_loss(&a, &a, None).unwrap(), 0.0);
        assert_eq!(mse_loss(&a, &z, None).unwrap(), 1.0);
    }

    #[test]
    fn mse_matches_loop_with_mask() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let p = Tensor::from_fn(&[5, 2, 3], |_| r.gen_range(-2.0..2.0));
        let t = Tensor::from_fn(&[5, 2, 3], |_| r.gen_range(-2.0..2.0));
        let pad = PaddingMask::suffix(5, 3).unwrap();
        let (mut s, mut n) = (0.0, 0.0);
        for i in 2..5 {
            for j in 0..6 {
                let k = i * 6 + j;
                s += (p.data()[k] - t.data()[k]).powi(2);
                n += 1.0;
            }
        }
        assert!((mse_loss(&p, &t, Some(&pad)).unwrap() - s / n).abs() < 1e-12);
    }

    #[test]
    fn window_counts() {
        let l = 16;
        let n = 64;
        let one = TrainingSet::new(ModelKind::Single, vec![vec![trace(1040, 0)]], n, l, 16).unwrap();
        assert_eq!(one.len(), 1);
        let two = TrainingSet::new(ModelKind::Single, vec![vec![trace(1056, 0)]], n, l, 16).unwrap();
        assert_eq!(two.len(), 2);
        let short = TrainingSet::new(ModelKind::Single, vec![vec![trace(1000, 0)]], n, l, 16).unwrap();
        assert_eq!((short.len(), short.skipped), (0, 1));
    }

    #[test]
    fn target_is_input_shifted_by_one_token() {
        let set = TrainingSet::new(ModelKind::Single, vec![vec![trace(64, 1)]], 4, 4, 8).unwrap();
        let pair = set.pair(1, None).unwrap();
        assert_eq!(pair.input.shape(), &[4, 4, 3]);
        assert_eq!(pair.input.data()[12..], pair.target.data()[..36]);
    }

    #[test]
    fn array_windows_share_time_indices() {
        let group: Vec<Waveform> = (0..3).map(|s| trace(48, s)).collect();
        let set = TrainingSet::new(ModelKind::Array, vec![group.clone()], 3, 4, 4).unwrap();
        let pair = set.pair(2, None).unwrap();
        assert_eq!(pair.input.shape(), &[3, 3, 4, 3]);
        for (s, w) in group.iter().enumerate() {
            let raw = &w.samples()[8 * 3..(8 + 16) * 3];
            let norm = Normalization::fit(&raw[..36]);
            let expect = norm.apply(raw);
            assert_eq!(&pair.input.data()[s * 36..(s + 1) * 36], &expect[..36]);
            assert_eq!(&pair.target.data()[s * 36..(s + 1) * 36], &expect[12..]);
        }
    }

    #[test]
    fn padded_tokens_are_zeroed_and_stats_use_kept_tokens() {
        let set = TrainingSet::new(ModelKind::Single, vec![vec![trace(64, 2)]], 4, 4, 4).unwrap();
        let pad = PaddingMask::suffix(4, 2).unwrap();
        let pair = set.pair(0, Some(&pad)).unwrap();
        assert!(pair.input.data()[..24].iter().all(|&v| v == 0.0));
        let kept = &pair.input.data()[24..];
        for c in 0..3 {
            let mean: f64 = kept.iter().skip(c).step_by(3).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn early_stopping_trace() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(0, 1.0), StopDecision::Improved);
        assert_eq!(s.observe(1, 2.0), StopDecision::Stop);
        assert_eq!(s.best(), Some((0, 1.0)));

        let mut s = EarlyStopping::new(3);
        let vals = [1.0, 0.5, 0.6, 0.7, 0.8, 0.1];
        let d: Vec<_> = vals.iter().enumerate().map(|(e, &v)| s.observe(e, v)).collect();
        assert_eq!(d[4], StopDecision::Stop);
        assert_eq!(d[2], StopDecision::NoImprovement);
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let (tr, va) = split_by_event(20, 0.1, 5).unwrap();
        assert_eq!(va.len(), 2);
        assert_eq!(tr.len() + va.len(), 20);
        assert!(va.iter().all(|v| !tr.contains(v)));
        assert_eq!(split_by_event(20, 0.1, 5).unwrap(), (tr, va));
    }

    fn tiny_sets() -> (TrainingSet, TrainingSet) {
        let groups = |s: u64| (0..3).map(|k| vec![trace(60, s + k)]).collect();
        (
            TrainingSet::new(ModelKind::Single, groups(0), 6, 4, 8).unwrap(),
            TrainingSet::new(ModelKind::Single, groups(10), 6, 4, 8).unwrap(),
        )
    }

    #[test]
    fn fit_is_deterministic_and_follows_schedule() {
        let (tr, va) = tiny_sets();
        let cfg = TrainConfig {
            max_epochs: 7,
            early_stopping: false,
            batch_size: 4,
            min_keep_tokens: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = SeismoGpt::new(tiny_config(), 1).unwrap();
            let rep = fit(&mut m, &tr, &va, &cfg).unwrap();
            (rep, m)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a, b);
        assert_eq!(a.epochs.len(), 7);
        for r in &a.epochs {
            assert_eq!(r.lr, lr_at_epoch(&cfg, r.epoch));
            assert!(r.train_loss >= 0.0);
        }
        let min = a.epochs.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_val_loss, min);
        assert_eq!(evaluate_loss(&ma, &va).unwrap(), min);
        for ((_, x), (_, y)) in ma.params().iter().zip(mb.params().iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn report_and_checkpoint_are_written() {
        let (tr, va) = tiny_sets();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            max_epochs: 2,
            batch_size: 8,
            min_keep_tokens: 2,
            checkpoint_path: Some(dir.path().join("m.sgpt")),
            report_path: Some(dir.path().join("r.jsonl")),
            ..TrainConfig::default()
        };
        let mut m = SeismoGpt::new(tiny_config(), 1).unwrap();
        let rep = fit(&mut m, &tr, &va, &cfg).unwrap();
        assert_eq!(read_report(&dir.path().join("r.jsonl")).unwrap(), rep.epochs);
        let loaded = crate::models::load_checkpoint(&dir.path().join("m.sgpt")).unwrap();
        assert_eq!(evaluate_loss(&loaded, &va).unwrap(), rep.best_val_loss);
    }

    #[test]
    fn nan_input_aborts_with_batch_index() {
        let mut bad = trace(60, 0);
        let mut samples = bad.samples().to_vec();
        samples.iter_mut().for_each(|v| *v = f64::NAN);
        bad = Waveform::new(samples, 1.9, "ST00", 0.0).unwrap_or(bad);
        let tr = TrainingSet::new(ModelKind::Single, vec![vec![bad]], 6, 4, 8).unwrap();
        let (_, va) = tiny_sets();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            max_epochs: 1,
            batch_size: 1,
            min_keep_tokens: 2,
            checkpoint_path: Some(dir.path().join("m.sgpt")),
            ..TrainConfig::default()
        };
        let mut m = SeismoGpt::new(tiny_config(), 1).unwrap();
        match fit(&mut m, &tr, &va, &cfg) {
            Err(Error::NonFiniteLoss { epoch: 0, batch }) => {
                let rec: AbortRecord = serde_json::from_str(
                    &fs::read_to_string(dir.path().join("m.abort.json")).unwrap(),
                )
                .unwrap();
                assert_eq!(rec.batch, batch);
            }
            other => panic!("expected non-finite loss, got {other:?}"),
        }
    }

    #[test]
    fn incompatible_model_is_rejected() {
        let (tr, va) = tiny_sets();
        let mut cfg = tiny_config();
        cfg.token_len = 8;
        let mut m = SeismoGpt::new(cfg, 1).unwrap();
        assert!(matches!(
            fit(&mut m, &tr, &va, &TrainConfig::default()),
            Err(Error::Mismatch(_))
        ));
    }
}
