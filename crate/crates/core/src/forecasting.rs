//! Autoregressive decoding, horizon-resolved metrics and plot-ready exports.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelKind, SeismoGpt};
use crate::synth::Dataset;
use crate::tensor::Tensor;
use crate::tokenizer::{tokenize, TokenSequence, Waveform, CHANNELS, COMPONENT_NAMES};

/// Anything that maps a normalized context to the next normalized token.
pub trait Forecaster: Sync {
    /// Station count the predictor is tied to; `None` for per-station
    /// predictors that accept any number of stations.
    fn stations(&self) -> Option<usize>;
    fn token_len(&self) -> usize;
    /// Longest context the predictor sees; older tokens are dropped.
    fn window(&self) -> usize;
    /// `context` is `[S, n, L, 3]`; returns the next token as `[S, L, 3]`.
    fn next_token(&self, context: &Tensor) -> Result<Tensor>;
}

fn last_tokens(y: &Tensor) -> Result<Tensor> {
    let (s, n, tw) = (y.shape()[0], y.shape()[1], y.shape()[2] * y.shape()[3]);
    let data = (0..s)
        .flat_map(|k| y.data()[(k * n + n - 1) * tw..(k * n + n) * tw].iter().copied())
        .collect();
    Tensor::new(vec![s, y.shape()[2], y.shape()[3]], data)
}

impl Forecaster for SeismoGpt {
    fn stations(&self) -> Option<usize> {
        match self.kind() {
            ModelKind::Single => None,
            ModelKind::Array => Some(self.n_stations()),
        }
    }

    fn token_len(&self) -> usize {
        self.config().token_len
    }

    fn window(&self) -> usize {
        self.config().context_tokens
    }

    fn next_token(&self, context: &Tensor) -> Result<Tensor> {
        let shape = context.shape().to_vec();
        match self.kind() {
            ModelKind::Array => last_tokens(&self.predict(context, None)?),
            ModelKind::Single => {
                let per = shape[1] * shape[2] * shape[3];
                let mut out = Vec::with_capacity(shape[0] * shape[2] * shape[3]);
                for s in 0..shape[0] {
                    let x = Tensor::new(
                        shape[1..].to_vec(),
                        context.data()[s * per..(s + 1) * per].to_vec(),
                    )?;
                    let y = self.predict(&x, None)?;
                    let tw = shape[2] * shape[3];
                    out.extend_from_slice(&y.data()[(shape[1] - 1) * tw..]);
                }
                Tensor::new(vec![shape[0], shape[2], shape[3]], out)
            }
        }
    }
}

/// Predicts zeros, i.e. the context mean in raw units.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPredictor {
    pub token_len: usize,
}

impl Forecaster for ZeroPredictor {
    fn stations(&self) -> Option<usize> {
        None
    }

    fn token_len(&self) -> usize {
        self.token_len
    }

    fn window(&self) -> usize {
        usize::MAX
    }

    fn next_token(&self, context: &Tensor) -> Result<Tensor> {
        let s = context.shape();
        Ok(Tensor::zeros(&[s[0], s[2], s[3]]))
    }
}

/// Repeats the most recent context token.
#[derive(Debug, Clone, Copy)]
pub struct RepeatLast {
    pub token_len: usize,
}

impl Forecaster for RepeatLast {
    fn stations(&self) -> Option<usize> {
        None
    }

    fn token_len(&self) -> usize {
        self.token_len
    }

    fn window(&self) -> usize {
        usize::MAX
    }

    fn next_token(&self, context: &Tensor) -> Result<Tensor> {
        last_tokens(context)
    }
}

/// Output of one autoregressive rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub station_ids: Vec<String>,
    pub token_len: usize,
    pub sampling_rate_hz: f64,
    /// Context tokens actually used (after any truncation).
    pub context_tokens: usize,
    pub steps: usize,
    /// Per station, `steps·L` time-major samples in the normalized domain.
    pub predicted_normalized: Vec<Vec<f64>>,
    /// Per station, the same samples in raw units.
    pub predicted: Vec<Vec<f64>>,
    /// Time of the first predicted sample.
    pub start_time_s: f64,
    pub horizon_seconds: f64,
    /// Filled by [`forecast_against`]; empty otherwise.
    pub per_step_mse: Vec<f64>,
    pub per_step_correlation: Vec<f64>,
}

impl ForecastResult {
    pub fn n_stations(&self) -> usize {
        self.station_ids.len()
    }

    /// Predicted samples of one station as a waveform, `None` when `steps == 0`.
    pub fn waveform(&self, station: usize) -> Option<Waveform> {
        Waveform::new(
            self.predicted[station].clone(),
            self.sampling_rate_hz,
            self.station_ids[station].clone(),
            self.start_time_s,
        )
        .ok()
    }
}

fn stack_contexts(context: &[TokenSequence]) -> Result<Tensor> {
    let parts: Vec<&Tensor> = context.iter().map(|c| &c.tokens).collect();
    let n = context[0].n_tokens();
    let mut shape = vec![context.len()];
    shape.extend_from_slice(&[n, context[0].token_len, CHANNELS]);
    Tensor::concat_outer(&parts)?.reshape(&shape)
}

fn check_context<F: Forecaster + ?Sized>(model: &F, context: &[TokenSequence]) -> Result<()> {
    let Some(first) = context.first() else {
        return Err(Error::contract("forecast needs at least one station context"));
    };
    if let Some(s) = model.stations() {
        if s != context.len() {
            return Err(Error::Mismatch(format!(
                "model expects {s} stations, context has {}",
                context.len()
            )));
        }
    }
    if first.token_len != model.token_len() {
        return Err(Error::Mismatch(format!(
            "model token length {} differs from context token length {}",
            model.token_len(),
            first.token_len
        )));
    }
    for c in context {
        if c.n_tokens() != first.n_tokens()
            || c.token_len != first.token_len
            || c.sampling_rate_hz != first.sampling_rate_hz
        {
            return Err(Error::contract("station contexts are not aligned"));
        }
    }
    Ok(())
}

/// Rolls the predictor forward `steps` tokens from `context` (one normalized
/// sequence per station). The context slides once it exceeds the predictor's
/// window; a context already longer than the window is truncated to its
/// trailing tokens.
pub fn forecast<F: Forecaster + ?Sized>(
    model: &F,
    context: &[TokenSequence],
    steps: usize,
) -> Result<ForecastResult> {
    check_context(model, context)?;
    let window = model.window();
    let n_in = context[0].n_tokens();
    let l = context[0].token_len;
    let tw = l * CHANNELS;
    let s = context.len();
    let used = n_in.min(window);
    if n_in > window {
        log::warn!("context of {n_in} tokens truncated to the trailing {window}");
    }
    let stacked = stack_contexts(context)?;
    // history[k] holds station k's tokens, flattened.
    let mut history: Vec<Vec<f64>> = (0..s)
        .map(|k| stacked.data()[(k * n_in + n_in - used) * tw..(k + 1) * n_in * tw].to_vec())
        .collect();
    for _ in 0..steps {
        let len = history[0].len() / tw;
        let keep = len.min(window);
        let data = history
            .iter()
            .flat_map(|h| h[(len - keep) * tw..].iter().copied())
            .collect();
        let next = model.next_token(&Tensor::new(vec![s, keep, l, CHANNELS], data)?)?;
        for (k, h) in history.iter_mut().enumerate() {
            h.extend_from_slice(&next.data()[k * tw..(k + 1) * tw]);
        }
    }
    let predicted_normalized: Vec<Vec<f64>> =
        history.into_iter().map(|h| h[used * tw..].to_vec()).collect();
    let predicted = predicted_normalized
        .iter()
        .zip(context)
        .map(|(p, c)| c.norm.invert(p))
        .collect();
    let sr = context[0].sampling_rate_hz;
    Ok(ForecastResult {
        station_ids: context.iter().map(|c| c.station_id.clone()).collect(),
        token_len: l,
        sampling_rate_hz: sr,
        context_tokens: used,
        steps,
        predicted_normalized,
        predicted,
        start_time_s: context[0].start_time_s + (n_in * l) as f64 / sr,
        horizon_seconds: (steps * l) as f64 / sr,
        per_step_mse: Vec::new(),
        per_step_correlation: Vec::new(),
    })
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Per-token, per-component `(mse, correlation)` of `pred` against `truth`,
/// both time-major `steps·L·3` buffers. Indexed `[step][component]`.
pub fn token_metrics(pred: &[f64], truth: &[f64], token_len: usize) -> Vec<[(f64, f64); CHANNELS]> {
    let tw = token_len * CHANNELS;
    pred.chunks_exact(tw)
        .zip(truth.chunks_exact(tw))
        .map(|(p, t)| {
            std::array::from_fn(|c| {
                let pc: Vec<f64> = p.iter().skip(c).step_by(CHANNELS).copied().collect();
                let tc: Vec<f64> = t.iter().skip(c).step_by(CHANNELS).copied().collect();
                let mse = pc.iter().zip(&tc).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
                    / token_len as f64;
                (mse, pearson(&pc, &tc))
            })
        })
        .collect()
}

/// [`forecast`] followed by per-step scoring against `truth`, the normalized
/// continuation of each station (`[steps, L, 3]` each, same normalization as
/// the context).
pub fn forecast_against<F: Forecaster + ?Sized>(
    model: &F,
    context: &[TokenSequence],
    truth: &[TokenSequence],
) -> Result<ForecastResult> {
    if truth.len() != context.len() {
        return Err(Error::contract("truth and context differ in station count"));
    }
    let steps = truth[0].n_tokens();
    let mut res = forecast(model, context, steps)?;
    let mut mse = vec![0.0; steps];
    let mut corr = vec![0.0; steps];
    let denom = (CHANNELS * context.len()) as f64;
    for (p, t) in res.predicted_normalized.iter().zip(truth) {
        if t.n_tokens() != steps {
            return Err(Error::contract("truth sequences differ in length"));
        }
        for (k, m) in token_metrics(p, t.tokens.data(), res.token_len).iter().enumerate() {
            for (e, c) in m {
                mse[k] += e / denom;
                corr[k] += c / denom;
            }
        }
    }
    res.per_step_mse = mse;
    res.per_step_correlation = corr;
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub station: String,
    pub component: String,
    /// 1-based forecast step.
    pub step: usize,
    pub seconds_ahead: f64,
    pub mse: f64,
    pub correlation: f64,
}

/// Metrics averaged over events, one row per station, component and step.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonTable {
    pub rows: Vec<HorizonRow>,
    pub steps: usize,
    pub n_events: usize,
    /// Events too short for context plus horizon.
    pub skipped: usize,
    /// `[event][step]` MSE averaged over stations and components.
    pub event_step_mse: Vec<Vec<f64>>,
}

impl HorizonTable {
    /// MSE per step averaged over stations and components.
    pub fn per_step_mse(&self) -> Vec<f64> {
        self.per_step(|r| r.mse)
    }

    pub fn per_step_correlation(&self) -> Vec<f64> {
        self.per_step(|r| r.correlation)
    }

    fn per_step(&self, f: impl Fn(&HorizonRow) -> f64) -> Vec<f64> {
        let mut acc = vec![0.0; self.steps];
        let mut n = vec![0usize; self.steps];
        for r in &self.rows {
            acc[r.step - 1] += f(r);
            n[r.step - 1] += 1;
        }
        acc.iter().zip(n).map(|(a, n)| a / n as f64).collect()
    }

    /// Mean MSE over 1-based steps `first..=last`.
    pub fn mean_mse(&self, first: usize, last: usize) -> f64 {
        let v = self.per_step_mse();
        v[first - 1..last].iter().sum::<f64>() / (last + 1 - first) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("station,component,step,seconds_ahead,mse,correlation\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.station, r.component, r.step, r.seconds_ahead, r.mse, r.correlation
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Context and truth for one event, both normalized with the statistics of
/// the whole context-plus-horizon window; `None` if the trace is too short.
fn event_window(
    waveforms: &[Waveform],
    token_len: usize,
    context_tokens: usize,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(Vec<TokenSequence>, Vec<TokenSequence>)>> {
    let n_tok = waveforms[0].len() / token_len;
    let need = context_tokens + steps;
    if n_tok < need {
        return Ok(None);
    }
    let start = rng.gen_range(0..=n_tok - need);
    let mut ctx = Vec::with_capacity(waveforms.len());
    let mut truth = Vec::with_capacity(waveforms.len());
    for w in waveforms {
        let c0 = start * token_len;
        let whole = tokenize(&w.window(c0, c0 + need * token_len)?, token_len)?;
        ctx.push(whole.slice(0, context_tokens)?);
        truth.push(whole.slice(context_tokens, need)?);
    }
    Ok(Some((ctx, truth)))
}

/// Forecasts `steps` tokens after a `context_tokens` window drawn per event
/// (seeded by `seed` and the event index) and averages normalized-domain
/// metrics over events.
pub fn evaluate_horizon<F: Forecaster + ?Sized>(
    model: &F,
    dataset: &Dataset,
    context_tokens: usize,
    steps: usize,
    seed: u64,
) -> Result<HorizonTable> {
    if dataset.is_empty() || context_tokens == 0 || steps == 0 {
        return Err(Error::contract(
            "evaluation needs events, a non-empty context and at least one step",
        ));
    }
    let n_st = dataset.n_stations();
    if let Some(s) = model.stations() {
        if s != n_st {
            return Err(Error::contract(format!(
                "model expects {s} stations, dataset has {n_st}"
            )));
        }
    }
    let l = model.token_len();
    let per_event = dataset
        .events
        .par_iter()
        .enumerate()
        .map(|(i, ev)| {
            if ev.waveforms.len() != n_st {
                return Err(Error::contract("events differ in station count"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let Some((ctx, truth)) = event_window(&ev.waveforms, l, context_tokens, steps, &mut rng)?
            else {
                return Ok(None);
            };
            let res = forecast(model, &ctx, steps)?;
            let m: Vec<_> = res
                .predicted_normalized
                .iter()
                .zip(&truth)
                .map(|(p, t)| token_metrics(p, t.tokens.data(), l))
                .collect();
            Ok(Some(m))
        })
        .collect::<Result<Vec<_>>>()?;

    let scored: Vec<_> = per_event.into_iter().flatten().collect();
    let skipped = dataset.len() - scored.len();
    if scored.is_empty() {
        return Err(Error::contract(format!(
            "no event is long enough for {context_tokens} context tokens plus {steps} steps"
        )));
    }
    let sr = dataset.events[0].waveforms[0].sampling_rate_hz;
    let station_ids: Vec<&str> = dataset.events[0]
        .waveforms
        .iter()
        .map(|w| w.station_id.as_str())
        .collect();
    let ne = scored.len() as f64;
    let mut rows = Vec::with_capacity(n_st * CHANNELS * steps);
    for (s, id) in station_ids.iter().enumerate() {
        for (c, comp) in COMPONENT_NAMES.iter().enumerate() {
            for k in 0..steps {
                let (mse, corr) = scored
                    .iter()
                    .fold((0.0, 0.0), |(a, b), ev| (a + ev[s][k][c].0, b + ev[s][k][c].1));
                rows.push(HorizonRow {
                    station: id.to_string(),
                    component: comp.to_string(),
                    step: k + 1,
                    seconds_ahead: ((k + 1) * l) as f64 / sr,
                    mse: mse / ne,
                    correlation: corr / ne,
                });
            }
        }
    }
    let denom = (n_st * CHANNELS) as f64;
    let event_step_mse = scored
        .iter()
        .map(|ev| {
            (0..steps)
                .map(|k| {
                    ev.iter()
                        .map(|st| st[k].iter().map(|m| m.0).sum::<f64>())
                        .sum::<f64>()
                        / denom
                })
                .collect()
        })
        .collect();
    Ok(HorizonTable {
        rows,
        steps,
        n_events: scored.len(),
        skipped,
        event_step_mse,
    })
}

/// Side-by-side horizon metrics of two models on the same windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub single: HorizonTable,
    pub array: HorizonTable,
}

impl ComparisonTable {
    /// Mean MSE over the last quartile of steps, `(single, array)`.
    pub fn late_horizon_mse(&self) -> (f64, f64) {
        let steps = self.single.steps;
        let first = steps - (steps / 4).max(1) + 1;
        (
            self.single.mean_mse(first, steps),
            self.array.mean_mse(first, steps),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,station,component,step,seconds_ahead,mse,correlation\n");
        for (name, t) in [("single", &self.single), ("array", &self.array)] {
            for r in &t.rows {
                out.push_str(&format!(
                    "{name},{},{},{},{},{},{}\n",
                    r.station, r.component, r.step, r.seconds_ahead, r.mse, r.correlation
                ));
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Evaluates a per-station model and an array model on identical windows of
/// an array dataset.
pub fn compare_single_vs_array<A: Forecaster + ?Sized, B: Forecaster + ?Sized>(
    single: &A,
    array: &B,
    dataset: &Dataset,
    context_tokens: usize,
    steps: usize,
    seed: u64,
) -> Result<ComparisonTable> {
    Ok(ComparisonTable {
        single: evaluate_horizon(single, dataset, context_tokens, steps, seed)?,
        array: evaluate_horizon(array, dataset, context_tokens, steps, seed)?,
    })
}

/// Writes `time, truth_Z/N/E[, pred_Z/N/E]` rows covering the context and the
/// forecast. `truth` is the raw trace starting at the context's first sample;
/// samples past its end are left blank. The prediction columns are omitted
/// when there are no predicted samples.
pub fn write_overlay_csv(
    path: &Path,
    truth: &Waveform,
    context_samples: usize,
    predicted: &[f64],
) -> Result<()> {
    let n_pred = predicted.len() / CHANNELS;
    let with_pred = n_pred > 0;
    let mut out = Vec::new();
    let header = if with_pred {
        "time,truth_Z,truth_N,truth_E,pred_Z,pred_N,pred_E\n"
    } else {
        "time,truth_Z,truth_N,truth_E\n"
    };
    out.extend_from_slice(header.as_bytes());
    let dt = 1.0 / truth.sampling_rate_hz;
    for t in 0..context_samples + n_pred {
        let mut line = format!("{}", truth.start_time_s + t as f64 * dt);
        for c in 0..CHANNELS {
            if t < truth.len() {
                line.push_str(&format!(",{}", truth.sample(t, c)));
            } else {
                line.push(',');
            }
        }
        if with_pred {
            for c in 0..CHANNELS {
                if t >= context_samples {
                    line.push_str(&format!(",{}", predicted[(t - context_samples) * CHANNELS + c]));
                } else {
                    line.push(',');
                }
            }
        }
        line.push('\n');
        out.extend_from_slice(line.as_bytes());
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}
