use std::path::{Path, PathBuf};

use seismogpt::forecasting::{
    compare_single_vs_array, evaluate_horizon, forecast, write_overlay_csv, Forecaster,
};
use seismogpt::io::{read_csv_waveform, read_waveforms};
use seismogpt::models::{load_checkpoint, ModelConfig, ModelKind, SeismoGpt};
use seismogpt::synth::{generate_dataset, load_dataset, GenerateOptions, SynthOptions};
use seismogpt::tokenizer::{tokenize, Waveform};
use seismogpt::training::{train_on_dataset, TrainConfig};

use crate::{CliError, Command, EvalArgs, ForecastArgs, GenDataArgs, TrainArgs};

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Forecast(a) => forecast_cmd(a),
        Command::Eval(a) => eval(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    if a.lead_min > a.lead_max {
        return Err(CliError::Usage("--lead-min exceeds --lead-max".into()));
    }
    if !(a.sampling_rate > 0.0) || a.samples == 0 {
        return Err(CliError::Usage(
            "--sampling-rate and --samples must be positive".into(),
        ));
    }
    let opts = GenerateOptions {
        n_events: a.events,
        mode: a.mode,
        seed: a.seed,
        synth: SynthOptions {
            sampling_rate_hz: a.sampling_rate,
            duration_s: a.samples as f64 / a.sampling_rate,
            apparent_velocity_km_s: a.velocity,
            lowpass_corner_hz: a.corner,
            ..SynthOptions::default()
        },
        lead_range_s: (a.lead_min, a.lead_max),
    };
    let summary = generate_dataset(&a.out, &opts)?;
    println!(
        "wrote {} {} events to {}",
        summary.n_events,
        a.mode,
        summary.dir.display()
    );
    println!("checksum {}", summary.checksum);
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let model_cfg = ModelConfig {
        kind: a.model,
        d_model: a.d_model,
        n_layers: a.layers,
        n_heads: a.heads,
        token_len: a.token_len,
        context_tokens: a.context,
        n_stations: 1,
    };
    let base = TrainConfig::for_kind(a.model);
    let mut cfg = TrainConfig {
        lr0: a.lr,
        decay_factor: a.decay,
        decay_every_epochs: a.decay_every,
        max_epochs: a.max_epochs,
        patience: a.patience,
        early_stopping: !a.no_early_stopping,
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        min_keep_tokens: a.min_keep,
        val_fraction: a.val_fraction,
        seed: a.seed,
        dropout: a.dropout,
        clip_norm: a.clip_norm,
        window_stride: a.stride,
        checkpoint_path: Some(a.out.clone()),
        report_path: Some(
            a.report
                .clone()
                .unwrap_or_else(|| a.out.with_extension("report.jsonl")),
        ),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let dataset = load_dataset(&a.data)?;
    let n_stations = match a.model {
        ModelKind::Single => 1,
        ModelKind::Array => dataset.n_stations(),
    };
    let model_cfg = ModelConfig {
        n_stations,
        ..model_cfg
    };
    model_cfg
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if a.model == ModelKind::Array && dataset.mode != seismogpt::synth::DatasetMode::Array {
        return Err(CliError::Usage(
            "--model array needs a dataset generated with --mode array".into(),
        ));
    }
    let mut model = SeismoGpt::new(model_cfg, a.seed)?;
    println!(
        "model {} d_model={} layers={} heads={} token_len={} context={} stations={} params={}",
        model_cfg.kind,
        model_cfg.d_model,
        model_cfg.n_layers,
        model_cfg.n_heads,
        model_cfg.token_len,
        model_cfg.context_tokens,
        model_cfg.n_stations,
        model.params().num_scalars()
    );
    println!(
        "optimizer adam lr={} decay={} every {} epochs; max_epochs={} patience={} batch={} min_keep={} dropout={} clip={} stride={} seed={}",
        cfg.lr0,
        cfg.decay_factor,
        cfg.decay_every_epochs,
        cfg.max_epochs,
        cfg.patience,
        cfg.batch_size,
        cfg.min_keep_tokens,
        cfg.dropout,
        cfg.clip_norm,
        cfg.window_stride,
        cfg.seed
    );
    println!("dataset {} events from {}", dataset.len(), a.data.display());
    cfg.checkpoint_path = Some(a.out.clone());
    let report = train_on_dataset(&mut model, &dataset, &cfg)?;
    for r in &report.epochs {
        println!(
            "epoch {:>3}  train {:.6}  val {:.6}  lr {:.3e}{}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.lr,
            if r.improved { "  *" } else { "" }
        );
    }
    println!(
        "best epoch {} (val {:.6}); checkpoint {}",
        report.best_epoch,
        report.best_val_loss,
        a.out.display()
    );
    Ok(())
}

fn read_input(path: &Path) -> Result<Vec<Waveform>, CliError> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    Ok(if is_csv {
        vec![read_csv_waveform(path, "ST00")?]
    } else {
        read_waveforms(path)?
    })
}

fn station_output(out: &Path, station: &str, n: usize) -> PathBuf {
    if n == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("forecast");
    out.with_file_name(format!("{stem}.{station}.csv"))
}

fn forecast_cmd(a: ForecastArgs) -> Result<(), CliError> {
    if a.context_tokens == 0 {
        return Err(CliError::Usage("--context-tokens must be at least 1".into()));
    }
    let model = load_checkpoint(&a.checkpoint)?;
    let traces = read_input(&a.input)?;
    let l = model.token_len();
    let c0 = a.start_token * l;
    let c1 = c0 + a.context_tokens * l;
    let mut contexts = Vec::with_capacity(traces.len());
    for w in &traces {
        if w.len() < c1 {
            return Err(CliError::Usage(format!(
                "{}: trace of {} samples is shorter than the requested context (samples {c0}..{c1})",
                a.input.display(),
                w.len()
            )));
        }
        contexts.push(tokenize(&w.window(c0, c1)?, l)?);
    }
    let res = forecast(&model, &contexts, a.steps)?;
    let n = traces.len();
    for (s, w) in traces.iter().enumerate() {
        let end = (c1 + a.steps * l).min(w.len());
        let truth = w.window(c0, end)?;
        let path = station_output(&a.out, &w.station_id, n);
        write_overlay_csv(&path, &truth, c1 - c0, &res.predicted[s])?;
        println!("wrote {}", path.display());
    }
    println!(
        "forecast {} tokens ({} samples, {:.1} s) after a {}-token context",
        a.steps,
        a.steps * l,
        res.horizon_seconds,
        res.context_tokens
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    if a.compare && a.array_checkpoint.is_none() {
        return Err(CliError::Usage(
            "--compare needs both --checkpoint and --array-checkpoint".into(),
        ));
    }
    let dataset = load_dataset(&a.data)?;
    let model = load_checkpoint(&a.checkpoint)?;
    if let Some(s) = model.stations() {
        if s != dataset.n_stations() {
            return Err(seismogpt::Error::Mismatch(format!(
                "checkpoint expects {s} stations, dataset has {}",
                dataset.n_stations()
            ))
            .into());
        }
    }
    let late = |steps: usize| (steps - (steps / 4).max(1) + 1, steps);
    if a.compare {
        let path = a.array_checkpoint.as_ref().expect("checked above");
        let array = load_checkpoint(path)?;
        if model.kind() != ModelKind::Single || array.kind() != ModelKind::Array {
            return Err(seismogpt::Error::Mismatch(
                "--compare expects a single-station --checkpoint and an array --array-checkpoint"
                    .into(),
            )
            .into());
        }
        let table =
            compare_single_vs_array(&model, &array, &dataset, a.context_tokens, a.steps, a.seed)?;
        table.write_csv(&a.out)?;
        let (s, r) = table.late_horizon_mse();
        println!("late-horizon mean mse: single {s:.6}  array {r:.6}");
    } else {
        let table = evaluate_horizon(&model, &dataset, a.context_tokens, a.steps, a.seed)?;
        table.write_csv(&a.out)?;
        let (f, l) = late(a.steps);
        println!(
            "{} events; mean mse steps 1-{}: {:.6}; steps {f}-{l}: {:.6}",
            table.n_events,
            a.steps.min(4),
            table.mean_mse(1, a.steps.min(4)),
            table.mean_mse(f, l)
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}
