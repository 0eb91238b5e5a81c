use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_seismogpt"));
    for (k, _) in std::env::vars() {
        if k.starts_with("SEISMOFORGE_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn checksum(o: &Output) -> String {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix("checksum ").map(str::to_string))
        .expect("checksum line")
}

fn gen(dir: &Path, mode: &str, events: &str, seed: &str) -> Output {
    run(&[
        "gen-data", "--out", dir.to_str().unwrap(), "--mode", mode, "--events", events, "--seed",
        seed,
    ])
}

const TINY: &[&str] = &[
    "--d-model", "8", "--layers", "1", "--heads", "2", "--token-len", "16", "--context", "8",
    "--stride", "256", "--batch-size", "4",
];

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = gen(a.path(), "single", "6", "7");
    let ob = gen(b.path(), "single", "6", "7");
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    assert_eq!(checksum(&oa), checksum(&ob));
    let c = tempfile::tempdir().unwrap();
    assert_ne!(checksum(&gen(c.path(), "single", "6", "8")), checksum(&oa));
}

#[test]
fn gen_data_array_has_sixteen_traces() {
    let d = tempfile::tempdir().unwrap();
    assert!(gen(d.path(), "array", "2", "1").status.success());
    let ds = seismogpt::synth::load_dataset(d.path()).unwrap();
    assert!(ds.events.iter().all(|e| e.waveforms.len() == 16));
}

#[test]
fn missing_output_dir_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("absent");
    let o = gen(&missing, "single", "1", "0");
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent"));
}

#[test]
fn invalid_flag_exits_2() {
    assert_eq!(run(&["gen-data", "--bogus"]).status.code(), Some(2));
    let d = tempfile::tempdir().unwrap();
    let o = run(&["gen-data", "--out", d.path().to_str().unwrap(), "--mode", "triangle"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_defaults() {
    let o = run(&["train", "--help"]);
    let h = stdout(&o);
    for needle in [
        "[default: 6]",
        "[default: 8]",
        "[default: 0.0005]",
        "[default: 0.8]",
        "[default: 5]",
        "[default: 100]",
        "[default: 3]",
        "[default: 16]",
        "[default: 64]",
        "SEISMOFORGE_LR",
    ] {
        assert!(h.contains(needle), "missing {needle} in\n{h}");
    }
    let f = stdout(&run(&["forecast", "--help"]));
    assert!(f.contains("[default: 40]") && f.contains("[default: 24]"));
}

#[test]
fn train_header_echoes_defaults() {
    let data = tempfile::tempdir().unwrap();
    assert!(gen(data.path(), "single", "3", "1").status.success());
    let out = tempfile::tempdir().unwrap();
    let ck = out.path().join("m.sgpt");
    // Default architecture with a single epoch keeps the header check cheap.
    let o = run(&[
        "train", "--data", data.path().to_str().unwrap(), "--out", ck.to_str().unwrap(),
        "--max-epochs", "1", "--stride", "512", "--context", "8",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("layers=6 heads=8 token_len=16"), "{s}");
    assert!(s.contains("lr=0.0005 decay=0.8 every 5 epochs; max_epochs=1 patience=3"), "{s}");
}

#[test]
fn train_is_deterministic_and_reports_epochs() {
    let data = tempfile::tempdir().unwrap();
    assert!(gen(data.path(), "single", "4", "2").status.success());
    let out = tempfile::tempdir().unwrap();
    let a = out.path().join("a.sgpt");
    let b = out.path().join("b.sgpt");
    let oa = train(data.path(), &a, &["--max-epochs", "1"]);
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    let report = fs::read_to_string(a.with_extension("report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 1);
    assert!(train(data.path(), &b, &["--max-epochs", "1"]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn env_and_config_precedence() {
    let data = tempfile::tempdir().unwrap();
    assert!(gen(data.path(), "single", "3", "3").status.success());
    let out = tempfile::tempdir().unwrap();
    let conf = out.path().join("run.conf");
    fs::write(&conf, "max_epochs = 2\nno_early_stopping = true\nlr = 0.001\n").unwrap();
    let ck = out.path().join("m.sgpt");
    let mut args = vec![
        "--config", conf.to_str().unwrap(), "train", "--data", data.path().to_str().unwrap(),
        "--out", ck.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);

    // Config beats defaults.
    let o = bin().args(&args).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("lr=0.001"));
    assert_eq!(stdout(&o).matches("epoch ").count(), 2 + 1);

    // Environment beats config.
    let o = bin().args(&args).env("SEISMOFORGE_MAX_EPOCHS", "1").output().unwrap();
    assert!(stdout(&o).contains("max_epochs=1"), "{}", stdout(&o));

    // Flags beat environment.
    let mut with_flag = args.clone();
    with_flag.extend_from_slice(&["--lr", "0.002"]);
    let o = bin()
        .args(&with_flag)
        .env("SEISMOFORGE_LR", "0.003")
        .env("SEISMOFORGE_MAX_EPOCHS", "1")
        .output()
        .unwrap();
    assert!(stdout(&o).contains("lr=0.002"), "{}", stdout(&o));

    // Environment alone.
    let o = bin()
        .args(&args)
        .env("SEISMOFORGE_LR", "0.003")
        .env("SEISMOFORGE_MAX_EPOCHS", "1")
        .output()
        .unwrap();
    assert!(stdout(&o).contains("lr=0.003"), "{}", stdout(&o));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let conf = d.path().join("c.conf");
    fs::write(&conf, "warp_factor = 9\n").unwrap();
    let o = run(&["--config", conf.to_str().unwrap(), "gen-data", "--out", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

fn trained_single() -> (tempfile::TempDir, tempfile::TempDir, std::path::PathBuf) {
    let data = tempfile::tempdir().unwrap();
    assert!(gen(data.path(), "single", "3", "4").status.success());
    let out = tempfile::tempdir().unwrap();
    let ck = out.path().join("m.sgpt");
    let o = train(data.path(), &ck, &["--max-epochs", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (data, out, ck)
}

#[test]
fn forecast_row_counts() {
    let (data, out, ck) = trained_single();
    let input = data.path().join("events/00000.sgwf");
    let csv = out.path().join("f.csv");
    let o = run(&[
        "forecast", "--checkpoint", ck.to_str().unwrap(), "--input", input.to_str().unwrap(),
        "--out", csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 40 * 16 + 24 * 16);
    let last = text.lines().last().unwrap();
    assert_eq!(last.split(',').count(), 7);
    assert!(last.split(',').skip(4).all(|c| !c.is_empty()));

    let o = run(&[
        "forecast", "--checkpoint", ck.to_str().unwrap(), "--input", input.to_str().unwrap(),
        "--out", csv.to_str().unwrap(), "--steps", "0",
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "time,truth_Z,truth_N,truth_E");
    assert_eq!(text.lines().count(), 1 + 40 * 16);
}

#[test]
fn forecast_station_mismatch_exits_5() {
    let data = tempfile::tempdir().unwrap();
    assert!(gen(data.path(), "array", "3", "5").status.success());
    let out = tempfile::tempdir().unwrap();
    let ck = out.path().join("a.sgpt");
    let o = train(data.path(), &ck, &["--max-epochs", "1", "--model", "array"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let single = tempfile::tempdir().unwrap();
    assert!(gen(single.path(), "single", "1", "5").status.success());
    let o = run(&[
        "forecast", "--checkpoint", ck.to_str().unwrap(), "--input",
        single.path().join("events/00000.sgwf").to_str().unwrap(), "--out",
        out.path().join("f.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(5), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn eval_shape_determinism_and_compare_usage() {
    let (data, out, ck) = trained_single();
    let a = out.path().join("a.csv");
    let b = out.path().join("b.csv");
    for p in [&a, &b] {
        let o = run(&[
            "eval", "--checkpoint", ck.to_str().unwrap(), "--data", data.path().to_str().unwrap(),
            "--out", p.to_str().unwrap(), "--seed", "3",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(
        text.lines().next().unwrap(),
        "station,component,step,seconds_ahead,mse,correlation"
    );
    assert_eq!(text.lines().count(), 1 + 24 * 3);

    let o = run(&[
        "eval", "--checkpoint", ck.to_str().unwrap(), "--data", data.path().to_str().unwrap(),
        "--out", a.to_str().unwrap(), "--compare",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_writes_both_models() {
    let data = tempfile::tempdir().unwrap();
    assert!(gen(data.path(), "array", "3", "6").status.success());
    let out = tempfile::tempdir().unwrap();
    let single = out.path().join("s.sgpt");
    let array = out.path().join("a.sgpt");
    assert!(train(data.path(), &single, &["--max-epochs", "1"]).status.success());
    assert!(train(data.path(), &array, &["--max-epochs", "1", "--model", "array"])
        .status
        .success());
    let csv = out.path().join("cmp.csv");
    let o = run(&[
        "eval", "--checkpoint", single.to_str().unwrap(), "--array-checkpoint",
        array.to_str().unwrap(), "--data", data.path().to_str().unwrap(), "--out",
        csv.to_str().unwrap(), "--compare", "--steps", "8",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 16 * 3 * 8);
    assert!(stdout(&o).contains("late-horizon mean mse"));
}

#[test]
fn training_abort_exits_4() {
    let data = tempfile::tempdir().unwrap();
    assert!(gen(data.path(), "single", "3", "1").status.success());
    let ds = seismogpt::synth::load_dataset(data.path()).unwrap();
    for ev in &ds.events {
        let w = &ev.waveforms[0];
        let bad = seismogpt::tokenizer::Waveform::new(
            vec![f64::NAN; w.samples().len()],
            w.sampling_rate_hz,
            w.station_id.clone(),
            w.start_time_s,
        )
        .unwrap();
        seismogpt::io::write_waveforms(&data.path().join(&ev.record.file), &[bad]).unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    let ck = out.path().join("m.sgpt");
    let o = train(data.path(), &ck, &["--max-epochs", "1"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.path().join("m.abort.json").exists());
}
