//! Dataset directories: `events/NNNNN.sgwf` plus a `manifest.jsonl` sidecar
//! with one record per event.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    default_array_geometry, plane_wave_delay, synthesize_array_event, synthesize_event,
    travel_times, EventSpec, ReceiverSpec, SynthOptions, MAX_DISTANCE_DEG, MIN_DISTANCE_DEG,
};
use crate::error::{Error, Result};
use crate::io::{read_waveforms, waveform_bytes};
use crate::tokenizer::Waveform;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const EVENTS_DIR: &str = "events";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    Single,
    Array,
}

impl std::str::FromStr for DatasetMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "single" => Ok(DatasetMode::Single),
            "array" => Ok(DatasetMode::Array),
            other => Err(format!("unknown mode `{other}` (expected single|array)")),
        }
    }
}

impl std::fmt::Display for DatasetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetMode::Single => "single",
            DatasetMode::Array => "array",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub n_events: usize,
    pub mode: DatasetMode,
    pub seed: u64,
    pub synth: SynthOptions,
    /// Range for the per-event time between the first sample and the P arrival.
    pub lead_range_s: (f64, f64),
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            n_events: 2000,
            mode: DatasetMode::Single,
            seed: 0,
            synth: SynthOptions::default(),
            lead_range_s: (100.0, 250.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverRecord {
    pub station_id: String,
    pub x_km: f64,
    pub y_km: f64,
    pub distance_deg: f64,
    pub back_azimuth_deg: f64,
    pub t_p_s: f64,
    pub t_s_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub file: String,
    pub mode: DatasetMode,
    pub seed: u64,
    pub source: EventSpec,
    pub sampling_rate_hz: f64,
    pub n_samples: usize,
    pub start_time_s: f64,
    pub lead_s: f64,
    pub apparent_velocity_km_s: f64,
    pub receivers: Vec<ReceiverRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub dir: PathBuf,
    pub n_events: usize,
    /// SHA-256 over the manifest followed by every event file in order.
    pub checksum: String,
}

/// Draws the random source, receiver and trace lead of event `index`.
pub fn random_event(seed: u64, index: usize, opts: &GenerateOptions) -> (EventSpec, ReceiverSpec, f64) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64);
    // Weights bounded away from zero keep every phase visible on every component.
    let mechanism: [f64; 3] = std::array::from_fn(|_| {
        let m: f64 = r.gen_range(0.3..1.0);
        if r.gen::<bool>() {
            m
        } else {
            -m
        }
    });
    let ev = EventSpec {
        source_lat: r.gen_range(-60.0..60.0),
        source_lon: r.gen_range(-180.0..180.0),
        depth_km: r.gen_range(10.0..600.0),
        magnitude_proxy: 10f64.powf(r.gen_range(-0.3..0.7)),
        mechanism,
        rng_seed: r.gen(),
    };
    let rx = ReceiverSpec {
        angular_distance_deg: r.gen_range(MIN_DISTANCE_DEG..=MAX_DISTANCE_DEG),
        azimuth_deg: r.gen_range(0.0..360.0),
    };
    let lead = r.gen_range(opts.lead_range_s.0..=opts.lead_range_s.1);
    (ev, rx, lead)
}

fn event_file(index: usize) -> String {
    format!("{EVENTS_DIR}/{index:05}.sgwf")
}

fn build_event(index: usize, opts: &GenerateOptions) -> Result<(ManifestRecord, Vec<u8>)> {
    let (ev, rx, lead_s) = random_event(opts.seed, index, opts);
    let synth = SynthOptions {
        lead_s,
        ..opts.synth
    };
    let (tp, ts) = travel_times(rx.angular_distance_deg)?;
    let (traces, stations) = match opts.mode {
        DatasetMode::Single => (
            vec![synthesize_event(&ev, &rx, &synth)?],
            vec![("ST00".to_string(), 0.0, 0.0)],
        ),
        DatasetMode::Array => {
            let geom = default_array_geometry();
            let stations = geom
                .stations
                .iter()
                .map(|s| (s.station_id.clone(), s.x_km, s.y_km))
                .collect();
            (synthesize_array_event(&ev, &rx, &geom, &synth)?, stations)
        }
    };
    let receivers = stations
        .into_iter()
        .map(|(station_id, x_km, y_km)| {
            let delay = plane_wave_delay(x_km, y_km, rx.azimuth_deg, synth.apparent_velocity_km_s);
            ReceiverRecord {
                station_id,
                x_km,
                y_km,
                distance_deg: rx.angular_distance_deg,
                back_azimuth_deg: rx.azimuth_deg,
                t_p_s: tp + delay,
                t_s_s: ts + delay,
            }
        })
        .collect();
    let record = ManifestRecord {
        index,
        file: event_file(index),
        mode: opts.mode,
        seed: ev.rng_seed,
        source: ev,
        sampling_rate_hz: synth.sampling_rate_hz,
        n_samples: traces[0].len(),
        start_time_s: traces[0].start_time_s,
        lead_s,
        apparent_velocity_km_s: synth.apparent_velocity_km_s,
        receivers,
    };
    Ok((record, waveform_bytes(&traces)?))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Synthesizes `opts.n_events` events into `out_dir`, which must exist.
pub fn generate_dataset(out_dir: &Path, opts: &GenerateOptions) -> Result<DatasetSummary> {
    if opts.n_events == 0 {
        return Err(Error::contract("n_events must be at least 1"));
    }
    if !out_dir.is_dir() {
        return Err(Error::io(
            out_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        ));
    }
    let events_dir = out_dir.join(EVENTS_DIR);
    fs::create_dir_all(&events_dir).map_err(|e| Error::io(&events_dir, e))?;

    let built: Vec<(ManifestRecord, Vec<u8>)> = (0..opts.n_events)
        .into_par_iter()
        .map(|i| {
            let (rec, bytes) = build_event(i, opts)?;
            let path = out_dir.join(&rec.file);
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            Ok((rec, bytes))
        })
        .collect::<Result<_>>()?;

    let mut manifest = Vec::new();
    for (rec, _) in &built {
        serde_json::to_writer(&mut manifest, rec).expect("manifest record serializes");
        manifest.push(b'\n');
    }
    let manifest_path = out_dir.join(MANIFEST_FILE);
    fs::File::create(&manifest_path)
        .and_then(|mut f| f.write_all(&manifest))
        .map_err(|e| Error::io(&manifest_path, e))?;

    let mut hasher = Sha256::new();
    hasher.update(&manifest);
    for (_, bytes) in &built {
        hasher.update(bytes);
    }
    Ok(DatasetSummary {
        dir: out_dir.to_path_buf(),
        n_events: opts.n_events,
        checksum: hex(&hasher.finalize()),
    })
}

#[derive(Debug, Clone)]
pub struct DatasetEvent {
    pub record: ManifestRecord,
    /// One trace per station, in manifest receiver order.
    pub waveforms: Vec<Waveform>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub mode: DatasetMode,
    pub events: Vec<DatasetEvent>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn n_stations(&self) -> usize {
        self.events.first().map_or(0, |e| e.waveforms.len())
    }

    /// Events at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            mode: self.mode,
            events: indices.iter().map(|&i| self.events[i].clone()).collect(),
        }
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str::<ManifestRecord>(line)
                .map_err(|e| Error::format(&manifest_path, format!("record {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let first = records
        .first()
        .ok_or_else(|| Error::format(&manifest_path, "manifest is empty"))?;
    let mode = first.mode;
    let events = records
        .into_par_iter()
        .map(|record| {
            let path = dir.join(&record.file);
            let mut waveforms = read_waveforms(&path)?;
            if waveforms.len() != record.receivers.len() {
                return Err(Error::format(&path, "station count disagrees with manifest"));
            }
            for (w, rx) in waveforms.iter_mut().zip(&record.receivers) {
                if w.station_id != rx.station_id {
                    return Err(Error::format(&path, "station order disagrees with manifest"));
                }
                w.start_time_s = record.start_time_s;
            }
            Ok(DatasetEvent { record, waveforms })
        })
        .collect::<Result<Vec<_>>>()?;
    if events.iter().any(|e| e.record.mode != mode) {
        return Err(Error::format(&manifest_path, "mixed single/array records"));
    }
    Ok(Dataset { mode, events })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: DatasetMode, n: usize) -> GenerateOptions {
        GenerateOptions {
            n_events: n,
            mode,
            seed: 42,
            ..GenerateOptions::default()
        }
    }

    #[test]
    fn checksum_is_stable() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = generate_dataset(a.path(), &small(DatasetMode::Single, 3)).unwrap();
        let sb = generate_dataset(b.path(), &small(DatasetMode::Single, 3)).unwrap();
        assert_eq!(sa.checksum, sb.checksum);
        assert_eq!(sa.checksum.len(), 64);
        let c = tempfile::tempdir().unwrap();
        let other = GenerateOptions {
            seed: 43,
            ..small(DatasetMode::Single, 3)
        };
        assert_ne!(generate_dataset(c.path(), &other).unwrap().checksum, sa.checksum);
    }

    #[test]
    fn array_dataset_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(dir.path(), &small(DatasetMode::Array, 2)).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.mode, DatasetMode::Array);
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.n_stations(), 16);
        for e in &ds.events {
            for r in &e.record.receivers {
                assert!((21.0..=49.0).contains(&r.distance_deg));
                assert!(r.t_s_s > r.t_p_s);
            }
        }
    }

    #[test]
    fn missing_output_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        let err = generate_dataset(&missing, &small(DatasetMode::Single, 1)).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn distances_stay_in_window() {
        let opts = small(DatasetMode::Single, 1);
        for i in 0..2000 {
            let (ev, rx, lead) = random_event(7, i, &opts);
            assert!((21.0..=49.0).contains(&rx.angular_distance_deg));
            assert!((100.0..=250.0).contains(&lead));
            assert!(ev.magnitude_proxy > 0.0);
        }
    }
}
