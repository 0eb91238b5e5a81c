//! Waveform files.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "SGWF" | version u32 | station count u32 | sampling_rate_hz f64 | T u64
//! per station: id_len u16 | id utf-8 | T×3 f64, time-major (Z, N, E)
//! ```
//!
//! CSV traces with `time, Z, N, E` columns can also be imported.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tokenizer::{Waveform, CHANNELS};

pub const WAVEFORM_MAGIC: &[u8; 4] = b"SGWF";
pub const WAVEFORM_VERSION: u32 = 1;

pub fn waveform_bytes(traces: &[Waveform]) -> Result<Vec<u8>> {
    let first = traces
        .first()
        .ok_or_else(|| Error::contract("cannot write an empty station list"))?;
    let (sr, t) = (first.sampling_rate_hz, first.len());
    if let Some(w) = traces
        .iter()
        .find(|w| w.len() != t || w.sampling_rate_hz != sr)
    {
        return Err(Error::contract(format!(
            "station {} differs in length or sampling rate from {}",
            w.station_id, first.station_id
        )));
    }
    let mut out = Vec::with_capacity(32 + traces.len() * (t * CHANNELS * 8 + 16));
    out.extend_from_slice(WAVEFORM_MAGIC);
    out.extend_from_slice(&WAVEFORM_VERSION.to_le_bytes());
    out.extend_from_slice(&(traces.len() as u32).to_le_bytes());
    out.extend_from_slice(&sr.to_le_bytes());
    out.extend_from_slice(&(t as u64).to_le_bytes());
    for w in traces {
        let id = w.station_id.as_bytes();
        let len = u16::try_from(id.len())
            .map_err(|_| Error::contract(format!("station id too long: {}", w.station_id)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id);
        for v in w.samples() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_waveforms(path: &Path, traces: &[Waveform]) -> Result<()> {
    fs::write(path, waveform_bytes(traces)?).map_err(|e| Error::io(path, e))
}

pub fn parse_waveforms(bytes: &[u8], path: &Path) -> Result<Vec<Waveform>> {
    let bad = |reason: &str| Error::format(path, reason);
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::format(path, "unexpected end of file"))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != WAVEFORM_MAGIC {
        return Err(bad("not a waveform file (bad magic)"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != WAVEFORM_VERSION {
        return Err(Error::Mismatch(format!(
            "{}: unsupported waveform version {version}",
            path.display()
        )));
    }
    let stations = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let sr = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let t = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let n_values = t
        .checked_mul(CHANNELS * 8)
        .ok_or_else(|| bad("sample count overflow"))?;
    let mut traces = Vec::with_capacity(stations);
    for _ in 0..stations {
        let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(take(len)?)
            .map_err(|_| bad("station id is not UTF-8"))?
            .to_string();
        let samples = take(n_values)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        traces.push(Waveform::new(samples, sr, id, 0.0).map_err(|e| bad(&e.to_string()))?);
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after last station"));
    }
    Ok(traces)
}

pub fn read_waveforms(path: &Path) -> Result<Vec<Waveform>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_waveforms(&bytes, path)
}

/// Reads a `time, Z, N, E` CSV (header optional). The sampling rate comes
/// from the mean spacing of the time column.
pub fn read_csv_waveform(path: &Path, station_id: &str) -> Result<Waveform> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        if record.len() != 4 {
            return Err(Error::format(
                path,
                format!("line {}: expected 4 columns, found {}", line + 1, record.len()),
            ));
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                times.push(v[0]);
                samples.extend_from_slice(&v[1..]);
            }
            Err(_) if line == 0 => continue,
            Err(e) => {
                return Err(Error::format(path, format!("line {}: {e}", line + 1)));
            }
        }
    }
    if times.len() < 2 {
        return Err(Error::format(path, "need at least two samples"));
    }
    let span = times[times.len() - 1] - times[0];
    if !(span > 0.0) {
        return Err(Error::format(path, "time column must increase"));
    }
    let sr = (times.len() - 1) as f64 / span;
    Waveform::new(samples, sr, station_id, times[0]).map_err(|e| Error::format(path, e.to_string()))
}
