//! Parametric synthetic teleseismic seismograms.
//!
//! Each trace is a sum of band-limited Gabor packets at the P and S arrival
//! times with decaying codas, projected onto Z/N/E, low-passed with a
//! zero-phase filter and cosine-tapered. Array traces share one source and
//! differ only by plane-wave delays across the local geometry.

mod dataset;
mod filter;
mod geometry;

pub use dataset::{
    generate_dataset, load_dataset, random_event, Dataset, DatasetEvent, DatasetMode,
    DatasetSummary, GenerateOptions, ManifestRecord, ReceiverRecord,
};
pub use filter::{cosine_taper, ZeroPhaseLowpass};
pub use geometry::{default_array_geometry, ArrayGeometry, Station, ARRAY_STATIONS};

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{Waveform, CHANNELS};

pub const MIN_DISTANCE_DEG: f64 = 21.0;
pub const MAX_DISTANCE_DEG: f64 = 49.0;

/// Source description. `mechanism` weights the P, SH and SV contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub source_lat: f64,
    pub source_lon: f64,
    pub depth_km: f64,
    pub magnitude_proxy: f64,
    pub mechanism: [f64; 3],
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverSpec {
    pub angular_distance_deg: f64,
    /// Direction from the receiver to the source, clockwise from north.
    pub azimuth_deg: f64,
}

impl ReceiverSpec {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_DISTANCE_DEG..=MAX_DISTANCE_DEG).contains(&self.angular_distance_deg) {
            return Err(Error::contract(format!(
                "distance {}° outside {MIN_DISTANCE_DEG}–{MAX_DISTANCE_DEG}°",
                self.angular_distance_deg
            )));
        }
        Ok(())
    }
}

/// Recording parameters shared by every trace of an event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub sampling_rate_hz: f64,
    pub duration_s: f64,
    /// First sample sits this long before the P arrival at the reference point.
    pub lead_s: f64,
    /// Horizontal apparent velocity of the plane-wave sweep.
    pub apparent_velocity_km_s: f64,
    pub lowpass_corner_hz: f64,
    pub taper_fraction: f64,
}

pub const DEFAULT_SAMPLING_RATE_HZ: f64 = 1.9;
pub const DEFAULT_TRACE_SAMPLES: usize = 1536;

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            sampling_rate_hz: DEFAULT_SAMPLING_RATE_HZ,
            duration_s: DEFAULT_TRACE_SAMPLES as f64 / DEFAULT_SAMPLING_RATE_HZ,
            lead_s: 150.0,
            apparent_velocity_km_s: 10.0,
            lowpass_corner_hz: 0.45,
            taper_fraction: 0.05,
        }
    }
}

impl SynthOptions {
    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sampling_rate_hz).round() as usize
    }
}

const TP_KNOTS: [(f64, f64); 4] = [(21.0, 280.0), (30.0, 362.0), (40.0, 449.0), (49.0, 530.0)];
const S_TO_P_RATIO: f64 = 1.8;

/// P and S arrival times (s after origin) from a fixed piecewise-linear
/// curve. Monotone in distance with `t_s = 1.8 t_p`.
pub fn travel_times(distance_deg: f64) -> Result<(f64, f64)> {
    if !(MIN_DISTANCE_DEG..=MAX_DISTANCE_DEG).contains(&distance_deg) {
        return Err(Error::contract(format!(
            "distance {distance_deg}° outside {MIN_DISTANCE_DEG}–{MAX_DISTANCE_DEG}°"
        )));
    }
    let seg = TP_KNOTS
        .windows(2)
        .find(|w| distance_deg <= w[1].0)
        .unwrap_or(&TP_KNOTS[2..4]);
    let ((d0, t0), (d1, t1)) = (seg[0], seg[1]);
    let tp = t0 + (t1 - t0) * (distance_deg - d0) / (d1 - d0);
    Ok((tp, S_TO_P_RATIO * tp))
}

/// Per-event waveform character drawn from the event seed.
#[derive(Debug, Clone)]
struct Character {
    p: Packet,
    s: Packet,
    sv_phase: f64,
    p_coda: Coda,
    s_coda: Coda,
}

#[derive(Debug, Clone)]
struct Packet {
    freq: f64,
    width: f64,
    phase: f64,
}

impl Packet {
    fn eval(&self, dt: f64, extra_phase: f64) -> f64 {
        (-dt * dt / (2.0 * self.width * self.width)).exp()
            * (2.0 * PI * self.freq * dt + self.phase + extra_phase).cos()
    }
}

#[derive(Debug, Clone)]
struct Coda {
    amp: f64,
    decay: f64,
    tones: Vec<(f64, f64, f64)>,
}

impl Coda {
    fn eval(&self, dt: f64) -> f64 {
        if dt <= 0.0 {
            return 0.0;
        }
        let onset = 1.0 - (-dt / 15.0).exp();
        let env = self.amp * onset * (-dt / self.decay).exp();
        env * self
            .tones
            .iter()
            .map(|&(a, f, ph)| a * (2.0 * PI * f * dt + ph).sin())
            .sum::<f64>()
    }
}

impl Character {
    fn draw(seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let packet = |r: &mut ChaCha8Rng, f: (f64, f64), w: (f64, f64)| Packet {
            freq: r.gen_range(f.0..f.1),
            width: r.gen_range(w.0..w.1),
            phase: r.gen_range(0.0..2.0 * PI),
        };
        let p = packet(&mut r, (0.06, 0.2), (8.0, 20.0));
        let s = packet(&mut r, (0.04, 0.14), (12.0, 30.0));
        let coda = |r: &mut ChaCha8Rng, amp: f64, decay: (f64, f64)| Coda {
            amp,
            decay: r.gen_range(decay.0..decay.1),
            tones: (0..3)
                .map(|_| {
                    (
                        r.gen_range(0.3..1.0),
                        r.gen_range(0.04..0.16),
                        r.gen_range(0.0..2.0 * PI),
                    )
                })
                .collect(),
        };
        let p_coda = coda(&mut r, 0.25, (80.0, 200.0));
        let s_coda = coda(&mut r, 0.5, (60.0, 150.0));
        Self {
            p,
            s,
            sv_phase: r.gen_range(0.0..2.0 * PI),
            p_coda,
            s_coda,
        }
    }
}

/// Samples one station. `delay_s` shifts both arrivals.
fn render(
    ev: &EventSpec,
    rx: &ReceiverSpec,
    opts: &SynthOptions,
    character: &Character,
    delay_s: f64,
    station_id: &str,
) -> Result<Waveform> {
    let (tp_ref, ts_ref) = travel_times(rx.angular_distance_deg)?;
    if !(opts.sampling_rate_hz > 0.0) {
        return Err(Error::contract("sampling rate must be positive"));
    }
    let start = tp_ref - opts.lead_s;
    let n = opts.n_samples();
    if start + n as f64 / opts.sampling_rate_hz <= ts_ref + delay_s {
        return Err(Error::contract(format!(
            "duration {:.1} s too short to contain the S arrival",
            opts.duration_s
        )));
    }
    let (tp, ts) = (tp_ref + delay_s, ts_ref + delay_s);
    // Surface-reflected PP fills the gap between P and S.
    let tpp = tp + 0.4 * (ts - tp);
    let amp = ev.magnitude_proxy * 30.0 / rx.angular_distance_deg;
    let [m_p, m_sh, m_sv] = ev.mechanism;
    let propagation = (rx.azimuth_deg + 180.0).to_radians();
    let (sin_az, cos_az) = propagation.sin_cos();

    let mut channels = vec![vec![0.0; n]; CHANNELS];
    for i in 0..n {
        let t = start + i as f64 / opts.sampling_rate_hz;
        let p = character.p.eval(t - tp, 0.0)
            + character.p_coda.eval(t - tp)
            + 0.6 * character.p.eval(t - tpp, character.sv_phase)
            + 0.6 * character.p_coda.eval(t - tpp);
        let sh = character.s.eval(t - ts, 0.0) + character.s_coda.eval(t - ts);
        let sv = character.s.eval(t - ts, character.sv_phase) + 0.5 * character.s_coda.eval(t - ts);
        let z = amp * (m_p * p + 0.5 * m_sv * sv);
        let radial = amp * (0.4 * m_p * p + 0.7 * m_sv * sv);
        // Scattering leaks P-coda energy onto the transverse component.
        let transverse = amp * (m_sh * sh + 0.3 * m_p * character.p_coda.eval(t - tp));
        channels[0][i] = z;
        channels[1][i] = radial * cos_az - transverse * sin_az;
        channels[2][i] = radial * sin_az + transverse * cos_az;
    }
    let filter = ZeroPhaseLowpass::butterworth4(opts.lowpass_corner_hz, opts.sampling_rate_hz);
    for ch in &mut channels {
        filter.apply(ch);
        cosine_taper(ch, opts.taper_fraction);
    }
    let samples = (0..n)
        .flat_map(|i| (0..CHANNELS).map(move |c| (i, c)))
        .map(|(i, c)| channels[c][i])
        .collect();
    Waveform::new(samples, opts.sampling_rate_hz, station_id, start)
}

fn check_event(ev: &EventSpec) -> Result<()> {
    if !(ev.magnitude_proxy >= 0.0) {
        return Err(Error::contract("amplitude factor must be non-negative"));
    }
    if ev.mechanism.iter().all(|&m| m == 0.0) {
        return Err(Error::contract("mechanism vector must be non-zero"));
    }
    Ok(())
}

/// Three-component trace for one receiver.
pub fn synthesize_event(ev: &EventSpec, rx: &ReceiverSpec, opts: &SynthOptions) -> Result<Waveform> {
    check_event(ev)?;
    rx.validate()?;
    render(ev, rx, opts, &Character::draw(ev.rng_seed), 0.0, "ST00")
}

/// Arrival delay of a plane wave at `(x, y)` relative to the origin, for
/// a source in direction `back_azimuth_deg`.
pub fn plane_wave_delay(x_km: f64, y_km: f64, back_azimuth_deg: f64, velocity_km_s: f64) -> f64 {
    let (s, c) = back_azimuth_deg.to_radians().sin_cos();
    -(x_km * s + y_km * c) / velocity_km_s
}

/// One trace per station of `geom`, in geometry order.
pub fn synthesize_array_event(
    ev: &EventSpec,
    rx: &ReceiverSpec,
    geom: &ArrayGeometry,
    opts: &SynthOptions,
) -> Result<Vec<Waveform>> {
    check_event(ev)?;
    rx.validate()?;
    let character = Character::draw(ev.rng_seed);
    geom.stations
        .iter()
        .map(|st| {
            let delay = plane_wave_delay(st.x_km, st.y_km, rx.azimuth_deg, opts.apparent_velocity_km_s);
            render(ev, rx, opts, &character, delay, &st.station_id)
        })
        .collect()
}
