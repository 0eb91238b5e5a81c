//! Waveforms, their tokenization into fixed-length segments, and the random
//! context-shortening masks used as training augmentation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of components per sample, ordered Z, N, E.
pub const CHANNELS: usize = 3;
pub const COMPONENT_NAMES: [&str; CHANNELS] = ["Z", "N", "E"];

/// Three-component trace sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    pub sampling_rate_hz: f64,
    pub station_id: String,
    pub start_time_s: f64,
}

impl Waveform {
    /// `samples` is time-major: `[z0, n0, e0, z1, n1, e1, ...]`.
    pub fn new(
        samples: Vec<f64>,
        sampling_rate_hz: f64,
        station_id: impl Into<String>,
        start_time_s: f64,
    ) -> Result<Self> {
        if samples.is_empty() || samples.len() % CHANNELS != 0 {
            return Err(Error::contract(format!(
                "waveform needs a positive multiple of {CHANNELS} samples, got {}",
                samples.len()
            )));
        }
        if !(sampling_rate_hz > 0.0 && sampling_rate_hz.is_finite()) {
            return Err(Error::contract(format!(
                "sampling rate must be positive, got {sampling_rate_hz}"
            )));
        }
        Ok(Self {
            samples,
            sampling_rate_hz,
            station_id: station_id.into(),
            start_time_s,
        })
    }

    /// Number of time samples `T`.
    pub fn len(&self) -> usize {
        self.samples.len() / CHANNELS
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, t: usize, channel: usize) -> f64 {
        self.samples[t * CHANNELS + channel]
    }

    pub fn channel(&self, channel: usize) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().skip(channel).step_by(CHANNELS).copied()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sampling_rate_hz
    }

    /// Copies samples `start..end`, shifting the start time accordingly.
    pub fn window(&self, start: usize, end: usize) -> Result<Waveform> {
        if start >= end || end > self.len() {
            return Err(Error::contract(format!(
                "window {start}..{end} outside trace of {} samples",
                self.len()
            )));
        }
        Ok(Waveform {
            samples: self.samples[start * CHANNELS..end * CHANNELS].to_vec(),
            sampling_rate_hz: self.sampling_rate_hz,
            station_id: self.station_id.clone(),
            start_time_s: self.start_time_s + start as f64 / self.sampling_rate_hz,
        })
    }
}

/// Per-channel affine normalization: `normalized = (raw - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub offset: [f64; CHANNELS],
    pub scale: [f64; CHANNELS],
}

/// Standard-deviation floor for constant channels.
pub const SCALE_FLOOR: f64 = 1e-12;

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        offset: [0.0; CHANNELS],
        scale: [1.0; CHANNELS],
    };

    /// Mean and population standard deviation of each channel of a
    /// time-major sample buffer.
    pub fn fit(samples: &[f64]) -> Self {
        let t = (samples.len() / CHANNELS).max(1) as f64;
        let mut offset = [0.0; CHANNELS];
        let mut scale = [0.0; CHANNELS];
        for frame in samples.chunks_exact(CHANNELS) {
            for c in 0..CHANNELS {
                offset[c] += frame[c];
            }
        }
        offset.iter_mut().for_each(|m| *m /= t);
        for frame in samples.chunks_exact(CHANNELS) {
            for c in 0..CHANNELS {
                let d = frame[c] - offset[c];
                scale[c] += d * d;
            }
        }
        scale
            .iter_mut()
            .for_each(|s| *s = (*s / t).sqrt().max(SCALE_FLOOR));
        Self { offset, scale }
    }

    pub fn apply(&self, samples: &[f64]) -> Vec<f64> {
        samples
            .chunks_exact(CHANNELS)
            .flat_map(|f| (0..CHANNELS).map(move |c| (f[c] - self.offset[c]) / self.scale[c]))
            .collect()
    }

    pub fn invert(&self, samples: &[f64]) -> Vec<f64> {
        samples
            .chunks_exact(CHANNELS)
            .flat_map(|f| (0..CHANNELS).map(move |c| f[c] * self.scale[c] + self.offset[c]))
            .collect()
    }
}

/// Normalized waveform split into `N` consecutive tokens of `L` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    /// Shape `[N, L, 3]`.
    pub tokens: Tensor,
    pub token_len: usize,
    pub norm: Normalization,
    pub sampling_rate_hz: f64,
    pub station_id: String,
    pub start_time_s: f64,
}

impl TokenSequence {
    pub fn n_tokens(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn norm_offset(&self) -> [f64; CHANNELS] {
        self.norm.offset
    }

    pub fn norm_scale(&self) -> [f64; CHANNELS] {
        self.norm.scale
    }

    /// Keeps tokens `start..end`; normalization is unchanged.
    pub fn slice(&self, start: usize, end: usize) -> Result<TokenSequence> {
        Ok(TokenSequence {
            tokens: self.tokens.slice_outer(start, end)?,
            start_time_s: self.start_time_s
                + (start * self.token_len) as f64 / self.sampling_rate_hz,
            station_id: self.station_id.clone(),
            ..*self
        })
    }
}

fn check_divisible(t: usize, token_len: usize) -> Result<()> {
    if token_len == 0 || t % token_len != 0 {
        return Err(Error::contract(format!(
            "trace length {t} is not divisible by token length {token_len}"
        )));
    }
    Ok(())
}

/// Splits `w` into tokens after fitting a per-channel normalization on the
/// whole trace.
pub fn tokenize(w: &Waveform, token_len: usize) -> Result<TokenSequence> {
    check_divisible(w.len(), token_len)?;
    tokenize_with(w, token_len, Normalization::fit(w.samples()))
}

/// Splits `w` into tokens using a given normalization.
pub fn tokenize_with(w: &Waveform, token_len: usize, norm: Normalization) -> Result<TokenSequence> {
    check_divisible(w.len(), token_len)?;
    let n = w.len() / token_len;
    let tokens = Tensor::new(vec![n, token_len, CHANNELS], norm.apply(w.samples()))?;
    Ok(TokenSequence {
        tokens,
        token_len,
        norm,
        sampling_rate_hz: w.sampling_rate_hz,
        station_id: w.station_id.clone(),
        start_time_s: w.start_time_s,
    })
}

/// Concatenates and denormalizes tokens back into a waveform.
pub fn detokenize(ts: &TokenSequence) -> Waveform {
    Waveform {
        samples: ts.norm.invert(ts.tokens.data()),
        sampling_rate_hz: ts.sampling_rate_hz,
        station_id: ts.station_id.clone(),
        start_time_s: ts.start_time_s,
    }
}

/// Per-token attention flags; `true` means the token is part of the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddingMask {
    keep: Vec<bool>,
}

impl PaddingMask {
    pub fn all(n: usize) -> Self {
        Self {
            keep: vec![true; n],
        }
    }

    /// Keeps the trailing `kept` positions of `n`.
    pub fn suffix(n: usize, kept: usize) -> Result<Self> {
        if kept == 0 || kept > n {
            return Err(Error::contract(format!(
                "cannot keep {kept} of {n} tokens"
            )));
        }
        Ok(Self {
            keep: (0..n).map(|i| i >= n - kept).collect(),
        })
    }

    /// Accepts any flag vector whose kept region is a non-empty suffix.
    pub fn from_flags(keep: Vec<bool>) -> Result<Self> {
        let first = keep.iter().position(|&k| k);
        match first {
            Some(f) if keep[f..].iter().all(|&k| k) => Ok(Self { keep }),
            _ => Err(Error::contract(
                "padding mask must keep a non-empty contiguous suffix",
            )),
        }
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.keep[i]
    }

    pub fn flags(&self) -> &[bool] {
        &self.keep
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// Index of the oldest retained token.
    pub fn first_kept(&self) -> usize {
        self.keep.len() - self.kept_count()
    }
}

/// Draws a mask whose kept count is uniform on `min_keep..=n_tokens`.
pub fn random_padding_mask<R: Rng + ?Sized>(
    n_tokens: usize,
    min_keep: usize,
    rng: &mut R,
) -> Result<PaddingMask> {
    if min_keep == 0 || min_keep > n_tokens {
        return Err(Error::contract(format!(
            "min_keep must lie in 1..={n_tokens}, got {min_keep}"
        )));
    }
    let kept = rng.gen_range(min_keep..=n_tokens);
    PaddingMask::suffix(n_tokens, kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_waveform(t: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..t * CHANNELS).map(|_| rng.gen_range(-5.0..5.0)).collect();
        Waveform::new(samples, 1.9, "ST00", 0.0).unwrap()
    }

    #[test]
    fn token_counts() {
        assert_eq!(tokenize(&random_waveform(1024, 1), 16).unwrap().n_tokens(), 64);
        assert_eq!(tokenize(&random_waveform(16, 2), 16).unwrap().n_tokens(), 1);
        assert!(matches!(
            tokenize(&random_waveform(33, 3), 16),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn token_layout_matches_samples() {
        let w = random_waveform(64, 4);
        let ts = tokenize(&w, 16).unwrap();
        for i in 0..4 {
            for j in 0..16 {
                for c in 0..CHANNELS {
                    let expected = (w.sample(i * 16 + j, c) - ts.norm.offset[c]) / ts.norm.scale[c];
                    assert_eq!(ts.tokens.at(&[i, j, c]), expected);
                }
            }
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let w = random_waveform(1024, 5);
        let back = detokenize(&tokenize(&w, 16).unwrap());
        for (a, b) in w.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_token_detokenizes_to_offset() {
        let norm = Normalization {
            offset: [1.5, -2.0, 0.25],
            scale: [3.0, 4.0, 5.0],
        };
        let ts = TokenSequence {
            tokens: Tensor::zeros(&[1, 16, CHANNELS]),
            token_len: 16,
            norm,
            sampling_rate_hz: 1.9,
            station_id: "X".into(),
            start_time_s: 0.0,
        };
        let w = detokenize(&ts);
        assert_eq!(w.len(), 16);
        for t in 0..16 {
            for c in 0..CHANNELS {
                assert_eq!(w.sample(t, c), norm.offset[c]);
            }
        }
    }

    #[test]
    fn constant_channel_uses_scale_floor() {
        let samples = (0..32 * CHANNELS)
            .map(|i| if i % CHANNELS == 1 { 7.0 } else { i as f64 })
            .collect();
        let w = Waveform::new(samples, 1.0, "C", 0.0).unwrap();
        let ts = tokenize(&w, 16).unwrap();
        assert_eq!(ts.norm.scale[1], SCALE_FLOOR);
        assert!(ts.tokens.is_finite());
    }

    #[test]
    fn padding_mask_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_padding_mask(64, 64, &mut rng).unwrap(), PaddingMask::all(64));
        for _ in 0..500 {
            let m = random_padding_mask(64, 8, &mut rng).unwrap();
            assert!((8..=64).contains(&m.kept_count()));
            assert!(PaddingMask::from_flags(m.flags().to_vec()).is_ok());
        }
        assert!(random_padding_mask(4, 0, &mut rng).is_err());
        assert!(random_padding_mask(4, 5, &mut rng).is_err());
    }

    #[test]
    fn non_suffix_flags_rejected() {
        assert!(PaddingMask::from_flags(vec![true, false, true]).is_err());
        assert!(PaddingMask::from_flags(vec![false, false]).is_err());
        assert!(PaddingMask::from_flags(vec![false, true, true]).is_ok());
    }
}
