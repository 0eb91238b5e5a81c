//! Zero-phase Butterworth low-pass and cosine taper.

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Bilinear low-pass section with quality factor `q`.
    fn lowpass(corner_hz: f64, sr_hz: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * corner_hz / sr_hz;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b1 = (1.0 - cos) / a0;
        Self {
            b: [b1 / 2.0, b1, b1 / 2.0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn run(&self, x: &mut [f64]) {
        // Direct form II transposed.
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let out = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * out + z2;
            z2 = self.b[2] * input - self.a[1] * out;
            *v = out;
        }
    }
}

/// Fourth-order Butterworth low-pass (two second-order sections) applied
/// forward and backward.
#[derive(Debug, Clone)]
pub struct ZeroPhaseLowpass {
    sections: Vec<Biquad>,
}

impl ZeroPhaseLowpass {
    pub fn butterworth4(corner_hz: f64, sr_hz: f64) -> Self {
        // Pole-pair quality factors of the 4th-order Butterworth prototype.
        let qs = [
            1.0 / (2.0 * (PI / 8.0).cos()),
            1.0 / (2.0 * (3.0 * PI / 8.0).cos()),
        ];
        Self {
            sections: qs
                .iter()
                .map(|&q| Biquad::lowpass(corner_hz, sr_hz, q))
                .collect(),
        }
    }

    pub fn apply(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.run(x);
        }
        x.reverse();
        for s in &self.sections {
            s.run(x);
        }
        x.reverse();
    }
}

/// Cosine ramps over `fraction` of the samples at each end.
pub fn cosine_taper(x: &mut [f64], fraction: f64) {
    let n = x.len();
    let m = ((n as f64) * fraction).floor() as usize;
    if m == 0 {
        return;
    }
    for i in 0..m.min(n) {
        let w = 0.5 * (1.0 - (PI * i as f64 / m as f64).cos());
        x[i] *= w;
        x[n - 1 - i] *= w;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone_gain(f: f64, sr: f64) -> f64 {
        let n = 4000;
        let mut x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f * i as f64 / sr).sin()).collect();
        ZeroPhaseLowpass::butterworth4(0.45, sr).apply(&mut x);
        let mid = &x[1000..3000];
        let rms = (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt();
        rms * 2f64.sqrt()
    }

    #[test]
    fn passes_low_and_rejects_high() {
        assert!((tone_gain(0.05, 1.9) - 1.0).abs() < 1e-3);
        // Forward-backward squares the magnitude response: -6 dB at the corner.
        assert!((tone_gain(0.45, 1.9) - 0.5).abs() < 0.02);
        assert!(tone_gain(0.8, 1.9) < 0.01);
    }

    #[test]
    fn taper_zeroes_ends_and_keeps_middle() {
        let mut x = vec![1.0; 100];
        cosine_taper(&mut x, 0.05);
        assert_eq!(x[0], 0.0);
        assert_eq!(x[99], 0.0);
        assert_eq!(x[50], 1.0);
        assert!(x[2] > 0.0 && x[2] < 1.0);
    }
}
