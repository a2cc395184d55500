use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::scenario::{seeded, stream};
use super::Scenario;

const SHELF_FREQ: f64 = 500.0;
const SHELF_GAIN_DB: f64 = 12.0;
const MODULATION_FREQ: f64 = 4.0;

/// Direct-form-I biquad, `a0` normalised to one.
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Low-shelf with unit slope (audio EQ cookbook).
    fn low_shelf(freq: f64, gain_db: f64, sample_rate: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let w0 = 2.0 * PI * freq / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / 2.0 * 2.0_f64.sqrt();
        let sq = 2.0 * a.sqrt() * alpha;
        let a0 = (a + 1.0) + (a - 1.0) * cos + sq;
        Self {
            b: [
                a * ((a + 1.0) - (a - 1.0) * cos + sq) / a0,
                2.0 * a * ((a - 1.0) - (a + 1.0) * cos) / a0,
                a * ((a + 1.0) - (a - 1.0) * cos - sq) / a0,
            ],
            a: [
                -2.0 * ((a - 1.0) + (a + 1.0) * cos) / a0,
                ((a + 1.0) + (a - 1.0) * cos - sq) / a0,
            ],
        }
    }

    fn run(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2
                    - self.a[0] * y1
                    - self.a[1] * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

/// Unit-RMS stand-in for dry speech: white Gaussian noise through a low
/// shelf, with a squared raised-cosine envelope at a syllabic 4 Hz rate.
pub fn speech_shaped_noise(len: usize, sample_rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let phase = rng.gen_range(0.0..2.0 * PI);
    let white: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    let shaped = Biquad::low_shelf(SHELF_FREQ, SHELF_GAIN_DB, sample_rate).run(&white);
    let mut out: Vec<f64> = shaped
        .iter()
        .enumerate()
        .map(|(t, v)| {
            let env = 0.5 * (1.0 - (2.0 * PI * MODULATION_FREQ * t as f64 / sample_rate + phase).cos());
            v * env * env
        })
        .collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// The two dry source signals of a scenario, derived from its seed.
pub fn dry_sources(scenario: &Scenario, len: usize) -> Vec<Vec<f64>> {
    let mut rng = seeded(scenario.seed, stream::SOURCES);
    (0..scenario.sources.len())
        .map(|_| speech_shaped_noise(len, scenario.room.sample_rate, &mut rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn unit_rms_and_deterministic() {
        let a = speech_shaped_noise(16_000, 16_000.0, &mut ChaCha8Rng::seed_from_u64(1));
        let b = speech_shaped_noise(16_000, 16_000.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        let rms = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shelf_boosts_low_frequencies() {
        let f = Biquad::low_shelf(SHELF_FREQ, SHELF_GAIN_DB, 16_000.0);
        let gain_at = |freq: f64| {
            let w = 2.0 * PI * freq / 16_000.0;
            let z = rustfft::num_complex::Complex64::from_polar(1.0, -w);
            let num = f.b[0] + f.b[1] * z + f.b[2] * z * z;
            let den = 1.0 + f.a[0] * z + f.a[1] * z * z;
            20.0 * (num / den).norm().log10()
        };
        assert!((gain_at(10.0) - SHELF_GAIN_DB).abs() < 0.1);
        assert!(gain_at(6000.0).abs() < 0.5);
    }
}
