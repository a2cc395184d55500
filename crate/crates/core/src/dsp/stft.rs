use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analysis window. The synthesis rule follows from the window:
///
/// * `SqrtHann` is used for weighted overlap-add: the same window is applied
///   again on synthesis, so the effective window is a Hann window.
/// * `Hann` is used for plain overlap-add: synthesis keeps the whole inverse
///   transform buffer unwindowed. Content that a phase ramp moves past the
///   frame edge survives, so integer and fractional delays are exact away
///   from the signal ends when `fft_len` leaves room for the shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    Hann,
    SqrtHann,
}

impl Window {
    /// Periodic window of the given length.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| {
                let hann = 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos();
                match self {
                    Window::Hann => hann,
                    Window::SqrtHann => hann.sqrt(),
                }
            })
            .collect()
    }

    fn synthesis(self, analysis: &[f64]) -> Option<Vec<f64>> {
        match self {
            Window::Hann => None,
            Window::SqrtHann => Some(analysis.to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
    pub fft_len: usize,
    pub sample_rate: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len: 512,
            hop: 256,
            window: Window::SqrtHann,
            fft_len: 512,
            sample_rate: 16_000.0,
        }
    }
}

impl StftConfig {
    /// Plain overlap-add configuration with a doubled transform length, used
    /// for phase-ramp time alignment.
    pub fn alignment(frame_len: usize, sample_rate: f64) -> Self {
        Self {
            frame_len,
            hop: frame_len / 2,
            window: Window::Hann,
            fft_len: 2 * frame_len,
            sample_rate,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Frames needed so that every input sample is covered by all frames
    /// overlapping it, given the `frame_len / 2` zero padding at the front.
    pub fn num_frames(&self, signal_len: usize) -> usize {
        (self.frame_len / 2 + signal_len.max(1) - 1) / self.hop + 1
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate / self.fft_len as f64
    }

    /// Offset of the frame inside the transform buffer.
    fn frame_offset(&self) -> usize {
        (self.fft_len - self.frame_len) / 2
    }

    fn product_window(&self) -> Vec<f64> {
        let w = self.window.coefficients(self.frame_len);
        match self.window.synthesis(&w) {
            Some(s) => w.iter().zip(&s).map(|(a, b)| a * b).collect(),
            None => w,
        }
    }

    fn overlap_sums(&self, window: &[f64]) -> Vec<f64> {
        (0..self.hop)
            .map(|n| window.iter().skip(n).step_by(self.hop).sum())
            .collect()
    }

    /// Constant that the effective (analysis times synthesis) window sums to
    /// under overlap at this hop.
    pub fn cola_gain(&self) -> f64 {
        self.overlap_sums(&self.product_window())[0]
    }

    /// Overlap sum of the squared analysis window; the factor relating
    /// spectrogram energy to signal energy.
    pub fn analysis_energy_gain(&self) -> f64 {
        let w: Vec<f64> = self
            .window
            .coefficients(self.frame_len)
            .iter()
            .map(|v| v * v)
            .collect();
        let sums = self.overlap_sums(&w);
        sums.iter().sum::<f64>() / sums.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.frame_len < 2 || !self.frame_len.is_multiple_of(2) {
            return bad(format!("frame_len {} must be even and >= 2", self.frame_len));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return bad(format!(
                "hop {} must lie in [1, frame_len = {}]",
                self.hop, self.frame_len
            ));
        }
        if !self.fft_len.is_power_of_two() || self.fft_len < self.frame_len {
            return bad(format!(
                "fft_len {} must be a power of two >= frame_len",
                self.fft_len
            ));
        }
        if !(self.sample_rate > 0.0) {
            return bad(format!("sample rate {}", self.sample_rate));
        }
        let sums = self.overlap_sums(&self.product_window());
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        let spread = sums
            .iter()
            .fold(0.0_f64, |acc, s| acc.max((s - mean).abs()));
        if mean <= 0.0 || spread > 1e-9 * mean {
            return bad(format!(
                "{:?} window is not constant-overlap-add at hop {} (frame {})",
                self.window, self.hop, self.frame_len
            ));
        }
        Ok(())
    }
}

/// Complex STFT, `frames x bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    bins: Array2<Complex64>,
    config: StftConfig,
    signal_len: usize,
}

impl Spectrogram {
    pub fn new(bins: Array2<Complex64>, config: StftConfig, signal_len: usize) -> Result<Self> {
        config.validate()?;
        let expected = (config.num_frames(signal_len), config.num_bins());
        if bins.dim() != expected {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram is {:?}, config implies {:?}",
                bins.dim(),
                expected
            )));
        }
        Ok(Self {
            bins,
            config,
            signal_len,
        })
    }

    pub fn bins(&self) -> &Array2<Complex64> {
        &self.bins
    }

    pub fn bins_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.bins
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// Length of the time signal this spectrogram was computed from.
    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn num_frames(&self) -> usize {
        self.bins.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.bins.ncols()
    }

    /// Two-sided spectral energy, `sum |X|^2 / fft_len` with the mirrored
    /// bins counted twice.
    pub fn energy(&self) -> f64 {
        let nyquist = self.config.fft_len / 2;
        self.bins
            .indexed_iter()
            .map(|((_, k), v)| {
                let weight = if k == 0 || k == nyquist { 1.0 } else { 2.0 };
                weight * v.norm_sqr()
            })
            .sum::<f64>()
            / self.config.fft_len as f64
    }

    /// Element-wise product with a real `frames x bins` mask.
    pub fn masked(&self, mask: &Array2<f64>) -> Result<Self> {
        if mask.dim() != self.bins.dim() {
            return Err(Error::ShapeMismatch(format!(
                "mask is {:?}, spectrogram is {:?}",
                mask.dim(),
                self.bins.dim()
            )));
        }
        let mut out = self.clone();
        out.bins.zip_mut_with(mask, |b, &m| *b *= m);
        Ok(out)
    }
}

/// Short-time Fourier transform with `frame_len / 2` zero padding at each
/// end, so frame `f` starts `f * hop - frame_len / 2` samples into the
/// signal.
pub fn stft(signal: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if signal.len() < cfg.frame_len {
        return Err(Error::SignalTooShort {
            len: signal.len(),
            frame_len: cfg.frame_len,
        });
    }
    let frames = cfg.num_frames(signal.len());
    let half = cfg.frame_len / 2;
    let offset = cfg.frame_offset();
    let window = cfg.window.coefficients(cfg.frame_len);
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_len);

    let mut out = Array2::zeros((frames, cfg.num_bins()));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for f in 0..frames {
        buf.fill(Complex64::new(0.0, 0.0));
        let start = (f * cfg.hop) as isize - half as isize;
        for (j, w) in window.iter().enumerate() {
            let idx = start + j as isize;
            if idx >= 0 && (idx as usize) < signal.len() {
                buf[offset + j] = Complex64::new(signal[idx as usize] * w, 0.0);
            }
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (dst, src) in out.row_mut(f).iter_mut().zip(&buf) {
            *dst = *src;
        }
    }
    Spectrogram::new(out, *cfg, signal.len())
}

/// Inverse STFT by overlap-add, normalised by the summed effective window so
/// that `istft(stft(x)) == x` for every COLA configuration.
pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    let cfg = spec.config;
    cfg.validate()?;
    let n = cfg.fft_len;
    let half = cfg.frame_len / 2;
    let offset = cfg.frame_offset();
    let frames = spec.num_frames();
    let analysis = cfg.window.coefficients(cfg.frame_len);
    let synthesis = cfg.window.synthesis(&analysis);
    let ifft = FftPlanner::new().plan_fft_inverse(n);

    // Accumulator index `i` corresponds to padded-signal position `i - offset`.
    let acc_len = (frames - 1) * cfg.hop + n;
    let mut acc = vec![0.0; acc_len];
    let mut env = vec![0.0; acc_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let scale = 1.0 / n as f64;

    for f in 0..frames {
        let row = spec.bins.row(f);
        for k in 0..=n / 2 {
            buf[k] = row[k];
        }
        for k in 1..n / 2 {
            buf[n - k] = row[k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let base = f * cfg.hop;
        match &synthesis {
            Some(s) => {
                for (j, w) in s.iter().enumerate() {
                    acc[base + offset + j] += buf[offset + j].re * scale * w;
                }
            }
            None => {
                for (j, v) in buf.iter().enumerate() {
                    acc[base + j] += v.re * scale;
                }
            }
        }
        for (j, wa) in analysis.iter().enumerate() {
            let ws = synthesis.as_ref().map_or(1.0, |s| s[j]);
            env[base + offset + j] += wa * ws;
        }
    }

    let floor = 1e-12 * cfg.cola_gain();
    Ok((0..spec.signal_len)
        .map(|t| {
            let i = t + half + offset;
            if env[i] > floor {
                acc[i] / env[i]
            } else {
                0.0
            }
        })
        .collect())
}

/// Delays every frame by `delay` samples (fractional allowed) with a linear
/// phase ramp. Positive values shift the signal later in time.
pub fn apply_delay(spec: &Spectrogram, delay: f64) -> Result<Spectrogram> {
    let limit = (spec.config.frame_len / 2) as f64;
    if !delay.is_finite() || delay.abs() >= limit {
        return Err(Error::DelayOutOfRange { delay, limit });
    }
    let mut out = spec.clone();
    if delay == 0.0 {
        return Ok(out);
    }
    let n = spec.config.fft_len as f64;
    let ramp: Vec<Complex64> = (0..spec.num_bins())
        .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 * delay / n))
        .collect();
    for mut row in out.bins.rows_mut() {
        for (v, r) in row.iter_mut().zip(&ramp) {
            *v *= r;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn default_config_is_valid() {
        StftConfig::default().validate().unwrap();
        StftConfig::alignment(512, 16_000.0).validate().unwrap();
    }

    #[test]
    fn rejects_non_cola_hop() {
        let cfg = StftConfig {
            hop: 200,
            ..StftConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let cfg = StftConfig {
            fft_len: 500,
            ..StftConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn short_signal_is_rejected() {
        let err = stft(&[0.0; 100], &StftConfig::default()).unwrap_err();
        assert!(matches!(err, Error::SignalTooShort { len: 100, .. }));
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let s = stft(&vec![0.0; 4000], &StftConfig::default()).unwrap();
        assert!(s.bins().iter().all(|v| v.norm() == 0.0));
        assert!(istft(&s).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count_follows_padding_policy() {
        let cfg = StftConfig::default();
        let s = stft(&vec![0.0; 16_000], &cfg).unwrap();
        // (256 + 16000 - 1) / 256 + 1
        assert_eq!(s.num_frames(), 64);
        assert_eq!(s.num_bins(), 257);
    }

    #[test]
    fn bin_centred_sinusoid_stays_in_its_main_lobe() {
        let cfg = StftConfig::default();
        let k = 32;
        let freq = cfg.bin_frequency(k);
        let x: Vec<f64> = (0..8000)
            .map(|t| (2.0 * PI * freq * t as f64 / cfg.sample_rate).sin())
            .collect();
        let s = stft(&x, &cfg).unwrap();
        // Frames that lie fully inside the signal.
        for f in 2..s.num_frames() - 2 {
            let row = s.bins().row(f);
            let total: f64 = row.iter().map(|v| v.norm_sqr()).sum();
            let lobe: f64 = (k - 1..=k + 1).map(|b| row[b].norm_sqr()).sum();
            let peak = (0..row.len())
                .max_by(|&a, &b| row[a].norm().total_cmp(&row[b].norm()))
                .unwrap();
            assert_eq!(peak, k);
            assert!(lobe / total >= 0.95, "frame {f}: {}", lobe / total);
        }
    }

    #[test]
    fn round_trip_reconstructs_random_signal() {
        for cfg in [
            StftConfig::default(),
            StftConfig::alignment(512, 16_000.0),
            StftConfig {
                hop: 128,
                ..StftConfig::default()
            },
        ] {
            let x = noise(16_000, 7);
            let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
            assert_eq!(y.len(), x.len());
            assert!(rel_err(&y, &x) < 1e-6);
        }
    }

    #[test]
    fn identity_mask_is_bit_exact() {
        let cfg = StftConfig::default();
        let s = stft(&noise(5000, 3), &cfg).unwrap();
        let ones = Array2::from_elem(s.bins().dim(), 1.0);
        assert_eq!(istft(&s.masked(&ones).unwrap()).unwrap(), istft(&s).unwrap());
    }

    #[test]
    fn parseval_with_window_energy_factor() {
        let cfg = StftConfig::default();
        let x = noise(16_000, 11);
        let s = stft(&x, &cfg).unwrap();
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq = s.energy() / cfg.analysis_energy_gain();
        assert!(((freq - time) / time).abs() < 1e-6);
    }

    #[test]
    fn zero_delay_is_identity() {
        let s = stft(&noise(4000, 1), &StftConfig::default()).unwrap();
        assert_eq!(apply_delay(&s, 0.0).unwrap(), s);
    }

    #[test]
    fn delay_round_trip_restores_bins() {
        let s = stft(&noise(4000, 2), &StftConfig::default()).unwrap();
        let back = apply_delay(&apply_delay(&s, 17.3).unwrap(), -17.3).unwrap();
        for (a, b) in back.bins().iter().zip(s.bins()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn delay_outside_frame_support_is_rejected() {
        let s = stft(&noise(4000, 2), &StftConfig::default()).unwrap();
        assert!(matches!(
            apply_delay(&s, 256.0),
            Err(Error::DelayOutOfRange { .. })
        ));
        assert!(apply_delay(&s, -255.5).is_ok());
    }

    #[test]
    fn integer_delay_shifts_sinusoid() {
        let cfg = StftConfig::alignment(512, 16_000.0);
        let len = 8000;
        let tone = |t: f64| (2.0 * PI * 440.0 * t / 16_000.0).sin();
        let x: Vec<f64> = (0..len).map(|t| tone(t as f64)).collect();
        for d in [-40_i32, -3, 5, 25, 100] {
            let y = istft(&apply_delay(&stft(&x, &cfg).unwrap(), d as f64).unwrap()).unwrap();
            let margin = cfg.frame_len + d.unsigned_abs() as usize;
            let mut worst = 0.0_f64;
            for (t, v) in y.iter().enumerate().take(len - margin).skip(margin) {
                worst = worst.max((v - tone(t as f64 - d as f64)).abs());
            }
            assert!(worst < 1e-4, "delay {d}: {worst}");
        }
    }

    #[test]
    fn weighted_overlap_add_attenuates_phase_ramp_delays() {
        // Re-windowing on synthesis scales a delayed signal by cos(pi d / N).
        let cfg = StftConfig::default();
        let len = 8000;
        let tone = |t: f64| (2.0 * PI * 500.0 * t / 16_000.0).sin();
        let x: Vec<f64> = (0..len).map(|t| tone(t as f64)).collect();
        let d = 64.0;
        let y = istft(&apply_delay(&stft(&x, &cfg).unwrap(), d).unwrap()).unwrap();
        let gain = (PI * d / cfg.frame_len as f64).cos();
        let probe: Vec<f64> = (1000..7000).map(|t| tone(t as f64 - d)).collect();
        let dot: f64 = probe.iter().zip(&y[1000..7000]).map(|(a, b)| a * b).sum();
        let norm: f64 = probe.iter().map(|a| a * a).sum();
        assert!((dot / norm - gain).abs() < 0.05, "{} vs {gain}", dot / norm);
    }

    #[test]
    fn fractional_delay_matches_analytic_shift() {
        let cfg = StftConfig::alignment(512, 16_000.0);
        let tone = |t: f64| (2.0 * PI * 1000.0 * t / 16_000.0).cos();
        let x: Vec<f64> = (0..6000).map(|t| tone(t as f64)).collect();
        let y = istft(&apply_delay(&stft(&x, &cfg).unwrap(), 2.5).unwrap()).unwrap();
        for (t, v) in y.iter().enumerate().take(5000).skip(1000) {
            assert!((v - tone(t as f64 - 2.5)).abs() < 1e-3);
        }
    }
}
