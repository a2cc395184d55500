use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::scenario::{seeded, stream};
use super::{generate_rir, Rir, Scenario};
use crate::dsp::energy;
use crate::error::{Error, Result};
use crate::recording::MultichannelRecording;

/// Where the speech power used to set the SNR is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnrReference {
    /// Mean speech power over all microphones.
    #[default]
    MeanOverMics,
    /// Speech power at the microphone closest to the room center.
    CenterMic,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RenderOptions {
    pub snr_reference: SnrReference,
    /// Image order cap; `None` uses the room's default.
    pub max_order: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub mix: MultichannelRecording,
    /// Reverberant image of each source at each microphone, `[source][mic]`.
    pub targets: Vec<Vec<Vec<f64>>>,
    pub noise: Vec<Vec<f64>>,
    pub rirs: Vec<Vec<Rir>>,
}

pub fn render_scene(scenario: &Scenario, dry: &[Vec<f64>]) -> Result<RenderedScene> {
    render_scene_with(scenario, dry, &RenderOptions::default())
}

/// Convolves each dry source with its impulse responses, sums the images at
/// each microphone and adds independent white Gaussian noise per microphone,
/// scaled to the scenario SNR. Output length equals the dry length.
pub fn render_scene_with(
    scenario: &Scenario,
    dry: &[Vec<f64>],
    opts: &RenderOptions,
) -> Result<RenderedScene> {
    if dry.len() != scenario.sources.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} dry signals for {} sources",
            dry.len(),
            scenario.sources.len()
        )));
    }
    let len = dry[0].len();
    for (i, d) in dry.iter().enumerate() {
        if d.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                got: d.len(),
            });
        }
        if energy(d) == 0.0 {
            return Err(Error::ZeroEnergy(format!("dry source {i}")));
        }
    }
    let room = &scenario.room;
    let max_order = opts.max_order.unwrap_or_else(|| room.default_max_order());

    let rirs: Vec<Vec<Rir>> = scenario
        .sources
        .iter()
        .map(|src| {
            scenario
                .mics
                .iter()
                .map(|mic| generate_rir(room, src, mic, max_order))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let longest = rirs.iter().flatten().map(|r| r.taps.len()).max().unwrap_or(1);
    let n_fft = (len + longest - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);
    let spectrum = |x: &[f64]| {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(n_fft, Complex64::new(0.0, 0.0));
        fwd.process(&mut buf);
        buf
    };

    let targets: Vec<Vec<Vec<f64>>> = dry
        .iter()
        .zip(&rirs)
        .map(|(d, src_rirs)| {
            let d_spec = spectrum(d);
            src_rirs
                .iter()
                .map(|rir| {
                    let mut buf = spectrum(&rir.taps);
                    buf.iter_mut().zip(&d_spec).for_each(|(h, x)| *h *= x);
                    inv.process(&mut buf);
                    buf[..len].iter().map(|v| v.re / n_fft as f64).collect()
                })
                .collect()
        })
        .collect();

    let num_mics = scenario.mics.len();
    let speech: Vec<Vec<f64>> = (0..num_mics)
        .map(|m| {
            (0..len)
                .map(|t| targets.iter().map(|src| src[m][t]).sum())
                .collect()
        })
        .collect();

    let noise = match scenario.snr_db {
        Some(snr) if snr.is_finite() => {
            let speech_power = match opts.snr_reference {
                SnrReference::MeanOverMics => {
                    speech.iter().map(|s| energy(s) / len as f64).sum::<f64>() / num_mics as f64
                }
                SnrReference::CenterMic => energy(&speech[scenario.center_mic()]) / len as f64,
            };
            let noise_power = speech_power / 10f64.powf(snr / 10.0);
            let mut rng = seeded(scenario.seed, stream::NOISE);
            (0..num_mics)
                .map(|_| {
                    let mut n: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let gain = (noise_power / (energy(&n) / len as f64)).sqrt();
                    n.iter_mut().for_each(|v| *v *= gain);
                    n
                })
                .collect()
        }
        _ => vec![vec![0.0; len]; num_mics],
    };

    let channels = speech
        .iter()
        .zip(&noise)
        .map(|(s, n)| s.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();
    Ok(RenderedScene {
        mix: MultichannelRecording::new(room.sample_rate, channels)?,
        targets,
        noise,
        rirs,
    })
}
