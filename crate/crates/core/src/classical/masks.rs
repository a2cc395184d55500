use ndarray::Array2;

use crate::dsp::{istft, stft, Spectrogram, StftConfig};
use crate::error::{Error, Result};

/// Binary time-frequency mask, `frames x bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfMask(Array2<f64>);

impl TfMask {
    pub fn new(mask: Array2<f64>) -> Result<Self> {
        if mask.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidConfig("mask entries must be 0 or 1".into()));
        }
        Ok(Self(mask))
    }

    pub fn ones(frames: usize, bins: usize) -> Self {
        Self(Array2::ones((frames, bins)))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    /// Fraction of bins set.
    pub fn coverage(&self) -> f64 {
        self.0.sum() / self.0.len().max(1) as f64
    }

    /// Rows of `0`/`1` separated by spaces, one line per frame.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.0.len() * 2);
        for row in self.0.rows() {
            let line: Vec<&str> = row.iter().map(|&v| if v == 1.0 { "1" } else { "0" }).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// One mask per input: bin `(t, f)` goes to the input with the largest
/// magnitude there, the lowest index on ties.
fn argmax_masks(magnitudes: &[Array2<f64>]) -> Result<Vec<TfMask>> {
    let Some(first) = magnitudes.first() else {
        return Err(Error::InvalidConfig("no spectrograms to compare".into()));
    };
    let dim = first.dim();
    if let Some(bad) = magnitudes.iter().find(|m| m.dim() != dim) {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", bad.dim(), dim)));
    }
    let mut masks = vec![Array2::zeros(dim); magnitudes.len()];
    for ((t, f), _) in first.indexed_iter() {
        let mut best = 0;
        for (c, m) in magnitudes.iter().enumerate().skip(1) {
            if m[[t, f]] > magnitudes[best][[t, f]] {
                best = c;
            }
        }
        masks[best][[t, f]] = 1.0;
    }
    Ok(masks.into_iter().map(TfMask).collect())
}

/// Compares the reference microphones' spectrograms, each scaled to unit
/// RMS, and gives every bin to the loudest.
pub fn initial_masks(ref_specs: &[Spectrogram]) -> Result<Vec<TfMask>> {
    let magnitudes: Vec<Array2<f64>> = ref_specs
        .iter()
        .map(|s| {
            let rms = (s.bins().iter().map(|z| z.norm_sqr()).sum::<f64>() / s.bins().len() as f64).sqrt();
            let scale = if rms > 0.0 { 1.0 / rms } else { 0.0 };
            s.bins().mapv(|z| z.norm() * scale)
        })
        .collect();
    argmax_masks(&magnitudes)
}

/// Applies `mask` to the spectrogram of `signal` and resynthesises.
pub fn apply_mask(signal: &[f64], mask: &TfMask, cfg: &StftConfig) -> Result<Vec<f64>> {
    istft(&stft(signal, cfg)?.masked(mask.values())?)
}

/// Binary postfilter: each bin is kept only in the beamformer output with
/// the largest magnitude there. Returns the filtered signals and the masks.
pub fn postfilter(beamformed: &[Vec<f64>], cfg: &StftConfig) -> Result<(Vec<Vec<f64>>, Vec<TfMask>)> {
    let Some(first) = beamformed.first() else {
        return Err(Error::InvalidConfig("no beamformer outputs".into()));
    };
    if let Some(bad) = beamformed.iter().find(|b| b.len() != first.len()) {
        return Err(Error::LengthMismatch {
            expected: first.len(),
            got: bad.len(),
        });
    }
    let specs = beamformed
        .iter()
        .map(|b| stft(b, cfg))
        .collect::<Result<Vec<_>>>()?;
    let magnitudes: Vec<Array2<f64>> = specs.iter().map(|s| s.bins().mapv(|z| z.norm())).collect();
    let masks = argmax_masks(&magnitudes)?;
    let out = specs
        .iter()
        .zip(&masks)
        .map(|(s, m)| istft(&s.masked(m.values())?))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, masks))
}
