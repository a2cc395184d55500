use ndarray::Array2;
use rustfft::num_complex::Complex64;

use crate::dsp::{stft, StftConfig};
use crate::error::{Error, Result};
use crate::recording::MultichannelRecording;

/// Fewest STFT frames the spectral averages are computed over.
pub const MIN_COHERENCE_FRAMES: usize = 16;

/// Symmetric matrix of band-averaged magnitude-squared coherence with a unit
/// diagonal and entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceMatrix {
    c: Array2<f64>,
}

impl CoherenceMatrix {
    pub fn new(c: Array2<f64>) -> Result<Self> {
        let (n, m) = c.dim();
        if n != m || n == 0 {
            return Err(Error::ShapeMismatch(format!("coherence matrix {:?}", c.dim())));
        }
        for i in 0..n {
            if c[[i, i]] != 1.0 {
                return Err(Error::InvalidConfig(format!("diagonal entry {i} is {}", c[[i, i]])));
            }
            for j in 0..n {
                let v = c[[i, j]];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidConfig(format!("entry ({i}, {j}) = {v}")));
                }
                if v != c[[j, i]] {
                    return Err(Error::InvalidConfig(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { c })
    }

    pub fn identity(size: usize) -> Self {
        Self {
            c: Array2::eye(size),
        }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.c
    }

    pub fn size(&self) -> usize {
        self.c.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.c[[i, j]]
    }

    /// Entry `(i, j)` of the result is entry `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.size();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidConfig("not a permutation".into()));
        }
        Ok(Self {
            c: Array2::from_shape_fn((n, n), |(i, j)| self.c[[perm[i], perm[j]]]),
        })
    }
}

/// Welch-averaged magnitude-squared coherence over STFT frames, averaged over
/// every bin but DC.
pub fn coherence_matrix(rec: &MultichannelRecording, cfg: &StftConfig) -> Result<CoherenceMatrix> {
    let m = rec.num_channels();
    if m < 2 {
        return Err(Error::InvalidConfig(format!("coherence needs at least 2 channels, got {m}")));
    }
    let specs = rec
        .channels()
        .iter()
        .map(|ch| stft(ch, cfg))
        .collect::<Result<Vec<_>>>()?;
    let frames = specs[0].num_frames();
    if frames < MIN_COHERENCE_FRAMES {
        return Err(Error::SignalTooShort {
            len: rec.len(),
            frame_len: cfg.frame_len,
        });
    }
    let bins = specs[0].num_bins();

    let auto: Vec<Vec<f64>> = specs
        .iter()
        .map(|s| {
            (0..bins)
                .map(|k| s.bins().column(k).iter().map(|z| z.norm_sqr()).sum())
                .collect()
        })
        .collect();
    for (i, a) in auto.iter().enumerate() {
        if a.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroEnergy(format!("channel {i}")));
        }
    }

    // Bin-major copies keep the pairwise inner loop contiguous.
    let columns: Vec<Vec<Vec<Complex64>>> = specs
        .iter()
        .map(|s| (0..bins).map(|k| s.bins().column(k).to_vec()).collect())
        .collect();

    let mut c = Array2::eye(m);
    for i in 0..m {
        for j in i + 1..m {
            let mut total = 0.0;
            for k in 1..bins {
                let denom = auto[i][k] * auto[j][k];
                if denom == 0.0 {
                    continue;
                }
                let cross: Complex64 = columns[i][k]
                    .iter()
                    .zip(&columns[j][k])
                    .map(|(a, b)| a * b.conj())
                    .sum();
                total += (cross.norm_sqr() / denom).min(1.0);
            }
            let v = total / (bins - 1) as f64;
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
    CoherenceMatrix::new(c)
}
