//! Frame-based spectral analysis and synthesis, and the delay primitives the
//! rest of the crate is built on.

mod gcc;
mod stft;

pub use gcc::{gcc_phat, LagEstimate, PHAT_FLOOR};
pub use stft::{apply_delay, istft, stft, Spectrogram, StftConfig, Window};

pub(crate) fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}
