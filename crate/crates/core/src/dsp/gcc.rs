use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagEstimate {
    /// Samples by which `y` lags `x`.
    pub lag: i64,
    /// Height of the phase-transform correlation peak, in `[0, 1]`.
    pub peak: f64,
}

/// Generalized cross-correlation with phase transform.
///
/// Cross-spectrum bins weaker than this fraction of the strongest are dropped
/// instead of whitened. Masked or band-limited inputs leave leakage there that
/// would otherwise get the same weight as the signal band.
pub const PHAT_FLOOR: f64 = 1e-6;

/// Returns the integer lag in `[-max_lag, max_lag]` that maximises the
/// whitened cross-correlation of `x` and `y`. A positive lag means `y` is a
/// delayed copy of `x`. Ties resolve to the most negative lag.
pub fn gcc_phat(x: &[f64], y: &[f64], max_lag: usize) -> Result<LagEstimate> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if 2 * max_lag >= x.len() {
        return Err(Error::InvalidConfig(format!(
            "max_lag {max_lag} must be below half the signal length {}",
            x.len()
        )));
    }
    if x.iter().all(|&v| v == 0.0) || y.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroEnergy("gcc-phat input".into()));
    }

    // Linear (not circular) correlation for lags up to the signal length.
    let n = (2 * x.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let spectrum = |s: &[f64]| {
        let mut buf: Vec<Complex64> = s.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(n, Complex64::new(0.0, 0.0));
        fwd.process(&mut buf);
        buf
    };
    let xs = spectrum(x);
    let ys = spectrum(y);

    let mut cross: Vec<Complex64> = xs.iter().zip(&ys).map(|(a, b)| a.conj() * b).collect();
    let max_mag = cross.iter().fold(0.0_f64, |m, c| m.max(c.norm()));
    let floor = max_mag * PHAT_FLOOR;
    for c in cross.iter_mut() {
        let mag = c.norm();
        *c = if mag > floor { *c / mag } else { Complex64::new(0.0, 0.0) };
    }
    inv.process(&mut cross);

    let max_lag = max_lag as i64;
    let mut best = LagEstimate {
        lag: 0,
        peak: f64::NEG_INFINITY,
    };
    for lag in -max_lag..=max_lag {
        let idx = if lag >= 0 { lag as usize } else { n - (-lag) as usize };
        let value = cross[idx].re / n as f64;
        if value > best.peak {
            best = LagEstimate { lag, peak: value };
        }
    }
    best.peak = best.peak.clamp(0.0, 1.0);
    Ok(best)
}
