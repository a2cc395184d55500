use std::f64::consts::PI;

use super::{distance, Point, Room};
use crate::error::{Error, Result};

/// Taps of the windowed-sinc fractional-delay kernel placed at every image.
pub const SINC_WIDTH: usize = 81;

#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    /// Direct-path delay rounded to whole samples.
    pub direct_delay: usize,
}

impl Rir {
    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|v| v * v).sum()
    }
}

/// Per-axis image offsets: `(signed distance component, wall hits)`.
fn axis_images(src: f64, mic: f64, len: f64, reach: f64) -> Vec<(f64, usize)> {
    let n_max = (reach / (2.0 * len)).ceil() as i64 + 1;
    let mut out = Vec::with_capacity((4 * n_max + 2) as usize);
    for n in -n_max..=n_max {
        for u in 0..2_i64 {
            let sign = if u == 0 { 1.0 } else { -1.0 };
            let delta = sign * src + 2.0 * n as f64 * len - mic;
            if delta.abs() <= reach {
                let hits = ((n - u).unsigned_abs() + n.unsigned_abs()) as usize;
                out.push((delta, hits));
            }
        }
    }
    out
}

/// Adds `amp * w(n - tau) * sinc(n - tau)` around `tau`, with a Hann window
/// spanning [`SINC_WIDTH`] taps.
fn add_fractional_impulse(taps: &mut [f64], tau: f64, amp: f64) {
    let half = (SINC_WIDTH / 2) as i64;
    let center = tau.round() as i64;
    let frac = tau - center as f64;
    let sin_frac = (PI * frac).sin();
    let step = 2.0 * PI / SINC_WIDTH as f64;
    // cos(step * (i - frac)) advanced by rotation.
    let (mut c, mut s) = ((step * (-half as f64 - frac)).cos(), (step * (-half as f64 - frac)).sin());
    let (cr, sr) = (step.cos(), step.sin());
    for i in -half..=half {
        let n = center + i;
        if n >= 0 && (n as usize) < taps.len() {
            let t = i as f64 - frac;
            let sinc = if t.abs() < 1e-12 {
                1.0
            } else {
                // sin(pi (i - frac)) = -(-1)^i sin(pi frac)
                let sign = if i.rem_euclid(2) == 0 { -1.0 } else { 1.0 };
                sign * sin_frac / (PI * t)
            };
            taps[n as usize] += amp * 0.5 * (1.0 + c) * sinc;
        }
        let next_c = c * cr - s * sr;
        s = s * cr + c * sr;
        c = next_c;
    }
}

/// Two-pole high-pass at 100 Hz, applied in place. Every image carries a
/// positive amplitude, so the dense late tail piles up a DC component that
/// would otherwise decay far slower than the reflection energy.
fn remove_dc(x: &mut [f64], fs: f64) {
    let w = 2.0 * PI * 100.0 / fs;
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y0 = b1 * y1 + b2 * y2 + *v;
        *v = y0 + a1 * y1 + r1 * y2;
        y2 = y1;
        y1 = y0;
    }
}

/// Image-source impulse response between `src` and `mic`.
///
/// Images are kept while their reflection count is at most `max_order` and
/// they arrive within the reverberation time (or the direct path, whichever is
/// later). Reflections are DC-blocked; the direct path is left untouched. The
/// response is long enough to hold the last kernel.
pub fn generate_rir(room: &Room, src: &Point, mic: &Point, max_order: usize) -> Result<Rir> {
    generate_rir_with_horizon(room, src, mic, max_order, room.t60)
}

/// [`generate_rir`] with images kept up to `horizon` seconds instead of the
/// reverberation time.
pub fn generate_rir_with_horizon(
    room: &Room,
    src: &Point,
    mic: &Point,
    max_order: usize,
    horizon: f64,
) -> Result<Rir> {
    room.validate()?;
    if !room.contains(src) || !room.contains(mic) {
        return Err(Error::Geometry(
            "source and microphone must lie strictly inside the room".into(),
        ));
    }
    let direct = distance(src, mic);
    if direct < 1e-9 {
        return Err(Error::Geometry("source and microphone coincide".into()));
    }
    let fs = room.sample_rate;
    let c = room.speed_of_sound;
    let horizon = (horizon * fs).max(direct / c * fs);
    let reach = horizon / fs * c;
    let mut taps = vec![0.0; horizon.ceil() as usize + SINC_WIDTH / 2 + 1];

    let beta = room.reflection_coefficient();
    let hit_bound: usize = room.dims.iter().map(|d| (reach / d).ceil() as usize + 2).sum();
    let max_hits = max_order.min(hit_bound);
    let beta_pow: Vec<f64> = (0..=max_hits).map(|k| beta.powi(k as i32)).collect();

    let xs = axis_images(src[0], mic[0], room.dims[0], reach);
    let ys = axis_images(src[1], mic[1], room.dims[1], reach);
    let zs = axis_images(src[2], mic[2], room.dims[2], reach);
    let reach2 = reach * reach;
    let to_samples = fs / c;

    for &(dx, hx) in &xs {
        let rx = dx * dx;
        if hx > max_hits {
            continue;
        }
        for &(dy, hy) in &ys {
            let rxy = rx + dy * dy;
            if rxy > reach2 || hx + hy > max_hits {
                continue;
            }
            for &(dz, hz) in &zs {
                let hits = hx + hy + hz;
                let r2 = rxy + dz * dz;
                if r2 > reach2 || hits > max_hits {
                    continue;
                }
                let amp = beta_pow[hits];
                if amp == 0.0 {
                    continue;
                }
                if hits == 0 {
                    continue;
                }
                let dist = r2.sqrt();
                add_fractional_impulse(&mut taps, dist * to_samples, amp / (4.0 * PI * dist));
            }
        }
    }
    remove_dc(&mut taps, fs);
    add_fractional_impulse(&mut taps, direct * to_samples, 1.0 / (4.0 * PI * direct));

    Ok(Rir {
        taps,
        direct_delay: (direct / c * fs).round() as usize,
    })
}
