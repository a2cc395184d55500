//! Shoebox room acoustics and scene generation.
//!
//! Impulse responses come from the image-source method with a single,
//! frequency-independent wall reflection coefficient calibrated so the
//! decay reaches -60 dB at the reverberation time. Scenes hold two talkers in
//! opposite halves of the room and an ad-hoc set of microphones, sampled
//! either uniformly over the room or clustered around each talker.

mod render;
mod rir;
mod scenario;
mod source;

pub use render::{render_scene, render_scene_with, RenderOptions, RenderedScene, SnrReference};
pub use rir::{generate_rir, generate_rir_with_horizon, Rir, SINC_WIDTH};
pub use scenario::{
    sample_clustered_scenario, sample_scenario, sample_unclustered_scenario, subset_cluster_mics,
    subset_mics, MicCluster, SamplerConfig, Scenario, ScenarioKind,
};
pub use source::{dry_sources, speech_shaped_noise};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cartesian position in meters.
pub type Point = [f64; 3];

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

pub(crate) fn distance(a: &Point, b: &Point) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Room {
    /// Length, width and height in meters.
    pub dims: [f64; 3],
    /// Reverberation time in seconds; zero means anechoic.
    pub t60: f64,
    pub speed_of_sound: f64,
    pub sample_rate: f64,
}

impl Room {
    pub fn new(dims: [f64; 3], t60: f64, sample_rate: f64) -> Result<Self> {
        let room = Self {
            dims,
            t60,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            sample_rate,
        };
        room.validate()?;
        Ok(room)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::Geometry(format!("room dimensions {:?}", self.dims)));
        }
        if !(self.t60 >= 0.0) || !self.t60.is_finite() {
            return Err(Error::InvalidConfig(format!("t60 {}", self.t60)));
        }
        if !(self.speed_of_sound > 0.0) || !(self.sample_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "speed of sound and sample rate must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    pub fn diagonal(&self) -> f64 {
        self.dims.iter().map(|d| d * d).sum::<f64>().sqrt()
    }

    pub fn center(&self) -> Point {
        [self.dims[0] / 2.0, self.dims[1] / 2.0, self.dims[2] / 2.0]
    }

    /// Strictly inside the walls.
    pub fn contains(&self, p: &Point) -> bool {
        p.iter()
            .zip(&self.dims)
            .all(|(c, d)| *c > 0.0 && *c < *d && c.is_finite())
    }

    /// Largest possible propagation delay between two points, in samples.
    pub fn max_delay_samples(&self) -> f64 {
        self.diagonal() / self.speed_of_sound * self.sample_rate
    }

    /// Amplitude reflection coefficient from Eyring's formula,
    /// `T60 = 24 ln(10) V / (-c S ln(1 - alpha))`, `beta = sqrt(1 - alpha)`.
    pub fn eyring_reflection_coefficient(&self) -> f64 {
        if self.t60 == 0.0 {
            return 0.0;
        }
        let k = 24.0 * std::f64::consts::LN_10 / self.speed_of_sound;
        let log_one_minus_alpha = -k * self.volume() / (self.surface() * self.t60);
        (0.5 * log_one_minus_alpha).exp()
    }

    /// Amplitude reflection coefficient used by the image-source model.
    ///
    /// Image energy arriving at time `t` from direction `u` has hit
    /// `c t g(u)` walls, `g(u) = sum |u_a| / L_a`, so the expected energy
    /// envelope is `E_u[beta^(2 c t g(u))]`. Eyring's value only matches the
    /// direction-averaged wall-hit rate, and the slowly decaying directions
    /// keep the tail well above -60 dB at `t60` in elongated rooms. Here
    /// `beta` is solved so that the backward integral of the expected
    /// envelope, `E_u[beta^(2 c t g) / g] / E_u[1 / g]`, is 60 dB down at `t60`.
    pub fn reflection_coefficient(&self) -> f64 {
        if self.t60 == 0.0 {
            return 0.0;
        }
        let rates = direction_hit_rates(&self.dims);
        let path = self.speed_of_sound * self.t60;
        let norm: f64 = rates.iter().map(|(g, w)| w / g).sum();
        let tail = |a: f64| {
            rates
                .iter()
                .map(|(g, w)| w * (-2.0 * a * path * g).exp() / g)
                .sum::<f64>()
                / norm
        };
        // `a = -ln(beta)`; the tail decreases monotonically in `a`.
        let target = 1e-6;
        let mut lo = 0.0;
        let mut hi = (-self.eyring_reflection_coefficient().ln()).max(1e-6);
        while tail(hi) > target {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if tail(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (-0.5 * (lo + hi)).exp()
    }

    /// Reflection order reachable within `t60` seconds of propagation; images
    /// beyond it arrive after the -60 dB point.
    pub fn default_max_order(&self) -> usize {
        let path = self.speed_of_sound * self.t60;
        let order: f64 = self.dims.iter().map(|d| path / d).sum();
        order.ceil() as usize + 3
    }
}

/// Wall hits per meter of travel, `g(u) = sum |u_a| / L_a`, with solid-angle
/// weights over one octant of directions. The polar grid is centered on the
/// longest axis, where `g` is smallest, and graded toward it because that
/// neighborhood dominates the late tail.
fn direction_hit_rates(dims: &[f64; 3]) -> Vec<(f64, f64)> {
    const POLAR: usize = 256;
    const AZIMUTH: usize = 64;
    let mut l = *dims;
    l.sort_by(|a, b| b.total_cmp(a));
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut out = Vec::with_capacity(POLAR * AZIMUTH);
    for i in 0..POLAR {
        // theta = (pi / 2) s^2 clusters samples near the pole.
        let s = (i as f64 + 0.5) / POLAR as f64;
        let theta = half_pi * s * s;
        let d_theta = std::f64::consts::PI * s / POLAR as f64;
        for j in 0..AZIMUTH {
            let phi = half_pi * (j as f64 + 0.5) / AZIMUTH as f64;
            let g = theta.cos() / l[0] + theta.sin() * (phi.cos() / l[1] + phi.sin() / l[2]);
            out.push((g, theta.sin() * d_theta));
        }
    }
    out
}

/// Distance from a source at which direct and reverberant energy are equal,
/// `0.057 * sqrt(V / T60)`.
pub fn critical_distance(room: &Room) -> Result<f64> {
    if room.t60 <= 0.0 {
        return Err(Error::Degenerate(
            "anechoic room has no finite critical distance".into(),
        ));
    }
    Ok(0.057 * (room.volume() / room.t60).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_distance_formula() {
        let room = Room::new([5.0, 5.0, 4.0], 0.5, 16_000.0).unwrap();
        let expected = 0.057 * 200.0_f64.sqrt();
        assert!((critical_distance(&room).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.806).abs() < 1e-3);
    }

    #[test]
    fn critical_distance_scales_with_sqrt_volume() {
        let a = Room::new([5.0, 5.0, 4.0], 0.5, 16_000.0).unwrap();
        let b = Room::new([10.0, 5.0, 4.0], 0.5, 16_000.0).unwrap();
        let ratio = critical_distance(&b).unwrap() / critical_distance(&a).unwrap();
        assert!((ratio - 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn anechoic_room_has_no_critical_distance() {
        let room = Room::new([5.0, 5.0, 4.0], 0.0, 16_000.0).unwrap();
        assert!(matches!(critical_distance(&room), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rejects_bad_rooms() {
        assert!(Room::new([0.0, 5.0, 3.0], 0.4, 16_000.0).is_err());
        assert!(Room::new([4.0, 5.0, 3.0], -0.1, 16_000.0).is_err());
    }

    #[test]
    fn calibrated_coefficient_absorbs_more_than_eyring() {
        for dims in [[6.0, 5.0, 3.0], [9.0, 4.0, 2.5], [4.0, 4.0, 4.0]] {
            let room = Room::new(dims, 0.5, 16_000.0).unwrap();
            let beta = room.reflection_coefficient();
            assert!(beta > 0.0 && beta < room.eyring_reflection_coefficient());
        }
    }

    #[test]
    fn eyring_coefficient_reproduces_t60() {
        let room = Room::new([6.0, 5.0, 3.0], 0.6, 16_000.0).unwrap();
        let beta = room.eyring_reflection_coefficient();
        let alpha = 1.0 - beta * beta;
        let t60 = 24.0 * std::f64::consts::LN_10 * room.volume()
            / (-room.speed_of_sound * room.surface() * (1.0 - alpha).ln());
        assert!((t60 - 0.6).abs() < 1e-12);
    }
}
