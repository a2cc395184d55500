use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{critical_distance, distance, Point, Room, DEFAULT_SPEED_OF_SOUND};
use crate::error::{Error, Result};

/// RNG streams derived from a scenario seed.
pub(crate) mod stream {
    pub const GEOMETRY: u64 = 0;
    pub const SOURCES: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const SUBSET: u64 = 3;
}

pub(crate) use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Unclustered,
    Clustered,
}

/// Microphones generated around one source by the clustered sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicCluster {
    pub source: usize,
    pub mics: Vec<usize>,
    pub reference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub room: Room,
    pub sources: Vec<Point>,
    pub mics: Vec<Point>,
    /// Signal-to-noise ratio in dB; `None` disables the noise.
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub kind: ScenarioKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<MicCluster>>,
}

impl Scenario {
    pub fn critical_distance(&self) -> Result<f64> {
        critical_distance(&self.room)
    }

    /// Microphones within the critical distance of `source`.
    pub fn mics_within(&self, source: usize, radius: f64) -> Vec<usize> {
        let src = &self.sources[source];
        (0..self.mics.len())
            .filter(|&m| distance(&self.mics[m], src) <= radius)
            .collect()
    }

    /// Index of the source closest to microphone `mic`.
    pub fn nearest_source(&self, mic: usize) -> usize {
        let p = &self.mics[mic];
        (0..self.sources.len())
            .min_by(|&a, &b| {
                distance(p, &self.sources[a]).total_cmp(&distance(p, &self.sources[b]))
            })
            .unwrap_or(0)
    }

    /// Microphone closest to the room center.
    pub fn center_mic(&self) -> usize {
        let c = self.room.center();
        (0..self.mics.len())
            .min_by(|&a, &b| distance(&self.mics[a], &c).total_cmp(&distance(&self.mics[b], &c)))
            .unwrap_or(0)
    }

    /// Checks every geometric invariant of a sampled scene.
    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        if self.sources.len() != 2 {
            return Err(Error::Geometry(format!(
                "expected exactly 2 sources, found {}",
                self.sources.len()
            )));
        }
        for (i, p) in self.sources.iter().chain(&self.mics).enumerate() {
            if !self.room.contains(p) {
                return Err(Error::Geometry(format!("position {i} {p:?} is outside the room")));
            }
        }
        let half = self.room.dims[0] / 2.0;
        if !(self.sources[0][0] < half && self.sources[1][0] > half) {
            return Err(Error::Geometry(
                "sources must lie in the left and right halves of the room".into(),
            ));
        }
        let rc = self.critical_distance()?;
        for s in 0..2 {
            let n = self.mics_within(s, rc).len();
            if n < 3 {
                return Err(Error::Geometry(format!(
                    "source {s} has {n} microphones within the critical distance {rc:.3} m"
                )));
            }
        }
        if let Some(clusters) = &self.clusters {
            for cl in clusters {
                if cl.source >= 2
                    || !cl.mics.contains(&cl.reference)
                    || cl.mics.iter().any(|&m| m >= self.mics.len())
                {
                    return Err(Error::Geometry(format!("inconsistent cluster layout {cl:?}")));
                }
                if distance(&self.mics[cl.reference], &self.sources[cl.source]) > rc {
                    return Err(Error::Geometry(
                        "cluster reference lies outside the critical distance".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub t60_range: [f64; 2],
    /// `None` renders noise-free scenes.
    pub snr_range: Option<[f64; 2]>,
    pub num_mics: usize,
    /// Microphones guaranteed inside each source's critical distance.
    pub mics_in_critical: usize,
    /// Extra microphones per source in the clustered scheme.
    pub square_mics: usize,
    /// Side of the square around each source, in meters.
    pub square_side: f64,
    /// Minimum distance from sources to the walls.
    pub source_margin: f64,
    /// Minimum distance from microphones to the walls.
    pub mic_margin: f64,
    /// Minimum source-to-microphone distance.
    pub min_mic_distance: f64,
    pub max_tries: usize,
    pub sample_rate: f64,
    pub speed_of_sound: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            room_min: [5.0, 4.0, 2.5],
            room_max: [9.0, 7.0, 3.5],
            t60_range: [0.3, 0.6],
            snr_range: Some([0.0, 20.0]),
            num_mics: 16,
            mics_in_critical: 3,
            square_mics: 4,
            square_side: 2.0,
            source_margin: 0.5,
            mic_margin: 0.1,
            min_mic_distance: 0.1,
            max_tries: 100,
            sample_rate: 16_000.0,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        for a in 0..3 {
            if !(self.room_min[a] > 0.0) || self.room_min[a] > self.room_max[a] {
                return bad("room dimension ranges must be positive and ordered");
            }
        }
        if !(self.t60_range[0] > 0.0) || self.t60_range[0] > self.t60_range[1] {
            return bad("t60 range must be positive and ordered");
        }
        if let Some([lo, hi]) = self.snr_range {
            if lo > hi {
                return bad("snr range must be ordered");
            }
        }
        if self.mics_in_critical == 0 || self.num_mics < 2 * self.mics_in_critical {
            return bad("need at least mics_in_critical microphones per source");
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn sample_room(cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<(Room, Option<f64>)> {
    let dims = [0, 1, 2].map(|a| uniform(rng, cfg.room_min[a], cfg.room_max[a]));
    let t60 = uniform(rng, cfg.t60_range[0], cfg.t60_range[1]);
    let snr = cfg.snr_range.map(|[lo, hi]| uniform(rng, lo, hi));
    let room = Room {
        dims,
        t60,
        speed_of_sound: cfg.speed_of_sound,
        sample_rate: cfg.sample_rate,
    };
    room.validate()?;
    for d in &dims[..2] {
        if *d <= 4.0 * cfg.source_margin {
            return Err(Error::Infeasible(format!(
                "room side {d} m leaves no room for sources at margin {}",
                cfg.source_margin
            )));
        }
    }
    if dims[2] <= 2.0 * cfg.source_margin.max(cfg.mic_margin) {
        return Err(Error::Infeasible("room too low".into()));
    }
    Ok((room, snr))
}

/// Source position in the left (`side == 0`) or right half of the room.
fn sample_source(room: &Room, cfg: &SamplerConfig, side: usize, rng: &mut ChaCha8Rng) -> Point {
    let m = cfg.source_margin;
    let half = room.dims[0] / 2.0;
    let x = if side == 0 {
        uniform(rng, m, half - m)
    } else {
        uniform(rng, half + m, room.dims[0] - m)
    };
    [
        x,
        uniform(rng, m, room.dims[1] - m),
        uniform(rng, m, room.dims[2] - m),
    ]
}

fn sample_in_box(rng: &mut ChaCha8Rng, lo: Point, hi: Point) -> Point {
    [0, 1, 2].map(|a| uniform(rng, lo[a], hi[a]))
}

fn interior(room: &Room, margin: f64) -> (Point, Point) {
    (
        [margin; 3],
        [
            room.dims[0] - margin,
            room.dims[1] - margin,
            room.dims[2] - margin,
        ],
    )
}

/// Uniform point in the ball of radius `radius` around `center`, inside the
/// room and at least `min_dist` from the center.
fn sample_in_ball(
    room: &Room,
    cfg: &SamplerConfig,
    center: &Point,
    radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Point> {
    let (lo, hi) = interior(room, cfg.mic_margin);
    let lo = [0, 1, 2].map(|a| lo[a].max(center[a] - radius));
    let hi = [0, 1, 2].map(|a| hi[a].min(center[a] + radius));
    for _ in 0..10_000 {
        let p = sample_in_box(rng, lo, hi);
        let d = distance(&p, center);
        if d <= radius && d >= cfg.min_mic_distance {
            return Ok(p);
        }
    }
    Err(Error::Infeasible(format!(
        "cannot place a microphone within {radius:.3} m of {center:?}"
    )))
}

fn too_close(p: &Point, mics: &[Point], min_dist: f64) -> bool {
    mics.iter().any(|m| distance(p, m) < min_dist)
}

/// Sixteen (by default) microphones uniformly over the room; each source is
/// re-drawn until at least `mics_in_critical` microphones fall within its
/// critical distance. If that fails `max_tries` times, randomly chosen
/// microphones not needed by the other source are moved into the critical
/// ball.
pub fn sample_unclustered_scenario(cfg: &SamplerConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = seeded(seed, stream::GEOMETRY);
    let (room, snr_db) = sample_room(cfg, &mut rng)?;
    let rc = critical_distance(&room)?;
    let (lo, hi) = interior(&room, cfg.mic_margin);
    let mut mics: Vec<Point> = (0..cfg.num_mics)
        .map(|_| sample_in_box(&mut rng, lo, hi))
        .collect();

    let mut sources: Vec<Point> = Vec::with_capacity(2);
    for side in 0..2 {
        let mut placed = None;
        let mut last = sample_source(&room, cfg, side, &mut rng);
        for _ in 0..cfg.max_tries {
            let candidate = sample_source(&room, cfg, side, &mut rng);
            last = candidate;
            if too_close(&candidate, &mics, cfg.min_mic_distance) {
                continue;
            }
            let near = mics.iter().filter(|m| distance(m, &candidate) <= rc).count();
            if near >= cfg.mics_in_critical {
                placed = Some(candidate);
                break;
            }
        }
        let src = match placed {
            Some(p) => p,
            None => {
                let src = last;
                let protected: Vec<bool> = mics
                    .iter()
                    .map(|m| {
                        distance(m, &src) <= rc
                            || sources.iter().any(|s| distance(m, s) <= rc)
                            || distance(m, &src) < cfg.min_mic_distance
                    })
                    .collect();
                let near = mics.iter().filter(|m| distance(m, &src) <= rc).count();
                let mut movable: Vec<usize> = (0..mics.len()).filter(|&i| !protected[i]).collect();
                movable.shuffle(&mut rng);
                let needed = cfg.mics_in_critical - near;
                if movable.len() < needed {
                    return Err(Error::Infeasible(
                        "not enough free microphones to satisfy the critical-distance constraint"
                            .into(),
                    ));
                }
                for &i in movable.iter().take(needed) {
                    mics[i] = sample_in_ball(&room, cfg, &src, rc, &mut rng)?;
                }
                // Mics that were too close to the source are pushed out too.
                for mic in mics.iter_mut() {
                    if distance(mic, &src) < cfg.min_mic_distance {
                        *mic = sample_in_ball(&room, cfg, &src, rc, &mut rng)?;
                    }
                }
                src
            }
        };
        sources.push(src);
    }

    let scenario = Scenario {
        room,
        sources,
        mics,
        snr_db,
        seed,
        kind: ScenarioKind::Unclustered,
        clusters: None,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Per source: `mics_in_critical` microphones inside the critical distance
/// (the closest one flagged as reference) and `square_mics` more drawn
/// uniformly from a `square_side` square centred on the source in the
/// horizontal plane, clipped to the room interior.
pub fn sample_clustered_scenario(cfg: &SamplerConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = seeded(seed, stream::GEOMETRY);
    let (room, snr_db) = sample_room(cfg, &mut rng)?;
    let rc = critical_distance(&room)?;
    let (lo, hi) = interior(&room, cfg.mic_margin);

    let mut sources = Vec::with_capacity(2);
    let mut mics: Vec<Point> = Vec::new();
    let mut clusters = Vec::with_capacity(2);
    for side in 0..2 {
        let src = sample_source(&room, cfg, side, &mut rng);
        let first = mics.len();
        for _ in 0..cfg.mics_in_critical {
            mics.push(sample_in_ball(&room, cfg, &src, rc, &mut rng)?);
        }
        let reference = (first..mics.len())
            .min_by(|&a, &b| distance(&mics[a], &src).total_cmp(&distance(&mics[b], &src)))
            .unwrap_or(first);
        let half_side = cfg.square_side / 2.0;
        let sq_lo = [
            lo[0].max(src[0] - half_side),
            lo[1].max(src[1] - half_side),
            lo[2].max(src[2] - half_side),
        ];
        let sq_hi = [
            hi[0].min(src[0] + half_side),
            hi[1].min(src[1] + half_side),
            hi[2].min(src[2] + half_side),
        ];
        for _ in 0..cfg.square_mics {
            let mut placed = None;
            for _ in 0..10_000 {
                let p = sample_in_box(&mut rng, sq_lo, sq_hi);
                if distance(&p, &src) >= cfg.min_mic_distance {
                    placed = Some(p);
                    break;
                }
            }
            mics.push(placed.ok_or_else(|| {
                Error::Infeasible("cannot place a microphone in the source square".into())
            })?);
        }
        clusters.push(MicCluster {
            source: side,
            mics: (first..mics.len()).collect(),
            reference,
        });
        sources.push(src);
    }

    let scenario = Scenario {
        room,
        sources,
        mics,
        snr_db,
        seed,
        kind: ScenarioKind::Clustered,
        clusters: Some(clusters),
    };
    scenario.validate()?;
    Ok(scenario)
}

pub fn sample_scenario(kind: ScenarioKind, cfg: &SamplerConfig, seed: u64) -> Result<Scenario> {
    match kind {
        ScenarioKind::Unclustered => sample_unclustered_scenario(cfg, seed),
        ScenarioKind::Clustered => sample_clustered_scenario(cfg, seed),
    }
}

/// Random microphone subset for the unclustered scheme: between 8 and all
/// microphones, always keeping those within a critical distance of a source.
/// Returned indices are sorted.
pub fn subset_mics(scenario: &Scenario, seed: u64) -> Result<Vec<usize>> {
    let rc = scenario.critical_distance()?;
    let total = scenario.mics.len();
    let mut rng = seeded(seed, stream::SUBSET);
    let lower = 8.min(total);
    let count = rng.gen_range(lower..=total);
    let keep: Vec<usize> = (0..total)
        .filter(|&m| (0..scenario.sources.len()).any(|s| {
            distance(&scenario.mics[m], &scenario.sources[s]) <= rc
        }))
        .collect();
    let mut rest: Vec<usize> = (0..total).filter(|m| !keep.contains(m)).collect();
    rest.shuffle(&mut rng);
    let mut chosen = keep.clone();
    chosen.extend(rest.into_iter().take(count.saturating_sub(keep.len())));
    chosen.sort_unstable();
    Ok(chosen)
}

/// Random per-cluster subsets for the clustered scheme: between 3 and 7
/// microphones per cluster (bounded by its size), always keeping the
/// reference, which is listed first.
pub fn subset_cluster_mics(scenario: &Scenario, seed: u64) -> Result<Vec<Vec<usize>>> {
    let clusters = scenario.clusters.as_ref().ok_or_else(|| {
        Error::InvalidConfig("scenario has no generated microphone clusters".into())
    })?;
    let mut rng = seeded(seed, stream::SUBSET);
    Ok(clusters
        .iter()
        .map(|cl| {
            let hi = 7.min(cl.mics.len());
            let lo = 3.min(hi);
            let count = rng.gen_range(lo..=hi);
            let mut others: Vec<usize> =
                cl.mics.iter().copied().filter(|&m| m != cl.reference).collect();
            others.shuffle(&mut rng);
            let mut chosen = vec![cl.reference];
            chosen.extend(others.into_iter().take(count - 1));
            chosen
        })
        .collect())
}
