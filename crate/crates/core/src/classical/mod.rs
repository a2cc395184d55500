//! Cluster-informed separation without learning: initial masking on the
//! reference microphones, delay estimation on the masked signals, delay and
//! sum beamforming per cluster and an optional binary postfilter.

mod beamform;
mod masks;

pub use beamform::{beamform, dsb, estimate_delays, fmva_dsb, fmva_weights, DelaySet};
pub use masks::{apply_mask, initial_masks, postfilter, TfMask};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::{speech_clusters, ClusterModel, CoherenceMatrix};
use crate::dsp::{stft, StftConfig};
use crate::error::{Error, Result};
use crate::recording::MultichannelRecording;
use crate::room::Room;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// The unprocessed reference microphone of each cluster.
    #[serde(rename = "reference-mic")]
    ReferenceMic,
    #[serde(rename = "initial-mask")]
    InitialMask,
    #[serde(rename = "dsb")]
    Dsb,
    #[serde(rename = "fmva-dsb")]
    FmvaDsb,
    #[serde(rename = "dsb+postfilter")]
    DsbPostfilter,
    #[serde(rename = "fmva-dsb+postfilter")]
    FmvaDsbPostfilter,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::ReferenceMic,
        Method::InitialMask,
        Method::Dsb,
        Method::FmvaDsb,
        Method::DsbPostfilter,
        Method::FmvaDsbPostfilter,
    ];

    /// The set reported by default; the weighted beamformer with postfilter
    /// is left out.
    pub const DEFAULT: [Method; 5] = [
        Method::ReferenceMic,
        Method::InitialMask,
        Method::Dsb,
        Method::FmvaDsb,
        Method::DsbPostfilter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ReferenceMic => "reference-mic",
            Method::InitialMask => "initial-mask",
            Method::Dsb => "dsb",
            Method::FmvaDsb => "fmva-dsb",
            Method::DsbPostfilter => "dsb+postfilter",
            Method::FmvaDsbPostfilter => "fmva-dsb+postfilter",
        }
    }

    fn weighted(self) -> bool {
        matches!(self, Method::FmvaDsb | Method::FmvaDsbPostfilter)
    }

    fn postfiltered(self) -> bool {
        matches!(self, Method::DsbPostfilter | Method::FmvaDsbPostfilter)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparationConfig {
    /// Resolution of all masking.
    pub stft: StftConfig,
    /// Largest delay searched, in samples.
    pub max_lag: usize,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            max_lag: 512,
        }
    }
}

impl SeparationConfig {
    /// Delay search bounded by the room diagonal.
    pub fn for_room(room: &Room) -> Self {
        Self {
            stft: StftConfig {
                sample_rate: room.sample_rate,
                ..StftConfig::default()
            },
            max_lag: room.max_delay_samples().ceil() as usize,
        }
    }

    /// Analysis used to time-align channels: plain overlap-add with a frame
    /// long enough that any searched delay stays inside it.
    pub fn alignment(&self) -> StftConfig {
        let frame = (2 * self.max_lag + 2).next_power_of_two().max(1024);
        StftConfig::alignment(frame, self.stft.sample_rate)
    }
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub method: Method,
    /// Speech clusters, ascending; `estimates[i]` belongs to `clusters[i]`.
    pub clusters: Vec<usize>,
    /// Reference microphone of each speech cluster.
    pub references: Vec<usize>,
    pub estimates: Vec<Vec<f64>>,
    pub initial_masks: Option<Vec<TfMask>>,
    pub postfilter_masks: Option<Vec<TfMask>>,
    pub delays: Option<DelaySet>,
}

/// Runs the chain up to `method` on every speech cluster. The noise cluster
/// is excluded.
pub fn separate_classical(
    rec: &MultichannelRecording,
    model: &ClusterModel,
    coherence: &CoherenceMatrix,
    method: Method,
    cfg: &SeparationConfig,
) -> Result<SeparationResult> {
    if model.num_mics() != rec.num_channels() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} mics, recording {}",
            model.num_mics(),
            rec.num_channels()
        )));
    }
    let clusters = speech_clusters(model, coherence, model.num_clusters.saturating_sub(1).max(1))?;
    if clusters.is_empty() {
        return Err(Error::Degenerate("no speech cluster".into()));
    }
    let references: Vec<usize> = clusters.iter().map(|&c| model.reference[c]).collect();
    let mut result = SeparationResult {
        method,
        clusters: clusters.clone(),
        references: references.clone(),
        estimates: Vec::new(),
        initial_masks: None,
        postfilter_masks: None,
        delays: None,
    };
    if method == Method::ReferenceMic {
        result.estimates = references.iter().map(|&r| rec.channel(r).to_vec()).collect();
        return Ok(result);
    }

    let ref_specs = references
        .iter()
        .map(|&r| stft(rec.channel(r), &cfg.stft))
        .collect::<Result<Vec<_>>>()?;
    let masks = initial_masks(&ref_specs)?;
    if method == Method::InitialMask {
        result.estimates = references
            .iter()
            .zip(&masks)
            .map(|(&r, m)| apply_mask(rec.channel(r), m, &cfg.stft))
            .collect::<Result<_>>()?;
        result.initial_masks = Some(masks);
        return Ok(result);
    }

    let delays = estimate_delays(rec, model, &clusters, &masks, cfg)?;
    let beamformed = clusters
        .iter()
        .map(|&c| {
            if method.weighted() {
                fmva_dsb(rec, model, c, &delays, cfg)
            } else {
                dsb(rec, model, c, &delays, cfg)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    result.initial_masks = Some(masks);
    result.delays = Some(delays);
    if method.postfiltered() {
        let (filtered, post) = postfilter(&beamformed, &cfg.stft)?;
        result.estimates = filtered;
        result.postfilter_masks = Some(post);
    } else {
        result.estimates = beamformed;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::{array, Array2};
    use rand_distr::{Distribution, StandardNormal};

    fn white(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed, 3);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn delayed(x: &[f64], d: usize) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        y[d..].copy_from_slice(&x[..x.len() - d]);
        y
    }

    /// Two talkers heard by two mics each, plus two noise mics.
    fn scene() -> (MultichannelRecording, ClusterModel, CoherenceMatrix) {
        let len = 16_000;
        let s1 = white(len, 1);
        let s2 = white(len, 2);
        let mix = |a: &[f64], b: &[f64], g: f64| a.iter().zip(b).map(|(x, y)| x + g * y).collect();
        let channels = vec![
            mix(&s1, &s2, 0.2),
            mix(&delayed(&s1, 4), &s2, 0.3),
            mix(&s2, &s1, 0.2),
            mix(&delayed(&s2, 6), &s1, 0.25),
            white(len, 3),
            white(len, 4),
        ];
        let rec = MultichannelRecording::new(16_000.0, channels).unwrap();
        let b = array![
            [0.9, 0.0, 0.1],
            [0.8, 0.0, 0.1],
            [0.0, 0.9, 0.1],
            [0.0, 0.7, 0.1],
            [0.0, 0.0, 0.3],
            [0.1, 0.0, 0.3]
        ];
        let model = ClusterModel::from_memberships(b, vec![]).unwrap();
        let mut c = Array2::from_elem((6, 6), 0.05);
        for (i, j, v) in [(0, 1, 0.8), (2, 3, 0.8), (4, 5, 0.02)] {
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
        c.diag_mut().fill(1.0);
        (rec, model, CoherenceMatrix::new(c).unwrap())
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("mvdr".parse::<Method>().is_err());
    }

    #[test]
    fn noise_cluster_is_skipped() {
        let (rec, model, c) = scene();
        let r = separate_classical(&rec, &model, &c, Method::ReferenceMic, &SeparationConfig::default()).unwrap();
        assert_eq!(r.clusters, vec![0, 1]);
        assert_eq!(r.references, vec![0, 2]);
        assert_eq!(r.estimates[1], rec.channel(2));
    }

    #[test]
    fn initial_mask_estimates_are_masked_references() {
        let (rec, model, c) = scene();
        let cfg = SeparationConfig::default();
        let r = separate_classical(&rec, &model, &c, Method::InitialMask, &cfg).unwrap();
        let masks = r.initial_masks.as_ref().unwrap();
        for (i, &reference) in r.references.iter().enumerate() {
            let expected = apply_mask(rec.channel(reference), &masks[i], &cfg.stft).unwrap();
            assert_eq!(r.estimates[i], expected);
        }
        let (t, f) = masks[0].dim();
        for ti in 0..t {
            for fi in 0..f {
                assert_eq!(masks[0].values()[[ti, fi]] + masks[1].values()[[ti, fi]], 1.0);
            }
        }
    }

    #[test]
    fn beamformers_record_delays_and_postfilter_partitions() {
        let (rec, model, c) = scene();
        let cfg = SeparationConfig::default();
        let r = separate_classical(&rec, &model, &c, Method::DsbPostfilter, &cfg).unwrap();
        let d = r.delays.as_ref().unwrap();
        assert_eq!(d.get(0, 0), Some(0.0));
        assert_eq!(d.get(1, 0), Some(4.0));
        assert_eq!(d.get(2, 1), Some(0.0));
        assert_eq!(d.get(3, 1), Some(6.0));
        let post = r.postfilter_masks.as_ref().unwrap();
        assert!(post[0]
            .values()
            .iter()
            .zip(post[1].values())
            .all(|(a, b)| a + b == 1.0));
        assert!(r.estimates.iter().all(|e| e.len() == rec.len()));
    }

    #[test]
    fn uniform_memberships_make_weighting_irrelevant() {
        let (rec, _, c) = scene();
        let b = array![
            [0.5, 0.0, 0.0],
            [0.5, 0.0, 0.0],
            [0.0, 0.5, 0.0],
            [0.0, 0.5, 0.0],
            [0.0, 0.0, 0.5],
            [0.0, 0.0, 0.5]
        ];
        let model = ClusterModel::from_memberships(b, vec![]).unwrap();
        let cfg = SeparationConfig::default();
        let a = separate_classical(&rec, &model, &c, Method::Dsb, &cfg).unwrap();
        let w = separate_classical(&rec, &model, &c, Method::FmvaDsb, &cfg).unwrap();
        for (x, y) in a.estimates.iter().zip(&w.estimates) {
            assert!(x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-9));
        }
    }

    #[test]
    fn dsb_is_linear_in_the_input() {
        let (rec, model, c) = scene();
        let cfg = SeparationConfig::default();
        let a = separate_classical(&rec, &model, &c, Method::Dsb, &cfg).unwrap();
        let b = separate_classical(&rec.scaled(-2.5), &model, &c, Method::Dsb, &cfg).unwrap();
        for (x, y) in a.estimates.iter().zip(&b.estimates) {
            assert!(x.iter().zip(y).all(|(p, q)| (-2.5 * p - q).abs() < 1e-9));
        }
    }

    #[test]
    fn alignment_frame_holds_the_delay_range() {
        let cfg = SeparationConfig {
            max_lag: 600,
            ..SeparationConfig::default()
        };
        let a = cfg.alignment();
        assert!(a.frame_len / 2 > 600);
        a.validate().unwrap();
        assert_eq!(SeparationConfig::default().alignment().frame_len, 1_024 * 2);
    }
}
