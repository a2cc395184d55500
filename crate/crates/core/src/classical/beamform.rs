use crate::clustering::ClusterModel;
use crate::dsp::{apply_delay, energy, gcc_phat, istft, stft, StftConfig};
use crate::error::{Error, Result};
use crate::recording::MultichannelRecording;

use super::masks::{apply_mask, TfMask};
use super::SeparationConfig;

/// Relative delays `tau[mic][cluster]` in samples, `None` where a microphone
/// plays no part in a cluster. Positive values mean the microphone hears the
/// cluster's source later than the reference does.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySet {
    tau: Vec<Vec<Option<f64>>>,
}

impl DelaySet {
    pub fn new(num_mics: usize, num_clusters: usize) -> Self {
        Self {
            tau: vec![vec![None; num_clusters]; num_mics],
        }
    }

    pub fn get(&self, mic: usize, cluster: usize) -> Option<f64> {
        self.tau.get(mic)?.get(cluster).copied().flatten()
    }

    pub fn set(&mut self, mic: usize, cluster: usize, tau: f64) {
        self.tau[mic][cluster] = Some(tau);
    }

    pub fn num_mics(&self) -> usize {
        self.tau.len()
    }
}

/// Estimates each cluster's member delays against its reference with
/// GCC-PHAT on the masked, resynthesised signals. `masks[i]` belongs to
/// `clusters[i]`.
pub fn estimate_delays(
    rec: &MultichannelRecording,
    model: &ClusterModel,
    clusters: &[usize],
    masks: &[TfMask],
    cfg: &SeparationConfig,
) -> Result<DelaySet> {
    if masks.len() != clusters.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} masks for {} clusters",
            masks.len(),
            clusters.len()
        )));
    }
    if model.num_mics() != rec.num_channels() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} mics, recording {}",
            model.num_mics(),
            rec.num_channels()
        )));
    }
    let max_lag = cfg.max_lag.min(rec.len().saturating_sub(1) / 2);
    let mut delays = DelaySet::new(rec.num_channels(), model.num_clusters);
    for (&c, mask) in clusters.iter().zip(masks) {
        let reference = model.reference[c];
        let ref_masked = apply_mask(rec.channel(reference), mask, &cfg.stft)?;
        if energy(&ref_masked) == 0.0 {
            return Err(Error::ZeroEnergy(format!("cluster {c} has no masked energy")));
        }
        delays.set(reference, c, 0.0);
        for m in model.members(c) {
            if m == reference {
                continue;
            }
            let masked = apply_mask(rec.channel(m), mask, &cfg.stft)?;
            if energy(&masked) == 0.0 {
                return Err(Error::ZeroEnergy(format!(
                    "microphone {m} has no masked energy in cluster {c}"
                )));
            }
            let lag = gcc_phat(&ref_masked, &masked, max_lag)?.lag;
            delays.set(m, c, lag as f64);
        }
    }
    Ok(delays)
}

/// Weighted sum of the listed channels, each advanced by its delay in the
/// STFT domain.
pub fn beamform(
    rec: &MultichannelRecording,
    mics: &[usize],
    weights: &[f64],
    delays: &[f64],
    align: &StftConfig,
) -> Result<Vec<f64>> {
    if mics.is_empty() {
        return Err(Error::InvalidConfig("beamformer needs at least one microphone".into()));
    }
    if weights.len() != mics.len() || delays.len() != mics.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} mics, {} weights, {} delays",
            mics.len(),
            weights.len(),
            delays.len()
        )));
    }
    let mut out = vec![0.0; rec.len()];
    for ((&m, &w), &tau) in mics.iter().zip(weights).zip(delays) {
        if m >= rec.num_channels() {
            return Err(Error::IndexOutOfRange {
                index: m,
                len: rec.num_channels(),
            });
        }
        let aligned = if tau == 0.0 {
            rec.channel(m).to_vec()
        } else {
            istft(&apply_delay(&stft(rec.channel(m), align)?, -tau)?)?
        };
        out.iter_mut().zip(&aligned).for_each(|(o, a)| *o += w * a);
    }
    Ok(out)
}

fn cluster_delays(model: &ClusterModel, cluster: usize, delays: &DelaySet) -> Result<(Vec<usize>, Vec<f64>)> {
    let members = model.members(cluster);
    if members.is_empty() {
        return Err(Error::EmptyCluster(cluster));
    }
    let taus = members
        .iter()
        .map(|&m| {
            delays.get(m, cluster).ok_or_else(|| {
                Error::InvalidConfig(format!("no delay for microphone {m} in cluster {cluster}"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((members, taus))
}

/// Delay-and-sum: the plain average of the aligned cluster members.
pub fn dsb(
    rec: &MultichannelRecording,
    model: &ClusterModel,
    cluster: usize,
    delays: &DelaySet,
    cfg: &SeparationConfig,
) -> Result<Vec<f64>> {
    let (members, taus) = cluster_delays(model, cluster, delays)?;
    let weights = vec![1.0 / members.len() as f64; members.len()];
    beamform(rec, &members, &weights, &taus, &cfg.alignment())
}

/// Membership weights of a cluster's members, normalised to sum to one.
pub fn fmva_weights(model: &ClusterModel, cluster: usize) -> Result<Vec<f64>> {
    let members = model.members(cluster);
    if members.is_empty() {
        return Err(Error::EmptyCluster(cluster));
    }
    let raw: Vec<f64> = members.iter().map(|&m| model.b[[m, cluster]]).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(format!(
            "all memberships in cluster {cluster} are zero"
        )));
    }
    Ok(raw.iter().map(|v| v / total).collect())
}

/// Delay-and-sum with membership-proportional weights.
pub fn fmva_dsb(
    rec: &MultichannelRecording,
    model: &ClusterModel,
    cluster: usize,
    delays: &DelaySet,
    cfg: &SeparationConfig,
) -> Result<Vec<f64>> {
    let (members, taus) = cluster_delays(model, cluster, delays)?;
    let weights = fmva_weights(model, cluster)?;
    beamform(rec, &members, &weights, &taus, &cfg.alignment())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::room::{generate_rir, Room};
    use crate::rng::seeded;
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    fn white(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed, 7);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// `mics` in cluster 0 (reference first), the rest in cluster 1.
    fn model_for(num_mics: usize, cluster0: &[usize], b0: &[f64]) -> ClusterModel {
        let mut b = Array2::zeros((num_mics, 2));
        for m in 0..num_mics {
            b[[m, 1]] = 0.5;
        }
        for (&m, &v) in cluster0.iter().zip(b0) {
            b[[m, 0]] = v;
            b[[m, 1]] = 0.0;
        }
        ClusterModel::from_memberships(b, vec![]).unwrap()
    }

    fn shifted(x: &[f64], d: usize) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        y[d..].copy_from_slice(&x[..x.len() - d]);
        y
    }

    fn full_mask(len: usize, cfg: &SeparationConfig) -> TfMask {
        TfMask::ones(cfg.stft.num_frames(len), cfg.stft.num_bins())
    }

    #[test]
    fn reference_delay_is_zero() {
        let x = white(8000, 1);
        let rec = MultichannelRecording::new(16_000.0, vec![x.clone(), shifted(&x, 5)]).unwrap();
        let model = model_for(2, &[0, 1], &[1.0, 0.9]);
        let cfg = SeparationConfig::default();
        let d = estimate_delays(&rec, &model, &[0], &[full_mask(8000, &cfg)], &cfg).unwrap();
        assert_eq!(d.get(0, 0), Some(0.0));
        assert_eq!(d.get(1, 0), Some(5.0));
    }

    #[test]
    fn anechoic_geometric_delay() {
        let room = Room::new([8.0, 6.0, 3.0], 0.0, 16_000.0).unwrap();
        let src = [2.0, 3.0, 1.5];
        let near = [3.0, 3.0, 1.5];
        let far = [3.686, 3.0, 1.5];
        let dry = white(16_000, 2);
        let render = |mic| {
            let rir = generate_rir(&room, &src, &mic, 0).unwrap();
            (0..dry.len())
                .map(|t| {
                    rir.taps
                        .iter()
                        .enumerate()
                        .take(t + 1)
                        .map(|(k, h)| h * dry[t - k])
                        .sum()
                })
                .collect::<Vec<f64>>()
        };
        let rec = MultichannelRecording::new(16_000.0, vec![render(near), render(far)]).unwrap();
        let model = model_for(2, &[0, 1], &[1.0, 0.5]);
        let cfg = SeparationConfig::default();
        let d = estimate_delays(&rec, &model, &[0], &[full_mask(16_000, &cfg)], &cfg).unwrap();
        let tau = d.get(1, 0).unwrap();
        assert!((tau - 32.0).abs() <= 1.0, "{tau}");
    }

    #[test]
    fn mask_shields_delay_from_interference() {
        let cfg = SeparationConfig::default();
        let len = 16_000;
        // Target below 2 kHz, delayed by 10; interferer above 4 kHz, advanced.
        let band = |x: &[f64], lo: f64, hi: f64| {
            let spec = stft(x, &cfg.stft).unwrap();
            let mask = Array2::from_shape_fn((spec.num_frames(), spec.num_bins()), |(_, k)| {
                let f = cfg.stft.bin_frequency(k);
                if f >= lo && f < hi {
                    1.0
                } else {
                    0.0
                }
            });
            istft(&spec.masked(&mask).unwrap()).unwrap()
        };
        let target = band(&white(len, 3), 100.0, 2_000.0);
        let interferer: Vec<f64> = band(&white(len, 4), 4_000.0, 8_001.0).iter().map(|v| 20.0 * v).collect();
        let clean = MultichannelRecording::new(16_000.0, vec![target.clone(), shifted(&target, 10)]).unwrap();
        let mixed = MultichannelRecording::new(
            16_000.0,
            vec![
                target.iter().zip(shifted(&interferer, 25)).map(|(a, b)| a + b).collect(),
                shifted(&target, 10).iter().zip(&interferer).map(|(a, b)| a + b).collect(),
            ],
        )
        .unwrap();
        let mask = TfMask::new(Array2::from_shape_fn(
            (cfg.stft.num_frames(len), cfg.stft.num_bins()),
            |(_, k)| if cfg.stft.bin_frequency(k) < 2_000.0 { 1.0 } else { 0.0 },
        ))
        .unwrap();
        let model = model_for(2, &[0, 1], &[1.0, 0.5]);
        let unmasked = estimate_delays(&mixed, &model, &[0], &[full_mask(len, &cfg)], &cfg).unwrap();
        assert_eq!(unmasked.get(1, 0), Some(-25.0));
        let a = estimate_delays(&clean, &model, &[0], std::slice::from_ref(&mask), &cfg).unwrap();
        let b = estimate_delays(&mixed, &model, &[0], &[mask], &cfg).unwrap();
        assert_eq!(a.get(1, 0), Some(10.0));
        assert_eq!(a, b);
    }

    #[test]
    fn single_mic_cluster_passes_signal_through() {
        let x = white(8000, 5);
        let rec = MultichannelRecording::new(16_000.0, vec![x.clone(), white(8000, 6)]).unwrap();
        let model = model_for(2, &[0], &[1.0]);
        let mut d = DelaySet::new(2, 2);
        d.set(0, 0, 0.0);
        let y = dsb(&rec, &model, 0, &d, &SeparationConfig::default()).unwrap();
        assert!(y.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn aligned_copies_sum_to_the_common_signal() {
        let len = 16_000;
        let mut s = white(len, 8);
        s[..1000].fill(0.0);
        s[len - 1000..].fill(0.0);
        let shifts = [0usize, 7, 19, 40];
        let rec = MultichannelRecording::new(16_000.0, shifts.iter().map(|&d| shifted(&s, d)).collect()).unwrap();
        let model = model_for(5, &[0, 1, 2, 3], &[1.0, 0.9, 0.8, 0.7]);
        let rec = MultichannelRecording::new(
            16_000.0,
            rec.channels().iter().cloned().chain([white(len, 9)]).collect(),
        )
        .unwrap();
        let mut d = DelaySet::new(5, 2);
        for (m, &sh) in shifts.iter().enumerate() {
            d.set(m, 0, sh as f64);
        }
        let y = dsb(&rec, &model, 0, &d, &SeparationConfig::default()).unwrap();
        let err: f64 = y.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((err / energy(&s)).sqrt() < 1e-3);
    }

    #[test]
    fn fmva_weights_and_degenerate_cases() {
        let x = white(8000, 10);
        let y = shifted(&x, 3);
        let rec = MultichannelRecording::new(16_000.0, vec![x.clone(), y.clone(), white(8000, 11)]).unwrap();
        let cfg = SeparationConfig::default();
        let mut d = DelaySet::new(3, 2);
        d.set(0, 0, 0.0);
        d.set(1, 0, 3.0);

        let uniform = model_for(3, &[0, 1], &[0.6, 0.6]);
        let a = dsb(&rec, &uniform, 0, &d, &cfg).unwrap();
        let b = fmva_dsb(&rec, &uniform, 0, &d, &cfg).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-9));

        // An all-zero row ties and lands in cluster 0.
        let one_hot = model_for(3, &[0, 1], &[1.0, 0.0]);
        assert_eq!(one_hot.members(0), vec![0, 1]);
        let w = fmva_weights(&one_hot, 0).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
        let out = fmva_dsb(&rec, &one_hot, 0, &d, &cfg).unwrap();
        assert!(out.iter().zip(&x).all(|(p, q)| (p - q).abs() < 1e-9));

        let w = fmva_weights(&model_for(3, &[0, 1], &[0.3, 0.9]), 0).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);

        let mut zero = one_hot.b.clone();
        zero[[0, 0]] = 0.0;
        zero[[0, 1]] = 0.0;
        let zero = ClusterModel::from_memberships(zero, vec![]).unwrap();
        assert!(matches!(fmva_weights(&zero, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn empty_cluster_is_an_error() {
        let rec = MultichannelRecording::new(16_000.0, vec![white(4000, 1), white(4000, 2)]).unwrap();
        let model = model_for(2, &[], &[]);
        let d = DelaySet::new(2, 2);
        assert!(matches!(
            dsb(&rec, &model, 0, &d, &SeparationConfig::default()),
            Err(Error::EmptyCluster(0))
        ));
    }
}
