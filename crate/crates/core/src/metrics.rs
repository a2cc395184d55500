//! Scale-invariant SDR and per-scenario scoring.

use serde::{Deserialize, Serialize};

use crate::classical::SeparationResult;
use crate::error::{Error, Result};
use crate::recording::MultichannelRecording;

/// Bound on reported values, reached when the residual vanishes.
pub const SI_SDR_CAP_DB: f64 = 100.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scale-invariant signal-to-distortion ratio in dB, clamped to
/// `±SI_SDR_CAP_DB`. A silent estimate scores the lower bound.
pub fn si_sdr(est: &[f64], target: &[f64]) -> Result<f64> {
    if est.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            got: est.len(),
        });
    }
    let tt = dot(target, target);
    if tt == 0.0 {
        return Err(Error::ZeroEnergy("si-sdr target".into()));
    }
    let alpha = dot(est, target) / tt;
    let signal = alpha * alpha * tt;
    let residual: f64 = est
        .iter()
        .zip(target)
        .map(|(e, t)| (alpha * t - e).powi(2))
        .sum();
    if signal == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    if residual <= signal * 1e-10 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (signal / residual).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario_id: String,
    pub method: String,
    /// Source the estimate was matched to.
    pub speaker: usize,
    pub si_sdr_db: f64,
    /// Gain over the unprocessed reference microphone, same target.
    pub improvement_db: f64,
    /// The SI-SDR-maximising pairing differs from pairing each estimate with
    /// the source that is strongest at its reference microphone.
    pub permuted: bool,
}

fn best_pairing(scores: &[Vec<f64>]) -> Vec<usize> {
    fn search(
        scores: &[Vec<f64>],
        current: &mut Vec<usize>,
        total: f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let i = current.len();
        if i == scores.len() {
            if best.as_ref().is_none_or(|(b, _)| total > *b) {
                *best = Some((total, current.clone()));
            }
            return;
        }
        for s in 0..scores[i].len() {
            if !current.contains(&s) {
                current.push(s);
                search(scores, current, total + scores[i][s], best);
                current.pop();
            }
        }
    }
    let mut best = None;
    search(scores, &mut Vec::new(), 0.0, &mut best);
    best.map(|(_, p)| p).unwrap_or_default()
}

/// Scores each estimate against the reverberant image, at its reference
/// microphone, of the source it best matches. `targets` is indexed
/// `[source][mic]`. Rows come out ordered by speaker.
pub fn score_scenario(
    scenario_id: &str,
    result: &SeparationResult,
    targets: &[Vec<Vec<f64>>],
    mix: &MultichannelRecording,
) -> Result<Vec<MetricsRow>> {
    score_estimates(
        scenario_id,
        result.method.name(),
        &result.estimates,
        &result.references,
        targets,
        mix,
    )
}

/// [`score_scenario`] for estimates from any method: `estimates[i]` was
/// produced for reference microphone `references[i]`.
pub fn score_estimates(
    scenario_id: &str,
    method: &str,
    estimates: &[Vec<f64>],
    references: &[usize],
    targets: &[Vec<Vec<f64>>],
    mix: &MultichannelRecording,
) -> Result<Vec<MetricsRow>> {
    if estimates.len() != references.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates, {} references",
            estimates.len(),
            references.len()
        )));
    }
    if estimates.len() > targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates but only {} targets",
            estimates.len(),
            targets.len()
        )));
    }
    let target_at = |s: usize, mic: usize| -> Result<&[f64]> {
        targets[s]
            .get(mic)
            .map(Vec::as_slice)
            .ok_or(Error::IndexOutOfRange {
                index: mic,
                len: targets[s].len(),
            })
    };

    let mut scores = Vec::with_capacity(estimates.len());
    let mut dominant = Vec::with_capacity(estimates.len());
    for (est, &r) in estimates.iter().zip(references) {
        let row = (0..targets.len())
            .map(|s| si_sdr(est, target_at(s, r)?))
            .collect::<Result<Vec<_>>>()?;
        scores.push(row);
        let energies = (0..targets.len())
            .map(|s| target_at(s, r).map(|t| dot(t, t)))
            .collect::<Result<Vec<_>>>()?;
        let strongest = (0..energies.len()).fold(0, |b, s| if energies[s] > energies[b] { s } else { b });
        dominant.push(strongest);
    }
    let pairing = best_pairing(&scores);
    let permuted = pairing != dominant;

    let mut rows = pairing
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let r = references[i];
            let baseline = si_sdr(mix.channel(r), target_at(s, r)?)?;
            Ok(MetricsRow {
                scenario_id: scenario_id.to_string(),
                method: method.to_string(),
                speaker: s,
                si_sdr_db: scores[i][s],
                improvement_db: scores[i][s] - baseline,
                permuted,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| r.speaker);
    Ok(rows)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub count: usize,
    pub median_si_sdr_db: f64,
    pub mean_si_sdr_db: f64,
    pub median_improvement_db: f64,
    pub mean_improvement_db: f64,
}

/// Median and mean per method, ordered by method name.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<AggregateRow> {
    let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();
    methods
        .into_iter()
        .map(|m| {
            let sel: Vec<&MetricsRow> = rows.iter().filter(|r| r.method == m).collect();
            let sdr: Vec<f64> = sel.iter().map(|r| r.si_sdr_db).collect();
            let imp: Vec<f64> = sel.iter().map(|r| r.improvement_db).collect();
            AggregateRow {
                method: m.to_string(),
                count: sel.len(),
                median_si_sdr_db: median(&sdr),
                mean_si_sdr_db: mean(&sdr),
                median_improvement_db: median(&imp),
                mean_improvement_db: mean(&imp),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::Method;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn white(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed, 11);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Component of `n` orthogonal to `t`.
    fn orthogonalise(n: &[f64], t: &[f64]) -> Vec<f64> {
        let a = dot(n, t) / dot(t, t);
        n.iter().zip(t).map(|(x, y)| x - a * y).collect()
    }

    #[test]
    fn identical_and_scaled_estimates_hit_the_cap() {
        let t = white(4000, 1);
        assert_eq!(si_sdr(&t, &t).unwrap(), SI_SDR_CAP_DB);
        let twice: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&twice, &t).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn orthogonal_noise_at_a_tenth_is_ten_db() {
        let t = white(4000, 2);
        let n = orthogonalise(&white(4000, 3), &t);
        let g = (dot(&t, &t) / 10.0 / dot(&n, &n)).sqrt();
        let est: Vec<f64> = t.iter().zip(&n).map(|(a, b)| a + g * b).collect();
        assert!((si_sdr(&est, &t).unwrap() - 10.0).abs() < 1e-6);
    }

    #[test]
    fn errors_and_silent_estimate() {
        assert!(matches!(si_sdr(&[1.0], &[0.0]), Err(Error::ZeroEnergy(_))));
        assert!(matches!(si_sdr(&[1.0, 2.0], &[1.0]), Err(Error::LengthMismatch { .. })));
        assert_eq!(si_sdr(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), -SI_SDR_CAP_DB);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn scale_invariance(seed in 0u64..1000, c in prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64]) {
            let t = white(512, seed);
            let e: Vec<f64> = white(512, seed + 1).iter().zip(&t).map(|(a, b)| a + b).collect();
            let scaled: Vec<f64> = e.iter().map(|v| c * v).collect();
            let a = si_sdr(&e, &t).unwrap();
            let b = si_sdr(&scaled, &t).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn orthogonal_noise_strictly_lowers_the_score(seed in 0u64..1000, g in 0.01f64..10.0) {
            let t = white(512, seed);
            let e: Vec<f64> = white(512, seed + 7).iter().zip(&t).map(|(a, b)| 0.3 * a + b).collect();
            // Orthogonal to both t and e.
            let n = orthogonalise(&orthogonalise(&white(512, seed + 9), &t), &orthogonalise(&e, &t));
            let noisy: Vec<f64> = e.iter().zip(&n).map(|(a, b)| a + g * b).collect();
            prop_assert!(si_sdr(&noisy, &t).unwrap() < si_sdr(&e, &t).unwrap());
        }
    }

    fn two_source_scene() -> (Vec<Vec<Vec<f64>>>, MultichannelRecording) {
        let len = 4000;
        // targets[source][mic]; mic 0 hears source 0 loudest, mic 1 source 1.
        let targets = vec![
            vec![white(len, 10), white(len, 11).iter().map(|v| 0.3 * v).collect()],
            vec![white(len, 12).iter().map(|v| 0.3 * v).collect(), white(len, 13)],
        ];
        let mix = MultichannelRecording::new(
            16_000.0,
            (0..2)
                .map(|m| (0..len).map(|t| targets[0][m][t] + targets[1][m][t]).collect())
                .collect(),
        )
        .unwrap();
        (targets, mix)
    }

    fn result(estimates: Vec<Vec<f64>>, references: Vec<usize>) -> SeparationResult {
        SeparationResult {
            method: Method::Dsb,
            clusters: (0..estimates.len()).collect(),
            references,
            estimates,
            initial_masks: None,
            postfilter_masks: None,
            delays: None,
        }
    }

    #[test]
    fn reference_estimates_have_zero_improvement() {
        let (targets, mix) = two_source_scene();
        let r = result(vec![mix.channel(0).to_vec(), mix.channel(1).to_vec()], vec![0, 1]);
        let rows = score_scenario("s", &r, &targets, &mix).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|row| row.improvement_db == 0.0));
        assert_eq!(rows[0].speaker, 0);
        assert!(!rows[0].permuted);
    }

    #[test]
    fn perfect_estimates_score_the_cap() {
        let (targets, mix) = two_source_scene();
        let r = result(vec![targets[0][0].clone(), targets[1][1].clone()], vec![0, 1]);
        let rows = score_scenario("s", &r, &targets, &mix).unwrap();
        for row in &rows {
            assert_eq!(row.si_sdr_db, SI_SDR_CAP_DB);
            assert!(row.improvement_db > 0.0);
        }
    }

    #[test]
    fn estimate_order_does_not_matter() {
        let (targets, mix) = two_source_scene();
        let e0: Vec<f64> = mix.channel(0).iter().zip(&targets[0][0]).map(|(a, b)| a + b).collect();
        let e1: Vec<f64> = mix.channel(1).iter().zip(&targets[1][1]).map(|(a, b)| a + 2.0 * b).collect();
        let a = score_scenario("s", &result(vec![e0.clone(), e1.clone()], vec![0, 1]), &targets, &mix).unwrap();
        let b = score_scenario("s", &result(vec![e1, e0], vec![1, 0]), &targets, &mix).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_targets_are_an_error() {
        let (targets, mix) = two_source_scene();
        let r = result(vec![mix.channel(0).to_vec()], vec![5]);
        assert!(score_scenario("s", &r, &targets, &mix).is_err());
        let r = result(vec![mix.channel(0).to_vec(); 3], vec![0, 1, 0]);
        assert!(score_scenario("s", &r, &targets, &mix).is_err());
    }

    #[test]
    fn aggregates_per_method() {
        let row = |m: &str, s: f64| MetricsRow {
            scenario_id: "x".into(),
            method: m.into(),
            speaker: 0,
            si_sdr_db: s,
            improvement_db: s - 1.0,
            permuted: false,
        };
        let rows = [row("dsb", 1.0), row("dsb", 3.0), row("dsb", 10.0), row("a", 2.0), row("a", 4.0)];
        let agg = aggregate(&rows);
        assert_eq!(agg[0].method, "a");
        assert_eq!(agg[0].median_si_sdr_db, 3.0);
        assert_eq!(agg[1].median_si_sdr_db, 3.0);
        assert_eq!(agg[1].mean_improvement_db, 11.0 / 3.0);
        assert_eq!(agg[1].count, 3);
    }
}
