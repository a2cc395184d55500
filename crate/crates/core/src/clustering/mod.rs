//! Blind microphone clustering from pairwise coherence.
//!
//! The coherence matrix `C` is approximated as `B Bᵀ` off the diagonal with a
//! non-negative membership matrix `B` (microphones × clusters). Each
//! microphone joins the cluster where its membership is largest and each
//! cluster's reference is the microphone with the largest membership in it.

mod coherence;
mod nmf;

pub use coherence::{coherence_matrix, CoherenceMatrix, MIN_COHERENCE_FRAMES};
pub use nmf::{nmf_cluster, nmf_restarts, objective, NmfOptions, NmfRun};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the largest entry; the lowest index wins exact ties.
pub fn argmax(values: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// Fuzzy membership values, microphones × clusters.
    #[serde(with = "rows")]
    pub b: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Reference microphone of each cluster.
    pub reference: Vec<usize>,
    pub objective_trace: Vec<f64>,
    pub num_clusters: usize,
}

impl ClusterModel {
    /// Derives hard assignments and references from memberships.
    pub fn from_memberships(b: Array2<f64>, objective_trace: Vec<f64>) -> Result<Self> {
        if b.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "memberships must be finite and non-negative".into(),
            ));
        }
        if b.ncols() == 0 || b.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!("membership matrix {:?}", b.dim())));
        }
        let assignments = b.rows().into_iter().map(argmax).collect();
        let reference = select_reference_from(&b);
        Ok(Self {
            num_clusters: b.ncols(),
            b,
            assignments,
            reference,
            objective_trace,
        })
    }

    pub fn num_mics(&self) -> usize {
        self.b.nrows()
    }

    /// Microphones assigned to `cluster`, ascending.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.num_mics())
            .filter(|&m| self.assignments[m] == cluster)
            .collect()
    }

    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

fn select_reference_from(b: &Array2<f64>) -> Vec<usize> {
    b.columns().into_iter().map(argmax).collect()
}

/// Microphone with the highest membership in each cluster.
pub fn select_reference(model: &ClusterModel) -> Vec<usize> {
    select_reference_from(&model.b)
}

fn mean_intra_coherence(members: &[usize], c: &CoherenceMatrix) -> f64 {
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, &a) in members.iter().enumerate() {
        for &b in &members[i + 1..] {
            sum += c.get(a, b);
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        sum / pairs as f64
    }
}

/// Cluster whose members are least coherent with each other. A singleton
/// scores zero.
pub fn identify_noise_cluster(model: &ClusterModel, c: &CoherenceMatrix) -> Result<usize> {
    if model.num_clusters < 2 {
        return Err(Error::InvalidConfig("need at least two clusters".into()));
    }
    if c.size() != model.num_mics() {
        return Err(Error::ShapeMismatch(format!(
            "coherence for {} mics, model for {}",
            c.size(),
            model.num_mics()
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for k in 0..model.num_clusters {
        let members = model.members(k);
        if members.is_empty() {
            return Err(Error::EmptyCluster(k));
        }
        let score = mean_intra_coherence(&members, c);
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((k, score));
        }
    }
    Ok(best.map(|(k, _)| k).unwrap_or(0))
}

/// Clusters that carry a talker, ascending.
///
/// With every cluster populated, the noise cluster is dropped. When hard
/// assignment leaves clusters empty, the populated ones are kept, minus the
/// least coherent if there are still more than `num_speakers`.
pub fn speech_clusters(
    model: &ClusterModel,
    c: &CoherenceMatrix,
    num_speakers: usize,
) -> Result<Vec<usize>> {
    let populated: Vec<usize> = (0..model.num_clusters)
        .filter(|&k| !model.members(k).is_empty())
        .collect();
    if populated.len() == model.num_clusters {
        let noise = identify_noise_cluster(model, c)?;
        return Ok(populated.into_iter().filter(|&k| k != noise).collect());
    }
    if populated.len() <= num_speakers {
        return Ok(populated);
    }
    let noise = populated
        .iter()
        .copied()
        .map(|k| (k, mean_intra_coherence(&model.members(k), c)))
        .fold(None, |best: Option<(usize, f64)>, (k, s)| match best {
            Some((_, bs)) if bs <= s => best,
            _ => Some((k, s)),
        })
        .map(|(k, _)| k);
    Ok(populated.into_iter().filter(|&k| Some(k) != noise).collect())
}

/// Best injective relabeling of truth labels onto clusters.
///
/// `truth[m]` is the label a microphone should carry (`None` excludes it).
/// Returns `(mapping, correct, considered)` where `mapping[label]` is the
/// cluster that label is matched to.
pub fn best_label_mapping(
    assignments: &[usize],
    num_clusters: usize,
    truth: &[Option<usize>],
) -> Result<(Vec<usize>, usize, usize)> {
    if assignments.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: assignments.len(),
            got: truth.len(),
        });
    }
    let labels = truth.iter().flatten().max().map_or(0, |l| l + 1);
    if labels > num_clusters {
        return Err(Error::InvalidConfig(format!(
            "{labels} labels cannot map onto {num_clusters} clusters"
        )));
    }
    let mut counts = vec![vec![0usize; num_clusters]; labels];
    let mut considered = 0;
    for (&a, t) in assignments.iter().zip(truth) {
        if let Some(l) = *t {
            counts[l][a] += 1;
            considered += 1;
        }
    }
    let mut best = (Vec::new(), 0usize);
    let mut current = Vec::with_capacity(labels);
    search_mapping(&counts, num_clusters, &mut current, 0, &mut best);
    Ok((best.0, best.1, considered))
}

fn search_mapping(
    counts: &[Vec<usize>],
    num_clusters: usize,
    current: &mut Vec<usize>,
    score: usize,
    best: &mut (Vec<usize>, usize),
) {
    if current.len() == counts.len() {
        if best.0.is_empty() || score > best.1 {
            *best = (current.clone(), score);
        }
        return;
    }
    let label = current.len();
    for k in 0..num_clusters {
        if current.contains(&k) {
            continue;
        }
        current.push(k);
        search_mapping(counts, num_clusters, current, score + counts[label][k], best);
        current.pop();
    }
}

mod rows {
    use ndarray::Array2;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(D::Error::custom("ragged matrix"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Array2::from_shape_vec((flat.len() / cols.max(1), cols), flat).map_err(D::Error::custom)
    }
}
