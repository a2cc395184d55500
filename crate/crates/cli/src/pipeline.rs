//! Per-scenario processing shared by the subcommands.

use std::panic::{catch_unwind, AssertUnwindSafe};

use anyhow::{bail, ensure, Context, Result};
use clusep_core::classical::separate_classical;
use clusep_core::clustering::{best_label_mapping, coherence_matrix, nmf_cluster, speech_clusters};
use clusep_core::metrics::{score_estimates, MetricsRow};
use clusep_core::neural::forward;
use clusep_core::room::{dry_sources, render_scene_with, sample_scenario, RenderOptions, RenderedScene, Scenario};
use clusep_core::{ClusterModel, CoherenceMatrix, MultichannelRecording, SeparationConfig, WeightBundle};
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{scenario_id, MethodSpec, RunConfig, TargetKind};

/// A sampled and rendered scene with its dry sources.
pub struct GeneratedScene {
    pub id: String,
    pub scenario: Scenario,
    pub dry: Vec<Vec<f64>>,
    pub scene: RenderedScene,
}

pub fn generate(cfg: &RunConfig, index: usize) -> Result<GeneratedScene> {
    let seed = cfg.scenario_seed(index);
    let scenario = sample_scenario(cfg.kind, &cfg.sampler, seed)?;
    let dry = dry_sources(&scenario, cfg.samples());
    let opts = RenderOptions {
        snr_reference: cfg.snr_reference,
        max_order: cfg.max_order,
    };
    let scene = render_scene_with(&scenario, &dry, &opts)?;
    Ok(GeneratedScene {
        id: scenario_id(index),
        scenario,
        dry,
        scene,
    })
}

/// Coherence and the factorised cluster model of a recording.
pub fn cluster(cfg: &RunConfig, mix: &MultichannelRecording) -> Result<(CoherenceMatrix, ClusterModel)> {
    ensure!(
        mix.num_channels() >= cfg.num_clusters,
        "{} microphones cannot form {} clusters",
        mix.num_channels(),
        cfg.num_clusters
    );
    let stft = clusep_core::StftConfig {
        sample_rate: mix.sample_rate(),
        ..cfg.stft
    };
    let coherence = coherence_matrix(mix, &stft)?;
    let model = nmf_cluster(&coherence, cfg.num_clusters, &cfg.nmf)?;
    Ok((coherence, model))
}

/// How well a cluster model matches the scene geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterAccuracy {
    /// Microphones within the radius assigned to their nearest source's cluster.
    pub correct: usize,
    /// Microphones within `radius_factor` critical distances of their nearest source.
    pub considered: usize,
    /// Matched clusters whose reference lies within the critical distance of
    /// its source.
    pub references_within: usize,
    pub sources: usize,
}

impl ClusterAccuracy {
    pub fn assignment_rate(&self) -> f64 {
        if self.considered == 0 {
            1.0
        } else {
            self.correct as f64 / self.considered as f64
        }
    }

    pub fn reference_rate(&self) -> f64 {
        self.references_within as f64 / self.sources.max(1) as f64
    }
}

pub const ACCURACY_RADIUS_FACTOR: f64 = 1.5;

/// Sources are matched to clusters by the injective relabeling that agrees
/// with the most nearest-source labels.
pub fn cluster_accuracy(scenario: &Scenario, model: &ClusterModel) -> Result<ClusterAccuracy> {
    let rc = scenario.critical_distance()?;
    ensure!(
        model.num_mics() == scenario.mics.len(),
        "model has {} microphones, scenario {}",
        model.num_mics(),
        scenario.mics.len()
    );
    let dist = |m: usize, s: usize| -> f64 {
        scenario.mics[m]
            .iter()
            .zip(&scenario.sources[s])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let truth: Vec<Option<usize>> = (0..scenario.mics.len())
        .map(|m| {
            let s = scenario.nearest_source(m);
            (dist(m, s) <= ACCURACY_RADIUS_FACTOR * rc).then_some(s)
        })
        .collect();
    let (mut mapping, correct, considered) = best_label_mapping(&model.assignments, model.num_clusters, &truth)?;
    // Sources without a nearby microphone take the lowest unused clusters.
    let mut spare = (0..model.num_clusters).filter(|k| !mapping.contains(k)).collect::<Vec<_>>().into_iter();
    while mapping.len() < scenario.sources.len() {
        mapping.push(spare.next().context("more sources than clusters")?);
    }
    let references_within = (0..scenario.sources.len())
        .filter(|&s| dist(model.reference[mapping[s]], s) <= rc)
        .count();
    Ok(ClusterAccuracy {
        correct,
        considered,
        references_within,
        sources: scenario.sources.len(),
    })
}

/// Estimates and the reference microphone each belongs to.
pub struct MethodOutput {
    pub method: MethodSpec,
    pub clusters: Vec<usize>,
    pub references: Vec<usize>,
    pub estimates: Vec<Vec<f64>>,
}

pub fn separation_config(cfg: &RunConfig, scenario: Option<&Scenario>, sample_rate: f64) -> SeparationConfig {
    let base = match scenario {
        Some(s) => SeparationConfig::for_room(&s.room),
        None => SeparationConfig::default(),
    };
    SeparationConfig {
        stft: clusep_core::StftConfig {
            sample_rate,
            ..cfg.stft
        },
        max_lag: cfg.max_lag.unwrap_or(base.max_lag),
    }
}

/// Runs the network on each speech cluster's members, with the cluster
/// reference as the reference microphone.
pub fn neural_separate(
    mix: &MultichannelRecording,
    model: &ClusterModel,
    coherence: &CoherenceMatrix,
    weights: &WeightBundle,
) -> Result<MethodOutput> {
    let clusters = speech_clusters(model, coherence, model.num_clusters.saturating_sub(1).max(1))?;
    let mut references = Vec::new();
    let mut estimates = Vec::new();
    for &c in &clusters {
        let members = model.members(c);
        let reference = model.reference[c];
        let Some(pos) = members.iter().position(|&m| m == reference) else {
            bail!("reference {reference} is not a member of cluster {c}");
        };
        let x = Array2::from_shape_fn((members.len(), mix.len()), |(i, t)| mix.channel(members[i])[t] as f32);
        let out = forward(x.view(), pos, weights)?;
        references.push(reference);
        estimates.push(out.waveform.iter().map(|&v| f64::from(v)).collect());
    }
    Ok(MethodOutput {
        method: MethodSpec::Neural(weights.config.pooling),
        clusters,
        references,
        estimates,
    })
}

pub fn run_method(
    method: MethodSpec,
    mix: &MultichannelRecording,
    model: &ClusterModel,
    coherence: &CoherenceMatrix,
    sep: &SeparationConfig,
    weights: Option<&WeightBundle>,
) -> Result<MethodOutput> {
    match method {
        MethodSpec::Classical(m) => {
            let r = separate_classical(mix, model, coherence, m, sep)?;
            Ok(MethodOutput {
                method,
                clusters: r.clusters,
                references: r.references,
                estimates: r.estimates,
            })
        }
        MethodSpec::Neural(pooling) => {
            let weights = weights.context("network weights were not generated")?;
            let mut w = weights.clone();
            w.config.pooling = pooling;
            neural_separate(mix, model, coherence, &w)
        }
    }
}

/// Direct-path images of every source at every microphone, `[source][mic]`.
pub fn direct_path_images(scenario: &Scenario, dry: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut anechoic = scenario.clone();
    anechoic.snr_db = None;
    let opts = RenderOptions {
        max_order: Some(0),
        ..RenderOptions::default()
    };
    Ok(render_scene_with(&anechoic, dry, &opts)?.targets)
}

/// Targets indexed `[source][mic]`.
pub fn targets(kind: TargetKind, g: &GeneratedScene) -> Result<Vec<Vec<Vec<f64>>>> {
    Ok(match kind {
        TargetKind::Image => g.scene.targets.clone(),
        TargetKind::Dry => {
            let mics = g.scene.mix.num_channels();
            g.dry.iter().map(|d| vec![d.clone(); mics]).collect()
        }
        TargetKind::DirectPath => direct_path_images(&g.scenario, &g.dry)?,
    })
}

pub fn weights_for(cfg: &RunConfig) -> Result<Option<WeightBundle>> {
    if cfg.methods.iter().any(|m| matches!(m, MethodSpec::Neural(_))) {
        Ok(Some(WeightBundle::generate(cfg.net, cfg.weight_seed())?))
    } else {
        Ok(None)
    }
}

/// Everything `run` records about one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub index: usize,
    pub id: String,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub accuracy: Option<ClusterAccuracy>,
    pub error: Option<String>,
}

/// Generate, render, cluster, separate with every configured method and score.
pub fn evaluate_scenario(cfg: &RunConfig, index: usize, weights: Option<&WeightBundle>) -> Result<(Vec<MetricsRow>, ClusterAccuracy)> {
    let g = generate(cfg, index)?;
    let mix = &g.scene.mix;
    let (coherence, model) = cluster(cfg, mix)?;
    let accuracy = cluster_accuracy(&g.scenario, &model)?;
    let sep = separation_config(cfg, Some(&g.scenario), mix.sample_rate());
    let targets = targets(cfg.target, &g)?;
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let out = run_method(method, mix, &model, &coherence, &sep, weights)
            .with_context(|| format!("method {method}"))?;
        rows.extend(score_estimates(&g.id, method.name(), &out.estimates, &out.references, &targets, mix)?);
    }
    Ok((rows, accuracy))
}

/// Runs `job` for every index in parallel. Errors and panics are captured
/// per index; results come back in index order.
pub fn run_isolated<T, F>(count: usize, job: F) -> Vec<std::result::Result<T, String>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    (0..count)
        .into_par_iter()
        .map(|i| match catch_unwind(AssertUnwindSafe(|| job(i))) {
            Ok(Ok(v)) => Ok(v),
            Ok(Err(e)) => Err(format!("{e:#}")),
            Err(panic) => Err(panic_message(panic.as_ref())),
        })
        .collect()
}

fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    let text = panic
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| panic.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".to_string());
    format!("panic: {text}")
}

pub fn evaluate_all(cfg: &RunConfig) -> Result<Vec<ScenarioOutcome>> {
    let weights = weights_for(cfg)?;
    let results = run_isolated(cfg.count, |i| evaluate_scenario(cfg, i, weights.as_ref()));
    Ok(results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            let (rows, accuracy, error) = match r {
                Ok((rows, acc)) => (rows, Some(acc), None),
                Err(e) => (Vec::new(), None, Some(e)),
            };
            ScenarioOutcome {
                index,
                id: scenario_id(index),
                seed: cfg.scenario_seed(index),
                rows,
                accuracy,
                error,
            }
        })
        .collect())
}
