//! Deterministic inputs shared by the benchmarks.

use clusep_core::clustering::coherence_matrix;
use clusep_core::room::{dry_sources, render_scene_with, sample_scenario, RenderOptions, SamplerConfig};
use clusep_core::{CoherenceMatrix, MultichannelRecording, Scenario, ScenarioKind, StftConfig};

pub const SAMPLE_RATE: f64 = 16_000.0;

/// A clustered scene of `secs` seconds with its dry sources.
pub fn scene(secs: f64, seed: u64) -> (Scenario, Vec<Vec<f64>>) {
    let scenario = sample_scenario(ScenarioKind::Clustered, &SamplerConfig::default(), seed).expect("default sampler");
    let dry = dry_sources(&scenario, (secs * SAMPLE_RATE) as usize);
    (scenario, dry)
}

/// The rendered microphone mixture of [`scene`].
pub fn mixture(secs: f64, seed: u64) -> MultichannelRecording {
    let (scenario, dry) = scene(secs, seed);
    render_scene_with(&scenario, &dry, &RenderOptions::default())
        .expect("render")
        .mix
}

pub fn coherence(mix: &MultichannelRecording) -> CoherenceMatrix {
    coherence_matrix(mix, &StftConfig::default()).expect("coherence")
}
