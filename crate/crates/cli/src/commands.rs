//! The subcommands. Each returns what it wrote so callers and tests can
//! inspect it; exit codes are decided in `lib.rs`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clusep_core::clustering::coherence_matrix;
use clusep_core::metrics::{score_estimates, MetricsRow};
use clusep_core::neural::{count_multiplies, encode, segment};
use clusep_core::room::Scenario;
use clusep_core::wav::{mic_file_name, read_recording, read_wav, target_file_name, write_recording, write_wav};
use clusep_core::{ClusterModel, MultichannelRecording, WeightBundle};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{scenario_id, MethodSpec, RunConfig, TargetKind};
use crate::pipeline::{
    cluster, cluster_accuracy, direct_path_images, evaluate_all, generate, run_isolated, run_method, separation_config, ClusterAccuracy,
    ScenarioOutcome,
};
use crate::report::{write_csv, write_manifest, write_run, MANIFEST_CSV};

pub const SCENARIO_JSON: &str = "scenario.json";
pub const MODEL_JSON: &str = "cluster_model.json";
pub const CLUSTER_SUMMARY: &str = "cluster_summary.txt";
pub const ESTIMATES_JSON: &str = "estimates.json";
pub const METRICS_CSV: &str = "metrics.csv";

pub fn dry_file_name(source: usize) -> String {
    format!("dry_{source}.wav")
}

pub fn direct_file_name(source: usize, mic: usize) -> String {
    format!("direct{source}_mic{mic}.wav")
}

/// Per-scenario status of a batch command.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStatus {
    pub id: String,
    pub seed: u64,
    pub error: Option<String>,
}

impl BatchStatus {
    pub fn failures(statuses: &[BatchStatus]) -> usize {
        statuses.iter().filter(|s| s.error.is_some()).count()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Samples and renders `cfg.count` scenes into `cfg.out/<id>/`, plus a
/// manifest of all of them.
pub fn cmd_datagen(cfg: &RunConfig) -> Result<Vec<BatchStatus>> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let results = run_isolated(cfg.count, |i| {
        let g = generate(cfg, i)?;
        let dir = cfg.out.join(&g.id);
        fs::create_dir_all(&dir)?;
        write_json(&dir.join(SCENARIO_JSON), &g.scenario)?;
        write_recording(&dir, &g.scene.mix)?;
        let fs_rate = g.scene.mix.sample_rate();
        for (s, per_mic) in g.scene.targets.iter().enumerate() {
            for (m, t) in per_mic.iter().enumerate() {
                write_wav(dir.join(target_file_name(s, m)), t, fs_rate)?;
            }
            write_wav(dir.join(dry_file_name(s)), &g.dry[s], fs_rate)?;
        }
        for (s, per_mic) in direct_path_images(&g.scenario, &g.dry)?.iter().enumerate() {
            for (m, t) in per_mic.iter().enumerate() {
                write_wav(dir.join(direct_file_name(s, m)), t, fs_rate)?;
            }
        }
        Ok(())
    });
    let statuses: Vec<BatchStatus> = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| BatchStatus {
            id: scenario_id(i),
            seed: cfg.scenario_seed(i),
            error: r.err(),
        })
        .collect();
    let manifest: Vec<(String, u64, Option<String>)> =
        statuses.iter().map(|s| (s.id.clone(), s.seed, s.error.clone())).collect();
    write_manifest(&cfg.out.join(MANIFEST_CSV), &manifest)?;
    Ok(statuses)
}

fn load_scenario(dir: &Path) -> Result<Option<Scenario>> {
    let path = dir.join(SCENARIO_JSON);
    if path.exists() {
        Ok(Some(read_json(&path)?))
    } else {
        Ok(None)
    }
}

fn load_mix(dir: &Path) -> Result<MultichannelRecording> {
    read_recording(dir).with_context(|| format!("reading {} in {}", mic_file_name(0), dir.display()))
}

#[derive(Debug, Clone)]
pub struct ClusterReport {
    pub model: ClusterModel,
    pub accuracy: Option<ClusterAccuracy>,
}

/// Clusters the microphones of one scenario directory and writes the model;
/// with the scene geometry available it also scores the assignment.
pub fn cmd_cluster(dir: &Path, cfg: &RunConfig) -> Result<ClusterReport> {
    let mix = load_mix(dir)?;
    let (_, model) = cluster(cfg, &mix)?;
    write_json(&dir.join(MODEL_JSON), &model)?;
    let accuracy = match load_scenario(dir)? {
        Some(s) => Some(cluster_accuracy(&s, &model)?),
        None => None,
    };
    let mut text = String::new();
    for c in 0..model.num_clusters {
        text.push_str(&format!(
            "cluster {c}: reference {} members {:?}\n",
            model.reference[c],
            model.members(c)
        ));
    }
    if let Some(a) = accuracy {
        text.push_str(&format!(
            "accuracy: {}/{} microphones within {} critical distances on their nearest source's cluster ({:.3})\n",
            a.correct,
            a.considered,
            crate::pipeline::ACCURACY_RADIUS_FACTOR,
            a.assignment_rate()
        ));
        text.push_str(&format!(
            "references within the critical distance: {}/{}\n",
            a.references_within, a.sources
        ));
    }
    fs::write(dir.join(CLUSTER_SUMMARY), &text)?;
    Ok(ClusterReport { model, accuracy })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateEntry {
    pub method: MethodSpec,
    pub cluster: usize,
    pub reference: usize,
    pub file: String,
}

fn load_or_cluster(dir: &Path, cfg: &RunConfig) -> Result<ClusterModel> {
    let path = dir.join(MODEL_JSON);
    if path.exists() {
        read_json(&path)
    } else {
        Ok(cmd_cluster(dir, cfg)?.model)
    }
}

fn store_estimates(dir: &Path, methods: &[MethodSpec], mut fresh: Vec<EstimateEntry>) -> Result<Vec<EstimateEntry>> {
    let path = dir.join(ESTIMATES_JSON);
    let mut entries: Vec<EstimateEntry> = if path.exists() { read_json(&path)? } else { Vec::new() };
    entries.retain(|e| !methods.contains(&e.method));
    entries.append(&mut fresh);
    entries.sort_by(|a, b| a.method.name().cmp(b.method.name()).then(a.cluster.cmp(&b.cluster)));
    write_json(&path, &entries)?;
    Ok(entries)
}

fn separate_with(dir: &Path, cfg: &RunConfig, methods: &[MethodSpec], weights: Option<&WeightBundle>) -> Result<Vec<EstimateEntry>> {
    let mix = load_mix(dir)?;
    let model = load_or_cluster(dir, cfg)?;
    let stft = clusep_core::StftConfig {
        sample_rate: mix.sample_rate(),
        ..cfg.stft
    };
    let coherence = coherence_matrix(&mix, &stft)?;
    let scenario = load_scenario(dir)?;
    let sep = separation_config(cfg, scenario.as_ref(), mix.sample_rate());
    let mut fresh = Vec::new();
    for &method in methods {
        let out = run_method(method, &mix, &model, &coherence, &sep, weights).with_context(|| format!("method {method}"))?;
        for ((est, &c), &r) in out.estimates.iter().zip(&out.clusters).zip(&out.references) {
            let file = format!("est_{}_{c}.wav", method.slug());
            write_wav(dir.join(&file), est, mix.sample_rate())?;
            fresh.push(EstimateEntry {
                method,
                cluster: c,
                reference: r,
                file,
            });
        }
    }
    store_estimates(dir, methods, fresh)
}

/// Runs the configured classical methods on one scenario directory.
pub fn cmd_separate(dir: &Path, cfg: &RunConfig) -> Result<Vec<EstimateEntry>> {
    let methods: Vec<MethodSpec> = cfg
        .methods
        .iter()
        .copied()
        .filter(|m| matches!(m, MethodSpec::Classical(_)))
        .collect();
    if methods.is_empty() {
        bail!("no classical methods selected; use nn-forward for the network");
    }
    separate_with(dir, cfg, &methods, None)
}

/// Tensor shapes of one forward pass, for debugging.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeDump {
    pub mics: usize,
    pub samples: usize,
    pub encoded: [usize; 3],
    pub chunked: [usize; 4],
    pub multiplies_mean: u64,
    pub multiplies_reference_select: u64,
}

/// Runs the network with `cfg.net.pooling` on every speech cluster of one
/// scenario directory.
pub fn cmd_nn_forward(dir: &Path, cfg: &RunConfig) -> Result<(Vec<EstimateEntry>, ShapeDump)> {
    let weights = WeightBundle::generate(cfg.net, cfg.weight_seed())?;
    let method = MethodSpec::Neural(cfg.net.pooling);
    let entries = separate_with(dir, cfg, &[method], Some(&weights))?;

    let mix = load_mix(dir)?;
    let probe = Array2::from_shape_fn((mix.num_channels(), mix.len()), |(m, t)| mix.channel(m)[t] as f32);
    let h = encode(probe.view(), &weights)?;
    let h0 = segment(h.view(), cfg.net.chunk)?;
    let counts = count_multiplies(&cfg.net, mix.num_channels(), mix.len())?;
    let dump = ShapeDump {
        mics: mix.num_channels(),
        samples: mix.len(),
        encoded: h.dim().into(),
        chunked: h0.dim().into(),
        multiplies_mean: counts.mean.total(),
        multiplies_reference_select: counts.reference_select.total(),
    };
    Ok((entries, dump))
}

fn load_targets(dir: &Path, kind: TargetKind, mics: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut targets = Vec::new();
    loop {
        let s = targets.len();
        let probe = match kind {
            TargetKind::Image => dir.join(target_file_name(s, 0)),
            TargetKind::Dry => dir.join(dry_file_name(s)),
            TargetKind::DirectPath => dir.join(direct_file_name(s, 0)),
        };
        if !probe.exists() {
            break;
        }
        let per_mic = match kind {
            TargetKind::Image => (0..mics)
                .map(|m| Ok(read_wav(dir.join(target_file_name(s, m)))?.0))
                .collect::<Result<Vec<_>>>()?,
            TargetKind::Dry => vec![read_wav(&probe)?.0; mics],
            TargetKind::DirectPath => (0..mics)
                .map(|m| Ok(read_wav(dir.join(direct_file_name(s, m)))?.0))
                .collect::<Result<Vec<_>>>()?,
        };
        targets.push(per_mic);
    }
    if targets.is_empty() {
        bail!("no target signals in {}", dir.display());
    }
    Ok(targets)
}

/// Scores every stored estimate of one scenario directory.
pub fn cmd_eval(dir: &Path, cfg: &RunConfig) -> Result<Vec<MetricsRow>> {
    let mix = load_mix(dir)?;
    let path = dir.join(ESTIMATES_JSON);
    if !path.exists() {
        bail!("no estimates in {}; run separate or nn-forward first", dir.display());
    }
    let entries: Vec<EstimateEntry> = read_json(&path)?;
    let targets = load_targets(dir, cfg.target, mix.num_channels())?;
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_string());
    let mut methods: Vec<MethodSpec> = entries.iter().map(|e| e.method).collect();
    methods.dedup();
    let mut rows = Vec::new();
    for method in methods {
        let mine: Vec<&EstimateEntry> = entries.iter().filter(|e| e.method == method).collect();
        let estimates = mine
            .iter()
            .map(|e| Ok(read_wav(dir.join(&e.file))?.0))
            .collect::<Result<Vec<_>>>()?;
        let references: Vec<usize> = mine.iter().map(|e| e.reference).collect();
        rows.extend(score_estimates(&id, method.name(), &estimates, &references, &targets, &mix)?);
    }
    write_csv(&dir.join(METRICS_CSV), &rows)?;
    Ok(rows)
}

/// Full batch: every scenario generated, clustered, separated and scored in
/// memory; reports go to `cfg.out`.
pub fn cmd_run(cfg: &RunConfig) -> Result<Vec<ScenarioOutcome>> {
    let outcomes = evaluate_all(cfg)?;
    write_run(&cfg.out, &outcomes, cfg.plots)?;
    Ok(outcomes)
}
