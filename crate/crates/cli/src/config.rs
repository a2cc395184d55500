use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clusep_core::room::{SamplerConfig, SnrReference};
use clusep_core::{Method, NetConfig, NmfOptions, Pooling, ScenarioKind, StftConfig};
use serde::{Deserialize, Serialize};

/// A separation method as named on the command line and in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MethodSpec {
    Classical(Method),
    Neural(Pooling),
}

impl MethodSpec {
    pub fn name(self) -> &'static str {
        match self {
            MethodSpec::Classical(m) => m.name(),
            MethodSpec::Neural(Pooling::Mean) => "neural-mean",
            MethodSpec::Neural(Pooling::ReferenceSelect) => "neural-ref",
        }
    }

    /// File-name friendly form.
    pub fn slug(self) -> String {
        self.name().replace('+', "-")
    }

    pub fn defaults() -> Vec<MethodSpec> {
        Method::DEFAULT.iter().copied().map(MethodSpec::Classical).collect()
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "neural-mean" => Ok(MethodSpec::Neural(Pooling::Mean)),
            "neural-ref" | "neural-reference-select" => Ok(MethodSpec::Neural(Pooling::ReferenceSelect)),
            other => other
                .parse::<Method>()
                .map(MethodSpec::Classical)
                .map_err(|_| anyhow::anyhow!("unknown method '{other}'")),
        }
    }
}

impl TryFrom<String> for MethodSpec {
    type Error = anyhow::Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MethodSpec> for String {
    fn from(m: MethodSpec) -> String {
        m.name().to_string()
    }
}

pub fn parse_methods(list: &str) -> Result<Vec<MethodSpec>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// What an estimate is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// Reverberant image of the source at the cluster's reference microphone.
    #[default]
    Image,
    /// The dry source signal.
    Dry,
    /// Direct-path component of the source at the reference microphone,
    /// without reflections.
    DirectPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ScenarioKind,
    pub count: usize,
    pub seed: u64,
    pub duration_secs: f64,
    pub sampler: SamplerConfig,
    pub snr_reference: SnrReference,
    /// Image-source order cap; unset uses the room's own bound.
    pub max_order: Option<usize>,
    pub stft: StftConfig,
    pub nmf: NmfOptions,
    /// Clusters fitted per scene: one per talker plus one for noise.
    pub num_clusters: usize,
    /// Delay search bound in samples; unset derives it from the room.
    pub max_lag: Option<usize>,
    pub net: NetConfig,
    /// Seed of the network weights; unset uses `seed`.
    pub weight_seed: Option<u64>,
    pub methods: Vec<MethodSpec>,
    pub target: TargetKind,
    pub out: PathBuf,
    /// Also write gnuplot data files.
    pub plots: bool,
    /// Worker threads; unset uses every core.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Clustered,
            count: 50,
            seed: 0,
            duration_secs: 4.0,
            sampler: SamplerConfig::default(),
            snr_reference: SnrReference::default(),
            max_order: None,
            stft: StftConfig::default(),
            nmf: NmfOptions::default(),
            num_clusters: 3,
            max_lag: None,
            net: NetConfig::default(),
            weight_seed: None,
            methods: MethodSpec::defaults(),
            target: TargetKind::Image,
            out: PathBuf::from("out"),
            plots: false,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.stft.validate()?;
        self.net.validate()?;
        if self.count == 0 {
            bail!("scenario count must be positive");
        }
        if !(self.duration_secs > 0.0) {
            bail!("duration must be positive");
        }
        if self.num_clusters < 2 {
            bail!("need at least two clusters (talkers and noise)");
        }
        if self.methods.is_empty() {
            bail!("no methods selected");
        }
        if self.nmf.restarts == 0 || self.nmf.max_iter == 0 {
            bail!("factorisation needs at least one restart and one iteration");
        }
        if self.stft.sample_rate != self.sampler.sample_rate {
            bail!(
                "STFT sample rate {} differs from the sampler's {}",
                self.stft.sample_rate,
                self.sampler.sample_rate
            );
        }
        if self.threads == Some(0) {
            bail!("thread count must be positive");
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration_secs * self.sampler.sample_rate).round() as usize
    }

    pub fn weight_seed(&self) -> u64 {
        self.weight_seed.unwrap_or(self.seed)
    }

    /// Seed of scenario `index`; distinct for every index under one base seed.
    pub fn scenario_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
    }
}

pub fn scenario_id(index: usize) -> String {
    format!("s{index:04}")
}
