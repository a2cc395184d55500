//! Forward-only multichannel mask estimator with seeded random weights.
//!
//! Waveforms are encoded per microphone by a rectified strided convolution,
//! cut into half-overlapping chunks and passed through dual-path transformer
//! blocks interleaved with transform-average-concatenate (TAC) layers. After
//! three blocks the microphone axis is pooled away, either by averaging or by
//! keeping the reference microphone only. Two more blocks and a sigmoid
//! produce a mask for the reference encoding, which a transposed convolution
//! turns back into a waveform.
//!
//! Simplification: the sequence layers are plain transformer layers whose
//! feed-forward part is position-wise (two linear maps around a ReLU). The
//! original dual-path transformer uses a recurrent layer there instead. With
//! random weights and no training this changes no tested property.
//!
//! Feature tensors are `[mic][feature][frame]`, chunked ones
//! `[mic][feature][position in chunk][chunk]`.

mod cost;
mod layers;

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub use cost::{count_multiplies, MultiplyCounts, StageCounts};
pub use layers::{LayerNorm, Linear, Tac, TransformerLayer};

/// Number of dual-path blocks before pooling; TACs sit between them.
pub const BLOCKS_BEFORE_POOLING: usize = 3;
pub const BLOCKS_AFTER_POOLING: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    #[default]
    Mean,
    ReferenceSelect,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::ReferenceSelect => "reference-select",
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "reference-select" | "ref" => Ok(Pooling::ReferenceSelect),
            other => Err(Error::InvalidConfig(format!("unknown pooling '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub kernel: usize,
    pub stride: usize,
    pub feature_dim: usize,
    pub chunk: usize,
    pub heads: usize,
    pub pooling: Pooling,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            kernel: 8,
            stride: 4,
            feature_dim: 64,
            chunk: 250,
            heads: 4,
            pooling: Pooling::Mean,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride * 2 != self.kernel {
            return Err(Error::InvalidConfig(format!(
                "stride {} must be half the kernel {}",
                self.stride, self.kernel
            )));
        }
        if self.chunk == 0 || !self.chunk.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("chunk size {} must be even and positive", self.chunk)));
        }
        if self.heads == 0 || self.feature_dim == 0 || !self.feature_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "feature dimension {} is not divisible by {} heads",
                self.feature_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Encoder frames for `samples` input samples.
    pub fn frames(&self, samples: usize) -> Result<usize> {
        if samples < self.kernel {
            return Err(Error::SignalTooShort {
                len: samples,
                frame_len: self.kernel,
            });
        }
        Ok((samples - self.kernel) / self.stride + 1)
    }

    pub fn hop(&self) -> usize {
        self.chunk / 2
    }

    /// Number of chunks covering `frames` frames.
    pub fn chunks(&self, frames: usize) -> usize {
        frames.div_ceil(self.hop())
    }

    /// Width of the feedforward layer inside each transformer.
    pub fn ffn_dim(&self) -> usize {
        2 * self.feature_dim
    }
}

/// Intra-chunk then inter-chunk transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPathBlock {
    pub intra: TransformerLayer,
    pub inter: TransformerLayer,
}

/// Which halves of a dual-path block to run; `IntraOnly` exists to check
/// that mixing across chunks happens only in the inter-chunk stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualPathStages {
    Both,
    IntraOnly,
}

impl DualPathBlock {
    /// `rows` is `(chunks * chunk) x features`, chunk-major.
    fn forward_rows(&self, rows: &mut Array2<f32>, chunk: usize, chunks: usize, stages: DualPathStages) {
        let mut seq = layers::regroup(rows, chunks, chunk, true);
        self.intra.forward(&mut seq);
        *rows = layers::ungroup(seq, true);
        if stages == DualPathStages::Both {
            let mut seq = layers::regroup(rows, chunks, chunk, false);
            self.inter.forward(&mut seq);
            *rows = layers::ungroup(seq, false);
        }
    }
}

/// Every parameter of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub config: NetConfig,
    /// `features x kernel`, no bias so silence encodes to zero.
    pub encoder: Array2<f32>,
    pub blocks: Vec<DualPathBlock>,
    pub tacs: Vec<Tac>,
    pub mask: Linear,
    /// `features x kernel`, no bias so a zero mask decodes to silence.
    pub decoder: Array2<f32>,
}

impl WeightBundle {
    /// Draws every parameter uniformly in `[-a, a]`, `a = 1/sqrt(fan_in)`.
    /// Normalisation gains start at 1 and offsets at 0, PReLU slopes at 0.25.
    pub fn generate(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = config.feature_dim;
        let mut rng = seeded(seed, 0);
        let encoder = layers::uniform(&mut rng, (n, config.kernel), config.kernel);
        let mut blocks = Vec::new();
        let mut tacs = Vec::new();
        for b in 0..BLOCKS_BEFORE_POOLING + BLOCKS_AFTER_POOLING {
            blocks.push(DualPathBlock {
                intra: TransformerLayer::random(&mut rng, n, config.ffn_dim(), config.heads),
                inter: TransformerLayer::random(&mut rng, n, config.ffn_dim(), config.heads),
            });
            if b + 1 < BLOCKS_BEFORE_POOLING {
                tacs.push(Tac::random(&mut rng, n));
            }
        }
        let mask = Linear::random(&mut rng, n, n);
        let decoder = layers::uniform(&mut rng, (n, config.kernel), n);
        Ok(Self {
            config,
            encoder,
            blocks,
            tacs,
            mask,
            decoder,
        })
    }

    /// Same weights with every bias set to zero.
    pub fn with_zero_biases(mut self) -> Self {
        for block in &mut self.blocks {
            for l in block.intra.linears_mut().into_iter().chain(block.inter.linears_mut()) {
                l.zero_bias();
            }
        }
        for tac in &mut self.tacs {
            for l in tac.linears_mut() {
                l.zero_bias();
            }
        }
        self.mask.zero_bias();
        self
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.iter().chain(&self.decoder).all(|v| v.is_finite())
            && self.blocks.iter().all(|b| b.intra.is_finite() && b.inter.is_finite())
            && self.tacs.iter().all(Tac::is_finite)
            && self.mask.is_finite()
    }
}

/// Rectified strided convolution, `[mic][sample]` to `[mic][feature][frame]`.
pub fn encode(x: ArrayView2<'_, f32>, w: &WeightBundle) -> Result<Array3<f32>> {
    let cfg = &w.config;
    let (mics, samples) = x.dim();
    let frames = cfg.frames(samples)?;
    let mut out = Array3::zeros((mics, cfg.feature_dim, frames));
    for (m, signal) in x.outer_iter().enumerate() {
        // frames x kernel patches, then one matrix product.
        let mut patches = Array2::<f32>::zeros((frames, cfg.kernel));
        for (t, mut row) in patches.outer_iter_mut().enumerate() {
            row.assign(&signal.slice(s![t * cfg.stride..t * cfg.stride + cfg.kernel]));
        }
        let mut h = w.encoder.dot(&patches.t());
        h.mapv_inplace(|v| v.max(0.0));
        out.index_axis_mut(Axis(0), m).assign(&h);
    }
    Ok(out)
}

/// Half-overlapping chunks of `chunk` frames; the tail is zero-padded.
pub fn segment(h: ArrayView3<'_, f32>, chunk: usize) -> Result<Array4<f32>> {
    if chunk == 0 || !chunk.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("chunk size {chunk} must be even and positive")));
    }
    let hop = chunk / 2;
    let (mics, features, frames) = h.dim();
    let chunks = frames.div_ceil(hop);
    let mut out = Array4::zeros((mics, features, chunk, chunks));
    for p in 0..chunks {
        let start = p * hop;
        let end = (start + chunk).min(frames);
        out.slice_mut(s![.., .., ..end - start, p])
            .assign(&h.slice(s![.., .., start..end]));
    }
    Ok(out)
}

/// Left inverse of [`segment`]: sums the chunks back and divides every frame
/// by the number of chunks covering it.
pub fn overlap_add(chunks: &Array4<f32>, frames: usize) -> Result<Array3<f32>> {
    let (mics, features, chunk, count) = chunks.dim();
    let hop = chunk / 2;
    if chunk % 2 != 0 || count != frames.div_ceil(hop.max(1)) {
        return Err(Error::ShapeMismatch(format!(
            "{count} chunks of {chunk} frames cannot cover {frames} frames"
        )));
    }
    let mut out = Array3::<f32>::zeros((mics, features, frames));
    let mut cover = vec![0u32; frames];
    for p in 0..count {
        let start = p * hop;
        let end = (start + chunk).min(frames);
        let mut dst = out.slice_mut(s![.., .., start..end]);
        dst += &chunks.slice(s![.., .., ..end - start, p]);
        for c in &mut cover[start..end] {
            *c += 1;
        }
    }
    for (t, &c) in cover.iter().enumerate() {
        if c > 1 {
            out.slice_mut(s![.., .., t]).mapv_inplace(|v| v / c as f32);
        }
    }
    Ok(out)
}

/// One microphone of a chunked tensor as `(chunks * chunk) x features` rows.
fn to_rows(mic: ndarray::ArrayView3<'_, f32>) -> Array2<f32> {
    let (features, chunk, chunks) = mic.dim();
    mic.permuted_axes([2, 1, 0])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((chunks * chunk, features))
        .expect("contiguous")
}

fn from_rows(rows: Array2<f32>, chunk: usize, chunks: usize) -> Array3<f32> {
    let features = rows.ncols();
    rows.into_shape_with_order((chunks, chunk, features))
        .expect("rows = chunks * chunk")
        .permuted_axes([2, 1, 0])
        .as_standard_layout()
        .into_owned()
}

fn split_mics(h0: &Array4<f32>) -> Vec<Array2<f32>> {
    h0.outer_iter().map(to_rows).collect()
}

fn join_mics(rows: Vec<Array2<f32>>, chunk: usize, chunks: usize) -> Array4<f32> {
    let parts: Vec<Array3<f32>> = rows.into_iter().map(|r| from_rows(r, chunk, chunks)).collect();
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::stack(Axis(0), &views).expect("equal shapes")
}

fn check_features(h0: &Array4<f32>, cfg: &NetConfig) -> Result<()> {
    let (mics, features, chunk, _) = h0.dim();
    if mics == 0 {
        return Err(Error::InvalidConfig("at least one microphone is required".into()));
    }
    if features != cfg.feature_dim || chunk != cfg.chunk {
        return Err(Error::ShapeMismatch(format!(
            "chunked features are {features}x{chunk}, network expects {}x{}",
            cfg.feature_dim, cfg.chunk
        )));
    }
    Ok(())
}

/// Runs one dual-path block on every microphone independently.
pub fn dual_path_forward(h0: &Array4<f32>, block: &DualPathBlock, stages: DualPathStages) -> Result<Array4<f32>> {
    let (_, features, chunk, chunks) = h0.dim();
    if block.intra.heads == 0 || features % block.intra.heads != 0 {
        return Err(Error::InvalidConfig(format!(
            "feature dimension {features} is not divisible by {} heads",
            block.intra.heads
        )));
    }
    let mut mics = split_mics(h0);
    for rows in &mut mics {
        block.forward_rows(rows, chunk, chunks, stages);
    }
    Ok(join_mics(mics, chunk, chunks))
}

/// Applies a TAC layer at every chunk position.
pub fn tac_forward(z: &Array4<f32>, tac: &Tac) -> Result<Array4<f32>> {
    let (mics, features, chunk, chunks) = z.dim();
    if mics == 0 {
        return Err(Error::InvalidConfig("at least one microphone is required".into()));
    }
    if tac.transform.weight.ncols() != features {
        return Err(Error::ShapeMismatch(format!(
            "TAC expects {} features, got {features}",
            tac.transform.weight.ncols()
        )));
    }
    let mut rows = split_mics(z);
    tac.forward(&mut rows);
    Ok(join_mics(rows, chunk, chunks))
}

/// Mask for the reference microphone's encoding, `features x frames`, with
/// entries in `[0, 1]`.
///
/// `reference` is required for reference selection; mean pooling ignores it
/// apart from range checking.
pub fn separator_forward(
    h0: &Array4<f32>,
    frames: usize,
    reference: Option<usize>,
    w: &WeightBundle,
) -> Result<Array2<f32>> {
    let cfg = &w.config;
    check_features(h0, cfg)?;
    let (mics, _, chunk, chunks) = h0.dim();
    if chunks != cfg.chunks(frames) {
        return Err(Error::ShapeMismatch(format!("{chunks} chunks do not cover {frames} frames")));
    }
    if let Some(r) = reference {
        if r >= mics {
            return Err(Error::IndexOutOfRange { index: r, len: mics });
        }
    }

    let mut streams = split_mics(h0);
    let last_shared = BLOCKS_BEFORE_POOLING - 1;
    for b in 0..last_shared {
        for rows in &mut streams {
            w.blocks[b].forward_rows(rows, chunk, chunks, DualPathStages::Both);
        }
        w.tacs[b].forward(&mut streams);
    }
    let last = &w.blocks[last_shared];
    let mut pooled = match cfg.pooling {
        Pooling::Mean => {
            for rows in &mut streams {
                last.forward_rows(rows, chunk, chunks, DualPathStages::Both);
            }
            layers::order_free_mean(&streams)
        }
        Pooling::ReferenceSelect => {
            let r = reference.ok_or_else(|| {
                Error::InvalidConfig("reference selection needs a reference microphone".into())
            })?;
            // The block is per microphone, so only the selected stream is needed.
            let mut rows = streams.swap_remove(r);
            last.forward_rows(&mut rows, chunk, chunks, DualPathStages::Both);
            rows
        }
    };
    for block in &w.blocks[BLOCKS_BEFORE_POOLING..] {
        block.forward_rows(&mut pooled, chunk, chunks, DualPathStages::Both);
    }
    let mut mask = w.mask.forward(pooled.view());
    layers::sigmoid_inplace(&mut mask);
    let chunked = from_rows(mask, chunk, chunks).insert_axis(Axis(0));
    Ok(overlap_add(&chunked, frames)?.index_axis_move(Axis(0), 0))
}

/// Element-wise product of a mask and one microphone's encoding.
pub fn apply_mask(mask: &Array2<f32>, features: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
    if mask.dim() != features.dim() {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} vs encoder output {:?}",
            mask.dim(),
            features.dim()
        )));
    }
    Ok(mask * &features)
}

/// Transposed convolution of masked features back to `samples` samples.
/// Samples past the last full kernel are zero.
pub fn decode(masked: &Array2<f32>, samples: usize, w: &WeightBundle) -> Result<Vec<f32>> {
    let cfg = &w.config;
    let frames = cfg.frames(samples)?;
    if masked.dim() != (cfg.feature_dim, frames) {
        return Err(Error::ShapeMismatch(format!(
            "masked features {:?}, encoder output for {samples} samples is {:?}",
            masked.dim(),
            (cfg.feature_dim, frames)
        )));
    }
    // frames x kernel contributions, then overlap-add with the stride.
    let pieces = masked.t().dot(&w.decoder);
    let mut out = vec![0f32; samples];
    for (t, piece) in pieces.outer_iter().enumerate() {
        for (o, v) in out[t * cfg.stride..].iter_mut().zip(piece) {
            *o += v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralOutput {
    /// `features x frames`.
    pub mask: Array2<f32>,
    pub waveform: Vec<f32>,
}

/// Full forward pass on a `[mic][sample]` recording.
pub fn forward(x: ArrayView2<'_, f32>, reference: usize, w: &WeightBundle) -> Result<NeuralOutput> {
    let (mics, samples) = x.dim();
    if reference >= mics {
        return Err(Error::IndexOutOfRange { index: reference, len: mics });
    }
    let h = encode(x, w)?;
    let frames = h.dim().2;
    let h0 = segment(h.view(), w.config.chunk)?;
    let mask = separator_forward(&h0, frames, Some(reference), w)?;
    let masked = apply_mask(&mask, h.index_axis(Axis(0), reference))?;
    let waveform = decode(&masked, samples, w)?;
    Ok(NeuralOutput { mask, waveform })
}
