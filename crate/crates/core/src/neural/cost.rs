//! Analytic multiply counts mirroring the forward pass.
//!
//! Activations, exponentials and comparisons are not counted; normalisation
//! counts the squaring, the scaling and the gain.

use serde::Serialize;

use super::{NetConfig, BLOCKS_AFTER_POOLING, BLOCKS_BEFORE_POOLING};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct StageCounts {
    pub encoder: u64,
    pub pre_pooling: u64,
    pub pooling: u64,
    pub post_pooling: u64,
    pub decoder: u64,
}

impl StageCounts {
    pub fn total(&self) -> u64 {
        self.encoder + self.pre_pooling + self.pooling + self.post_pooling + self.decoder
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MultiplyCounts {
    pub mean: StageCounts,
    pub reference_select: StageCounts,
}

impl MultiplyCounts {
    /// Multiplies saved by selecting the reference instead of averaging.
    pub fn savings(&self) -> u64 {
        self.mean.total() - self.reference_select.total()
    }
}

fn layer_norm(rows: u64, n: u64) -> u64 {
    3 * rows * n
}

fn transformer(batch: u64, len: u64, n: u64, heads: u64, hidden: u64) -> u64 {
    let rows = batch * len;
    let projections = 4 * rows * n * n;
    // Scores and weighted values over all heads, plus scaling and
    // normalising each score.
    let attention = batch * (2 * len * len * n + 2 * heads * len * len);
    let ffn = 2 * rows * n * hidden;
    projections + attention + ffn + 2 * layer_norm(rows, n)
}

fn tac(mics: u64, positions: u64, n: u64) -> u64 {
    let per_mic = 2 * positions * n * n + layer_norm(positions, n);
    let shared = positions * n + 2 * positions * n * n;
    mics * per_mic + shared
}

/// Per-stage counts for both pooling variants on `mics` microphones and
/// `samples` input samples.
pub fn count_multiplies(cfg: &NetConfig, mics: usize, samples: usize) -> Result<MultiplyCounts> {
    cfg.validate()?;
    let frames = cfg.frames(samples)? as u64;
    let m = mics as u64;
    let n = cfg.feature_dim as u64;
    let k = cfg.chunk as u64;
    let p = cfg.chunks(frames as usize) as u64;
    let heads = cfg.heads as u64;
    let hidden = cfg.ffn_dim() as u64;
    let positions = k * p;

    let block = transformer(p, k, n, heads, hidden) + transformer(k, p, n, heads, hidden);
    let tacs = (BLOCKS_BEFORE_POOLING as u64 - 1) * tac(m, positions, n);
    let shared_blocks = (BLOCKS_BEFORE_POOLING as u64 - 1) * m * block;
    let encoder = m * frames * n * cfg.kernel as u64;
    let post_pooling = BLOCKS_AFTER_POOLING as u64 * block + positions * n * n + n * frames;
    let decoder = n * frames + n * frames * cfg.kernel as u64;

    let mean = StageCounts {
        encoder,
        pre_pooling: shared_blocks + tacs + m * block,
        pooling: positions * n,
        post_pooling,
        decoder,
    };
    let reference_select = StageCounts {
        pre_pooling: shared_blocks + tacs + block,
        pooling: 0,
        ..mean
    };
    Ok(MultiplyCounts { mean, reference_select })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn post_pooling_does_not_depend_on_mics() {
        let cfg = NetConfig::default();
        let one = count_multiplies(&cfg, 1, 16_000).unwrap();
        for m in 2..=16 {
            let c = count_multiplies(&cfg, m, 16_000).unwrap();
            assert_eq!(c.mean.post_pooling, one.mean.post_pooling);
            assert_eq!(c.reference_select.post_pooling, one.reference_select.post_pooling);
            assert_eq!(c.mean.decoder, one.mean.decoder);
        }
    }

    #[test]
    fn pre_pooling_grows_by_a_constant_per_mic() {
        let cfg = NetConfig::default();
        let counts: Vec<_> = (1..=16).map(|m| count_multiplies(&cfg, m, 16_000).unwrap()).collect();
        for w in counts.windows(3) {
            for pick in [|c: &MultiplyCounts| c.mean.pre_pooling, |c: &MultiplyCounts| c.reference_select.pre_pooling] {
                assert_eq!(pick(&w[1]) - pick(&w[0]), pick(&w[2]) - pick(&w[1]));
            }
            assert_eq!(w[1].mean.encoder - w[0].mean.encoder, w[2].mean.encoder - w[1].mean.encoder);
        }
    }

    #[test]
    fn reference_selection_saves_a_block_per_extra_mic() {
        let cfg = NetConfig::default();
        let one = count_multiplies(&cfg, 1, 16_000).unwrap();
        // With one microphone the variants differ only by the averaging.
        assert_eq!(one.savings(), one.mean.pooling);
        let two = count_multiplies(&cfg, 2, 16_000).unwrap();
        let eight = count_multiplies(&cfg, 8, 16_000).unwrap();
        let block = two.savings() - one.savings();
        assert!(block > 0);
        assert_eq!(eight.savings(), one.savings() + 7 * block);
        assert!(eight.reference_select.total() < eight.mean.total());
    }

    #[test]
    fn too_short_input_is_rejected() {
        assert!(count_multiplies(&NetConfig::default(), 2, 7).is_err());
    }
}
