//! Cluster-informed source separation for ad-hoc distributed microphone
//! arrays.
//!
//! The crate covers the whole experimental chain:
//!
//! * [`room`] renders shoebox scenes with the image-source method and samples
//!   the two microphone-placement schemes (uniform and source-clustered).
//! * [`clustering`] groups microphones blindly from their pairwise coherence
//!   using a masked symmetric non-negative factorisation.
//! * [`classical`] runs initial masking, delay estimation, delay-and-sum
//!   beamforming (plain and membership weighted) and the binary postfilter.
//! * [`neural`] is a forward-only TAC + dual-path transformer separator with
//!   seeded weights, used to check structural properties of the network.
//! * [`metrics`] scores estimates with SI-SDR.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classical;
pub mod clustering;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod neural;
pub mod recording;
mod rng;
pub mod room;
pub mod wav;

pub use classical::{Method, SeparationConfig, SeparationResult};
pub use clustering::{ClusterModel, CoherenceMatrix, NmfOptions};
pub use dsp::{Spectrogram, StftConfig, Window};
pub use error::{Error, Result};
pub use metrics::MetricsRow;
pub use neural::{NetConfig, Pooling, WeightBundle};
pub use recording::MultichannelRecording;
pub use room::{Room, Scenario, ScenarioKind};
