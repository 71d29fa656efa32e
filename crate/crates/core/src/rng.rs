//! Deterministic random number streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream, keyed by
//! the master seed, a stage label and an index. Streams never overlap, so
//! adding or removing a consumer (for instance an extra estimator) leaves all
//! other draws bit-identical, and results do not depend on how work is split
//! across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stage labels for stream separation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// User placement and shadow fading.
    Drop,
    /// Small-scale fading realizations.
    Channel,
    /// Uplink pilot noise.
    Pilot,
    /// Downlink data symbols and receiver noise.
    Downlink,
    /// Dataset bookkeeping (typical-user choice, shuffling, splits).
    Dataset,
    /// Network weight initialization.
    Init,
    /// Mini-batch ordering during training.
    Batch,
    /// Free-form experiments and tests.
    Trial,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Drop,
        Stage::Channel,
        Stage::Pilot,
        Stage::Downlink,
        Stage::Dataset,
        Stage::Init,
        Stage::Batch,
        Stage::Trial,
    ];

    /// Key word mixed into every stream of this stage.
    pub fn tag(self) -> u64 {
        match self {
            Stage::Drop => 1,
            Stage::Channel => 2,
            Stage::Pilot => 3,
            Stage::Downlink => 4,
            Stage::Dataset => 5,
            Stage::Init => 6,
            Stage::Batch => 7,
            Stage::Trial => 8,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stage::Drop => "drop",
            Stage::Channel => "channel",
            Stage::Pilot => "pilot",
            Stage::Downlink => "downlink",
            Stage::Dataset => "dataset",
            Stage::Init => "init",
            Stage::Batch => "batch",
            Stage::Trial => "trial",
        }
    }
}

pub type StreamRng = ChaCha12Rng;

/// Factory of independent streams derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream for `(stage, index)`.
    pub fn stream(&self, stage: Stage, index: u64) -> StreamRng {
        self.keyed(stage, index, 0, 0)
    }

    /// Stream for `(stage, drop, block)`. Disjoint from every [`Self::stream`]
    /// output.
    pub fn block_stream(&self, stage: Stage, drop: u64, block: u64) -> StreamRng {
        self.keyed(stage, drop, 1, block)
    }

    fn keyed(&self, stage: Stage, index: u64, kind: u64, word_stream: u64) -> StreamRng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&stage.tag().to_le_bytes());
        key[16..24].copy_from_slice(&index.to_le_bytes());
        key[24..].copy_from_slice(&kind.to_le_bytes());
        let mut rng = ChaCha12Rng::from_seed(key);
        rng.set_stream(word_stream);
        rng
    }
}
