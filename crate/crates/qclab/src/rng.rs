//! Deterministic random streams.
//!
//! One named generator backs every draw in the crate: ChaCha12, seeded by
//! expanding the 64-bit run seed with SplitMix64 (`seed_from_u64`) and split
//! into independent substreams via the ChaCha 64-bit stream parameter. The
//! same `(seed, stream, draw index)` therefore yields the same value on every
//! platform, and distinct streams never share draws for the same seed, so DP
//! noise and data sampling are independently reproducible.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Label for the independent substreams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamId {
    /// Gradient samples used by the update step.
    DataSampling = 0,
    /// The per-iteration Gaussian vector of DP-QC-SGD.
    DpNoise = 1,
    /// Fresh samples drawn to estimate the quantile threshold.
    QuantileEstimation = 2,
}

/// A seeded, stream-tagged generator owned by a single run.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha12Rng,
    seed: u64,
    stream: StreamId,
}

impl RngStream {
    pub fn new(seed: u64, stream: StreamId) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream as u64);
        RngStream { inner, seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}
