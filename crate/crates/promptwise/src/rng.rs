//! Counter-based RNG substreams.
//!
//! A single root seed deterministically derives an independent stream per
//! (trial, purpose, step, round) coordinate. Streams never depend on
//! execution order, so trials can run in parallel and replays are
//! bit-identical regardless of thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes; the discriminant participates in seed derivation, so
/// values must never be reordered once results have been published.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Context = 1,
    Reward = 2,
    Policy = 3,
    ThetaStar = 4,
    TraceRow = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a ChaCha stream from the root seed and a coordinate path.
pub fn derive(root_seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(root_seed ^ 0xA076_1D64_78BD_642F);
    for &id in path {
        state = splitmix64(state ^ splitmix64(id));
    }
    let mut seed = [0u8; 32];
    let mut z = state;
    for chunk in seed.chunks_exact_mut(8) {
        z = splitmix64(z);
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Substream factory for one trial.
#[derive(Debug, Clone, Copy)]
pub struct Substreams {
    root_seed: u64,
    trial: u64,
}

impl Substreams {
    pub fn new(root_seed: u64, trial: u64) -> Self {
        Substreams { root_seed, trial }
    }

    pub fn trial(&self) -> u64 {
        self.trial
    }

    /// Context draw for step `t`.
    pub fn context(&self, t: u64) -> ChaCha8Rng {
        derive(self.root_seed, &[self.trial, Purpose::Context as u64, t])
    }

    /// Reward draw for (step, round).
    pub fn reward(&self, t: u64, round: u64) -> ChaCha8Rng {
        derive(
            self.root_seed,
            &[self.trial, Purpose::Reward as u64, t, round],
        )
    }

    /// Policy-internal randomness for (step, round); used by the random
    /// baselines and by support subsampling.
    pub fn policy(&self, t: u64, round: u64) -> ChaCha8Rng {
        derive(
            self.root_seed,
            &[self.trial, Purpose::Policy as u64, t, round],
        )
    }

    /// Ground-truth parameter generation for arm `a`.
    pub fn theta_star(&self, a: u64) -> ChaCha8Rng {
        derive(self.root_seed, &[self.trial, Purpose::ThetaStar as u64, a])
    }

    /// Trace row selection for step `t`.
    pub fn trace_row(&self, t: u64) -> ChaCha8Rng {
        derive(self.root_seed, &[self.trial, Purpose::TraceRow as u64, t])
    }
}
