//! Counter-based random streams.
//!
//! A master seed and an experiment tag determine a ChaCha key; replica `i`
//! reads ChaCha stream `i` under that key. Adding replicas never changes the
//! numbers drawn by earlier ones, and the result of a replica-partitioned
//! computation does not depend on how many workers ran it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;

/// Replicas folded sequentially inside one parallel task.
const BLOCK: u64 = 256;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit tag for an experiment name (FNV-1a, then mixed).
pub fn tag_of(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
    tag: u64,
    key: [u8; 32],
}

impl SeedStream {
    pub fn new(seed: u64, tag: u64) -> Self {
        let mut key = [0u8; 32];
        let mut s = mix64(seed ^ mix64(tag));
        for chunk in key.chunks_mut(8) {
            s = mix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        SeedStream { seed, tag, key }
    }

    pub fn named(seed: u64, name: &str) -> Self {
        SeedStream::new(seed, tag_of(name))
    }

    /// Independent sub-stream family, e.g. one per table cell.
    pub fn derive(&self, tag: u64) -> Self {
        SeedStream::new(mix64(self.seed ^ mix64(self.tag)), mix64(tag ^ self.tag))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for replica `index`.
    pub fn replica(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }

    /// Runs `body` for replicas `0..reps`, each with its own stream, and folds
    /// the per-replica state in replica order. Blocks run in parallel on the
    /// current rayon pool; the fold order is fixed, so results are identical
    /// for every worker count.
    pub fn fold_replicas<A, F, M>(&self, reps: u64, body: F, merge: M) -> Result<A>
    where
        A: Default + Send,
        F: Fn(u64, &mut ChaCha8Rng, &mut A) -> Result<()> + Sync,
        M: Fn(&mut A, A) + Sync,
    {
        let blocks = reps.div_ceil(BLOCK);
        let parts: Vec<Result<A>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut acc = A::default();
                for i in b * BLOCK..((b + 1) * BLOCK).min(reps) {
                    let mut rng = self.replica(i);
                    body(i, &mut rng, &mut acc)?;
                }
                Ok(acc)
            })
            .collect();
        let mut total = A::default();
        for p in parts {
            merge(&mut total, p?);
        }
        Ok(total)
    }

    /// Maps each replica to a value, preserving replica order.
    pub fn map_replicas<T, F>(&self, reps: u64, body: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64, &mut ChaCha8Rng) -> Result<T> + Sync,
    {
        (0..reps)
            .into_par_iter()
            .map(|i| {
                let mut rng = self.replica(i);
                body(i, &mut rng)
            })
            .collect()
    }
}
