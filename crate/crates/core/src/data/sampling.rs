//! Deterministic per-user random streams and uniform negative sampling.

use crate::error::{CoreError, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Distinct random streams drawn per user; keeping purposes separate means
/// adding draws to one consumer never perturbs another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngPurpose {
    /// Training-loss negative sets.
    TrainNegatives,
    /// Fresh negatives mixed into enhanced sets.
    EnhancerNegatives,
    /// Parameter initialization (user_index 0 by convention).
    Init,
    /// Synthetic data generation.
    Synth,
    /// Per-epoch batch-order shuffling (user_index 0 by convention).
    Shuffle,
}

impl RngPurpose {
    fn tag(self) -> u32 {
        match self {
            RngPurpose::TrainNegatives => 1,
            RngPurpose::EnhancerNegatives => 2,
            RngPurpose::Init => 3,
            RngPurpose::Synth => 4,
            RngPurpose::Shuffle => 5,
        }
    }
}

/// Derives an independent ChaCha8 stream from (global seed, user, purpose,
/// epoch) by hashing the tuple; streams never overlap across any coordinate.
pub fn user_rng(global_seed: u64, user_index: u32, purpose: RngPurpose, epoch: u32) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update(user_index.to_le_bytes());
    hasher.update(purpose.tag().to_le_bytes());
    hasher.update(epoch.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Draws `count` distinct items uniformly from {1..=item_count} \ exclude.
/// `exclude` must be sorted ascending. Results are in draw order.
pub fn sample_uniform_negatives(
    item_count: u32,
    exclude: &[u32],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u32>> {
    debug_assert!(
        exclude.windows(2).all(|w| w[0] < w[1]),
        "exclude not sorted"
    );
    let excluded_valid = exclude
        .iter()
        .filter(|&&x| x >= 1 && x <= item_count)
        .count();
    let available = item_count as usize - excluded_valid;
    if count > available {
        return Err(CoreError::Data(format!(
            "cannot sample {count} distinct negatives: only {available} of {item_count} items \
             outside the exclusion set"
        )));
    }

    // Rejection sampling is fast while hits are likely; fall back to an
    // explicit complement shuffle when the pool is nearly exhausted.
    if count * 4 <= available {
        let mut out: Vec<u32> = Vec::with_capacity(count);
        while out.len() < count {
            let candidate = rng.gen_range(1..=item_count);
            if exclude.binary_search(&candidate).is_ok() || out.contains(&candidate) {
                continue;
            }
            out.push(candidate);
        }
        Ok(out)
    } else {
        let mut pool: Vec<u32> = (1..=item_count)
            .filter(|x| exclude.binary_search(x).is_err())
            .collect();
        // Partial Fisher–Yates: the first `count` slots become the sample.
        for i in 0..count {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(count);
        Ok(pool)
    }
}
