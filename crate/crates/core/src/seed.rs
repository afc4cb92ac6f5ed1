//! Seed derivation for sharded Monte-Carlo runs.
//!
//! Every shard `i` of a run with master seed `s` draws from a ChaCha8 stream
//! seeded with `splitmix64(s ^ splitmix64(i + 1))`. The derivation depends
//! only on `(s, i)`, so a fixed `(seed, shard count)` pair reproduces the
//! same numbers regardless of how many threads execute the shards.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the splitmix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn shard_seed(master: u64, shard: u64) -> u64 {
    splitmix64(master ^ splitmix64(shard.wrapping_add(1)))
}

pub fn shard_rng(master: u64, shard: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(shard_seed(master, shard))
}

/// Splits `total` work items over `shards` as evenly as possible; the first
/// `total % shards` shards get one extra item.
pub fn split_work(total: u64, shards: usize) -> Vec<u64> {
    let shards = shards.max(1) as u64;
    let base = total / shards;
    let extra = total % shards;
    (0..shards).map(|i| base + u64::from(i < extra)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn shard_streams_differ_and_repeat() {
        let a: u64 = shard_rng(7, 0).random();
        let b: u64 = shard_rng(7, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, shard_rng(7, 0).random::<u64>());
    }

    #[test]
    fn split_work_sums() {
        assert_eq!(split_work(10, 3), vec![4, 3, 3]);
        assert_eq!(split_work(0, 2), vec![0, 0]);
        assert_eq!(split_work(5, 0), vec![5]);
    }
}
