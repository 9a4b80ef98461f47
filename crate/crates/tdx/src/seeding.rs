//! Deterministic seed fan-out.
//!
//! Every command takes one root seed; independent work units (starts,
//! time points, grid cells) derive their own seed from it by counter, so
//! parallel execution cannot change any result.

/// Derives the seed for work unit `stream` from `root`.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    splitmix64(root ^ stream.wrapping_mul(0x9E3779B97F4A7C15))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
