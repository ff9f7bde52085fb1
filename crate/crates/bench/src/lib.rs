//! Benchmark-only crate; see `benches/kernels.rs`.

/// Deterministic pseudo-random fill for benchmark inputs (xorshift; no RNG
/// dependency needed for fixtures).
pub fn fill(seed: u64, len: usize) -> Vec<f64> {
    let mut state = seed | 1;
    (0..len)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) * 2.0 - 1.0
        })
        .collect()
}
