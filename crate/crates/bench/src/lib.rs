//! Criterion benchmarks for noiseshield-core; see `benches/`.
