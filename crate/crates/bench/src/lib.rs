//! Criterion benchmarks for `meanquant` live in `benches/`.
