//! Criterion benchmarks for the stratflow core; see `benches/`.
