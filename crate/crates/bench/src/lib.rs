//! Criterion benchmarks for the detector kernels and pipeline; see `benches/`.
