//! Criterion benchmarks for the spde-lab kernels; see `benches/kernels.rs`.
