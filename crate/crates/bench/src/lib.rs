//! Criterion benchmarks for the simulation, eigensolver and metric kernels live in `benches/`.
