//! Criterion benchmarks for the lattice solvers; see `benches/solvers.rs`.
