//! Criterion benchmarks for the levy-potential toolkit; see `benches/`.
