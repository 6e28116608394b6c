//! Criterion benchmarks for covert transaction construction and extraction.
//! See `benches/`.
