//! Criterion benchmarks for the hot paths of `eccl-core`; see `benches/hot_paths.rs`.
