//! Criterion benchmarks live in `benches/`: `cargo bench -p coldlab-bench`.
