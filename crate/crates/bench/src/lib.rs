//! Benchmarks only; see `benches/layers.rs`. Run with `cargo bench -p rfi-bench`.
