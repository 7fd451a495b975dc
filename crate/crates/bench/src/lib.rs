//! Criterion benchmarks live under `benches/`; run with `cargo bench -p stabn-bench`.
