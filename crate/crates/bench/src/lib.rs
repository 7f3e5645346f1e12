//! Benchmarks only; run them with `cargo bench -p distortkd-bench`.
