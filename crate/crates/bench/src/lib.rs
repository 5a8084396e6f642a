//! Criterion benchmarks for `riskpo-core`; see `benches/riskpo.rs`.
