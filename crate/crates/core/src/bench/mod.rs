//! Benchmark harness: CSV ingestion, repeated cross-validation and split
//! protocols, a stationary baseline and training-time scaling.

mod data;
mod protocol;
mod stationary;
mod timing;

pub use data::{load_csv, parse_table, read_table, Table, TargetColumn};
pub use protocol::{
    apply_transform, config_fingerprint, fold_partition, fold_sizes, repeat_order, run_protocol, run_protocol_with,
    run_seed, stationary_baseline, BenchReport, Metric, ModelKind, Protocol, ProtocolKind, RunRecord, Summary,
    TargetTransform, PRESETS,
};
pub use stationary::{fit_stationary, StationaryModel};
pub use timing::{
    batch_bytes, synthetic_data, timing_benchmark, timing_csv, write_timing_csv, BatchSize, TimingConfig, TimingRow,
};
