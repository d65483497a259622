//! Benchmark protocols, metrics, orchestration and result export.

pub mod metrics;
pub mod pipeline;
pub mod projection;
pub mod report;
pub mod split;
pub mod synthetic;

pub use metrics::{auroc, auroc_ratio};
pub use pipeline::{
    prepare_repeat, run_benchmark, run_benchmark_detailed, run_repeat, DataSource, LabelsManifest, PreparedRepeat,
    ProtocolData, RepeatOutcome, SampleEntry, SampleSplit, TextEncoder,
};
pub use projection::{export_projection, pca_2d, projection_csv, Projection2d};
pub use report::{parse_results_csv, results_csv, table_markdown, EvalResult, RepeatSummary, ResultRow};
pub use split::{make_split, openness, openness_literal, BenchmarkSplit, ClassCatalog, Protocol};
pub use synthetic::SyntheticSpec;
