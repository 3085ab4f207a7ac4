//! Datasets, protocol runners, reports and figure grids.

mod dataset;
mod grid;
mod manifest;
mod protocol;
mod tune;

pub use dataset::{gen_dataset, import_dataset, write_dataset, Dataset, DatasetSpec, ImageKind, Split};
pub use grid::{grid_dims, render_grid, save_grid, GridColumn, GUTTER, HEADER};
pub use manifest::{ExperimentManifest, Protocol, TuneSettings, SEED_ENV};
pub use protocol::{
    build_sets, comparison_csv, load_dataset, metrics_csv, prediction_columns, run_manifest, ComparisonRow, MetricRow,
    RunOptions, RunSummary, write_text, COMPARISON_HEADER, GRID_ROWS, METRICS_HEADER,
};
pub use tune::{
    apply_point, check_space, default_tune_space, load_space, snap_batch, tune_cyclegan, write_tune_report, TuneOutcome,
    TuneRow, TunedModel, TUNABLE, TUNE_HEADER,
};
