//! Synthetic tasks, training loops, convergence curves, per-position
//! activation statistics, partial-ratio sweeps and the shifted-init
//! robustness probe.
//!
//! Runs are deterministic: every random stream derives from the run seed,
//! so identical configs and seeds produce bit-identical loss curves.
//! Seeds within a sweep may run in parallel (capped by
//! `NORMKIT_THREADS`); each run is single-threaded inside.

mod config;
mod report;
mod stats;
mod task;
mod train;

pub use config::{default_copy_config, ModelConfig, RunConfig, SCHEMA_VERSION};
pub use report::{CurvePoint, PSweepReport, RobustnessReport, RunReport};
pub use stats::{collect_stats, PositionStat, StatsReport, StatsTable};
pub use task::{
    generate_task, AddingInstance, CopyInstance, Dataset, SpiralPoint, TaskKind, TaskSpec,
};
pub use train::{
    build_model_for, median, p_sweep, robustness_probe, train, train_single, TrainedModel,
    DIVERGENCE_LOSS,
};
