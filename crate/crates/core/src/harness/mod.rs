//! Evaluation experiments: robustness to rotation and noise, repeat
//! consistency, and segmentation quality against time-gated accumulation.

mod experiments;
mod report;

pub use experiments::{
    run_consistency, run_robustness, run_subcumulative, RobustnessOptions, Segmenter, Transform, DEFAULT_GATES,
};
pub use report::{spearman, ExperimentReport, ReportRow, Section};
