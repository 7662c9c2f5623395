//! Data formats, synthetic scenes, metrics, configuration and the training,
//! evaluation and profiling drivers.

pub mod config;
pub mod dataset;
pub mod metrics;
pub mod pfm;
pub mod png;
pub mod profile;
pub mod synth;
pub mod train;

pub use config::{Precision, RunConfig};
pub use dataset::{load_dataset_dir, save_sample, StereoSample};
pub use metrics::{evaluate, metrics_table, MetricsReport, Region};
pub use pfm::{load_pfm, save_pfm};
pub use png::{load_kitti_disparity_png, render_disparity_png, save_kitti_disparity_png, RenderMode};
pub use profile::{profile, ProfileReport, Sweep, SweepAxis};
pub use synth::{synth_rds, Layer, LayerShape, Patch, SynthSpec};
pub use train::{evaluate_checkpoint, evaluate_model, infer_sample, train, train_with, TrainOutcome};
