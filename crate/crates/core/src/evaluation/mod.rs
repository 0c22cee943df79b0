//! Dense-task metrics, linear readout heads and the end-to-end scoring
//! pipeline (oracle / copy-last / forecast).

mod metrics;
mod pipeline;
mod readout;

pub use metrics::{
    depth_metrics, miou, normal_metrics, DepthAccumulator, IouAccumulator, LabelMap, MetricReport,
    NormalAccumulator, NORMAL_THRESHOLD_DEG,
};
pub use pipeline::{evaluate_pipeline, predict_target, EvalItem, HeadSet, InferenceMode, PipelineReport};
pub use readout::{fit_readout, target_output, LabelSpec, ReadoutHead, Task, TaskOutput, DEFAULT_IGNORE};
