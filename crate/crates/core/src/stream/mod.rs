//! Frame streams, cumulative imaging, tiled inference and latency metering.

mod accumulate;
mod frames;
mod infer;

pub use accumulate::{
    accumulate, accumulate_raw, gate_duration, normalize_counts, subcumulative_windows, GateSpec, Window,
};
pub use frames::{decode_stream, encode_stream, read_stream, write_stream, FrameStream, STREAM_MAGIC};
pub use infer::{
    measure_latency, roi_crop_centered, roi_crop_multiple, tiled_infer, tiled_probabilities, LatencyStats,
    GPU_REFERENCE_SECONDS, MAX_ROI_PATCHES,
};
