//! Desk-scale surrogate network: a two-layer convolutional backbone, a
//! point head (1x1 conv, 64 -> 1) and an uncertainty head (two 3x3 conv
//! blocks, then 1x1 conv 64 -> 10), trained from scratch on the sparse
//! losses.

mod checkpoint;
mod conv;
pub mod gradcheck;
mod network;
mod optim;
mod output;
mod real;
mod train;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, CheckpointHeader, TensorInfo,
    CHECKPOINT_MAGIC,
};
pub use conv::ConvShape;
pub use network::{
    Architecture, BackboneActs, Grads, LossKind, SurrogateModel, ARCHITECTURE_NAME, BACKBONE_TENSORS, BACKBONE_WIDTHS,
    TENSOR_NAMES,
};
pub use optim::{clip_global_norm, AdamW, LinearSchedule};
pub use output::{
    load_output, predict_to_files, write_output, ChannelEntry, ModelOutput, PredictionManifest, MANIFEST_FILE,
};
pub use real::Real;
pub use train::{tile_samples, train, write_trace, TraceRow, TrainOutcome, TrainSample, TrainerConfig, CONTEXT_HALO};

#[cfg(test)]
mod tests;
