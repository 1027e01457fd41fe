//! The landmark regressor: backbone, parameter whitening, learning-rate
//! schedule, training loop and checkpoints.

mod backbone;
mod checkpoint;
pub mod layers;
mod schedule;
mod train;
mod whitening;

pub use backbone::{
    bottleneck_unit_forward, feature_size, parse_layers, render_layers, Backbone, BackboneConfig,
    Blob, BottleneckUnit, LayerSpec, Layout, Tape, UnitGrads, UnitTape, UnitWeights,
    INPUT_CHANNELS,
};
pub use checkpoint::{predict, Checkpoint};
pub use schedule::{lr_trace, PlateauScheduler};
pub use train::{
    initial_network, mean_nme, record_image, run_hash, split_indices, train, training_loss, EpochMetrics, LossKind,
    TrainConfig, TrainOutcome, CALIBRATION_SAMPLES,
};
pub use whitening::ParamWhitening;
