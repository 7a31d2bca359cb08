//! Dense and magnituder layers, layer graphs, and training.

mod activation;
mod dense;
mod mag;
mod network;
pub mod presets;
mod readout;
mod train;

pub use activation::{Activation, HeadActivation};
pub use dense::{dense_forward, DenseLayer};
pub use mag::{mag_forward, FeatureProvenance, MagLayer};
pub use network::{
    network_forward, ConcatSource, Head, Layer, NetworkOutput, NetworkSpec, SkipConcat,
};
pub use readout::{
    train_readout, train_readout_with_stats, ReadoutBatches, ReadoutConfig, ReadoutStats,
};
pub(crate) use train::OptimizerState;
pub use train::{
    loss_and_gradients, train, LrSchedule, Optimizer, Targets, TrainConfig, TrainReport,
};
