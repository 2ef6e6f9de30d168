//! Small fully connected network engine.

mod adam;
mod checkpoint;
mod loss;
mod mlp;
mod normalize;
mod spec;
mod train;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, Normalization, Regressor};
pub use loss::{l1_loss, Objective, PlainL1, Sample, WeightedL1};
pub use mlp::{Dense, Gradients, Mlp, Trace};
pub use normalize::{AffineMap, ENCODED_HI, ENCODED_LO};
pub use spec::{HiddenActivation, NetSpec, OutputActivation};
pub use train::{train, TrainConfig, TrainOutcome};
