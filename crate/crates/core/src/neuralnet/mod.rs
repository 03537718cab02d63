//! Tensor primitives, the convolutional detector and its training loop.

mod adam;
mod io;
mod layers;
mod loss;
mod metrics;
mod model;
mod tensor;
mod train;

pub use adam::{adam_step, AdamState};
pub use io::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use layers::{conv2d, maxpool2};
pub use loss::{bce_batch, bce_loss, BCE_EPS};
pub use metrics::{evaluate, predict_all, predict_label, ClassScores, Metrics};
pub use model::{flatten_dim, slot, CnnModel, Gradients, Param, CONV1_FILTERS, CONV2_FILTERS, HIDDEN_UNITS};
pub use tensor::{InputShape, Tensor};
pub use train::{train, TrainConfig, TrainReport};


/// Decision threshold on P(normal).
pub const DEFAULT_THRESHOLD: f64 = 0.5;
