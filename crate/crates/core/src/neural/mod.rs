//! Convolutional classifier, its training loop and on-disk bundle.

mod arch;
mod io;
mod layers;
mod model;
mod train;

pub use arch::{Architecture, TrunkLayer, TrunkShape};
pub use io::{load_model, load_model_with_info, save_model, ModelInfo, ModelManifest, MODEL_FORMAT};
pub use model::{probability_pair, BatchRef, CnnModel, Gradients, INFERENCE_CHUNK};
pub use train::{dataset_loss, lr_at_epoch, predict_dataset, train, train_model, Adam, EpochLog, TrainConfig, TrainLog};
