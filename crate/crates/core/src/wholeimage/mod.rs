//! Whole-image classification with masked global average pooling and a
//! class-activation-map branch sharing the classifier weights.

mod model;
mod pool;
mod preprocess;
mod train;

pub use model::{
    load_stem_weights, stem_checkpoint, ClassActivationMap, ImageEvaluation, ImageForward, ImageObjective,
    StemContract, WholeImageModel, CLASSES, CLASSIFIER_INIT_SCALE, IMAGE_MODEL,
};
pub use pool::{global_average_pool, masked_gap, masked_gap_backward};
pub use preprocess::{corners_look_flat, preprocess_image, standardize_inside, PreprocessedImage, FLAT_CORNER_VARIANCE};
pub use train::{
    default_validation_count, run_early_stopping, select_validation_patients, train_image,
    train_image_with_validation, EarlyStopLog, ImageEpoch, ImageTrainConfig, ImageTrainLog,
};
