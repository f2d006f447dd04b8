//! Fixed-size gray-level co-occurrence images from irregular regions of
//! interest, classical texture features, and a small dual-branch
//! convolutional classifier that takes the co-occurrence image as a second
//! input next to the whole image.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] – images, masks, quantization.
//! * [`volume`] – the GRD1/MSK1 on-disk format.
//! * [`glcm`] – masked co-occurrence accumulation and GLCM-image builders.
//! * [`features`] – contrast, homogeneity and friends.
//! * [`nn`] – tensors, layers, Adam, the dual-branch network and training.
//! * [`synth`], [`folds`], [`dataset`] – synthetic data, stratified folds,
//!   manifest loading.
//! * [`metrics`] – loss, accuracy, one-vs-others AUC, cross-validation.

pub mod dataset;
pub mod error;
pub mod features;
pub mod folds;
pub mod glcm;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod volume;

pub use error::{Error, ErrorKind, Result};
pub use features::{contrast, feature_vector, homogeneity, FeatureVector};
pub use glcm::{
    accumulate, directions_2d, directions_3d, glcm_image, glcm_image_2d, glcm_image_3d_anisotropic,
    glcm_image_3d_isotropic, glcm_image_multichannel, normalize, DirectionSet, Glcm, GlcmImage, GlcmOptions,
    Normalization, Offset, Regime,
};
pub use grid::{mask_bounding_box, quantize, validate_pair, BoundingBox, GridImage, QuantizationSpec, QuantizedGrid, RoiMask};
pub use volume::{load_mask, load_volume, save_image, save_mask};
pub use dataset::{load_samples, prepare_sample, read_manifest, write_manifest, Manifest, ManifestEntry, PrepareOptions};
pub use folds::stratified_kfold;
pub use metrics::{accuracy, auc_one_vs_others, cross_validate, mean_cross_entropy, EvalResult, FoldResult, Metrics};
pub use synth::{generate_dataset, generate_samples, SynthSpec};
