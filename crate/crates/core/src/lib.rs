//! Multi-column deep convolutional networks trained with online gradient
//! descent, together with the image preprocessing, distortion, ensemble and
//! evaluation machinery around them.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod dataset;
pub mod descriptor;
pub mod ensemble;
pub mod eval;
pub mod layers;
pub mod model_file;
pub mod network;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use augment::{AffineTransform, AugmentError, Background, DistortionParams};
pub use dataset::{Dataset, DatasetError};
pub use descriptor::{DescriptorError, LayerSpec, NetDescriptor, Shape};
pub use ensemble::{Column, Decision, Ensemble, EnsembleError};
pub use eval::{ConfusionMatrix, EvalError, EvaluationReport};
pub use model_file::ModelFileError;
pub use network::{NetError, Network};
pub use preprocess::{PreprocessError, Preprocessor};
pub use rng::Rng;
pub use tensor::{Tensor, TensorError};
pub use trainer::{TrainConfig, TrainError, TrainState};
