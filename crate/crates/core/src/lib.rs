pub mod autoencoder;
pub mod autograd;
pub mod checkpoint;
pub mod codec;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod quantizer;
pub mod rate_model;
pub mod rdo;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

pub use autoencoder::{Autoencoder, EncoderSpec, ModelSpec};
pub use checkpoint::Checkpoint;
pub use codec::{compress_image, decompress_image, CompressedImage};
pub use image::Image;
pub use losses::LossWeights;
pub use metrics::{bd_rate, ms_ssim, QualityAxis, RdCurve};
pub use quantizer::QuantizedMap;
pub use rate_model::SymbolDistribution;
pub use rdo::{pareto_front, select_model, RatePoint, Selection};
pub use trainer::{train, PatchDataset, TrainOptions, TrainingRun, TrainingSchedule};
