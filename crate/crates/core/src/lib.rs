//! Binary, Gaussian and multivariate Gaussian restricted Boltzmann machines:
//! CD/PCD training, exact small-model inference, and a context-window
//! feature extraction pipeline with PCA.

pub mod cli;
pub mod error;
pub mod features;
pub mod io;
pub mod math;
pub mod model;
pub mod model_file;
pub mod oracle;
pub mod training;

pub use error::{Error, Result};
pub use model::{GrbmParams, MgrbmParams, ModelKind, ModelParams, RbmParams};
pub use training::TrainConfig;
