//! A small trainable transformer with strictly tied word embeddings, the
//! lexicon-bottlenecked masked autoencoder pre-training procedure, and the
//! saturated lexicon-weighting representation used for retrieval.

pub mod checkpoint;
mod config;
mod error;
pub mod masking;
pub mod pretrain;
pub mod repr;
pub mod transformer;
pub mod vocab;
mod weights;

pub use config::ModelConfig;
pub use error::{ModelError, Result};
pub use weights::{HeadLayout, LayerWeights, LmHeadWeights, NormParams, TransformerWeights};
