//! The recurrent spectral model: fixed normalization, dilated
//! convolutional context expansion, a GRU with output feedback, a linear
//! output layer, and fixed denormalization — instantiated twice, as the
//! encoder (features to latent Gaussian parameters) and the decoder
//! (latent plus speaker code to spectra).

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointError,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::NetConfig;
pub use forward::{
    decoder_forward, denormalize_frame, dilated_context, encoder_forward, gru_step,
    normalize_frame, BoundParams, DecoderOut, EncoderOut, GruState, GruStepNodes, NetStack,
};
pub use params::{ModelParams, ParamSpec, TensorKind};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("normalization std must be strictly positive (dim {dim}, value {value})")]
    NonPositiveStd { dim: usize, value: f64 },
    #[error("non-finite network output at frame {frame}")]
    NonFinite { frame: usize },
    #[error("speaker code has dim {got}, expected {expected}")]
    CodeDim { expected: usize, got: usize },
    #[error("input frame has dim {got}, expected {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("missing parameter tensor {0}")]
    MissingParam(String),
    #[error("parameter {name} has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
}
