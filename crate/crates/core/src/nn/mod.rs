//! Minimal CNN engine: tensors, the layer set needed by the simple CNN,
//! manual backpropagation, Adam and a checksummed model file.

mod adam;
mod layers;
mod loss;
mod network;
mod scalar;
mod serialize;
mod spec;
mod tensor;

pub use adam::Adam;
pub use layers::{sigmoid, BatchNorm, Conv2d, Dense, Layer, Mode, BN_EPSILON, BN_MOMENTUM};
pub use loss::{bce_loss, BCE_CLAMP};
pub use network::{Gradients, Network, Tape};
pub use scalar::{matmul, matmul_at_acc, matmul_bt, Scalar};
pub use serialize::{
    deserialize, read_model_file, serialize, write_model_file, ArrayEntry, ModelHeader, ModelMetadata, FORMAT_VERSION,
    MAGIC,
};
pub use spec::{count_params, infer_shapes, Activation, LayerSpec, LayerSummary, ModelSpec, ParamCount, Shape};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("layer {layer} would underflow on input {input}")]
    ShapeUnderflow { layer: usize, input: String },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("{0}")]
    StateError(&'static str),
    #[error("weight blob checksum mismatch: header {expected:08x}, computed {actual:08x}")]
    ChecksumMismatch { expected: u32, actual: u32 },
    #[error("unsupported model format version {0}")]
    SpecVersionUnsupported(u32),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
