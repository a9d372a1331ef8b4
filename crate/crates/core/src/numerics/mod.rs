//! Dense tensors, the CRNN layer kernels, reverse-mode differentiation,
//! Adam and checkpoint storage.

mod checkpoint;
mod gradcheck;
mod init;
pub mod ops;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, write_atomic, CHECKPOINT_VERSION,
};
pub use gradcheck::{finite_diff_check, rel_error, GradCheckReport};
pub use init::InitScheme;
pub use params::{AdamConfig, Moments, ParamStore};
pub use scalar::{gemm, DType, Mat, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape contract violated: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        NumericsError::Shape { op, detail }
    }
}
