//! Dense float64 tensors and a recording tape for reverse-mode gradients.

mod checkpoint;
mod param;
mod tape;
pub(crate) mod tensor;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var, KL_CLAMP, LOG_CLAMP};
pub use tensor::{Tensor, TensorError};
