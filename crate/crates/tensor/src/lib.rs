//! Dense 2-D tensors with a reverse-mode tape, an Adam optimizer, central
//! difference gradient checking, and a flat little-endian checkpoint format.
//!
//! Every value handled by the [`Graph`] is a row-major matrix. Row vectors
//! are `1×n`, scalars are `1×1`. Models are written generically over
//! [`Real`] so the same forward code runs in `f32` for training and in `f64`
//! for gradient verification.

mod checkpoint;
mod error;
mod gradcheck;
mod graph;
mod kernels;
mod optim;
mod real;
mod store;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Manifest, ManifestEntry, CHECKPOINT_VERSION};
pub use error::{Result, TensorError};
pub use gradcheck::{check_op, grad_check, op_suite, GradCheckOptions, GradCheckReport, OPS};
pub use graph::{Gradients, Graph, OpKind, Var, MASKED};
pub use optim::{adam_update, clip_grad_norm, Adam};
pub use real::Real;
pub use store::{Parameter, ParameterStore};
pub use tensor::Tensor;
