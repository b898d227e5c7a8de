//! Dense tensors and a reverse-mode computation graph covering the
//! primitives the seq2point generator, predictor and discriminators use.

mod graph;
pub mod gradcheck;
mod real;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId, NormStats, LOG_CLAMP};
#[allow(unused_imports)]
pub(crate) use real::{gemm, MatRef};
pub use real::{Precision, Real};
pub use tensor::Tensor;
