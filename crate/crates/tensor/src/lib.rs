//! Dense tensors with a tape-based reverse-mode graph.
//!
//! The crate carries exactly the primitives the siamese encoders and
//! similarity losses need, each with an analytic backward rule, plus a
//! central finite-difference checker and the VFST binary tensor format.
//! There is no broadcasting beyond scalar operands; per-channel bias and
//! normalization are explicit primitives.

pub mod check;
pub mod element;
pub mod error;
pub mod graph;
pub mod io;
pub mod kernels;
pub mod tensor;

pub use check::{grad_check, grad_check_with, value_and_grad, GradCheckOptions, GradCheckReport};
pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use graph::{BnMode, BnStats, ConvParams, Gradients, Graph, Var};
pub use io::{AnyTensor, IntTensor};
pub use tensor::Tensor;
