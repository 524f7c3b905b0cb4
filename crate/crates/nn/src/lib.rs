//! CPU tensor engine used by the gendistill workspace: dense tensors,
//! im2col/GEMM convolution kernels, a tape-based autodiff graph, parameter
//! stores with a binary format, common layers and Adam.

pub mod error;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod real;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{BufferUpdate, Gradients, Graph, Var};
pub use layers::{BatchNorm, Conv2d, ConvTranspose2d, Embedding, Init, Linear, Mode};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamKind, ParamStore};
pub use real::{gemm, DType, Real};
pub use tensor::Tensor;
