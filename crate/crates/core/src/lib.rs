pub mod codec;
pub mod error;
pub mod eval;
pub mod explain;
pub mod kv;
pub mod net;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use net::{ForwardCtx, ForwardOutput, ModelConfig, StAbnModel};
pub use tensor::Tensor;
