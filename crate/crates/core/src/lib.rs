//! LR-FPN detection neck: tensor kernels, a reverse-mode tape, the SPIEM and
//! CIM modules, pyramid assembly, and the verification harness.

pub mod cim;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod param;
pub mod pyramid;
pub mod reference;
pub mod spiem;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use param::{Param, ParamId, ParamStore};
pub use pyramid::{AblationFlags, LrFpnModel, ModelConfig, TrainConfig, TrainTrace};
pub use tape::{OpKind, Tape, Var};
pub use tensor::{DType, Tensor};
