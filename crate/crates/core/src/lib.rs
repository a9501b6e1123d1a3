//! Two-stage 4-bit quantization.
//!
//! Tensors are first quantized to 8- or 16-bit sign-magnitude integers with
//! static absolute-max scales ([`quantizer`]). Groups of those integers are
//! then razored down to a few salient bits plus a shared shift flag
//! ([`sdr`]). Compressed operands multiply directly without decompression
//! ([`arith`]), serialize to a bit-packed container ([`packfmt`]) and can be
//! inspected with the tooling in [`analysis`].

pub mod analysis;
pub mod arith;
mod bits;
pub mod error;
pub mod packfmt;
pub mod quantizer;
pub mod sdr;
pub mod tensor;

pub use error::{Error, Result};
pub use quantizer::{Granularity, Role, ScaleSet};
pub use sdr::{CompressedGroup, CompressedTensor, SdrConfig};
pub use tensor::{BaseTensor, SignMag, TensorF};
