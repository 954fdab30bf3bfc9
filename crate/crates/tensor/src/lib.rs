//! Minimal dense tensors and a reverse-mode differentiation tape, covering
//! the operations the detector graph needs: fully-connected and 2-D
//! convolution layers, bilinear resampling, row gather/scatter, a handful of
//! pointwise ops, and fused focal / smooth-L1 losses.
//!
//! ```
//! use cvf_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod ops;
pub mod optim;
pub mod params;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::conv::conv_output_size;
pub use ops::index::scatter_winners;
pub use ops::loss::{focal_value, smooth_l1_value};
pub use ops::{FocalSpec, SmoothL1Spec};
pub use params::{Bound, Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{numel, Element, Tensor};
