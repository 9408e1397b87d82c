//! Dense kernels, parameter storage, seeded randomness and gradient checking.
//!
//! Everything here is 64-bit. Matrices are row-major `[rows, cols]` tensors;
//! the hot loops in the model work on plain slices through the `*_into`
//! kernels rather than allocating intermediate tensors.

mod gradcheck;
mod params;
mod rng;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{ParamId, ParamKind, ParamStore};
pub use rng::{Rng, RngState, Stream};
pub use tensor::{
    affine, clip_global_norm, dsigmoid_from_output, dtanh_from_output, log_softmax,
    matvec_add_into, matvec_t_add_into, outer_add_into, sample_categorical, sigmoid,
    softmax_with_temperature, Tensor,
};
