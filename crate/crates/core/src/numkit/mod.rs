//! Dense math kernel: tensors, activations, losses, SGD and the seeded PRNG.

mod dense;
mod ops;
mod rng;
mod tensor;

pub use dense::{widen, Affine, AffineGrad};
pub use ops::{
    argmax, kl_diag_gaussian_to_standard, matmul, sgd_step, sgd_step_in_place, sigmoid,
    sigmoid_scalar, softmax, softmax_f64, softplus,
};
pub(crate) use ops::kl_standard_f64;
pub use rng::{derive_seed, rng_normal, Rng};
pub use tensor::DenseTensor;
