//! Dense numeric kernel: row-major matrices, the handful of differentiable
//! operations the networks need together with their vector-Jacobian products,
//! a small MLP with a hand-written backward pass, and Adam.

mod adam;
mod gradcheck;
pub mod guard;
mod matrix;
mod mlp;
mod ops;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::finite_diff_grad;
pub use matrix::{DenseMatrix, GradSlot};
pub use mlp::{Linear, Mlp, MlpCache, MlpGrads};
pub use ops::{
    matmul, matmul_vjp, relu, relu_vjp, sigmoid, sigmoid_grad, sigmoid_vjp, step, ste, ste_vjp,
};
