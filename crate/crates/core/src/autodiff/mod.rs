//! Dense-matrix reverse-mode automatic differentiation.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{grad_check, grad_check_many, relative_error, GradCheck, GradCheckReport};
pub use matrix::Matrix;
pub use tape::{SparseRows, Tape, TensorId, NORM_EPS};

