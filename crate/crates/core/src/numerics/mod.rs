//! Tensor arithmetic, reverse-mode gradients and gradient checking.

pub mod gradcheck;
pub mod graph;
pub mod rng;
pub mod tensor;

pub use gradcheck::{gradcheck, relative_error, Coverage, GradCheckReport};
pub use graph::{Gradients, Graph, ParamStore, Var};
pub use rng::{seeded, stream, SeedRng};
pub use tensor::{
    concat, cross_entropy, dropout, matmul, mul, add, sigmoid, softmax, split_columns, tanh, Tensor,
    PROB_FLOOR,
};
