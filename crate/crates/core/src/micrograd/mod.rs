//! Dense kernels with hand-written backward passes, verified against central
//! finite differences.

mod gradcheck;
pub mod ops;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, DEFAULT_EPS};
pub use ops::{
    cross_attention, cross_attention_backward, l2_normalize, l2_normalize_backward, linear, linear_backward, mean_pool,
    mean_pool_backward, softmax_rows, softmax_rows_backward, tanh, tanh_backward, AttentionCache, AttentionGrads,
    LinearGrads, NORM_EPS,
};
pub use params::ParamSet;
pub use tensor::{dot, Tensor, MAX_RANK};
