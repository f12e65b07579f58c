//! Dense double-precision neural network kernels with reverse-mode
//! gradients.

mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod tensor;

pub use checkpoint::{
    load_params, parse_param_lines, read_params, save_params, write_param_lines, write_params, PARAMS_HEADER,
};
pub use gradcheck::{grad_check, GradCheck};
pub use graph::{Graph, GruVars, Interaction, PoolEdge, Var};
pub use layers::{
    bigru, conv2d, dropout, dropout_mask, gru_step, interaction_matrix, max_pool, mlp_forward, mlp_score,
    ConvLayerConfig, ConvParams, GruParams, MlpParams, MlpVars, GRU_TENSOR_NAMES,
};
pub use tensor::Tensor;
