//! Reverse-mode differentiation, layers and optimization.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_with_floor, GradCheck, GRADCHECK_FLOOR};
pub use graph::{Graph, LocalGrad, Var};
pub use layers::{
    char_cnn_maxpool, dropout, dropout_mask, highway_layer, log_softmax, log_sum_exp, lstm_step,
    softmax_cross_entropy, CharCnn, Embedding, Highway, Linear, LstmCell,
};
pub use optim::{add_l2_penalty, adam_update, clip_global_norm, AdamState};
pub use params::{Gradients, ParamId, ParameterSet};
pub use tensor::Tensor;
