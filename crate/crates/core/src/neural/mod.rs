//! Minimal neural core: dense and gated recurrent layers, backpropagation,
//! an adaptive-moment optimizer, soft target updates and checkpoints, plus
//! the fixed policy/critic architectures.

pub mod layers;
pub mod nets;

pub use layers::{
    load_checkpoint, save_checkpoint, sigmoid, soft_update, Act, Adam, Dense, DenseGrad, Gru,
    GruGrad, NeuralError, ParamBlocks,
};
pub use nets::{critic_loss, critic_net, Mlp, MlpGrads, PolicyGrads, PolicyNet, DENSE_UNITS, GRU_UNITS};
