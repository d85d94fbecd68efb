//! Gaussian multilayer policy, value baseline and their derivatives.

pub mod checkpoint;
pub mod gaussian;
pub mod mlp;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use gaussian::{
    fisher_vector_product, gaussian_kl, gaussian_log_density, gradients, log_prob, loss_value,
    mean_kl, policy_mean, sample_action, FisherOperator, LossSpec, PolicyParams, ValueParams,
    LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{ForwardCache, Layout, MlpParams};
