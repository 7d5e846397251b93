//! Multi-agent PPO with one parameter-shared actor and a centralized critic.

pub mod buffer;
pub mod checkpoint;
pub mod mlp;
pub mod policy;
pub mod ppo;
pub mod train;

pub use buffer::{compute_gae, Batch, RolloutBuffer, Trajectory, Transition};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use mlp::{Mlp, MlpCache};
pub use policy::{ActionSample, ActionScale, PolicyParams};
pub use ppo::{
    loss_and_grad, normalize_advantages, ppo_update, Adam, Gradient, LossTerms, PpoConfig,
    TrainStats,
};
pub use train::{initial_params, train, train_with, CurvePoint, TrainOutput};
