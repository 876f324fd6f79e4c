//! Scene optimization: the multi-term training loss with gradients wired
//! into the renderer backward passes, adaptive-moment parameter updates,
//! primitive densification/pruning, point-cloud initialization, and the
//! training loop itself.

pub mod adam;
pub mod densify;
pub mod fit;
pub mod init;
pub mod loss;

pub use adam::{adam_step, GroupLrs, Moments, OptState};
pub use densify::{densify_and_prune, DensifyParams, DensifyReport};
pub use fit::{fit, FitConfig, FitLog, IterRecord};
pub use init::init_from_points;
pub use loss::{
    compute_loss, compute_loss_grad, CameraFrame, LidarFrame, LossBreakdown, LossGrads,
    LossWeights, TrainBatch,
};
