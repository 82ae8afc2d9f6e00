//! Inverse rendering: losses, gradients, first-order updates, density control
//! and the two-stage training driver.

mod adam;
mod densify;
mod losses;
mod objective;
mod ssim;
mod train;

pub use adam::{Adam, AdamConfig, GroupMask, LearningRates, SceneOptimizer};
pub use densify::{adaptive_density_control, DensifyConfig, DensifyOutcome, GradStats};
pub use losses::{
    build_target_image, edge_weights, loss_base_color, loss_depth, loss_depth_grad, loss_l1, loss_l1_grad,
    loss_light_reg, loss_mask_entropy, loss_mask_entropy_grad, loss_normal_consistency, loss_normal_consistency_grad,
    loss_smoothness, loss_smoothness_grad, loss_visibility, sample_visibility_pairs, VisibilityLoss, VisibilityPair,
    ENTROPY_EPS, TARGET_PSI,
};
pub use objective::{evaluate, psnr, total_loss, total_loss_with_gamma, LossBreakdown, LossTerm, LossWeights, Stage, Supervision};
pub use ssim::{blur_plane, gaussian_taps, loss_ssim, loss_ssim_grad, ssim_map, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use train::{
    camera_extent, holdout_psnr, initialize_scene, train, train_from, MetricsRecord, TrainConfig, TrainOutcome,
    TrainingSet,
};
