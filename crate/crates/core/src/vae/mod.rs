//! Convolutional β-VAE with a factorized Gaussian posterior.

mod loss;
mod model;
mod schedule;
mod train;

pub use loss::{elbo_loss, elbo_on, kl_divergence, kl_on, ElboBreakdown, ElboVars};
pub use model::{
    add_batch_norm, add_conv_stack, add_dense, batch_norm, conv_stack, dense, reparameterize, reparameterize_on, VaeConfig,
    VaeModel,
};
pub use schedule::{BetaSchedule, RampShape};
pub use train::{
    load_vae, mean_kl, reconstruction_mse, save_vae, sidecar_path, standard_normal, train_vae, train_vae_panels, vae_step,
    BetaSpec, PanelSet, StepLog, VaeMeta, VaeRun, VaeTrainConfig,
};
