//! Accuracy and kappa reports, latent traversals and statistics, and the
//! frozen-feature reconstruction probe.

mod image;
mod latent;
mod metrics;
mod probe;

pub use image::GrayImage;
pub use latent::{
    encode_panels, ks_standard_normal, latent_distribution, latent_support, latent_traversal, plot_distributions,
    DimDistribution, Histogram, LatentSupport, Traversal,
};
pub use metrics::{
    cohens_kappa, evaluate, split_accuracy, OraclePredictor, Predictor, RandomPredictor, RegimeReport, WrenPredictor, CHANCE,
};
pub use probe::{panel_features, probe_mse, probe_strip, reconstruction_probe, ProbeConfig, ProbeDecoder, ProbeReport};
