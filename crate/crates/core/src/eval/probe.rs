use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use crate::error::{Diagnostic, Error, Result};
use crate::tensor::{adam_step, AdamState, Mode, Tape, Tensor};
use crate::vae::{PanelSet, VaeConfig, VaeModel};
use crate::wren::PanelEmbedder;

const FEATURE_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_panels: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_panels: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub embedder: String,
    pub feature_dim: usize,
    pub panels: usize,
    pub epochs: usize,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean per-panel summed squared error of the trained decoder in eval mode.
    pub final_mse: f64,
    pub embedder_hash: String,
}

/// Convolutional decoder trained on frozen panel features.
#[derive(Debug, Clone)]
pub struct ProbeDecoder {
    pub model: VaeModel<f32>,
}

impl ProbeDecoder {
    pub fn new(resolution: usize, feature_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let config = VaeConfig {
            latent_dim: feature_dim,
            ..VaeConfig::new(resolution)
        };
        let full = VaeModel::<f32>::new(config, rng)?;
        Ok(Self {
            model: VaeModel {
                config,
                params: full.params.subset("dec."),
            },
        })
    }

    pub fn decode(&mut self, features: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.model.decode(features, Mode::Eval)
    }
}

/// Eval-mode embeddings of every panel, `N×dim`.
pub fn panel_features(embedder: &PanelEmbedder<f32>, panels: &PanelSet) -> Result<Tensor<f32>> {
    let idx: Vec<usize> = (0..panels.len()).collect();
    let parts: Vec<Result<Tensor<f32>>> = idx
        .par_chunks(FEATURE_CHUNK)
        .map(|c| {
            let mut e = embedder.clone();
            let mut tape = Tape::new();
            let bound = e.backbone.bind(&mut tape);
            let x = tape.constant(panels.batch(c));
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = e.embed_on(&mut tape, &bound, x, Mode::Eval, &mut rng)?;
            Ok(tape.value(out).clone())
        })
        .collect();
    let d = embedder.output_dim();
    let mut data = Vec::with_capacity(idx.len() * d);
    for p in parts {
        data.extend_from_slice(p?.data());
    }
    Tensor::new(vec![idx.len(), d], data)
}

fn rows(t: &Tensor<f32>, idx: &[usize]) -> Tensor<f32> {
    let d = t.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::new(vec![idx.len(), d], data).expect("row batch shape")
}

/// Trains a fresh decoder to reconstruct panels from the embedder's frozen
/// features; the embedder is audited unchanged afterwards.
pub fn reconstruction_probe(embedder: &PanelEmbedder<f32>, panels: &PanelSet, cfg: &ProbeConfig) -> Result<(ProbeDecoder, ProbeReport)> {
    if panels.len() < 2 {
        return Err(Error::param("a reconstruction probe needs at least 2 panels"));
    }
    if panels.resolution != embedder.config.resolution {
        return Err(Error::shape(format!(
            "panels at {} px for an embedder at {} px",
            panels.resolution, embedder.config.resolution
        )));
    }
    let hash = embedder.backbone.content_hash();
    let features = panel_features(embedder, panels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dec = ProbeDecoder::new(panels.resolution, embedder.output_dim(), &mut rng)?;
    let mut adam = AdamState::new(cfg.lr);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..panels.len()).collect();
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0);
        for idx in order.chunks(cfg.batch_panels.max(2)).filter(|c| c.len() >= 2) {
            let mut tape = Tape::new();
            let bound = dec.model.params.bind(&mut tape);
            let z = tape.constant(rows(&features, idx));
            let x = tape.constant(panels.batch(idx));
            let x_hat = dec.model.decode_on(&mut tape, &bound, z, Mode::Train)?;
            let diff = tape.sub(x_hat, x)?;
            let sq = tape.mul(diff, diff)?;
            let sse = tape.sum_all(sq)?;
            let loss = tape.scale(sse, 1.0 / idx.len() as f32)?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(Error::Numeric(Diagnostic {
                    phase: "probe".into(),
                    step,
                    detail: format!("non-finite reconstruction loss in epoch {epoch}; decoder {}", dec.model.params.content_hash()),
                }));
            }
            let grads = tape.backward(loss)?;
            dec.model.params.zero_grad();
            dec.model.params.accumulate(&grads, &bound)?;
            adam_step(&mut dec.model.params, &mut adam)?;
            sum += value * idx.len() as f64;
            count += idx.len();
            step += 1;
        }
        epoch_loss.push(sum / count.max(1) as f64);
    }
    if embedder.backbone.content_hash() != hash {
        return Err(Error::contract("embedder changed during probe training"));
    }
    let final_mse = probe_mse(&mut dec, &features, panels)?;
    let report = ProbeReport {
        embedder: embedder.variant.to_string(),
        feature_dim: embedder.output_dim(),
        panels: panels.len(),
        epochs: cfg.epochs,
        epoch_loss,
        final_mse,
        embedder_hash: hash,
    };
    Ok((dec, report))
}

/// Mean per-panel summed squared error of eval-mode reconstructions.
pub fn probe_mse(dec: &mut ProbeDecoder, features: &Tensor<f32>, panels: &PanelSet) -> Result<f64> {
    let idx: Vec<usize> = (0..panels.len()).collect();
    let mut total = 0.0;
    for c in idx.chunks(FEATURE_CHUNK) {
        let out = dec.decode(&rows(features, c))?;
        let x = panels.batch(c);
        total += x.data().iter().zip(out.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
    }
    Ok(total / panels.len() as f64)
}

/// Inputs on the top row, reconstructions below, for the first `count` panels.
pub fn probe_strip(dec: &mut ProbeDecoder, embedder: &PanelEmbedder<f32>, panels: &PanelSet, count: usize) -> Result<GrayImage> {
    let shown = panels.first(count.max(1));
    let r = panels.resolution;
    let out = dec.decode(&panel_features(embedder, &shown)?)?;
    let mut img = GrayImage::new(shown.len() * r, 2 * r);
    for i in 0..shown.len() {
        img.paste_unit(i * r, 0, r, shown.panel(i));
        img.paste_unit(i * r, r, r, &out.data()[i * r * r..(i + 1) * r * r]);
    }
    Ok(img)
}
