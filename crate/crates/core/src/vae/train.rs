use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{elbo_on, kl_divergence, ElboBreakdown};
use super::model::{reparameterize_on, VaeConfig, VaeModel};
use super::schedule::{BetaSchedule, RampShape};
use crate::error::{Diagnostic, Error, Result};
use crate::pgm::Dataset;
use crate::tensor::{adam_step, checkpoint, AdamState, Mode, Tape, Tensor};

/// β curve parameters; the step count is filled in once the batch count is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSpec {
    pub start: f64,
    pub end: f64,
    pub ramp_fraction: f64,
    #[serde(default)]
    pub shape: RampShape,
}

impl BetaSpec {
    pub fn annealed() -> Self {
        Self {
            start: 0.5,
            end: 4.0,
            ramp_fraction: 0.5,
            shape: RampShape::Linear,
        }
    }

    pub fn fixed(beta: f64) -> Self {
        Self {
            start: beta,
            end: beta,
            ramp_fraction: 1.0,
            shape: RampShape::Linear,
        }
    }

    pub fn schedule(&self, total_steps: u64) -> Result<BetaSchedule> {
        BetaSchedule::new(self.start, self.end, self.ramp_fraction, total_steps)?.with_shape(self.shape)
    }
}

impl Default for BetaSpec {
    fn default() -> Self {
        Self::annealed()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Problems per batch when training on a dataset; each adds 16 panels.
    pub batch_problems: usize,
    /// Panels per batch when training on a bare panel set.
    pub batch_panels: usize,
    pub beta: BetaSpec,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 3e-4,
            batch_problems: 32,
            batch_panels: 64,
            beta: BetaSpec::annealed(),
            seed: 0,
        }
    }
}

/// Per-step record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub batch_size: usize,
    pub elbo: ElboBreakdown,
}

#[derive(Debug, Clone)]
pub struct VaeRun {
    pub log: Vec<StepLog>,
    pub schedule: BetaSchedule,
}

/// Row-major `N×R²` pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSet {
    pub resolution: usize,
    pub pixels: Vec<f32>,
}

impl PanelSet {
    pub fn len(&self) -> usize {
        self.pixels.len() / (self.resolution * self.resolution)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Every panel of every problem, in storage order.
    pub fn from_dataset(d: &Dataset) -> Self {
        let mut pixels = Vec::with_capacity(d.len() * 16 * d.panel_len());
        for p in &d.problems {
            pixels.extend(p.panels.iter().map(|&v| v as f32 / 255.0));
        }
        Self {
            resolution: d.resolution,
            pixels,
        }
    }

    pub fn panel(&self, i: usize) -> &[f32] {
        let n = self.resolution * self.resolution;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// `len×1×R×R` tensor of the selected panels.
    pub fn batch(&self, idx: &[usize]) -> Tensor<f32> {
        let r = self.resolution;
        let mut data = Vec::with_capacity(idx.len() * r * r);
        for &i in idx {
            data.extend_from_slice(self.panel(i));
        }
        Tensor::new(vec![idx.len(), 1, r, r], data).expect("panel batch shape")
    }

    pub fn first(&self, n: usize) -> PanelSet {
        let k = n.min(self.len()) * self.resolution * self.resolution;
        PanelSet {
            resolution: self.resolution,
            pixels: self.pixels[..k].to_vec(),
        }
    }
}

fn numeric(step: u64, detail: String) -> Error {
    Error::Numeric(Diagnostic {
        phase: "train-vae".into(),
        step: step as usize,
        detail,
    })
}

pub fn standard_normal(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()).expect("noise shape")
}

/// One optimizer step on a batch; returns the loss terms before the update.
pub fn vae_step(
    model: &mut VaeModel<f32>,
    adam: &mut AdamState<f32>,
    x: Tensor<f32>,
    beta: f64,
    rng: &mut impl Rng,
) -> Result<ElboBreakdown> {
    let n = x.shape()[0];
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let xv = tape.constant(x);
    let (mu, lv) = model.encode_on(&mut tape, &bound, xv, Mode::Train)?;
    let noise = tape.constant(standard_normal(rng, &[n, model.config.latent_dim]));
    let z = reparameterize_on(&mut tape, mu, lv, noise)?;
    let x_hat = model.decode_on(&mut tape, &bound, z, Mode::Train)?;
    let terms = elbo_on(&mut tape, xv, x_hat, mu, lv, beta)?;
    let (kl_per_dim, kl_total) = kl_divergence(tape.value(mu), tape.value(lv))?;
    let reconstruction = tape.value(terms.reconstruction).item() as f64;
    let loss = tape.value(terms.loss).item() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "elbo" });
    }
    let grads = tape.backward(terms.loss)?;
    model.params.zero_grad();
    model.params.accumulate(&grads, &bound)?;
    adam_step(&mut model.params, adam)?;
    Ok(ElboBreakdown {
        reconstruction,
        kl_total,
        kl_per_dim,
        beta_used: beta,
        loss,
    })
}

/// Gradient descent on the β-ELBO over pre-built batches of panel indices.
fn run(
    model: &mut VaeModel<f32>,
    panels: &PanelSet,
    cfg: &VaeTrainConfig,
    epoch_batches: &dyn Fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>,
) -> Result<VaeRun> {
    if panels.is_empty() {
        return Err(Error::param("cannot train a VAE on an empty panel set"));
    }
    if panels.resolution != model.config.resolution {
        return Err(Error::shape(format!(
            "panels at {} px for a VAE at {} px",
            panels.resolution, model.config.resolution
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let probe = epoch_batches(&mut rng.clone()).len() as u64;
    let schedule = cfg.beta.schedule((probe * cfg.epochs as u64).max(1))?;
    let mut adam = AdamState::new(cfg.lr);
    let mut log = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        for idx in epoch_batches(&mut rng) {
            let beta = schedule.beta_at(step.min(schedule.total_steps))?;
            let batch = panels.batch(&idx);
            let elbo = vae_step(model, &mut adam, batch, beta, &mut rng).map_err(|e| match e {
                Error::NonFinite { op } => numeric(
                    step,
                    format!(
                        "non-finite {op} at beta {beta}, epoch {epoch}; last loss {:?}; params {}",
                        log.last().map(|l: &StepLog| l.elbo.loss),
                        model.params.content_hash()
                    ),
                ),
                other => other,
            })?;
            log.push(StepLog {
                step,
                epoch,
                batch_size: idx.len(),
                elbo,
            });
            step += 1;
        }
    }
    Ok(VaeRun { log, schedule })
}

fn chunk(order: Vec<usize>, size: usize) -> Vec<Vec<usize>> {
    order
        .chunks(size.max(2))
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Trains on a bare panel set with `cfg.batch_panels` panels per step.
pub fn train_vae_panels(model: &mut VaeModel<f32>, panels: &PanelSet, cfg: &VaeTrainConfig) -> Result<VaeRun> {
    let n = panels.len();
    let size = cfg.batch_panels;
    run(model, panels, cfg, &|rng| {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        chunk(order, size)
    })
}

/// Trains on a problem dataset: each batch holds the 16 panels of
/// `cfg.batch_problems` shuffled problems.
pub fn train_vae(model: &mut VaeModel<f32>, data: &Dataset, cfg: &VaeTrainConfig) -> Result<VaeRun> {
    if data.is_empty() {
        return Err(Error::param("cannot train a VAE on an empty dataset"));
    }
    let panels = PanelSet::from_dataset(data);
    let problems = data.len();
    let per = cfg.batch_problems.max(1);
    run(model, &panels, cfg, &|rng| {
        let mut order: Vec<usize> = (0..problems).collect();
        order.shuffle(rng);
        order
            .chunks(per)
            .map(|c| c.iter().flat_map(|&p| p * 16..p * 16 + 16).collect())
            .collect()
    })
}

/// Mean per-panel summed squared error of eval-mode reconstructions from
/// the posterior mean.
pub fn reconstruction_mse(model: &mut VaeModel<f32>, panels: &PanelSet, batch: usize) -> Result<f64> {
    let mut total = 0.0;
    let n = panels.len();
    let idx: Vec<usize> = (0..n).collect();
    for c in idx.chunks(batch.max(1)) {
        let x = panels.batch(c);
        let (mu, _) = model.encode(&x, Mode::Eval)?;
        let out = model.decode(&mu, Mode::Eval)?;
        total += x.data().iter().zip(out.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
    }
    Ok(total / n as f64)
}

/// Mean eval-mode KL per panel.
pub fn mean_kl(model: &mut VaeModel<f32>, panels: &PanelSet, batch: usize) -> Result<f64> {
    let mut total = 0.0;
    let n = panels.len();
    let idx: Vec<usize> = (0..n).collect();
    for c in idx.chunks(batch.max(1)) {
        let (mu, lv) = model.encode(&panels.batch(c), Mode::Eval)?;
        total += kl_divergence(&mu, &lv)?.1 * c.len() as f64;
    }
    Ok(total / n as f64)
}

/// Sidecar written next to a VAE checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeMeta {
    pub resolution: usize,
    pub latent_dim: usize,
    pub channels: usize,
    pub layers: usize,
    pub schedule: Option<BetaSchedule>,
    pub seed: u64,
    pub step: u64,
}

impl VaeMeta {
    pub fn config(&self) -> VaeConfig {
        VaeConfig {
            resolution: self.resolution,
            latent_dim: self.latent_dim,
            channels: self.channels,
            layers: self.layers,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_vae(model: &VaeModel<f32>, schedule: Option<BetaSchedule>, seed: u64, step: u64, path: &Path) -> Result<VaeMeta> {
    let c = model.config;
    let meta = VaeMeta {
        resolution: c.resolution,
        latent_dim: c.latent_dim,
        channels: c.channels,
        layers: c.layers,
        schedule,
        seed,
        step,
    };
    checkpoint::save(path, &model.params.to_records())?;
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

pub fn load_vae(path: &Path) -> Result<(VaeModel<f32>, VaeMeta)> {
    let meta: VaeMeta = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    let mut model = VaeModel::new(meta.config(), &mut ChaCha8Rng::seed_from_u64(0))?;
    model.params.load_records(&checkpoint::load(path)?)?;
    Ok((model, meta))
}
