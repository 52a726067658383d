use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embed::{problem_batch, PanelEmbedder, Variant};
use super::model::{WrenConfig, WrenModel};
use crate::error::{Diagnostic, Error, Result};
use crate::pgm::{Dataset, StoredProblem};
use crate::tensor::{adam_step, checkpoint, AdamState, Mode, Tape, Tensor};
use crate::vae::{sidecar_path, VaeConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrenTrainConfig {
    pub frozen_epochs: usize,
    pub finetune_epochs: usize,
    pub lr: f64,
    pub batch_problems: usize,
    pub seed: u64,
}

impl Default for WrenTrainConfig {
    fn default() -> Self {
        Self {
            frozen_epochs: 6,
            finetune_epochs: 2,
            lr: 3e-4,
            batch_problems: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Frozen,
    Finetune,
}

/// Running training-mode statistics of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: Phase,
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrenRun {
    pub log: Vec<EpochLog>,
    /// Backbone hash before training and after the frozen phase.
    pub embedder_hash_before: String,
    pub embedder_hash_after_frozen: String,
    pub final_phase: Phase,
}

fn numeric(step: usize, detail: String) -> Error {
    Error::Numeric(Diagnostic {
        phase: "train-wren".into(),
        step,
        detail,
    })
}

/// One optimizer step; returns the batch loss and the number of correct answers.
pub fn wren_step(
    model: &mut WrenModel<f32>,
    embedder: &mut PanelEmbedder<f32>,
    adam: &mut AdamState<f32>,
    embedder_adam: Option<&mut AdamState<f32>>,
    x: Tensor<f32>,
    targets: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let ebound = embedder.backbone.bind(&mut tape);
    let xv = tape.constant(x);
    let emb = embedder.embed_on(&mut tape, &ebound, xv, Mode::Train, rng)?;
    let scores = model.scores_on(&mut tape, &bound, emb, Mode::Train, rng)?;
    let loss = tape.cross_entropy(scores, targets)?;
    let value = tape.value(loss).item() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "cross_entropy" });
    }
    let correct = argmax_rows(tape.value(scores)).iter().zip(targets).filter(|(a, b)| a == b).count();
    let grads = tape.backward(loss)?;
    model.params.zero_grad();
    model.params.accumulate(&grads, &bound)?;
    adam_step(&mut model.params, adam)?;
    if let Some(state) = embedder_adam {
        embedder.backbone.zero_grad();
        embedder.backbone.accumulate(&grads, &ebound)?;
        adam_step(&mut embedder.backbone, state)?;
    }
    Ok((value, correct))
}

fn argmax_rows(scores: &Tensor<f32>) -> Vec<usize> {
    scores
        .data()
        .chunks(8)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Trains the head for `frozen_epochs` with the backbone frozen, then for
/// `finetune_epochs` with the backbone unfrozen where the variant allows it.
pub fn train_wren(
    data: &Dataset,
    embedder: &mut PanelEmbedder<f32>,
    model: &mut WrenModel<f32>,
    cfg: &WrenTrainConfig,
) -> Result<WrenRun> {
    if data.is_empty() {
        return Err(Error::param("cannot train WReN on an empty dataset"));
    }
    if data.resolution != embedder.config.resolution {
        return Err(Error::shape(format!(
            "dataset at {} px for an embedder at {} px",
            data.resolution, embedder.config.resolution
        )));
    }
    if model.config.embed_dim != embedder.output_dim() {
        return Err(Error::shape(format!(
            "WReN expects {}-wide embeddings, embedder gives {}",
            model.config.embed_dim,
            embedder.output_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.lr);
    let before = embedder.backbone.content_hash();
    let mut after_frozen = before.clone();
    let mut log = Vec::new();
    let mut step = 0usize;
    let mut final_phase = Phase::Frozen;
    for (phase, epochs) in [(Phase::Frozen, cfg.frozen_epochs), (Phase::Finetune, cfg.finetune_epochs)] {
        let trains = embedder.variant.trains_backbone(phase == Phase::Finetune);
        embedder.backbone.set_trainable(trains);
        let mut embedder_adam = trains.then(|| AdamState::new(cfg.lr));
        if epochs > 0 {
            final_phase = phase;
        }
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng);
            let (mut loss_sum, mut correct, mut steps) = (0.0, 0, 0);
            for idx in order.chunks(cfg.batch_problems.max(1)) {
                let (x, targets) = problem_batch(data, idx);
                let (loss, c) = wren_step(model, embedder, &mut adam, embedder_adam.as_mut(), x, &targets, &mut rng)
                    .map_err(|e| match e {
                        Error::NonFinite { op } => numeric(
                            step,
                            format!(
                                "non-finite {op} in {phase:?} epoch {epoch}; head {} backbone {}",
                                model.params.content_hash(),
                                embedder.backbone.content_hash()
                            ),
                        ),
                        other => other,
                    })?;
                loss_sum += loss * idx.len() as f64;
                correct += c;
                steps += 1;
                step += 1;
            }
            log.push(EpochLog {
                phase,
                epoch,
                steps,
                mean_loss: loss_sum / data.len() as f64,
                train_accuracy: correct as f64 / data.len() as f64,
            });
        }
        if phase == Phase::Frozen {
            after_frozen = embedder.backbone.content_hash();
            let frozen = embedder.variant != Variant::CnnBaseline;
            if frozen && after_frozen != before {
                return Err(Error::contract("embedder changed while frozen"));
            }
        }
    }
    embedder.backbone.set_trainable(true);
    Ok(WrenRun {
        log,
        embedder_hash_before: before,
        embedder_hash_after_frozen: after_frozen,
        final_phase,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub answer: usize,
}

fn softmax8(scores: &[f32]) -> Vec<f64> {
    let mx = scores.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let e: Vec<f64> = scores.iter().map(|&v| (v as f64 - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Eval-mode predictions for the selected problems.
pub fn predict_batch(model: &WrenModel<f32>, embedder: &PanelEmbedder<f32>, data: &Dataset, idx: &[usize]) -> Result<Vec<Prediction>> {
    let mut emb = embedder.clone();
    let (x, _) = problem_batch(data, idx);
    let mut tape = Tape::new();
    let bound = emb.backbone.bind(&mut tape);
    let xv = tape.constant(x);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let e = emb.embed_on(&mut tape, &bound, xv, Mode::Eval, &mut rng)?;
    let scores = model.scores(tape.value(e))?;
    let answers = argmax_rows(&scores);
    Ok(scores
        .data()
        .chunks(8)
        .zip(answers)
        .map(|(row, answer)| Prediction {
            probabilities: softmax8(row),
            answer,
        })
        .collect())
}

pub fn predict(model: &WrenModel<f32>, embedder: &PanelEmbedder<f32>, problem: &StoredProblem, resolution: usize) -> Result<Prediction> {
    let data = Dataset {
        resolution,
        problems: vec![problem.clone()],
    };
    Ok(predict_batch(model, embedder, &data, &[0])?.remove(0))
}

/// Problems per parallel evaluation chunk; results do not depend on it.
pub const EVAL_CHUNK: usize = 16;

/// Eval-mode predictions for every problem, parallel over fixed chunks.
pub fn predict_dataset(model: &WrenModel<f32>, embedder: &PanelEmbedder<f32>, data: &Dataset) -> Result<Vec<Prediction>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let parts: Vec<Result<Vec<Prediction>>> =
        idx.par_chunks(EVAL_CHUNK).map(|c| predict_batch(model, embedder, data, c)).collect();
    let mut out = Vec::with_capacity(data.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn accuracy(model: &WrenModel<f32>, embedder: &PanelEmbedder<f32>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::param("accuracy of an empty dataset"));
    }
    let preds = predict_dataset(model, embedder, data)?;
    let hits = preds.iter().zip(&data.problems).filter(|(p, q)| p.answer == q.target as usize).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Sidecar written next to a WReN checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrenMeta {
    pub variant: Variant,
    pub phase: Phase,
    pub wren: WrenConfig,
    pub embedder: VaeConfig,
    pub train: Option<WrenTrainConfig>,
}

/// Stores head and backbone parameters together in one checkpoint.
pub fn save_wren(
    model: &WrenModel<f32>,
    embedder: &PanelEmbedder<f32>,
    phase: Phase,
    train: Option<WrenTrainConfig>,
    path: &Path,
) -> Result<WrenMeta> {
    let meta = WrenMeta {
        variant: embedder.variant,
        phase,
        wren: model.config,
        embedder: embedder.config,
        train,
    };
    let mut records = model.params.to_records();
    records.extend(embedder.backbone.to_records());
    checkpoint::save(path, &records)?;
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

pub fn load_wren(path: &Path) -> Result<(WrenModel<f32>, PanelEmbedder<f32>, WrenMeta)> {
    let meta: WrenMeta = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    let records = checkpoint::load(path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = WrenModel::new(meta.wren, &mut rng)?;
    let mut embedder = if meta.variant.is_vae() {
        let vae = crate::vae::VaeModel::<f32>::new(meta.embedder, &mut rng)?;
        PanelEmbedder::from_vae(&vae, meta.variant)?
    } else {
        PanelEmbedder::cnn_baseline(meta.embedder, &mut rng)?
    };
    let (head, back): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| model.params.contains(&r.name));
    model.params.load_records(&head)?;
    embedder.backbone.load_records(&back)?;
    Ok((model, embedder, meta))
}
