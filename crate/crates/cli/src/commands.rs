use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ravenforge::eval::{
    evaluate, latent_distribution, latent_support, latent_traversal, plot_distributions, probe_strip, reconstruction_probe,
    encode_panels, ProbeConfig, RegimeReport, WrenPredictor,
};
use ravenforge::pgm::{build_dataset, load_split, load_split_info, Counts, DatasetConfig, SplitName};
use ravenforge::vae::{
    load_vae, save_vae, sidecar_path, train_vae, BetaSpec, PanelSet, RampShape, VaeConfig, VaeModel, VaeTrainConfig,
};
use ravenforge::wren::{
    load_wren, save_wren, train_wren, PanelEmbedder, Variant, WrenConfig, WrenModel, WrenTrainConfig,
};
use ravenforge::{Error, Result};

use crate::args::*;
use crate::config::resolve;
use crate::manifest::{manifest_path, suffixed, Manifest};
use crate::table::regime_table;

pub const THREADS_ENV: &str = "RAVENFORGE_THREADS";

fn required<'a>(p: &'a Path, name: &str) -> Result<&'a Path> {
    if p.as_os_str().is_empty() {
        return Err(Error::param(format!("--{name} is required")));
    }
    Ok(p)
}

/// Thread count after the environment override; installs the global pool.
fn threads(configured: usize) -> Result<usize> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::param(format!("{THREADS_ENV}={v} is not a thread count")))?,
        Err(_) => configured,
    };
    if n == 0 {
        return Err(Error::param("thread count must be positive"));
    }
    // A pool already installed by an earlier call in the same process stays.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(n)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

fn finish(mut m: Manifest, out: &Path, outputs: &[PathBuf]) -> Result<()> {
    for p in outputs {
        m.output(p)?;
    }
    m.write(&manifest_path(out))
}

fn parse_ramp_shape(s: &str) -> Result<RampShape> {
    match s {
        "linear" => Ok(RampShape::Linear),
        "cosine" => Ok(RampShape::Cosine),
        _ => s
            .strip_prefix("steps:")
            .and_then(|n| n.parse().ok())
            .map(RampShape::Steps)
            .ok_or_else(|| Error::param(format!("unknown ramp shape {s}; use linear, cosine or steps:N"))),
    }
}

fn dataset_inputs(m: &mut Manifest, data: &Path, splits: &[SplitName]) -> Result<()> {
    m.input(&data.join("split.json"))?;
    for &s in splits {
        m.input(&data.join(format!("{}.pgmd", s.as_str())))?;
    }
    Ok(())
}

fn checkpoint_inputs(m: &mut Manifest, path: &Path) -> Result<()> {
    m.input(path)?;
    m.input(&sidecar_path(path))
}

pub fn gen(flags: &GenFlags) -> Result<()> {
    let mut cfg: GenConfig = resolve(flags.config.as_deref(), flags)?;
    cfg.threads = threads(cfg.threads)?;
    let out = required(&cfg.out, "out")?.to_path_buf();
    let dc = DatasetConfig {
        regime: cfg.regime.parse()?,
        counts: Counts {
            train: cfg.train,
            val: cfg.val,
            test: cfg.test,
        },
        resolution: cfg.res,
        seed: cfg.seed,
    };
    let m = Manifest::new("gen", &cfg)?;
    build_dataset(&dc, &out)?;
    let mut outputs = vec![out.join("split.json")];
    for s in SplitName::ALL {
        outputs.push(out.join(format!("{}.pgmd", s.as_str())));
        outputs.push(out.join(format!("{}.jsonl", s.as_str())));
    }
    finish(m, &out, &outputs)?;
    println!("wrote {} regime dataset ({} / {} / {}) to {}", dc.regime, cfg.train, cfg.val, cfg.test, out.display());
    Ok(())
}

#[derive(Serialize)]
struct VaeEpoch {
    epoch: usize,
    steps: usize,
    mean_loss: f64,
    mean_reconstruction: f64,
    mean_kl: f64,
    last_beta: f64,
}

pub fn train_vae_cmd(flags: &TrainVaeFlags) -> Result<()> {
    let mut cfg: TrainVaeConfig = resolve(flags.config.as_deref(), flags)?;
    cfg.threads = threads(cfg.threads)?;
    let data = required(&cfg.data, "data")?.to_path_buf();
    let out = required(&cfg.out, "out")?.to_path_buf();
    let mut m = Manifest::new("train-vae", &cfg)?;
    dataset_inputs(&mut m, &data, &[SplitName::Train])?;
    let train = load_split(&data, SplitName::Train)?;
    let vc = VaeConfig {
        latent_dim: cfg.latent_dim,
        ..VaeConfig::new(train.resolution)
    };
    let mut model = VaeModel::new(vc, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let tc = VaeTrainConfig {
        epochs: cfg.epochs,
        lr: cfg.lr,
        batch_problems: cfg.batch,
        beta: BetaSpec {
            start: cfg.beta_start,
            end: cfg.beta_end,
            ramp_fraction: cfg.ramp,
            shape: parse_ramp_shape(&cfg.ramp_shape)?,
        },
        seed: cfg.seed,
        ..VaeTrainConfig::default()
    };
    let run = train_vae(&mut model, &train, &tc)?;
    save_vae(&model, Some(run.schedule), cfg.seed, run.log.len() as u64, &out)?;
    let epochs: Vec<VaeEpoch> = (0..cfg.epochs)
        .map(|e| {
            let steps: Vec<_> = run.log.iter().filter(|l| l.epoch == e).collect();
            let n = steps.len().max(1) as f64;
            VaeEpoch {
                epoch: e,
                steps: steps.len(),
                mean_loss: steps.iter().map(|l| l.elbo.loss).sum::<f64>() / n,
                mean_reconstruction: steps.iter().map(|l| l.elbo.reconstruction).sum::<f64>() / n,
                mean_kl: steps.iter().map(|l| l.elbo.kl_total).sum::<f64>() / n,
                last_beta: steps.last().map_or(0.0, |l| l.elbo.beta_used),
            }
        })
        .collect();
    let log = suffixed(&out, ".log.json");
    write_json(&log, &epochs)?;
    finish(m, &out, &[out.clone(), sidecar_path(&out), log])?;
    if let Some(last) = epochs.last() {
        println!(
            "trained VAE for {} steps: reconstruction {:.3}, KL {:.3}, β {:.3}",
            run.log.len(),
            last.mean_reconstruction,
            last.mean_kl,
            last.last_beta
        );
    }
    Ok(())
}

pub fn train_wren_cmd(flags: &TrainWrenFlags) -> Result<()> {
    let mut cfg: TrainWrenConfig = resolve(flags.config.as_deref(), flags)?;
    cfg.threads = threads(cfg.threads)?;
    let data = required(&cfg.data, "data")?.to_path_buf();
    let out = required(&cfg.out, "out")?.to_path_buf();
    let variant: Variant = cfg.variant.parse()?;
    let mut m = Manifest::new("train-wren", &cfg)?;
    dataset_inputs(&mut m, &data, &[SplitName::Train])?;
    let train = load_split(&data, SplitName::Train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut embedder = if variant.is_vae() {
        let path = required(&cfg.embedder, "embedder")?;
        checkpoint_inputs(&mut m, path)?;
        PanelEmbedder::from_vae(&load_vae(path)?.0, variant)?
    } else {
        PanelEmbedder::cnn_baseline(VaeConfig::new(train.resolution), &mut rng)?
    };
    let wc = WrenConfig {
        embed_dim: embedder.output_dim(),
        g_width: cfg.g_width,
        g_layers: cfg.g_layers,
        f_width: cfg.f_width,
        dropout: cfg.dropout,
    };
    let mut model = WrenModel::new(wc, &mut rng)?;
    let tc = WrenTrainConfig {
        frozen_epochs: cfg.frozen_epochs,
        finetune_epochs: cfg.finetune_epochs,
        lr: cfg.lr,
        batch_problems: cfg.batch,
        seed: cfg.seed,
    };
    let run = train_wren(&train, &mut embedder, &mut model, &tc)?;
    save_wren(&model, &embedder, run.final_phase, Some(tc), &out)?;
    let log = suffixed(&out, ".log.json");
    write_json(&log, &run)?;
    finish(m, &out, &[out.clone(), sidecar_path(&out), log])?;
    if let Some(last) = run.log.last() {
        println!("trained {variant} WReN: final epoch loss {:.4}, running train accuracy {:.3}", last.mean_loss, last.train_accuracy);
    }
    Ok(())
}

pub fn eval_cmd(flags: &EvalFlags) -> Result<()> {
    let mut cfg: EvalConfig = resolve(flags.config.as_deref(), flags)?;
    cfg.threads = threads(cfg.threads)?;
    let data = required(&cfg.data, "data")?.to_path_buf();
    let wren = required(&cfg.wren, "wren")?.to_path_buf();
    let out = required(&cfg.out, "out")?.to_path_buf();
    let splits: Vec<SplitName> = match cfg.split.as_str() {
        "both" => vec![SplitName::Val, SplitName::Test],
        s => vec![s.parse()?],
    };
    if splits.contains(&SplitName::Train) {
        return Err(Error::param("evaluate on val, test or both"));
    }
    let mut m = Manifest::new("eval", &cfg)?;
    dataset_inputs(&mut m, &data, &splits)?;
    checkpoint_inputs(&mut m, &wren)?;
    let (model, embedder, meta) = load_wren(&wren)?;
    if !cfg.embedder.as_os_str().is_empty() {
        checkpoint_inputs(&mut m, &cfg.embedder)?;
        if meta.variant == Variant::VaeFrozen {
            let vae = PanelEmbedder::from_vae(&load_vae(&cfg.embedder)?.0, Variant::VaeFrozen)?;
            if vae.backbone.content_hash() != embedder.backbone.content_hash() {
                return Err(Error::contract("frozen WReN backbone differs from the given VAE encoder"));
            }
        }
    }
    let (dc, _) = load_split_info(&data)?;
    let val = splits.contains(&SplitName::Val).then(|| load_split(&data, SplitName::Val)).transpose()?;
    let test = splits.contains(&SplitName::Test).then(|| load_split(&data, SplitName::Test)).transpose()?;
    let predictor = WrenPredictor {
        model: &model,
        embedder: &embedder,
    };
    let report = evaluate(&predictor, dc.regime, meta.variant, val.as_ref(), test.as_ref())?;
    write_json(&out, &report)?;
    finish(m, &out, &[out.clone()])?;
    let show = |v: Option<f64>| v.map_or("-".to_string(), |a| format!("{:.3}", a));
    println!(
        "{} {}: val {} test {} kappa {}",
        report.regime,
        report.variant,
        show(report.val_accuracy),
        show(report.test_accuracy),
        show(report.test_kappa)
    );
    Ok(())
}

pub fn traverse(flags: &TraverseFlags) -> Result<()> {
    let mut cfg: TraverseConfig = resolve(flags.config.as_deref(), flags)?;
    cfg.threads = threads(cfg.threads)?;
    let vae_path = required(&cfg.vae, "vae")?.to_path_buf();
    let data = required(&cfg.data, "data")?.to_path_buf();
    let out = required(&cfg.out, "out")?.to_path_buf();
    let split: SplitName = cfg.split.parse()?;
    let mut m = Manifest::new("traverse", &cfg)?;
    dataset_inputs(&mut m, &data, &[split])?;
    checkpoint_inputs(&mut m, &vae_path)?;
    let (vae, _) = load_vae(&vae_path)?;
    let panels = PanelSet::from_dataset(&load_split(&data, split)?);
    if cfg.image >= panels.len() {
        return Err(Error::param(format!("image {} out of range 0..{}", cfg.image, panels.len())));
    }
    let probe = panels.first(cfg.probe_count);
    let support = latent_support(&vae, &probe)?;
    let dims = if cfg.dims.is_empty() { support.top(8) } else { cfg.dims.clone() };
    let t = latent_traversal(&vae, panels.panel(cfg.image), &dims, cfg.steps, &support)?;
    t.grid.save_png(&out)?;
    let support_path = suffixed(&out, ".support.json");
    write_json(&support_path, &support)?;

    let hist_dims = if cfg.hist_dims.is_empty() { support.top(2) } else { cfg.hist_dims.clone() };
    let (mu, lv) = encode_panels(&vae, &probe)?;
    let dists = latent_distribution(&mu, &lv, &hist_dims, cfg.bins, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let plot = suffixed(&out, ".dist.png");
    plot_distributions(&dists, 60).save_png(&plot)?;
    let mut text = String::new();
    for d in &dists {
        for (name, h) in [("mu", &d.mu), ("sigma", &d.sigma), ("z", &d.z)] {
            text += &format!("# dim {} {name}\n", d.dim);
            text += &h.to_text();
        }
    }
    let hist = suffixed(&out, ".dist.txt");
    std::fs::write(&hist, text)?;
    let summary = suffixed(&out, ".dist.json");
    write_json(&summary, &dists)?;
    finish(m, &out, &[out.clone(), support_path, plot, hist, summary])?;
    println!("traversed dims {dims:?} over {} probe panels", support.probe_count);
    Ok(())
}

/// Reads the backbone of a WReN checkpoint, or the encoder of a VAE one.
fn load_embedder(path: &Path) -> Result<PanelEmbedder<f32>> {
    let sidecar: serde_json::Value = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    if sidecar.get("variant").is_some() {
        Ok(load_wren(path)?.1)
    } else {
        PanelEmbedder::from_vae(&load_vae(path)?.0, Variant::VaeFrozen)
    }
}

pub fn probe(flags: &ProbeFlags) -> Result<()> {
    let mut cfg: ProbeConfigArgs = resolve(flags.config.as_deref(), flags)?;
    cfg.threads = threads(cfg.threads)?;
    let emb_path = required(&cfg.embedder, "embedder")?.to_path_buf();
    let data = required(&cfg.data, "data")?.to_path_buf();
    let out = required(&cfg.out, "out")?.to_path_buf();
    let mut m = Manifest::new("probe", &cfg)?;
    dataset_inputs(&mut m, &data, &[SplitName::Train])?;
    checkpoint_inputs(&mut m, &emb_path)?;
    let embedder = load_embedder(&emb_path)?;
    let panels = PanelSet::from_dataset(&load_split(&data, SplitName::Train)?).first(cfg.panels);
    let pc = ProbeConfig {
        epochs: cfg.epochs,
        batch_panels: cfg.batch,
        lr: cfg.lr,
        seed: cfg.seed,
    };
    let (mut dec, report) = reconstruction_probe(&embedder, &panels, &pc)?;
    write_json(&out, &report)?;
    let strip = suffixed(&out, ".strip.png");
    probe_strip(&mut dec, &embedder, &panels, cfg.strip)?.save_png(&strip)?;
    finish(m, &out, &[out.clone(), strip])?;
    println!("{} probe over {} panels: per-panel squared error {:.3}", report.embedder, report.panels, report.final_mse);
    Ok(())
}

pub fn report(flags: &ReportFlags) -> Result<()> {
    let mut reports: Vec<RegimeReport> = Vec::with_capacity(flags.reports.len());
    for p in &flags.reports {
        reports.push(serde_json::from_slice(&std::fs::read(p)?)?);
    }
    let table = regime_table(&reports)?;
    print!("{table}");
    if let Some(out) = &flags.out {
        std::fs::write(out, &table)?;
        let mut m = Manifest::new("report", &serde_json::json!({ "reports": flags.reports, "out": out }))?;
        for p in &flags.reports {
            m.input(p)?;
        }
        finish(m, out, &[out.clone()])?;
    }
    Ok(())
}

