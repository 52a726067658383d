mod common;

use common::{rel_err, seeded, toy_panels, H};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ravenforge::tensor::{Kind, Mode, ParamSet, Tape, Tensor};
use ravenforge::vae::*;
use ravenforge::Error;

fn mini_config() -> VaeConfig {
    VaeConfig {
        resolution: 8,
        latent_dim: 3,
        channels: 2,
        layers: 2,
    }
}

/// Full β-ELBO of the miniature VAE with fixed images and noise.
fn mini_loss(params: &ParamSet<f64>, x: &Tensor<f64>, noise: &Tensor<f64>, beta: f64) -> (Tape<f64>, ParamSet<f64>, ravenforge::tensor::Bound, ElboVars) {
    let mut model = VaeModel::<f64> {
        config: mini_config(),
        params: params.clone(),
    };
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let (mu, lv) = model.encode_on(&mut tape, &bound, xv, Mode::Train).unwrap();
    let nv = tape.constant(noise.clone());
    let z = reparameterize_on(&mut tape, mu, lv, nv).unwrap();
    let xh = model.decode_on(&mut tape, &bound, z, Mode::Train).unwrap();
    let e = elbo_on(&mut tape, xv, xh, mu, lv, beta).unwrap();
    (tape, model.params, bound, e)
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let mut rng = seeded(5);
    let model = VaeModel::<f64>::new(mini_config(), &mut rng).unwrap();
    let x = Tensor::new(vec![3, 1, 8, 8], (0..192).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let noise = Tensor::new(vec![3, 3], (0..9).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let beta = 0.7;
    let (tape, _, bound, e) = mini_loss(&model.params, &x, &noise, beta);
    let grads = tape.backward(e.loss).unwrap();
    let names: Vec<String> = model
        .params
        .iter()
        .filter(|(_, k, _)| *k == Kind::Weight)
        .map(|(n, _, _)| n.to_string())
        .collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for name in &names {
        let analytic = grads.get(bound.var(name)).unwrap().to_vec();
        for i in 0..analytic.len() {
            let eval = |delta: f64| {
                let mut p = model.params.clone();
                p.get_mut(name).unwrap().data_mut()[i] += delta;
                let (t, _, _, e) = mini_loss(&p, &x, &noise, beta);
                t.value(e.loss).item()
            };
            let numeric = (eval(H) - eval(-H)) / (2.0 * H);
            // Conv biases feeding batch norm have an exactly zero gradient.
            if analytic[i] == 0.0 && numeric.abs() < 1e-8 {
                continue;
            }
            worst = worst.max(rel_err(analytic[i], numeric));
            checked += 1;
        }
    }
    assert!(checked > 150, "only {checked} coordinates checked");
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn reparameterized_samples_have_expected_moments() {
    let n = 100_000;
    let mut rng = seeded(77);
    let mu = Tensor::<f64>::full(&[n, 1], 1.0);
    let lv = Tensor::full(&[n, 1], 4f64.ln());
    let noise = Tensor::new(vec![n, 1], (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let z = reparameterize(&mu, &lv, &noise).unwrap();
    let mean = z.data().iter().sum::<f64>() / n as f64;
    let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    assert!((var - 4.0).abs() < 0.1, "var {var}");
}

#[test]
fn reparameterization_passes_gradient_to_both_heads() {
    let mut tape = Tape::<f64>::new();
    let mu = tape.leaf(Tensor::from_slice(&[1, 2], &[0.5, -0.2]).unwrap().trainable());
    let lv = tape.leaf(Tensor::from_slice(&[1, 2], &[0.3, 0.1]).unwrap().trainable());
    let e = tape.constant(Tensor::from_slice(&[1, 2], &[1.5, -0.5]).unwrap());
    let z = reparameterize_on(&mut tape, mu, lv, e).unwrap();
    let s = tape.sum_all(z).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(mu).unwrap(), &[1.0, 1.0]);
    let want: Vec<f64> = [(0.3f64, 1.5f64), (0.1, -0.5)].iter().map(|(l, n)| 0.5 * (0.5 * l).exp() * n).collect();
    for (a, b) in g.get(lv).unwrap().iter().zip(&want) {
        assert!((a - b).abs() < 1e-15);
    }
}

/// Monte-Carlo `E_q[log q(z) − log p(z)]` for a diagonal Gaussian posterior.
fn mc_kl(mu: &[f64], lv: &[f64], samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut acc = 0.0;
    for _ in 0..samples {
        let mut lr = 0.0;
        for (m, l) in mu.iter().zip(lv) {
            let eps: f64 = rng.sample(StandardNormal);
            let sigma = (0.5 * l).exp();
            let z = m + sigma * eps;
            let log_q = -0.5 * eps * eps - sigma.ln();
            let log_p = -0.5 * z * z;
            lr += log_q - log_p;
        }
        acc += lr;
    }
    acc / samples as f64
}

#[test]
fn analytic_kl_matches_monte_carlo() {
    let mut rng = seeded(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mu: Vec<f64> = (0..64).map(|_| rng.random_range(-1.5..1.5)).collect();
        let lv: Vec<f64> = (0..64).map(|_| rng.random_range(-1.5..1.0)).collect();
        let (per, total) = kl_divergence(&Tensor::from_slice(&[1, 64], &mu).unwrap(), &Tensor::from_slice(&[1, 64], &lv).unwrap()).unwrap();
        assert!(per.iter().all(|&v| v >= 0.0));
        let mc = mc_kl(&mu, &lv, 100_000, &mut rng);
        worst = worst.max((mc - total).abs() / total);
    }
    assert!(worst < 0.01, "worst relative gap {worst}");
}

#[test]
fn kl_is_positive_away_from_the_prior() {
    let mut rng = seeded(3);
    for _ in 0..1000 {
        let m: f64 = rng.random_range(-2.0..2.0);
        let l: f64 = rng.random_range(-2.0..2.0);
        let (_, k) = kl_divergence(&Tensor::from_slice(&[1, 1], &[m]).unwrap(), &Tensor::from_slice(&[1, 1], &[l]).unwrap()).unwrap();
        assert!(k > 0.0);
    }
}

#[test]
fn reconstruction_halves_well_within_two_thousand_steps() {
    let panels = toy_panels(200, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = VaeModel::new(VaeConfig::new(40), &mut rng).unwrap();
    let cfg = VaeTrainConfig {
        epochs: 50,
        batch_panels: 20,
        beta: BetaSpec::fixed(0.01),
        seed: 4,
        ..VaeTrainConfig::default()
    };
    let run = train_vae_panels(&mut model, &panels, &cfg).unwrap();
    assert_eq!(run.log.len(), 500);
    let window = |s: &[StepLog]| s.iter().map(|l| l.elbo.reconstruction).sum::<f64>() / s.len() as f64;
    let first = window(&run.log[..10]);
    let last = window(&run.log[run.log.len() - 10..]);
    assert!(last <= 0.5 * first, "reconstruction {first} → {last}");
}

#[test]
fn seeded_training_is_reproducible_and_checkpoints_round_trip() {
    let panels = toy_panels(48, 2);
    let cfg = VaeTrainConfig {
        epochs: 2,
        batch_panels: 16,
        seed: 9,
        ..VaeTrainConfig::default()
    };
    let train = || {
        let mut m = VaeModel::new(VaeConfig::new(40), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let run = train_vae_panels(&mut m, &panels, &cfg).unwrap();
        (m, run)
    };
    let (a, ra) = train();
    let (b, rb) = train();
    assert_eq!(ra.log, rb.log);
    assert_eq!(a.params.content_hash(), b.params.content_hash());
    let betas: Vec<f64> = ra.log.iter().map(|l| l.elbo.beta_used).collect();
    assert!(betas.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(betas[0], 0.5);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vae.rvf");
    save_vae(&a, Some(ra.schedule), 9, ra.log.len() as u64, &path).unwrap();
    let (mut back, meta) = load_vae(&path).unwrap();
    assert_eq!(meta.latent_dim, 64);
    assert_eq!(meta.step, 6);
    assert_eq!(back.params.content_hash(), a.params.content_hash());
    let x = panels.batch(&[0, 1]);
    let mut a = a;
    assert_eq!(a.encode(&x, Mode::Eval).unwrap(), back.encode(&x, Mode::Eval).unwrap());
}

#[test]
fn non_finite_input_aborts_with_a_numeric_diagnostic() {
    let mut panels = toy_panels(4, 3);
    panels.pixels[5] = f32::NAN;
    let mut m = VaeModel::new(VaeConfig::new(40), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let cfg = VaeTrainConfig {
        epochs: 1,
        batch_panels: 4,
        ..VaeTrainConfig::default()
    };
    match train_vae_panels(&mut m, &panels, &cfg) {
        Err(Error::Numeric(d)) => {
            assert_eq!(d.phase, "train-vae");
            assert_eq!(d.step, 0);
        }
        other => panic!("expected a numeric abort, got {other:?}"),
    }
}

#[test]
fn dataset_batches_flatten_sixteen_panels_per_problem() {
    use ravenforge::pgm::*;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let problems: Vec<Problem> = (0..5)
        .map(|_| generate_problem(&mut rng, &StructureFilter::default(), 40, Regime::Neutral).unwrap())
        .collect();
    let data = Dataset::from_problems(40, &problems);
    let mut m = VaeModel::new(VaeConfig::new(40), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let cfg = VaeTrainConfig {
        epochs: 1,
        batch_problems: 2,
        ..VaeTrainConfig::default()
    };
    let run = train_vae(&mut m, &data, &cfg).unwrap();
    let sizes: Vec<usize> = run.log.iter().map(|l| l.batch_size).collect();
    assert_eq!(sizes, vec![32, 32, 16]);
    let empty = Dataset {
        resolution: 40,
        problems: vec![],
    };
    assert!(train_vae(&mut m, &empty, &cfg).is_err());
}
