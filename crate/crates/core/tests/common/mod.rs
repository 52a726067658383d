//! Test-only finite-difference oracle, independent of the tape's backward pass.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ravenforge::tensor::{Tape, Tensor, Var};

pub const H: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Evaluates `build` on fresh leaves and returns the scalar loss.
fn eval(inputs: &[Tensor<f64>], build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.value(loss).item()
}

/// Largest relative error between backward-pass gradients and central
/// differences, over every element of every input.
pub fn max_grad_error(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let inputs: Vec<Tensor<f64>> = inputs.into_iter().map(|t| t.trainable()).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= H;
            let numeric = (eval(&plus, &build) - eval(&minus, &build)) / (2.0 * H);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}

/// `sum(y ⊙ r)` for a fixed pseudo-random `r`, so every output element
/// contributes a distinct weight to the scalar being differentiated.
pub fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let mut rng = seeded(seed);
    let r = random_tensor(tape.shape(y), &mut rng);
    let rv = tape.constant(r);
    let prod = tape.mul(y, rv).unwrap();
    tape.sum_all(prod).unwrap()
}

/// Rendered grid panels of random structures at 40 px.
pub fn toy_panels(n: usize, seed: u64) -> ravenforge::vae::PanelSet {
    use ravenforge::pgm::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::new();
    let f = StructureFilter::default();
    while pixels.len() < n * 1600 {
        let s = sample_structure(&mut rng, &f).unwrap();
        for p in realize_grid(&s, &mut rng).unwrap() {
            pixels.extend(render_panel(&p, 40).unwrap().iter().map(|&v| v as f32 / 255.0));
        }
    }
    pixels.truncate(n * 1600);
    ravenforge::vae::PanelSet { resolution: 40, pixels }
}
