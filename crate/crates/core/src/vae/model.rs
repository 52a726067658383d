use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Bound, Element, Mode, ParamSet, RunningStats, Tape, Tensor, Var, BN_EPS, BN_MOMENTUM};

/// Architecture of the convolutional VAE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub resolution: usize,
    pub latent_dim: usize,
    pub channels: usize,
    pub layers: usize,
}

impl VaeConfig {
    pub fn new(resolution: usize) -> Self {
        Self {
            resolution,
            latent_dim: 64,
            channels: 32,
            layers: 4,
        }
    }

    /// Spatial side after each stride-2 convolution, input side first.
    pub fn sides(&self) -> Vec<usize> {
        let mut v = vec![self.resolution];
        for _ in 0..self.layers {
            let s = *v.last().unwrap();
            v.push((s + 2 - 3) / 2 + 1);
        }
        v
    }

    pub fn final_side(&self) -> usize {
        *self.sides().last().unwrap()
    }

    /// Width of the flattened encoder features.
    pub fn flat(&self) -> usize {
        self.channels * self.final_side().pow(2)
    }

    /// Output padding of each decoder layer so sizes mirror the encoder.
    pub fn output_paddings(&self) -> Vec<usize> {
        let s = self.sides();
        (0..self.layers).rev().map(|i| s[i] + 1 - 2 * s[i + 1]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 || self.latent_dim == 0 || self.channels == 0 || self.layers == 0 {
            return Err(Error::param(format!("invalid VAE config {self:?}")));
        }
        Ok(())
    }
}

/// Encoder conv stack shared by the VAE and the supervised CNN baseline.
pub fn add_conv_stack<T: Element>(p: &mut ParamSet<T>, prefix: &str, channels: usize, layers: usize, rng: &mut impl Rng) {
    for i in 0..layers {
        let cin = if i == 0 { 1 } else { channels };
        p.add_he_uniform(&format!("{prefix}.conv{i}.weight"), &[channels, cin, 3, 3], cin * 9, rng);
        p.add_weight(&format!("{prefix}.conv{i}.bias"), Tensor::zeros(&[channels]));
        add_batch_norm(p, &format!("{prefix}.bn{i}"), channels);
    }
}

pub fn add_batch_norm<T: Element>(p: &mut ParamSet<T>, name: &str, channels: usize) {
    p.add_weight(&format!("{name}.gamma"), Tensor::full(&[channels], T::ONE));
    p.add_weight(&format!("{name}.beta"), Tensor::zeros(&[channels]));
    p.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels]));
    p.add_buffer(&format!("{name}.running_var"), Tensor::full(&[channels], T::ONE));
}

pub fn add_dense<T: Element>(p: &mut ParamSet<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    p.add_he_uniform(&format!("{name}.weight"), &[fan_in, fan_out], fan_in, rng);
    p.add_weight(&format!("{name}.bias"), Tensor::zeros(&[fan_out]));
}

/// Batch norm whose running statistics live in `params`.
pub fn batch_norm<T: Element>(
    tape: &mut Tape<T>,
    params: &mut ParamSet<T>,
    bound: &Bound,
    name: &str,
    x: Var,
    mode: Mode,
) -> Result<Var> {
    let (mean, var) = params.pair_mut(&format!("{name}.running_mean"), &format!("{name}.running_var"))?;
    tape.batch_norm2d(
        x,
        bound.var(&format!("{name}.gamma")),
        bound.var(&format!("{name}.beta")),
        RunningStats {
            mean: mean.data_mut(),
            var: var.data_mut(),
        },
        mode,
        T::from_f64(BN_MOMENTUM),
        T::from_f64(BN_EPS),
    )
}

pub fn dense<T: Element>(tape: &mut Tape<T>, bound: &Bound, name: &str, x: Var) -> Result<Var> {
    tape.dense(x, bound.var(&format!("{name}.weight")), bound.var(&format!("{name}.bias")))
}

/// Conv + batch norm + relu, repeated; returns NCHW features.
pub fn conv_stack<T: Element>(
    tape: &mut Tape<T>,
    params: &mut ParamSet<T>,
    bound: &Bound,
    prefix: &str,
    layers: usize,
    x: Var,
    mode: Mode,
) -> Result<Var> {
    let mut h = x;
    for i in 0..layers {
        h = tape.conv2d(
            h,
            bound.var(&format!("{prefix}.conv{i}.weight")),
            bound.var(&format!("{prefix}.conv{i}.bias")),
            2,
            1,
        )?;
        h = batch_norm(tape, params, bound, &format!("{prefix}.bn{i}"), h, mode)?;
        h = tape.relu(h)?;
    }
    Ok(h)
}

/// β-VAE with a stride-2 convolutional encoder onto a factorized Gaussian
/// posterior and a mirrored transposed-convolution decoder.
#[derive(Debug, Clone)]
pub struct VaeModel<T: Element = f32> {
    pub config: VaeConfig,
    pub params: ParamSet<T>,
}

impl<T: Element> VaeModel<T> {
    pub fn new(config: VaeConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (c, flat, z) = (config.channels, config.flat(), config.latent_dim);
        let mut p = ParamSet::new();
        add_conv_stack(&mut p, "enc", c, config.layers, rng);
        add_dense(&mut p, "enc.mu", flat, z, rng);
        add_dense(&mut p, "enc.logvar", flat, z, rng);
        add_dense(&mut p, "dec.fc", z, flat, rng);
        for i in 0..config.layers {
            let cout = if i + 1 == config.layers { 1 } else { c };
            p.add_he_uniform(&format!("dec.deconv{i}.weight"), &[c, cout, 3, 3], c * 9, rng);
            p.add_weight(&format!("dec.deconv{i}.bias"), Tensor::zeros(&[cout]));
            if i + 1 < config.layers {
                add_batch_norm(&mut p, &format!("dec.bn{i}"), c);
            }
        }
        Ok(Self { config, params: p })
    }

    pub fn cast<U: Element>(&self) -> VaeModel<U> {
        VaeModel {
            config: self.config,
            params: self.params.cast(),
        }
    }

    fn check_images(&self, shape: &[usize]) -> Result<()> {
        let r = self.config.resolution;
        match shape {
            [_, 1, h, w] if *h == r && *w == r => Ok(()),
            _ => Err(Error::shape(format!("VAE at resolution {r} cannot take images shaped {shape:?}"))),
        }
    }

    /// Posterior parameters of an `N×1×R×R` image batch, each `N×latent`.
    pub fn encode_on(&mut self, tape: &mut Tape<T>, bound: &Bound, x: Var, mode: Mode) -> Result<(Var, Var)> {
        self.check_images(tape.shape(x))?;
        let n = tape.shape(x)[0];
        let h = conv_stack(tape, &mut self.params, bound, "enc", self.config.layers, x, mode)?;
        let flat = tape.reshape(h, &[n, self.config.flat()])?;
        let mu = dense(tape, bound, "enc.mu", flat)?;
        let logvar = dense(tape, bound, "enc.logvar", flat)?;
        Ok((mu, logvar))
    }

    /// Pixel means in `(0, 1)` for an `N×latent` code batch.
    pub fn decode_on(&mut self, tape: &mut Tape<T>, bound: &Bound, z: Var, mode: Mode) -> Result<Var> {
        let n = tape.shape(z)[0];
        let side = self.config.final_side();
        let pads = self.config.output_paddings();
        let h = dense(tape, bound, "dec.fc", z)?;
        let h = tape.relu(h)?;
        let mut h = tape.reshape(h, &[n, self.config.channels, side, side])?;
        for (i, &op) in pads.iter().enumerate() {
            h = tape.conv_transpose2d(
                h,
                bound.var(&format!("dec.deconv{i}.weight")),
                bound.var(&format!("dec.deconv{i}.bias")),
                2,
                1,
                op,
            )?;
            if i + 1 < self.config.layers {
                h = batch_norm(tape, &mut self.params, bound, &format!("dec.bn{i}"), h, mode)?;
                h = tape.relu(h)?;
            }
        }
        tape.sigmoid(h)
    }

    /// Posterior parameters of `images`, computed on a private tape.
    pub fn encode(&mut self, images: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.constant(images.clone());
        let (mu, lv) = self.encode_on(&mut tape, &bound, x, mode)?;
        Ok((tape.value(mu).clone(), tape.value(lv).clone()))
    }

    pub fn decode(&mut self, z: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let zv = tape.constant(z.clone());
        let out = self.decode_on(&mut tape, &bound, zv, mode)?;
        Ok(tape.value(out).clone())
    }
}

/// `z = mu + exp(logvar / 2) ⊙ noise` on the tape.
pub fn reparameterize_on<T: Element>(tape: &mut Tape<T>, mu: Var, logvar: Var, noise: Var) -> Result<Var> {
    let half = tape.scale(logvar, T::from_f64(0.5))?;
    let sigma = tape.exp(half)?;
    let spread = tape.mul(sigma, noise)?;
    tape.add(mu, spread)
}

pub fn reparameterize<T: Element>(mu: &Tensor<T>, logvar: &Tensor<T>, noise: &Tensor<T>) -> Result<Tensor<T>> {
    if mu.shape() != logvar.shape() || mu.shape() != noise.shape() {
        return Err(Error::shape(format!(
            "reparameterize: mu {:?}, logvar {:?}, noise {:?}",
            mu.shape(),
            logvar.shape(),
            noise.shape()
        )));
    }
    let half = T::from_f64(0.5);
    let data = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(noise.data())
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect();
    Tensor::new(mu.shape().to_vec(), data)
}
