use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

/// Terms of the β-weighted negative ELBO for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    /// Per-image summed squared error, averaged over the batch.
    pub reconstruction: f64,
    pub kl_total: f64,
    pub kl_per_dim: Vec<f64>,
    pub beta_used: f64,
    pub loss: f64,
}

fn rows<T: Element>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [n, d] => Ok((*n, *d)),
        s => Err(Error::shape(format!("posterior parameters must be N×D, got {s:?}"))),
    }
}

/// Batch-averaged `½(mu² + exp(logvar) − 1 − logvar)` per latent dimension,
/// and its sum.
pub fn kl_divergence<T: Element>(mu: &Tensor<T>, logvar: &Tensor<T>) -> Result<(Vec<f64>, f64)> {
    if mu.shape() != logvar.shape() {
        return Err(Error::shape(format!("kl: mu {:?} vs logvar {:?}", mu.shape(), logvar.shape())));
    }
    let (n, d) = rows(mu)?;
    let mut per_dim = vec![0.0f64; d];
    for i in 0..n {
        for (j, slot) in per_dim.iter_mut().enumerate() {
            let m = mu.data()[i * d + j].to_f64();
            let lv = logvar.data()[i * d + j].to_f64();
            *slot += 0.5 * (m * m + lv.exp() - 1.0 - lv);
        }
    }
    per_dim.iter_mut().for_each(|v| *v /= n as f64);
    let total = per_dim.iter().sum();
    Ok((per_dim, total))
}

fn squared_error<T: Element>(x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape(format!("reconstruction: x {:?} vs x_hat {:?}", x.shape(), x_hat.shape())));
    }
    let n = x.shape()[0];
    let sse: f64 = x.data().iter().zip(x_hat.data()).map(|(a, b)| (a.to_f64() - b.to_f64()).powi(2)).sum();
    Ok(sse / n as f64)
}

pub fn elbo_loss<T: Element>(x: &Tensor<T>, x_hat: &Tensor<T>, mu: &Tensor<T>, logvar: &Tensor<T>, beta: f64) -> Result<ElboBreakdown> {
    if beta < 0.0 {
        return Err(Error::param(format!("beta must be nonnegative, got {beta}")));
    }
    let reconstruction = squared_error(x, x_hat)?;
    let (kl_per_dim, kl_total) = kl_divergence(mu, logvar)?;
    Ok(ElboBreakdown {
        reconstruction,
        kl_total,
        kl_per_dim,
        beta_used: beta,
        loss: reconstruction + beta * kl_total,
    })
}

/// Tape handles of the loss terms.
#[derive(Debug, Clone, Copy)]
pub struct ElboVars {
    pub reconstruction: Var,
    pub kl: Var,
    pub loss: Var,
}

/// Differentiable version of [`elbo_loss`].
pub fn elbo_on<T: Element>(tape: &mut Tape<T>, x: Var, x_hat: Var, mu: Var, logvar: Var, beta: f64) -> Result<ElboVars> {
    let n = tape.shape(x)[0] as f64;
    let diff = tape.sub(x_hat, x)?;
    let sq = tape.mul(diff, diff)?;
    let sse = tape.sum_all(sq)?;
    let reconstruction = tape.scale(sse, T::from_f64(1.0 / n))?;
    let kl = kl_on(tape, mu, logvar)?;
    let weighted = tape.scale(kl, T::from_f64(beta))?;
    let loss = tape.add(reconstruction, weighted)?;
    Ok(ElboVars {
        reconstruction,
        kl,
        loss,
    })
}

/// Batch-mean total KL to the unit Gaussian, as a scalar on the tape.
pub fn kl_on<T: Element>(tape: &mut Tape<T>, mu: Var, logvar: Var) -> Result<Var> {
    let n = tape.shape(mu)[0] as f64;
    let m2 = tape.mul(mu, mu)?;
    let var = tape.exp(logvar)?;
    let a = tape.add(m2, var)?;
    let b = tape.sub(a, logvar)?;
    let c = tape.add_scalar(b, -T::ONE)?;
    let s = tape.sum_all(c)?;
    tape.scale(s, T::from_f64(0.5 / n))
}
