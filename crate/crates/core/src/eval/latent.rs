use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::image::GrayImage;
use crate::error::{Error, Result};
use crate::tensor::{Mode, Tensor};
use crate::vae::{PanelSet, VaeModel};

/// Panels per encoder call when scanning a probe set.
const ENCODE_CHUNK: usize = 64;

/// Eval-mode posterior means and log-variances of every panel, `N×latent` each.
pub fn encode_panels(vae: &VaeModel<f32>, panels: &PanelSet) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let idx: Vec<usize> = (0..panels.len()).collect();
    let parts: Vec<Result<(Tensor<f32>, Tensor<f32>)>> = idx
        .par_chunks(ENCODE_CHUNK)
        .map(|c| vae.clone().encode(&panels.batch(c), Mode::Eval))
        .collect();
    let d = vae.config.latent_dim;
    let (mut mu, mut lv) = (Vec::with_capacity(idx.len() * d), Vec::with_capacity(idx.len() * d));
    for p in parts {
        let (m, l) = p?;
        mu.extend_from_slice(m.data());
        lv.extend_from_slice(l.data());
    }
    Ok((Tensor::new(vec![idx.len(), d], mu)?, Tensor::new(vec![idx.len(), d], lv)?))
}

/// Per-dimension range of posterior means and mean KL over a probe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSupport {
    pub probe_count: usize,
    pub min_mu: Vec<f64>,
    pub max_mu: Vec<f64>,
    pub mean_kl: Vec<f64>,
    /// Dimensions by decreasing mean KL, ties by index.
    pub ranking: Vec<usize>,
}

impl LatentSupport {
    pub fn from_posterior(mu: &Tensor<f32>, logvar: &Tensor<f32>) -> Result<Self> {
        let (n, d) = match mu.shape() {
            [n, d] if logvar.shape() == mu.shape() => (*n, *d),
            s => return Err(Error::shape(format!("posterior shaped {s:?} / {:?}", logvar.shape()))),
        };
        if n < 2 {
            return Err(Error::param(format!("latent support needs at least 2 probe images, got {n}")));
        }
        let mut min_mu = vec![f64::INFINITY; d];
        let mut max_mu = vec![f64::NEG_INFINITY; d];
        let mut mean_kl = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                let m = mu.data()[i * d + j] as f64;
                let l = logvar.data()[i * d + j] as f64;
                min_mu[j] = min_mu[j].min(m);
                max_mu[j] = max_mu[j].max(m);
                mean_kl[j] += 0.5 * (m * m + l.exp() - 1.0 - l);
            }
        }
        mean_kl.iter_mut().for_each(|k| *k /= n as f64);
        let mut ranking: Vec<usize> = (0..d).collect();
        ranking.sort_by(|&a, &b| mean_kl[b].total_cmp(&mean_kl[a]).then(a.cmp(&b)));
        Ok(Self {
            probe_count: n,
            min_mu,
            max_mu,
            mean_kl,
            ranking,
        })
    }

    pub fn dims(&self) -> usize {
        self.min_mu.len()
    }

    /// The `k` dimensions with the highest mean KL.
    pub fn top(&self, k: usize) -> Vec<usize> {
        self.ranking.iter().take(k).copied().collect()
    }
}

pub fn latent_support(vae: &VaeModel<f32>, probe: &PanelSet) -> Result<LatentSupport> {
    if probe.len() < 2 {
        return Err(Error::param(format!("latent support needs at least 2 probe images, got {}", probe.len())));
    }
    let (mu, lv) = encode_panels(vae, probe)?;
    LatentSupport::from_posterior(&mu, &lv)
}

/// Decoded sweeps of single latent coordinates, one row per dimension with
/// the original panel leftmost.
#[derive(Debug, Clone, PartialEq)]
pub struct Traversal {
    pub grid: GrayImage,
    pub dims: Vec<usize>,
    /// Swept coordinate values per row.
    pub values: Vec<Vec<f64>>,
}

pub fn latent_traversal(vae: &VaeModel<f32>, image: &[f32], dims: &[usize], steps: usize, support: &LatentSupport) -> Result<Traversal> {
    let r = vae.config.resolution;
    let d = vae.config.latent_dim;
    if steps < 2 {
        return Err(Error::param(format!("a traversal needs at least 2 steps, got {steps}")));
    }
    if image.len() != r * r {
        return Err(Error::shape(format!("traversal image has {} pixels, expected {}", image.len(), r * r)));
    }
    if support.dims() != d {
        return Err(Error::param(format!("support covers {} dimensions, VAE has {d}", support.dims())));
    }
    if let Some(&bad) = dims.iter().find(|&&k| k >= d) {
        return Err(Error::param(format!("latent dimension {bad} out of range 0..{d}")));
    }
    if dims.is_empty() {
        return Err(Error::param("a traversal needs at least one dimension"));
    }
    let mut vae = vae.clone();
    let (mu, _) = vae.encode(&Tensor::new(vec![1, 1, r, r], image.to_vec())?, Mode::Eval)?;
    let mut codes = Vec::with_capacity(dims.len() * steps * d);
    let mut values = Vec::with_capacity(dims.len());
    for &k in dims {
        let (lo, hi) = (support.min_mu[k], support.max_mu[k]);
        let mut row = Vec::with_capacity(steps);
        for s in 0..steps {
            let v = (lo + (hi - lo) * s as f64 / (steps - 1) as f64).clamp(lo, hi);
            row.push(v);
            let mut z = mu.data().to_vec();
            z[k] = v as f32;
            codes.extend(z);
        }
        values.push(row);
    }
    let decoded = vae.decode(&Tensor::new(vec![dims.len() * steps, d], codes)?, Mode::Eval)?;
    let mut grid = GrayImage::new((steps + 1) * r, dims.len() * r);
    for row in 0..dims.len() {
        grid.paste_unit(0, row * r, r, image);
        for s in 0..steps {
            grid.paste_unit((s + 1) * r, row * r, r, decoded.row(row * steps + s));
        }
    }
    Ok(Traversal {
        grid,
        dims: dims.to_vec(),
        values,
    })
}

/// Equal-width bin counts over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn build(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bins = bins.max(1);
        let mut counts = vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = if width > 0.0 { ((v - lo) / width) as usize } else { 0 };
            counts[b.min(bins - 1)] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Tab-separated `lower upper count` lines.
    pub fn to_text(&self) -> String {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{:.6}\t{:.6}\t{c}\n", self.lo + w * i as f64, self.lo + w * (i + 1) as f64))
            .collect()
    }
}

/// Kolmogorov–Smirnov statistic and asymptotic p-value of `samples`
/// against the standard normal.
pub fn ks_standard_normal(samples: &[f64]) -> (f64, f64) {
    let normal = Normal::standard();
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = normal.cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sq = n.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    (d, kolmogorov_q(lambda))
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Histograms of posterior means, standard deviations and one posterior
/// sample per image for one latent dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimDistribution {
    pub dim: usize,
    pub mu: Histogram,
    pub sigma: Histogram,
    pub z: Histogram,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

pub fn latent_distribution(
    mu: &Tensor<f32>,
    logvar: &Tensor<f32>,
    dims: &[usize],
    bins: usize,
    rng: &mut impl Rng,
) -> Result<Vec<DimDistribution>> {
    let (n, d) = match mu.shape() {
        [n, d] if logvar.shape() == mu.shape() => (*n, *d),
        s => return Err(Error::shape(format!("posterior shaped {s:?} / {:?}", logvar.shape()))),
    };
    if n == 0 {
        return Err(Error::param("latent distribution of an empty probe set"));
    }
    if let Some(&bad) = dims.iter().find(|&&k| k >= d) {
        return Err(Error::param(format!("latent dimension {bad} out of range 0..{d}")));
    }
    let mut out = Vec::with_capacity(dims.len());
    for &k in dims {
        let m: Vec<f64> = (0..n).map(|i| mu.data()[i * d + k] as f64).collect();
        let s: Vec<f64> = (0..n).map(|i| (0.5 * logvar.data()[i * d + k] as f64).exp()).collect();
        let z: Vec<f64> = m.iter().zip(&s).map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal)).collect();
        let (ks_statistic, ks_p_value) = ks_standard_normal(&z);
        out.push(DimDistribution {
            dim: k,
            mu: Histogram::build(&m, bins),
            sigma: Histogram::build(&s, bins),
            z: Histogram::build(&z, bins),
            ks_statistic,
            ks_p_value,
        });
    }
    Ok(out)
}

/// Bar charts of the three histograms of each dimension, one row per dimension.
pub fn plot_distributions(dists: &[DimDistribution], bar_height: usize) -> GrayImage {
    let bins = dists.first().map_or(1, |d| d.mu.counts.len());
    let panel_w = bins * 3 + 4;
    let mut img = GrayImage::new(3 * panel_w, dists.len().max(1) * (bar_height + 4));
    for (row, d) in dists.iter().enumerate() {
        for (col, h) in [&d.mu, &d.sigma, &d.z].into_iter().enumerate() {
            let peak = h.counts.iter().copied().max().unwrap_or(0).max(1);
            let y0 = row * (bar_height + 4) + 2;
            for (b, &c) in h.counts.iter().enumerate() {
                let tall = c * bar_height / peak;
                let x = col * panel_w + 2 + b * 3;
                for y in 0..tall {
                    img.set(x, y0 + bar_height - 1 - y, 0);
                    img.set(x + 1, y0 + bar_height - 1 - y, 0);
                }
            }
        }
    }
    img
}
