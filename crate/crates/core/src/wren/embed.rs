use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgm::Dataset;
use crate::tensor::{Bound, Element, Mode, ParamSet, Tape, Tensor, Var};
use crate::vae::{add_conv_stack, add_dense, conv_stack, dense, reparameterize_on, VaeConfig, VaeModel};

/// Width of the supervised CNN embedding.
pub const CNN_EMBED_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    VaeFrozen,
    VaeFinetune,
    CnnBaseline,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::VaeFrozen, Variant::VaeFinetune, Variant::CnnBaseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::VaeFrozen => "vae_frozen",
            Variant::VaeFinetune => "vae_finetune",
            Variant::CnnBaseline => "cnn_baseline",
        }
    }

    pub fn is_vae(self) -> bool {
        self != Variant::CnnBaseline
    }

    /// Whether the backbone may change during the given training phase.
    pub fn trains_backbone(self, finetune: bool) -> bool {
        match self {
            Variant::VaeFrozen => false,
            Variant::VaeFinetune => finetune,
            Variant::CnnBaseline => true,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown embedder variant {s:?}")))
    }
}

/// Maps panels to vectors: either the encoder half of a trained VAE or a
/// supervised conv stack with a dense projection.
#[derive(Debug, Clone)]
pub struct PanelEmbedder<T: Element = f32> {
    pub variant: Variant,
    pub config: VaeConfig,
    pub backbone: ParamSet<T>,
}

impl<T: Element> PanelEmbedder<T> {
    pub fn from_vae(vae: &VaeModel<T>, variant: Variant) -> Result<Self> {
        if !variant.is_vae() {
            return Err(Error::param("a VAE encoder cannot back the cnn_baseline embedder"));
        }
        Ok(Self {
            variant,
            config: vae.config,
            backbone: vae.params.subset("enc."),
        })
    }

    pub fn cnn_baseline(config: VaeConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut p = ParamSet::new();
        add_conv_stack(&mut p, "cnn", config.channels, config.layers, rng);
        add_dense(&mut p, "cnn.fc", config.flat(), CNN_EMBED_DIM, rng);
        Ok(Self {
            variant: Variant::CnnBaseline,
            config,
            backbone: p,
        })
    }

    pub fn output_dim(&self) -> usize {
        if self.variant.is_vae() {
            self.config.latent_dim
        } else {
            CNN_EMBED_DIM
        }
    }

    pub fn cast<U: Element>(&self) -> PanelEmbedder<U> {
        PanelEmbedder {
            variant: self.variant,
            config: self.config,
            backbone: self.backbone.cast(),
        }
    }

    /// `N×dim` embeddings of an `N×1×R×R` batch.
    ///
    /// VAE variants run their batch norms on the stored statistics and, in
    /// train mode, return a fresh posterior sample per panel.
    pub fn embed_on(&mut self, tape: &mut Tape<T>, bound: &Bound, x: Var, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        let r = self.config.resolution;
        let n = match tape.shape(x) {
            [n, 1, h, w] if *h == r && *w == r => *n,
            s => return Err(Error::shape(format!("embedder at resolution {r} cannot take panels shaped {s:?}"))),
        };
        let flat = self.config.flat();
        if self.variant.is_vae() {
            let h = conv_stack(tape, &mut self.backbone, bound, "enc", self.config.layers, x, Mode::Eval)?;
            let h = tape.reshape(h, &[n, flat])?;
            let mu = dense(tape, bound, "enc.mu", h)?;
            if mode == Mode::Eval {
                return Ok(mu);
            }
            let logvar = dense(tape, bound, "enc.logvar", h)?;
            let d = self.config.latent_dim;
            let noise = (0..n * d).map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal))).collect();
            let noise = tape.constant(Tensor::new(vec![n, d], noise)?);
            reparameterize_on(tape, mu, logvar, noise)
        } else {
            let h = conv_stack(tape, &mut self.backbone, bound, "cnn", self.config.layers, x, mode)?;
            let h = tape.reshape(h, &[n, flat])?;
            let h = dense(tape, bound, "cnn.fc", h)?;
            tape.relu(h)
        }
    }

    /// `batch×16×dim` embeddings of `batch×16×R×R` problem panels.
    pub fn embed_panels(&mut self, panels: &Tensor<T>, mode: Mode, rng: &mut impl Rng) -> Result<Tensor<T>> {
        let (b, r) = match panels.shape() {
            [b, 16, h, w] if h == w => (*b, *h),
            s => return Err(Error::shape(format!("expected batch×16×R×R panels, got {s:?}"))),
        };
        let x = panels.clone().reshape(&[b * 16, 1, r, r])?;
        let mut tape = Tape::new();
        let bound = self.backbone.bind(&mut tape);
        let xv = tape.constant(x);
        let e = self.embed_on(&mut tape, &bound, xv, mode, rng)?;
        tape.value(e).clone().reshape(&[b, 16, self.output_dim()])
    }
}

/// Panels of the selected problems as a `(len·16)×1×R×R` tensor in `[0, 1]`,
/// with their targets.
pub fn problem_batch(data: &Dataset, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
    let r = data.resolution;
    let mut pixels = Vec::with_capacity(idx.len() * 16 * r * r);
    let mut targets = Vec::with_capacity(idx.len());
    for &i in idx {
        let p = &data.problems[i];
        pixels.extend(p.panels.iter().map(|&v| v as f32 / 255.0));
        targets.push(p.target as usize);
    }
    let x = Tensor::new(vec![idx.len() * 16, 1, r, r], pixels).expect("problem batch shape");
    (x, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn panels(seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![1, 16, 40, 40], (0..16 * 1600).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn output_widths_and_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vae = VaeModel::<f32>::new(VaeConfig::new(40), &mut rng).unwrap();
        let mut e = PanelEmbedder::from_vae(&vae, Variant::VaeFrozen).unwrap();
        let x = panels(2);
        let a = e.embed_panels(&x, Mode::Eval, &mut rng).unwrap();
        let b = e.embed_panels(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a.shape(), [1, 16, 64]);
        assert_eq!(a, b);
        let s1 = e.embed_panels(&x, Mode::Train, &mut rng).unwrap();
        let s2 = e.embed_panels(&x, Mode::Train, &mut rng).unwrap();
        assert_ne!(s1, s2);
        let (mu, _) = vae.clone().encode(&x.clone().reshape(&[16, 1, 40, 40]).unwrap(), Mode::Eval).unwrap();
        assert_eq!(mu.data(), a.data());

        let mut c = PanelEmbedder::<f32>::cnn_baseline(VaeConfig::new(40), &mut rng).unwrap();
        assert_eq!(c.embed_panels(&x, Mode::Eval, &mut rng).unwrap().shape(), [1, 16, 512]);
        assert!(c.embed_panels(&Tensor::zeros(&[1, 16, 80, 80]), Mode::Eval, &mut rng).is_err());
        assert!(PanelEmbedder::from_vae(&vae, Variant::CnnBaseline).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("vae".parse::<Variant>().is_err());
    }
}
