use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgm::{Dataset, Regime};
use crate::wren::{predict_dataset, PanelEmbedder, Variant, WrenModel};

/// Chance accuracy with eight choices.
pub const CHANCE: f64 = 0.125;

/// Chance-corrected accuracy, linear from 0 at chance to 1 at perfection.
pub fn cohens_kappa(accuracy: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(Error::param(format!("accuracy {accuracy} outside [0, 1]")));
    }
    Ok((accuracy - CHANCE) / (1.0 - CHANCE))
}

/// Anything that answers whole datasets.
pub trait Predictor {
    fn answers(&self, data: &Dataset) -> Result<Vec<usize>>;
}

/// WReN head over its embedder, in eval mode.
pub struct WrenPredictor<'a> {
    pub model: &'a WrenModel<f32>,
    pub embedder: &'a PanelEmbedder<f32>,
}

impl Predictor for WrenPredictor<'_> {
    fn answers(&self, data: &Dataset) -> Result<Vec<usize>> {
        Ok(predict_dataset(self.model, self.embedder, data)?.into_iter().map(|p| p.answer).collect())
    }
}

/// Reads the stored target.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn answers(&self, data: &Dataset) -> Result<Vec<usize>> {
        Ok(data.problems.iter().map(|p| p.target as usize).collect())
    }
}

/// Uniform guesses from a seeded stream.
pub struct RandomPredictor {
    pub seed: u64,
}

impl Predictor for RandomPredictor {
    fn answers(&self, data: &Dataset) -> Result<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok((0..data.len()).map(|_| rng.random_range(0..8)).collect())
    }
}

pub fn split_accuracy(predictor: &dyn Predictor, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::param("cannot evaluate an empty split"));
    }
    let answers = predictor.answers(data)?;
    let hits = answers.iter().zip(&data.problems).filter(|(a, p)| **a == p.target as usize).count();
    Ok(hits as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub variant: Variant,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub test_kappa: Option<f64>,
    pub n_val: usize,
    pub n_test: usize,
}

/// Accuracy on whichever of the two splits are given.
pub fn evaluate(
    predictor: &dyn Predictor,
    regime: Regime,
    variant: Variant,
    val: Option<&Dataset>,
    test: Option<&Dataset>,
) -> Result<RegimeReport> {
    if val.is_none() && test.is_none() {
        return Err(Error::param("evaluation needs at least one split"));
    }
    let val_accuracy = val.map(|d| split_accuracy(predictor, d)).transpose()?;
    let test_accuracy = test.map(|d| split_accuracy(predictor, d)).transpose()?;
    Ok(RegimeReport {
        regime,
        variant,
        val_accuracy,
        test_accuracy,
        test_kappa: test_accuracy.map(cohens_kappa).transpose()?,
        n_val: val.map_or(0, Dataset::len),
        n_test: test.map_or(0, Dataset::len),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_endpoints_and_range() {
        assert_eq!(cohens_kappa(0.125).unwrap(), 0.0);
        assert_eq!(cohens_kappa(1.0).unwrap(), 1.0);
        assert!(cohens_kappa(0.0).unwrap() < 0.0);
        assert!(cohens_kappa(1.01).is_err());
        assert!(cohens_kappa(-0.1).is_err());
        assert!(cohens_kappa(f64::NAN).is_err());
    }
}
