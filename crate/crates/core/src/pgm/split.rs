use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::structure::{ordered_pair, StructureFilter};
use super::types::{keys_conflict, AttrKey, Attribute, Object, Regime, Triple};

pub const HELD_OUT_TRIPLES: usize = 4;
pub const HELD_OUT_ATTRIBUTE_PAIRS: usize = 4;
pub const HELD_OUT_TRIPLE_PAIRS: usize = 24;

/// The three structure filters of one regime and the items it withholds
/// from training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub regime: Regime,
    pub train: StructureFilter,
    pub val: StructureFilter,
    pub test: StructureFilter,
    pub held_out_triples: Vec<Triple>,
    pub held_out_triple_pairs: Vec<(Triple, Triple)>,
    pub held_out_attribute_pairs: Vec<(AttrKey, AttrKey)>,
}

impl Split {
    pub fn filter(&self, split: SplitName) -> &StructureFilter {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }

    pub fn index(self) -> u64 {
        self as u64
    }
}

impl std::str::FromStr for SplitName {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(crate::Error::param(format!("unknown split {other}"))),
        }
    }
}

/// Every pair of triples that may share a structure.
pub fn compatible_triple_pairs() -> Vec<(Triple, Triple)> {
    let all = Triple::all();
    let mut out = Vec::new();
    for (i, a) in all.iter().enumerate() {
        for b in &all[i + 1..] {
            if !keys_conflict(a.key(), b.key()) {
                out.push(ordered_pair(*a, *b));
            }
        }
    }
    out
}

/// Every pair of attribute slots that may be governed together.
pub fn compatible_attribute_pairs() -> Vec<(AttrKey, AttrKey)> {
    let mut keys: Vec<AttrKey> = Triple::all().iter().map(|t| t.key()).collect();
    keys.dedup();
    let mut out = Vec::new();
    for (i, a) in keys.iter().enumerate() {
        for b in &keys[i + 1..] {
            if !keys_conflict(*a, *b) {
                out.push(ordered_pair(*a, *b));
            }
        }
    }
    out
}

fn pick<T: Clone, R: Rng + ?Sized>(rng: &mut R, pool: &[T], n: usize) -> Vec<T> {
    let mut v = pool.to_vec();
    v.shuffle(rng);
    v.truncate(n);
    v
}

/// Builds the train, validation and test filters of a regime.  Held-out
/// items are drawn from `rng`; training and validation exclude them, and
/// every test structure contains at least one.
pub fn make_split<R: Rng + ?Sized>(regime: Regime, rng: &mut R) -> Split {
    let base = StructureFilter::default();
    let mut split = Split {
        regime,
        train: base.clone(),
        val: base.clone(),
        test: base,
        held_out_triples: Vec::new(),
        held_out_triple_pairs: Vec::new(),
        held_out_attribute_pairs: Vec::new(),
    };
    match regime {
        Regime::Neutral => {}
        Regime::HoTriples => {
            let held = pick(rng, &Triple::all(), HELD_OUT_TRIPLES);
            split.train.exclude_triples = held.clone();
            split.val.exclude_triples = held.clone();
            split.test.require_any_triple = held.clone();
            split.held_out_triples = held;
        }
        Regime::HoTriplePairs => {
            let held = pick(rng, &compatible_triple_pairs(), HELD_OUT_TRIPLE_PAIRS);
            split.train.exclude_triple_pairs = held.clone();
            split.val.exclude_triple_pairs = held.clone();
            split.test.require_any_triple_pair = held.clone();
            split.test.min_size = 2;
            split.held_out_triple_pairs = held;
        }
        Regime::HoAttributePairs => {
            let held = pick(rng, &compatible_attribute_pairs(), HELD_OUT_ATTRIBUTE_PAIRS);
            split.train.exclude_attribute_pairs = held.clone();
            split.val.exclude_attribute_pairs = held.clone();
            split.test.require_any_attribute_pair = held.clone();
            split.test.min_size = 2;
            split.held_out_attribute_pairs = held;
        }
    }
    split
}

/// Attribute slot names used in reports.
pub fn key_name(k: AttrKey) -> String {
    let o = match k.0 {
        Object::Shape => "shape",
        Object::Line => "line",
    };
    let a = match k.1 {
        Attribute::Size => "size",
        Attribute::Type => "type",
        Attribute::Colour => "colour",
        Attribute::Position => "position",
        Attribute::Number => "number",
    };
    format!("{o}.{a}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pgm::structure::sample_structure;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table_sizes() {
        assert_eq!(compatible_attribute_pairs().len(), 20);
        assert!(compatible_triple_pairs().len() > HELD_OUT_TRIPLE_PAIRS * 4);
    }

    #[test]
    fn held_out_triples_only_reach_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let split = make_split(Regime::HoTriples, &mut rng);
        assert_eq!(split.held_out_triples.len(), HELD_OUT_TRIPLES);
        for _ in 0..2000 {
            let s = sample_structure(&mut rng, &split.train).unwrap();
            assert!(s.triples().iter().all(|t| !split.held_out_triples.contains(t)));
            let s = sample_structure(&mut rng, &split.test).unwrap();
            assert!(s.triples().iter().any(|t| split.held_out_triples.contains(t)));
        }
    }

    #[test]
    fn every_regime_is_satisfiable() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for regime in Regime::ALL {
            let split = make_split(regime, &mut rng);
            for name in SplitName::ALL {
                sample_structure(&mut rng, split.filter(name)).unwrap();
            }
        }
    }
}
