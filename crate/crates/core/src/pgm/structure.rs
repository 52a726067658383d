use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::types::{keys_conflict, AttrKey, Structure, Triple};
use crate::error::{Error, Result};

/// Unordered pair, stored with the smaller element first.
pub fn ordered_pair<T: Ord + Copy>(a: T, b: T) -> (T, T) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Admission test over structures.  The `require_any_*` lists are
/// disjunctive: a structure is admitted if it contains at least one item from
/// every non-empty requirement list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureFilter {
    pub min_size: usize,
    pub max_size: usize,
    #[serde(default)]
    pub exclude_triples: Vec<Triple>,
    #[serde(default)]
    pub require_any_triple: Vec<Triple>,
    #[serde(default)]
    pub exclude_triple_pairs: Vec<(Triple, Triple)>,
    #[serde(default)]
    pub require_any_triple_pair: Vec<(Triple, Triple)>,
    #[serde(default)]
    pub exclude_attribute_pairs: Vec<(AttrKey, AttrKey)>,
    #[serde(default)]
    pub require_any_attribute_pair: Vec<(AttrKey, AttrKey)>,
}

impl Default for StructureFilter {
    fn default() -> Self {
        Self {
            min_size: 1,
            max_size: Structure::MAX_TRIPLES,
            exclude_triples: Vec::new(),
            require_any_triple: Vec::new(),
            exclude_triple_pairs: Vec::new(),
            require_any_triple_pair: Vec::new(),
            exclude_attribute_pairs: Vec::new(),
            require_any_attribute_pair: Vec::new(),
        }
    }
}

fn triple_pairs(s: &Structure) -> Vec<(Triple, Triple)> {
    let t = s.triples();
    let mut out = Vec::new();
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            out.push(ordered_pair(t[i], t[j]));
        }
    }
    out
}

fn attribute_pairs(s: &Structure) -> Vec<(AttrKey, AttrKey)> {
    triple_pairs(s).into_iter().map(|(a, b)| ordered_pair(a.key(), b.key())).collect()
}

impl StructureFilter {
    /// Filter restricted to structures of exactly one triple.
    pub fn single_triple() -> Self {
        Self {
            min_size: 1,
            max_size: 1,
            ..Self::default()
        }
    }

    pub fn admits(&self, s: &Structure) -> bool {
        let n = s.len();
        if n < self.min_size || n > self.max_size {
            return false;
        }
        if s.triples().iter().any(|t| self.exclude_triples.contains(t)) {
            return false;
        }
        if !self.require_any_triple.is_empty() && !s.triples().iter().any(|t| self.require_any_triple.contains(t)) {
            return false;
        }
        let tp = triple_pairs(s);
        let norm = |v: &[(Triple, Triple)]| -> Vec<(Triple, Triple)> { v.iter().map(|&(a, b)| ordered_pair(a, b)).collect() };
        let excl = norm(&self.exclude_triple_pairs);
        if tp.iter().any(|p| excl.contains(p)) {
            return false;
        }
        let req = norm(&self.require_any_triple_pair);
        if !req.is_empty() && !tp.iter().any(|p| req.contains(p)) {
            return false;
        }
        let ap = attribute_pairs(s);
        let norm_a = |v: &[(AttrKey, AttrKey)]| -> Vec<(AttrKey, AttrKey)> { v.iter().map(|&(a, b)| ordered_pair(a, b)).collect() };
        let excl = norm_a(&self.exclude_attribute_pairs);
        if ap.iter().any(|p| excl.contains(p)) {
            return false;
        }
        let req = norm_a(&self.require_any_attribute_pair);
        if !req.is_empty() && !ap.iter().any(|p| req.contains(p)) {
            return false;
        }
        true
    }
}

/// Proposal attempts before a filter is declared unsatisfiable.
pub const SAMPLE_RETRIES: usize = 100_000;

/// Draws a size uniformly from the filter's range, then distinct compatible
/// triples uniformly one after another, rejecting until the filter admits.
pub fn sample_structure<R: Rng + ?Sized>(rng: &mut R, filter: &StructureFilter) -> Result<Structure> {
    let lo = filter.min_size.max(1);
    let hi = filter.max_size.min(Structure::MAX_TRIPLES);
    if lo > hi {
        return Err(Error::Generation(format!("empty size range {lo}..={hi}")));
    }
    let all = Triple::all();
    for _ in 0..SAMPLE_RETRIES {
        let size = rng.random_range(lo..=hi);
        let mut chosen: Vec<Triple> = Vec::with_capacity(size);
        while chosen.len() < size {
            let pool: Vec<&Triple> = all
                .iter()
                .filter(|t| !filter.exclude_triples.contains(t))
                .filter(|t| chosen.iter().all(|c| !keys_conflict(c.key(), t.key())))
                .collect();
            match pool.choose(rng) {
                Some(t) => chosen.push(**t),
                None => break,
            }
        }
        if chosen.len() < size {
            continue;
        }
        let s = Structure::new(chosen)?;
        if filter.admits(&s) {
            return Ok(s);
        }
    }
    Err(Error::Generation(format!("no admitted structure after {SAMPLE_RETRIES} proposals")))
}
