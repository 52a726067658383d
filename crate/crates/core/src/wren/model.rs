use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Bound, Element, Mode, ParamSet, Tape, Tensor, Var};
use crate::vae::dense;

/// Number of position labels: eight context slots and the candidate slot.
pub const SLOTS: usize = 9;
/// Ordered pairs among the eight context panels.
pub const CONTEXT_PAIRS: usize = 56;
/// Ordered pairs between one candidate and the context.
pub const CROSS_PAIRS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WrenConfig {
    pub embed_dim: usize,
    pub g_width: usize,
    pub g_layers: usize,
    pub f_width: usize,
    pub dropout: f64,
}

impl WrenConfig {
    pub fn new(embed_dim: usize) -> Self {
        Self {
            embed_dim,
            g_width: 512,
            g_layers: 3,
            f_width: 256,
            dropout: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.g_width == 0 || self.g_layers == 0 || self.f_width == 0 {
            return Err(Error::param(format!("invalid WReN config {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Relation-network head: tag projection, pair network `g`, scoring network `f`.
#[derive(Debug, Clone)]
pub struct WrenModel<T: Element = f32> {
    pub config: WrenConfig,
    pub params: ParamSet<T>,
}

fn one_hot<T: Element>(slots: &[usize]) -> Tensor<T> {
    let mut data = vec![T::ZERO; slots.len() * SLOTS];
    for (r, &s) in slots.iter().enumerate() {
        data[r * SLOTS + s] = T::ONE;
    }
    Tensor::new(vec![slots.len(), SLOTS], data).expect("one-hot shape")
}

/// Pair rows for a batch of `b` problems laid out as 16 consecutive panels:
/// `(left, right, segment)` where segment `p` collects the context pairs of
/// problem `p` and segment `b + 8p + c` the cross pairs of its choice `c`.
pub fn pair_layout(b: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let rows = b * (CONTEXT_PAIRS + 8 * CROSS_PAIRS);
    let (mut left, mut right, mut seg) = (Vec::with_capacity(rows), Vec::with_capacity(rows), Vec::with_capacity(rows));
    for p in 0..b {
        let base = p * 16;
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    left.push(base + i);
                    right.push(base + j);
                    seg.push(p);
                }
            }
        }
        for c in 0..8 {
            let cand = base + 8 + c;
            for i in 0..8 {
                left.extend([base + i, cand]);
                right.extend([cand, base + i]);
                seg.extend([b + 8 * p + c; 2]);
            }
        }
    }
    (left, right, seg)
}

/// Dense layer with weights in `±1/√fan_in`.
fn add_linear<T: Element>(p: &mut ParamSet<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    p.add_uniform(&format!("{name}.weight"), &[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt(), rng);
    p.add_weight(&format!("{name}.bias"), Tensor::zeros(&[fan_out]));
}

impl<T: Element> WrenModel<T> {
    pub fn new(config: WrenConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut p = ParamSet::new();
        add_linear(&mut p, "tag", d + SLOTS, d, rng);
        for i in 0..config.g_layers {
            let fan_in = if i == 0 { 2 * d } else { config.g_width };
            add_linear(&mut p, &format!("g{i}"), fan_in, config.g_width, rng);
        }
        add_linear(&mut p, "f0", config.g_width, config.f_width, rng);
        add_linear(&mut p, "f1", config.f_width, config.f_width, rng);
        add_linear(&mut p, "f2", config.f_width, 1, rng);
        Ok(Self { config, params: p })
    }

    pub fn cast<U: Element>(&self) -> WrenModel<U> {
        WrenModel {
            config: self.config,
            params: self.params.cast(),
        }
    }

    /// Concatenates each row with the one-hot of its slot and projects back.
    pub fn tag_on(&self, tape: &mut Tape<T>, bound: &Bound, e: Var, slots: &[usize]) -> Result<Var> {
        let d = self.config.embed_dim;
        match tape.shape(e) {
            [m, w] if *m == slots.len() && *w == d => {}
            s => return Err(Error::shape(format!("tagging {} slots of width {d} on rows shaped {s:?}", slots.len()))),
        }
        if slots.iter().any(|&s| s >= SLOTS) {
            return Err(Error::contract(format!("position labels must be below {SLOTS}")));
        }
        let tags = tape.constant(one_hot(slots));
        let cat = tape.concat_cols(e, tags)?;
        dense(tape, bound, "tag", cat)
    }

    fn g_on(&self, tape: &mut Tape<T>, bound: &Bound, pairs: Var) -> Result<Var> {
        let mut h = pairs;
        for i in 0..self.config.g_layers {
            h = dense(tape, bound, &format!("g{i}"), h)?;
            h = tape.relu(h)?;
        }
        Ok(h)
    }

    /// Sigmoid scores, one per row of summed `g` features.
    fn f_on(&self, tape: &mut Tape<T>, bound: &Bound, sums: Var, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        let h = dense(tape, bound, "f0", sums)?;
        let h = tape.relu(h)?;
        let h = dense(tape, bound, "f1", h)?;
        let h = tape.relu(h)?;
        let h = tape.dropout(h, self.config.dropout, mode, rng)?;
        let s = dense(tape, bound, "f2", h)?;
        tape.sigmoid(s)
    }

    /// `batch×8` choice scores from `(batch·16)×dim` panel embeddings.
    pub fn scores_on(&self, tape: &mut Tape<T>, bound: &Bound, emb: Var, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        let rows = tape.shape(emb)[0];
        if rows % 16 != 0 || rows == 0 {
            return Err(Error::shape(format!("{rows} panel embeddings do not form whole problems")));
        }
        let b = rows / 16;
        let slots: Vec<usize> = (0..rows).map(|r| (r % 16).min(8)).collect();
        let tagged = self.tag_on(tape, bound, emb, &slots)?;
        let (left, right, seg) = pair_layout(b);
        let l = tape.gather_rows(tagged, &left)?;
        let r = tape.gather_rows(tagged, &right)?;
        let pairs = tape.concat_cols(l, r)?;
        let g = self.g_on(tape, bound, pairs)?;
        let sums = tape.segment_sum(g, &seg, 9 * b)?;
        let ctx_idx: Vec<usize> = (0..8 * b).map(|k| k / 8).collect();
        let cross_idx: Vec<usize> = (0..8 * b).map(|k| b + k).collect();
        let ctx = tape.gather_rows(sums, &ctx_idx)?;
        let cross = tape.gather_rows(sums, &cross_idx)?;
        let total = tape.add(ctx, cross)?;
        let s = self.f_on(tape, bound, total, mode, rng)?;
        tape.reshape(s, &[b, 8])
    }

    /// Eval-mode `batch×8` scores.
    pub fn scores(&self, emb: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let e = tape.constant(emb.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = self.scores_on(&mut tape, &bound, e, Mode::Eval, &mut rng)?;
        Ok(tape.value(s).clone())
    }

    /// Tags exactly nine embeddings, eight context then the candidate.
    pub fn tag_positions(&self, embeddings: &Tensor<T>) -> Result<Tensor<T>> {
        if embeddings.rank() != 2 || embeddings.shape()[0] != SLOTS {
            return Err(Error::contract(format!(
                "tag_positions needs {SLOTS} embeddings, got shape {:?}",
                embeddings.shape()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let e = tape.constant(embeddings.clone());
        let slots: Vec<usize> = (0..SLOTS).collect();
        let t = self.tag_on(&mut tape, &bound, e, &slots)?;
        Ok(tape.value(t).clone())
    }

    /// Eval-mode score of one candidate, summing `g` over all 72 ordered
    /// pairs of the nine tagged embeddings in `pairs` order (or the natural
    /// order when `None`).
    pub fn score_choice_with(&self, context: &Tensor<T>, choice: &Tensor<T>, pairs: Option<&[(usize, usize)]>) -> Result<T> {
        let d = self.config.embed_dim;
        if context.shape() != [8, d] || choice.numel() != d {
            return Err(Error::shape(format!(
                "score_choice: context {:?} and choice {:?} for width {d}",
                context.shape(),
                choice.shape()
            )));
        }
        let mut data = context.data().to_vec();
        data.extend_from_slice(choice.data());
        let tagged = self.tag_positions(&Tensor::new(vec![SLOTS, d], data)?)?;
        let natural: Vec<(usize, usize)> = (0..SLOTS)
            .flat_map(|i| (0..SLOTS).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        let pairs = pairs.unwrap_or(&natural);
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let t = tape.constant(tagged);
        let l = tape.gather_rows(t, &pairs.iter().map(|p| p.0).collect::<Vec<_>>())?;
        let r = tape.gather_rows(t, &pairs.iter().map(|p| p.1).collect::<Vec<_>>())?;
        let cat = tape.concat_cols(l, r)?;
        let g = self.g_on(&mut tape, &bound, cat)?;
        let sum = tape.segment_sum(g, &vec![0; pairs.len()], 1)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = self.f_on(&mut tape, &bound, sum, Mode::Eval, &mut rng)?;
        Ok(tape.value(s).item())
    }

    pub fn score_choice(&self, context: &Tensor<T>, choice: &Tensor<T>) -> Result<T> {
        self.score_choice_with(context, choice, None)
    }

    /// Summed `g` features of the nine tagged embeddings (context then candidate).
    pub fn pair_sum(&self, nine: &Tensor<T>, slots: &[usize]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let e = tape.constant(nine.clone());
        let t = self.tag_on(&mut tape, &bound, e, slots)?;
        let n = slots.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
        let l = tape.gather_rows(t, &pairs.iter().map(|p| p.0).collect::<Vec<_>>())?;
        let r = tape.gather_rows(t, &pairs.iter().map(|p| p.1).collect::<Vec<_>>())?;
        let cat = tape.concat_cols(l, r)?;
        let g = self.g_on(&mut tape, &bound, cat)?;
        let sum = tape.segment_sum(g, &vec![0; pairs.len()], 1)?;
        Ok(tape.value(sum).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WrenModel<f64> {
        let cfg = WrenConfig {
            embed_dim: 4,
            g_width: 8,
            g_layers: 2,
            f_width: 6,
            dropout: 0.5,
        };
        WrenModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn pair_layout_counts() {
        let (l, r, s) = pair_layout(2);
        assert_eq!(l.len(), 2 * 184);
        assert!(l.iter().zip(&r).all(|(a, b)| a != b));
        for seg in 0..18 {
            let n = s.iter().filter(|&&x| x == seg).count();
            assert_eq!(n, if seg < 2 { CONTEXT_PAIRS } else { CROSS_PAIRS });
        }
    }

    #[test]
    fn zero_embeddings_select_projection_rows() {
        let m = small();
        let out = m.tag_positions(&Tensor::zeros(&[9, 4])).unwrap();
        let w = m.params.get("tag.weight").unwrap();
        for k in 0..9 {
            assert_eq!(out.row(k), w.row(4 + k));
        }
        assert!(m.tag_positions(&Tensor::zeros(&[8, 4])).is_err());
    }

    #[test]
    fn swapping_embeddings_with_their_labels_swaps_outputs() {
        let m = small();
        let e = random(&[9, 4], 1);
        let val = |e: &Tensor<f64>, slots: &[usize]| {
            let mut tape = Tape::new();
            let b = m.params.bind(&mut tape);
            let v = tape.constant(e.clone());
            let t = m.tag_on(&mut tape, &b, v, slots).unwrap();
            tape.value(t).clone()
        };
        let slots: Vec<usize> = (0..9).collect();
        let base = val(&e, &slots);
        let mut swapped = e.data().to_vec();
        for c in 0..4 {
            swapped.swap(2 * 4 + c, 7 * 4 + c);
        }
        let mut s2 = slots.clone();
        s2.swap(2, 7);
        let out = val(&Tensor::from_slice(&[9, 4], &swapped).unwrap(), &s2);
        assert_eq!(out.row(2), base.row(7));
        assert_eq!(out.row(7), base.row(2));
        assert_eq!(out.row(0), base.row(0));
    }

    #[test]
    fn batched_scores_match_naive_per_choice_scores() {
        let m = small();
        let emb = random(&[32, 4], 5);
        let batched = m.scores(&emb).unwrap();
        for p in 0..2 {
            let ctx = Tensor::from_slice(&[8, 4], &emb.data()[p * 64..p * 64 + 32]).unwrap();
            for c in 0..8 {
                let k = p * 16 + 8 + c;
                let choice = Tensor::from_slice(&[4], emb.row(k)).unwrap();
                let s = m.score_choice(&ctx, &choice).unwrap();
                assert!(s > 0.0 && s < 1.0);
                assert!((s - batched.data()[p * 8 + c]).abs() < 1e-12);
            }
        }
    }
}
