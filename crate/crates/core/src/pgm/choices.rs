use rand::seq::IndexedRandom;
use rand::Rng;

use super::realize::value_range;
use super::rules::check_rules;
use super::types::{AttrKey, Attribute, LineObj, Object, PanelSpec, ShapeObj, Structure, MOTIFS, POSITIONS};
use crate::error::{Error, Result};

/// Attempts allowed per distractor.
pub const DISTRACTOR_RETRIES: usize = 100;
/// After this many failed attempts a distractor also perturbs one ungoverned
/// attribute, for structures whose governed attribute has too few values.
const COMPOUND_AFTER: usize = 30;

fn other_value<R: Rng + ?Sized>(rng: &mut R, key: AttrKey, current: u32) -> u32 {
    let (lo, hi) = value_range(key);
    loop {
        let v = rng.random_range(lo..=hi);
        if v != current {
            return v;
        }
    }
}

fn add_shape<R: Rng + ?Sized>(rng: &mut R, p: &mut PanelSpec) -> bool {
    let free: Vec<u8> = (0..POSITIONS).filter(|c| p.shapes.iter().all(|s| s.position != *c)).collect();
    let (Some(&cell), Some(&model)) = (free.choose(rng), p.shapes.first()) else {
        return false;
    };
    p.shapes.push(ShapeObj { position: cell, ..model });
    true
}

/// Distinct values a perturbation of `key` can produce.
fn capacity(key: AttrKey) -> u32 {
    match key {
        (Object::Shape, Attribute::Position) => (1 << POSITIONS) - 2,
        (Object::Line, Attribute::Type) => (1 << MOTIFS) - 2,
        k => {
            let (lo, hi) = value_range(k);
            hi - lo
        }
    }
}

fn remove_shape<R: Rng + ?Sized>(rng: &mut R, p: &mut PanelSpec) -> bool {
    if p.shapes.len() < 2 {
        return false;
    }
    let i = rng.random_range(0..p.shapes.len());
    p.shapes.remove(i);
    true
}

/// Redraws one attribute of `p` uniformly from its other values, in place.
/// Returns false when the panel offers no way to change that attribute.
pub fn perturb<R: Rng + ?Sized>(rng: &mut R, p: &mut PanelSpec, key: AttrKey) -> bool {
    let changed = match key {
        (Object::Shape, Attribute::Size) if !p.shapes.is_empty() => {
            let v = other_value(rng, key, p.shapes[0].size as u32) as u8;
            p.shapes.iter_mut().for_each(|s| s.size = v);
            true
        }
        (Object::Shape, Attribute::Type) if !p.shapes.is_empty() => {
            let v = other_value(rng, key, p.shapes[0].glyph as u32) as u8;
            p.shapes.iter_mut().for_each(|s| s.glyph = v);
            true
        }
        (Object::Shape, Attribute::Colour) if !p.shapes.is_empty() => {
            let v = other_value(rng, key, p.shapes[0].colour as u32) as u8;
            p.shapes.iter_mut().for_each(|s| s.colour = v);
            true
        }
        (Object::Shape, Attribute::Number) => {
            let target = other_value(rng, key, p.shapes.len() as u32) as usize;
            let mut ok = !p.shapes.is_empty();
            while ok && p.shapes.len() < target {
                ok = add_shape(rng, p);
            }
            while ok && p.shapes.len() > target {
                ok = remove_shape(rng, p);
            }
            ok
        }
        (Object::Shape, Attribute::Position) if !p.shapes.is_empty() => {
            let model = p.shapes[0];
            let current: u32 = p.shapes.iter().map(|s| 1 << s.position).sum();
            let mask = loop {
                let m = rng.random_range(1..1u32 << POSITIONS);
                if m != current {
                    break m;
                }
            };
            p.shapes = (0..POSITIONS)
                .filter(|c| mask & (1 << c) != 0)
                .map(|c| ShapeObj { position: c, ..model })
                .collect();
            true
        }
        (Object::Line, Attribute::Colour) if !p.lines.is_empty() => {
            let v = other_value(rng, key, p.lines[0].colour as u32) as u8;
            p.lines.iter_mut().for_each(|l| l.colour = v);
            true
        }
        (Object::Line, Attribute::Type) if !p.lines.is_empty() => {
            let colour = p.lines[0].colour;
            let current: u32 = p.lines.iter().map(|l| 1 << l.motif).sum();
            let mask = loop {
                let m = rng.random_range(1..1u32 << MOTIFS);
                if m != current {
                    break m;
                }
            };
            p.lines = (0..MOTIFS)
                .filter(|m| mask & (1 << m) != 0)
                .map(|motif| LineObj { motif, colour })
                .collect();
            true
        }
        _ => false,
    };
    p.normalize();
    changed
}

/// Attribute slots a panel shows but the structure does not govern.
fn ungoverned_keys(s: &Structure, p: &PanelSpec) -> Vec<AttrKey> {
    let mut keys = Vec::new();
    if !p.shapes.is_empty() {
        for a in [Attribute::Size, Attribute::Type, Attribute::Colour] {
            keys.push((Object::Shape, a));
        }
        if s.governs((Object::Shape, Attribute::Position)).is_none() && s.governs((Object::Shape, Attribute::Number)).is_none() {
            keys.push((Object::Shape, Attribute::Position));
        }
    }
    if !p.lines.is_empty() {
        keys.push((Object::Line, Attribute::Colour));
        keys.push((Object::Line, Attribute::Type));
    }
    keys.retain(|k| s.governs(*k).is_none());
    keys
}

fn fails_rules(s: &Structure, grid: &[PanelSpec], candidate: &PanelSpec) -> bool {
    let mut g = grid[..8].to_vec();
    g.push(candidate.clone());
    !check_rules(s, &g)
}

/// One distractor not in `taken` that breaks the rules when placed in the
/// missing slot, made by perturbing the `focus` attribute of the answer.
pub fn make_distractor<R: Rng + ?Sized>(
    rng: &mut R,
    grid: &[PanelSpec],
    s: &Structure,
    focus: AttrKey,
    taken: &[PanelSpec],
    reject: &mut dyn FnMut(&PanelSpec) -> bool,
) -> Result<PanelSpec> {
    let answer = &grid[8];
    let governed: Vec<AttrKey> = s.triples().iter().map(|t| t.key()).collect();
    let extra = ungoverned_keys(s, answer);
    for attempt in 0..DISTRACTOR_RETRIES {
        let mut cand = answer.clone();
        let key = if attempt < COMPOUND_AFTER {
            focus
        } else {
            *governed.choose(rng).expect("structures are nonempty")
        };
        if !perturb(rng, &mut cand, key) {
            continue;
        }
        if attempt >= COMPOUND_AFTER {
            if let Some(&k) = extra.choose(rng) {
                perturb(rng, &mut cand, k);
            }
        }
        if cand.validate().is_err() || taken.contains(&cand) || !fails_rules(s, grid, &cand) || reject(&cand) {
            continue;
        }
        return Ok(cand);
    }
    Err(Error::Generation(format!("no valid distractor for {s} within {DISTRACTOR_RETRIES} attempts")))
}

/// Eight candidate answers: the true ninth panel at a uniform target index
/// and seven distinct rule-breaking distractors, all perturbing the same
/// governed attribute where it has enough values.  `reject` lets the caller
/// veto candidates, e.g. on raster collisions.
pub fn generate_choices_with<R: Rng + ?Sized>(
    grid: &[PanelSpec],
    s: &Structure,
    rng: &mut R,
    reject: &mut dyn FnMut(&PanelSpec) -> bool,
) -> Result<(Vec<PanelSpec>, u8)> {
    if grid.len() != 9 {
        return Err(Error::contract(format!("a grid needs 9 panels, got {}", grid.len())));
    }
    let target = rng.random_range(0..8u8);
    let governed: Vec<AttrKey> = s.triples().iter().map(|t| t.key()).collect();
    let roomy: Vec<AttrKey> = governed.iter().copied().filter(|&k| capacity(k) >= 7).collect();
    let focus = *if roomy.is_empty() { &governed } else { &roomy }
        .choose(rng)
        .expect("structures are nonempty");
    let mut taken = vec![grid[8].clone()];
    while taken.len() < 8 {
        let d = make_distractor(rng, grid, s, focus, &taken, reject)?;
        taken.push(d);
    }
    let answer = taken.remove(0);
    taken.insert(target as usize, answer);
    Ok((taken, target))
}

pub fn generate_choices<R: Rng + ?Sized>(grid: &[PanelSpec], s: &Structure, rng: &mut R) -> Result<(Vec<PanelSpec>, u8)> {
    generate_choices_with(grid, s, rng, &mut |_| false)
}
