use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::rules::relation_holds;
use super::types::{
    AttrKey, Attribute, LineObj, Object, PanelSpec, Relation, ShapeObj, Structure, Triple, GLYPHS, LEVELS, MAX_COUNT, MOTIFS,
    POSITIONS,
};
use crate::error::{Error, Result};

pub const REALIZE_RETRIES: usize = 1000;

/// Value grid for one attribute, `[row][column]`.
type Rows = [[u32; 3]; 3];

/// Inclusive value range of a scalar attribute.
pub(crate) fn value_range(key: AttrKey) -> (u32, u32) {
    match key {
        (Object::Shape, Attribute::Type) => (0, GLYPHS as u32 - 1),
        (Object::Line, Attribute::Type) => (0, MOTIFS as u32 - 1),
        (Object::Shape, Attribute::Number) => (1, MAX_COUNT as u32),
        _ => (1, LEVELS as u32),
    }
}

fn arithmetic<R: Rng + ?Sized>(rng: &mut R, lo: u32, hi: u32) -> Rows {
    let step = rng.random_range(1..=2u32);
    let mut rows = [[0; 3]; 3];
    for row in &mut rows {
        let start = rng.random_range(lo..=hi - 2 * step);
        *row = [start, start + step, start + 2 * step];
    }
    rows
}

fn permuted_rows<R: Rng + ?Sized>(rng: &mut R, values: [u32; 3]) -> Rows {
    let mut rows = [values; 3];
    for row in &mut rows {
        row.shuffle(rng);
    }
    rows
}

fn distinct_three<R: Rng + ?Sized>(rng: &mut R, mut draw: impl FnMut(&mut R) -> u32) -> [u32; 3] {
    let a = draw(rng);
    let mut b = draw(rng);
    while b == a {
        b = draw(rng);
    }
    let mut c = draw(rng);
    while c == a || c == b {
        c = draw(rng);
    }
    [a, b, c]
}

fn random_cells<R: Rng + ?Sized>(rng: &mut R) -> u32 {
    rng.random_range(1..1u32 << POSITIONS)
}

fn combine(relation: Relation, a: u32, b: u32) -> u32 {
    match relation {
        Relation::Xor => a ^ b,
        Relation::Or => a | b,
        Relation::And => a & b,
        _ => unreachable!(),
    }
}

fn governed_rows<R: Rng + ?Sized>(rng: &mut R, t: &Triple) -> Rows {
    let (lo, hi) = value_range(t.key());
    let mut rows = [[0; 3]; 3];
    match (t.relation, t.attribute) {
        (Relation::Progression, _) => return arithmetic(rng, lo, hi),
        (Relation::ConsistentUnion, Attribute::Position) => {
            let v = distinct_three(rng, random_cells);
            return permuted_rows(rng, v);
        }
        (Relation::ConsistentUnion, _) => {
            let v = distinct_three(rng, |r| r.random_range(lo..=hi));
            return permuted_rows(rng, v);
        }
        (rel, Attribute::Position) => {
            for row in &mut rows {
                loop {
                    let a = random_cells(rng);
                    let b = random_cells(rng);
                    let c = combine(rel, a, b);
                    if a != b && c != 0 {
                        *row = [a, b, c];
                        break;
                    }
                }
            }
        }
        (rel, _) => {
            for row in &mut rows {
                let a = rng.random_range(lo..=hi);
                let b = rng.random_range(lo..=hi);
                let parity = combine(rel, a & 1, b & 1);
                let options: Vec<u32> = (lo..=hi).filter(|v| v & 1 == parity).collect();
                *row = [a, b, *options.choose(rng).unwrap()];
            }
        }
    }
    rows
}

fn mask_cells(mask: u32) -> Vec<u8> {
    (0..POSITIONS).filter(|p| mask & 1 << p != 0).collect()
}

/// Builds one candidate grid; the caller applies the spurious-relation guard.
fn attempt<R: Rng + ?Sized>(s: &Structure, rng: &mut R) -> Vec<PanelSpec> {
    let mut governed: Vec<(AttrKey, Rows)> = Vec::new();
    for t in s.triples() {
        governed.push((t.key(), governed_rows(rng, t)));
    }
    let get = |key: AttrKey| governed.iter().find(|(k, _)| *k == key).map(|(_, r)| *r);
    // Ungoverned attributes are drawn once per row and held constant.
    let scalar = |key: AttrKey, rng: &mut R| -> Rows {
        get(key).unwrap_or_else(|| {
            let (lo, hi) = value_range(key);
            let mut rows = [[0; 3]; 3];
            for row in &mut rows {
                *row = [rng.random_range(lo..=hi); 3];
            }
            rows
        })
    };
    let with_shapes = s.uses_object(Object::Shape);
    let with_lines = s.uses_object(Object::Line);
    let size = scalar((Object::Shape, Attribute::Size), rng);
    let glyph = scalar((Object::Shape, Attribute::Type), rng);
    let colour = scalar((Object::Shape, Attribute::Colour), rng);
    let line_colour = scalar((Object::Line, Attribute::Colour), rng);
    let position = get((Object::Shape, Attribute::Position));
    let number = get((Object::Shape, Attribute::Number));
    let motif = get((Object::Line, Attribute::Type));

    let mut grid = Vec::with_capacity(9);
    let mut row_order: Vec<u8> = Vec::new();
    let mut row_cells: Vec<u8> = Vec::new();
    let mut row_motifs: Vec<u8> = Vec::new();
    for i in 0..9 {
        let (r, c) = (i / 3, i % 3);
        if c == 0 {
            row_order = (0..POSITIONS).collect();
            row_order.shuffle(rng);
            let k = rng.random_range(1..=4usize);
            row_cells = row_order[..k].to_vec();
            let mut all: Vec<u8> = (0..MOTIFS).collect();
            all.shuffle(rng);
            row_motifs = all[..rng.random_range(1..=2usize)].to_vec();
        }
        let mut shapes = Vec::new();
        if with_shapes {
            let cells = match (position, number) {
                (Some(p), _) => mask_cells(p[r][c]),
                (None, Some(n)) => row_order[..n[r][c] as usize].to_vec(),
                (None, None) => row_cells.clone(),
            };
            shapes = cells
                .into_iter()
                .map(|position| ShapeObj {
                    position,
                    glyph: glyph[r][c] as u8,
                    size: size[r][c] as u8,
                    colour: colour[r][c] as u8,
                })
                .collect();
        }
        let mut lines = Vec::new();
        if with_lines {
            let motifs = match motif {
                Some(m) => vec![m[r][c] as u8],
                None => row_motifs.clone(),
            };
            lines = motifs
                .into_iter()
                .map(|motif| LineObj {
                    motif,
                    colour: line_colour[r][c] as u8,
                })
                .collect();
        }
        let mut p = PanelSpec { shapes, lines };
        p.normalize();
        grid.push(p);
    }
    grid
}

fn is_logical(r: Relation) -> bool {
    matches!(r, Relation::Xor | Relation::Or | Relation::And)
}

/// A governed attribute must not simultaneously satisfy a different relation
/// from its compatibility list.  Count parity is exempt for progressions and
/// unions on number, since a step of 2 always keeps parity constant.
fn has_spurious_relation(s: &Structure, grid: &[PanelSpec]) -> bool {
    s.triples().iter().any(|t| {
        Relation::ALL.iter().any(|&r| {
            let parity_exempt = t.attribute == Attribute::Number && is_logical(r) && !is_logical(t.relation);
            r != t.relation
                && !parity_exempt
                && Triple::new(r, t.object, t.attribute).is_compatible()
                && relation_holds(r, t.key(), grid)
        })
    })
}

/// Samples the nine panels of a grid whose rows obey every triple of `s`.
pub fn realize_grid<R: Rng + ?Sized>(s: &Structure, rng: &mut R) -> Result<Vec<PanelSpec>> {
    for _ in 0..REALIZE_RETRIES {
        let grid = attempt(s, rng);
        if !has_spurious_relation(s, &grid) {
            return Ok(grid);
        }
    }
    Err(Error::Generation(format!("could not realize {s} without spurious relations")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pgm::rules::{check_rules, read_value};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_single_triple_realizes_and_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in Triple::all() {
            let s = Structure::new(vec![t]).unwrap();
            for _ in 0..50 {
                let g = realize_grid(&s, &mut rng).unwrap();
                assert!(check_rules(&s, &g), "{t}");
                for p in &g {
                    p.validate().unwrap();
                }
            }
        }
    }

    #[test]
    fn number_progression_counts_are_arithmetic() {
        let s = Structure::new(vec![Triple::new(Relation::Progression, Object::Shape, Attribute::Number)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = realize_grid(&s, &mut rng).unwrap();
        for row in g.chunks(3) {
            let n: Vec<usize> = row.iter().map(|p| p.shapes.len()).collect();
            assert!(n[1] > n[0] && n[1] - n[0] == n[2] - n[1]);
        }
    }

    #[test]
    fn xor_third_panel_is_symmetric_difference() {
        let s = Structure::new(vec![Triple::new(Relation::Xor, Object::Shape, Attribute::Position)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = realize_grid(&s, &mut rng).unwrap();
        let key = (Object::Shape, Attribute::Position);
        for row in g.chunks(3) {
            let v: Vec<u32> = row.iter().map(|p| read_value(p, key).unwrap()).collect();
            assert_eq!(v[2], v[0] ^ v[1]);
        }
    }

    #[test]
    fn seeded_realization_repeats() {
        let s = Structure::new(vec![
            Triple::new(Relation::ConsistentUnion, Object::Shape, Attribute::Colour),
            Triple::new(Relation::Progression, Object::Line, Attribute::Type),
        ])
        .unwrap();
        let a = realize_grid(&s, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = realize_grid(&s, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }
}
