//! Verification oracle.  Reads attribute values back out of panel specs and
//! tests each relation row by row, without touching the generator.

use super::types::{AttrKey, Attribute, Object, PanelSpec, Relation, Structure};

/// The attribute value a panel exhibits, or `None` when the panel has no
/// single well-defined value (mixed levels, no objects, several motifs).
pub fn read_value(panel: &PanelSpec, key: AttrKey) -> Option<u32> {
    fn uniform<I: Iterator<Item = u8>>(mut it: I) -> Option<u32> {
        let first = it.next()?;
        it.all(|v| v == first).then_some(first as u32)
    }
    match key {
        (Object::Shape, Attribute::Size) => uniform(panel.shapes.iter().map(|s| s.size)),
        (Object::Shape, Attribute::Type) => uniform(panel.shapes.iter().map(|s| s.glyph)),
        (Object::Shape, Attribute::Colour) => uniform(panel.shapes.iter().map(|s| s.colour)),
        (Object::Shape, Attribute::Position) => {
            let mask = panel.shapes.iter().fold(0u32, |m, s| m | 1 << s.position);
            (mask != 0).then_some(mask)
        }
        (Object::Shape, Attribute::Number) => {
            let n = panel.shapes.len() as u32;
            (n > 0).then_some(n)
        }
        (Object::Line, Attribute::Colour) => uniform(panel.lines.iter().map(|l| l.colour)),
        (Object::Line, Attribute::Type) => match panel.lines.as_slice() {
            [only] => Some(only.motif as u32),
            _ => None,
        },
        (Object::Line, _) => None,
    }
}

fn progression(rows: &[[u32; 3]; 3]) -> bool {
    let step = rows[0][1] as i64 - rows[0][0] as i64;
    if step != 1 && step != 2 {
        return false;
    }
    rows.iter().all(|r| {
        let (a, b, c) = (r[0] as i64, r[1] as i64, r[2] as i64);
        b - a == step && c - b == step
    })
}

fn consistent_union(rows: &[[u32; 3]; 3]) -> bool {
    let mut first = rows[0];
    first.sort_unstable();
    rows[1..].iter().all(|r| {
        let mut s = *r;
        s.sort_unstable();
        s == first
    })
}

fn logical(rows: &[[u32; 3]; 3], attr: Attribute, relation: Relation) -> bool {
    // Numbers combine by parity; positions combine as cell sets.
    let lift = |v: u32| if attr == Attribute::Number { v & 1 } else { v };
    rows.iter().all(|r| {
        let (a, b, c) = (lift(r[0]), lift(r[1]), lift(r[2]));
        let want = match relation {
            Relation::Xor => a ^ b,
            Relation::Or => a | b,
            Relation::And => a & b,
            _ => unreachable!("not a logical relation"),
        };
        c == want
    })
}

/// Whether `relation` holds on attribute `key` along all three rows.
pub fn relation_holds(relation: Relation, key: AttrKey, grid: &[PanelSpec]) -> bool {
    if grid.len() != 9 {
        return false;
    }
    let mut rows = [[0u32; 3]; 3];
    for (i, panel) in grid.iter().enumerate() {
        match read_value(panel, key) {
            Some(v) => rows[i / 3][i % 3] = v,
            None => return false,
        }
    }
    match relation {
        Relation::Progression => progression(&rows),
        Relation::ConsistentUnion => consistent_union(&rows),
        Relation::Xor | Relation::Or | Relation::And => match key.1 {
            Attribute::Position | Attribute::Number => logical(&rows, key.1, relation),
            _ => false,
        },
    }
}

/// True iff every triple of `s` holds on all three rows of the 3×3 `grid`.
pub fn check_rules(s: &Structure, grid: &[PanelSpec]) -> bool {
    grid.len() == 9 && s.triples().iter().all(|t| relation_holds(t.relation, t.key(), grid))
}
