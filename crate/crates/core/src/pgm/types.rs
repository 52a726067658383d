use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of shape glyphs, ordered by increasing number of corners.
pub const GLYPHS: u8 = 7;
/// Size and intensity levels are `1..=LEVELS`.
pub const LEVELS: u8 = 10;
/// Cells of the 3×3 placement lattice.
pub const POSITIONS: u8 = 9;
/// Shape counts are `1..=MAX_COUNT`.
pub const MAX_COUNT: u8 = 9;
/// Line motifs drawn across the whole panel.
pub const MOTIFS: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Progression,
    Xor,
    Or,
    And,
    ConsistentUnion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Object {
    Shape,
    Line,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Size,
    Type,
    Colour,
    Position,
    Number,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::Progression,
        Relation::Xor,
        Relation::Or,
        Relation::And,
        Relation::ConsistentUnion,
    ];
}

impl Object {
    pub const ALL: [Object; 2] = [Object::Shape, Object::Line];
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::Size,
        Attribute::Type,
        Attribute::Colour,
        Attribute::Position,
        Attribute::Number,
    ];
}

/// An (object, attribute) slot a triple can govern.
pub type AttrKey = (Object, Attribute);

/// One generative rule `[relation, object, attribute]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub relation: Relation,
    pub object: Object,
    pub attribute: Attribute,
}

impl Triple {
    pub const fn new(relation: Relation, object: Object, attribute: Attribute) -> Self {
        Self {
            relation,
            object,
            attribute,
        }
    }

    pub fn key(&self) -> AttrKey {
        (self.object, self.attribute)
    }

    /// Whether this combination appears in the compatibility table.
    pub fn is_compatible(&self) -> bool {
        use Attribute::*;
        use Relation::*;
        match (self.object, self.attribute) {
            (Object::Shape, Size | Type | Colour) | (Object::Line, Type | Colour) => {
                matches!(self.relation, Progression | ConsistentUnion)
            }
            (Object::Shape, Position) => self.relation != Progression,
            (Object::Shape, Number) => true,
            (Object::Line, Size | Position | Number) => false,
        }
    }

    /// Every compatible triple, in a fixed order.
    pub fn all() -> Vec<Triple> {
        let mut out = Vec::new();
        for o in Object::ALL {
            for a in Attribute::ALL {
                for r in Relation::ALL {
                    let t = Triple::new(r, o, a);
                    if t.is_compatible() {
                        out.push(t);
                    }
                }
            }
        }
        out
    }

    pub fn code(&self) -> [u8; 3] {
        [self.relation as u8, self.object as u8, self.attribute as u8]
    }

    pub fn from_code(code: [u8; 3]) -> Result<Self> {
        let r = *Relation::ALL
            .get(code[0] as usize)
            .ok_or_else(|| Error::Format(format!("relation code {}", code[0])))?;
        let o = *Object::ALL
            .get(code[1] as usize)
            .ok_or_else(|| Error::Format(format!("object code {}", code[1])))?;
        let a = *Attribute::ALL
            .get(code[2] as usize)
            .ok_or_else(|| Error::Format(format!("attribute code {}", code[2])))?;
        let t = Triple::new(r, o, a);
        if !t.is_compatible() {
            return Err(Error::Format(format!("incompatible triple {t}")));
        }
        Ok(t)
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:?}, {:?}, {:?}]", self.relation, self.object, self.attribute)
    }
}

/// Two keys that may not be governed together: shape positions fix the count.
pub fn keys_conflict(a: AttrKey, b: AttrKey) -> bool {
    a == b
        || matches!(
            (a, b),
            ((Object::Shape, Attribute::Position), (Object::Shape, Attribute::Number))
                | ((Object::Shape, Attribute::Number), (Object::Shape, Attribute::Position))
        )
}

/// The rule set of one problem: 1 to 4 triples over distinct attribute slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Triple>", into = "Vec<Triple>")]
pub struct Structure {
    triples: Vec<Triple>,
}

impl Structure {
    pub const MAX_TRIPLES: usize = 4;

    pub fn new(mut triples: Vec<Triple>) -> Result<Self> {
        if triples.is_empty() || triples.len() > Self::MAX_TRIPLES {
            return Err(Error::param(format!("a structure holds 1..=4 triples, got {}", triples.len())));
        }
        if let Some(t) = triples.iter().find(|t| !t.is_compatible()) {
            return Err(Error::param(format!("triple {t} is not in the compatibility table")));
        }
        for (i, a) in triples.iter().enumerate() {
            for b in &triples[i + 1..] {
                if keys_conflict(a.key(), b.key()) {
                    return Err(Error::param(format!("triples {a} and {b} govern conflicting attributes")));
                }
            }
        }
        triples.sort();
        Ok(Self { triples })
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    pub fn governs(&self, key: AttrKey) -> Option<Relation> {
        self.triples.iter().find(|t| t.key() == key).map(|t| t.relation)
    }

    pub fn uses_object(&self, o: Object) -> bool {
        self.triples.iter().any(|t| t.object == o)
    }
}

impl TryFrom<Vec<Triple>> for Structure {
    type Error = Error;
    fn try_from(v: Vec<Triple>) -> Result<Self> {
        Structure::new(v)
    }
}

impl From<Structure> for Vec<Triple> {
    fn from(s: Structure) -> Self {
        s.triples
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.triples.iter().map(|t| t.to_string()).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ShapeObj {
    /// Lattice cell, row-major `0..9`.
    pub position: u8,
    /// Glyph index `0..GLYPHS`.
    pub glyph: u8,
    pub size: u8,
    pub colour: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LineObj {
    pub motif: u8,
    pub colour: u8,
}

/// Symbolic content of one panel.  Shapes are kept sorted by position and
/// lines by motif, so equal panels compare equal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PanelSpec {
    pub shapes: Vec<ShapeObj>,
    pub lines: Vec<LineObj>,
}

impl PanelSpec {
    pub fn new(mut shapes: Vec<ShapeObj>, mut lines: Vec<LineObj>) -> Result<Self> {
        shapes.sort();
        lines.sort();
        let p = Self { shapes, lines };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.shapes.iter().enumerate() {
            if s.position >= POSITIONS || s.glyph >= GLYPHS || !(1..=LEVELS).contains(&s.size) || !(1..=LEVELS).contains(&s.colour) {
                return Err(Error::param(format!("shape {s:?} out of range")));
            }
            if self.shapes[..i].iter().any(|o| o.position == s.position) {
                return Err(Error::param(format!("two shapes at position {}", s.position)));
            }
        }
        for (i, l) in self.lines.iter().enumerate() {
            if l.motif >= MOTIFS || !(1..=LEVELS).contains(&l.colour) {
                return Err(Error::param(format!("line {l:?} out of range")));
            }
            if self.lines[..i].iter().any(|o| o.motif == l.motif) {
                return Err(Error::param(format!("motif {} drawn twice", l.motif)));
            }
        }
        Ok(())
    }

    pub fn normalize(&mut self) {
        self.shapes.sort();
        self.lines.sort();
    }
}

/// Train/test split policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Neutral,
    HoTriplePairs,
    HoAttributePairs,
    HoTriples,
}

impl Regime {
    /// Ordered by the degree of generalization the test split demands.
    pub const ALL: [Regime; 4] = [
        Regime::Neutral,
        Regime::HoTriplePairs,
        Regime::HoAttributePairs,
        Regime::HoTriples,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Result<Self> {
        Self::ALL
            .get(c as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("regime code {c}")))
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::Neutral => "Neutral",
            Regime::HoTriplePairs => "H.O. Triple Pairs",
            Regime::HoAttributePairs => "H.O. Attribute Pairs",
            Regime::HoTriples => "H.O. Triples",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neutral" => Ok(Regime::Neutral),
            "ho_triple_pairs" => Ok(Regime::HoTriplePairs),
            "ho_attribute_pairs" => Ok(Regime::HoAttributePairs),
            "ho_triples" => Ok(Regime::HoTriples),
            other => Err(Error::param(format!("unknown regime {other}"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::Neutral => "neutral",
            Regime::HoTriplePairs => "ho_triple_pairs",
            Regime::HoAttributePairs => "ho_attribute_pairs",
            Regime::HoTriples => "ho_triples",
        };
        f.write_str(s)
    }
}

/// One matrix problem: 8 context panels (grid slots 0..7), 8 candidate
/// answers, and the index of the candidate that completes slot 8.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub context: Vec<PanelSpec>,
    pub choices: Vec<PanelSpec>,
    pub target: u8,
    pub structure: Structure,
    pub resolution: usize,
    /// 16 rasters: context 0..7 then choices 0..7, each `resolution²` bytes.
    pub panels_raster: Vec<Vec<u8>>,
    pub regime: Regime,
}

impl Problem {
    /// The 3×3 grid with choice `k` placed in the missing slot.
    pub fn grid_with(&self, k: usize) -> Vec<PanelSpec> {
        let mut g = self.context.clone();
        g.push(self.choices[k].clone());
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compatibility_table_has_nineteen_triples() {
        let all = Triple::all();
        assert_eq!(all.len(), 19);
        for t in &all {
            if matches!(t.relation, Relation::Xor | Relation::Or | Relation::And) {
                assert!(matches!(t.attribute, Attribute::Position | Attribute::Number));
            }
            if t.object == Object::Line {
                assert!(matches!(t.attribute, Attribute::Colour | Attribute::Type));
            }
            assert_eq!(Triple::from_code(t.code()).unwrap(), *t);
        }
    }

    #[test]
    fn structure_rejects_conflicts_and_sizes() {
        let a = Triple::new(Relation::Progression, Object::Shape, Attribute::Size);
        let b = Triple::new(Relation::ConsistentUnion, Object::Shape, Attribute::Size);
        let pos = Triple::new(Relation::Xor, Object::Shape, Attribute::Position);
        let num = Triple::new(Relation::Progression, Object::Shape, Attribute::Number);
        assert!(Structure::new(vec![]).is_err());
        assert!(Structure::new(vec![a, b]).is_err());
        assert!(Structure::new(vec![a, a]).is_err());
        assert!(Structure::new(vec![pos, num]).is_err());
        assert!(Structure::new(vec![Triple::new(Relation::Xor, Object::Line, Attribute::Colour)]).is_err());
        let s = Structure::new(vec![pos, a]).unwrap();
        assert_eq!(s.len(), 2);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Structure>(&json).unwrap(), s);
    }

    #[test]
    fn panel_validation() {
        let s = ShapeObj {
            position: 4,
            glyph: 0,
            size: 5,
            colour: 5,
        };
        assert!(PanelSpec::new(vec![s, s], vec![]).is_err());
        assert!(PanelSpec::new(vec![ShapeObj { glyph: 7, ..s }], vec![]).is_err());
        assert!(PanelSpec::new(vec![s], vec![LineObj { motif: 6, colour: 1 }]).is_err());
        assert!(PanelSpec::new(vec![s], vec![LineObj { motif: 5, colour: 10 }]).is_ok());
    }
}
