//! On-disk dataset: one binary `PGMD` file, one JSON-lines sidecar per split
//! and a `split.json` describing the regime.
//!
//! ```text
//! "PGMD" | u16 version | u16 resolution | u32 count
//! per record: 16 × resolution² panel bytes (context 0..7, choices 0..7),
//!             u8 target, u8 n, n × 3 triple code bytes, u8 regime
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::split::{make_split, Split, SplitName};
use super::types::{PanelSpec, Problem, Regime, Structure, Triple};
use super::generate_problem;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PGMD";
pub const VERSION: u16 = 1;
/// Regeneration attempts for a held-out problem that duplicates a training one.
const DEDUP_RETRIES: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Counts {
    pub fn get(&self, s: SplitName) -> usize {
        match s {
            SplitName::Train => self.train,
            SplitName::Val => self.val,
            SplitName::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub regime: Regime,
    pub counts: Counts,
    pub resolution: usize,
    pub seed: u64,
}

/// A problem as stored on disk: rasters and labels, no symbolic specs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredProblem {
    pub panels: Vec<u8>,
    pub target: u8,
    pub structure: Structure,
    pub regime: Regime,
}

impl StoredProblem {
    pub fn from_problem(p: &Problem) -> Self {
        Self {
            panels: p.panels_raster.concat(),
            target: p.target,
            structure: p.structure.clone(),
            regime: p.regime,
        }
    }

    pub fn panel(&self, k: usize, resolution: usize) -> &[u8] {
        let n = resolution * resolution;
        &self.panels[k * n..(k + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub resolution: usize,
    pub problems: Vec<StoredProblem>,
}

impl Dataset {
    pub fn from_problems(resolution: usize, problems: &[Problem]) -> Self {
        Self {
            resolution,
            problems: problems.iter().map(StoredProblem::from_problem).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn panel_len(&self) -> usize {
        self.resolution * self.resolution
    }

    /// Panel `k` of problem `i` scaled to `[0, 1]`.
    pub fn panel_f32(&self, i: usize, k: usize) -> Vec<f32> {
        self.problems[i].panel(k, self.resolution).iter().map(|&v| v as f32 / 255.0).collect()
    }
}

/// Human-readable mirror of one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub index: usize,
    pub seed: u64,
    pub regime: Regime,
    pub target: u8,
    pub structure: Structure,
    pub context: Vec<PanelSpec>,
    pub choices: Vec<PanelSpec>,
}

fn problem_rng(seed: u64, split: SplitName, index: usize, attempt: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    r.set_stream(split.index() << 32 | index as u64);
    r
}

/// RNG used to draw a regime's held-out items.
pub fn split_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(u64::MAX);
    r
}

fn raster_digest(p: &Problem) -> [u8; 32] {
    let mut h = Sha256::new();
    for r in &p.panels_raster {
        h.update(r);
    }
    h.finalize().into()
}

/// Generates `count` problems for one split.  Each index owns an RNG stream,
/// so the result does not depend on how work is scheduled.
pub fn generate_split(cfg: &DatasetConfig, split: &Split, name: SplitName, avoid: &HashSet<[u8; 32]>) -> Result<Vec<Problem>> {
    let filter = split.filter(name);
    (0..cfg.counts.get(name))
        .into_par_iter()
        .map(|i| {
            for attempt in 0..DEDUP_RETRIES {
                let mut rng = problem_rng(cfg.seed, name, i, attempt);
                let p = generate_problem(&mut rng, filter, cfg.resolution, cfg.regime)?;
                if !avoid.contains(&raster_digest(&p)) {
                    return Ok(p);
                }
            }
            Err(Error::Generation(format!("{} problem {i} keeps duplicating training data", name.as_str())))
        })
        .collect()
}

fn write_binary(path: &Path, resolution: usize, problems: &[Problem]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(resolution as u16).to_le_bytes())?;
    w.write_all(&(problems.len() as u32).to_le_bytes())?;
    for p in problems {
        for r in &p.panels_raster {
            w.write_all(r)?;
        }
        w.write_all(&[p.target, p.structure.len() as u8])?;
        for t in p.structure.triples() {
            w.write_all(&t.code())?;
        }
        w.write_all(&[p.regime.code()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_meta(path: &Path, seed: u64, problems: &[Problem]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (index, p) in problems.iter().enumerate() {
        let rec = MetaRecord {
            index,
            seed,
            regime: p.regime,
            target: p.target,
            structure: p.structure.clone(),
            context: p.context.clone(),
            choices: p.choices.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    config: DatasetConfig,
    split: Split,
}

pub fn binary_path(dir: &Path, name: SplitName) -> PathBuf {
    dir.join(format!("{}.pgmd", name.as_str()))
}

pub fn meta_path(dir: &Path, name: SplitName) -> PathBuf {
    dir.join(format!("{}.jsonl", name.as_str()))
}

/// Generates all three splits and writes them under `dir`.
pub fn build_dataset(cfg: &DatasetConfig, dir: &Path) -> Result<Split> {
    for name in SplitName::ALL {
        if cfg.counts.get(name) == 0 {
            return Err(Error::param(format!("{} count must be positive", name.as_str())));
        }
    }
    let split = make_split(cfg.regime, &mut split_rng(cfg.seed));
    std::fs::create_dir_all(dir)?;
    let train = generate_split(cfg, &split, SplitName::Train, &HashSet::new())?;
    let seen: HashSet<[u8; 32]> = train.iter().map(raster_digest).collect();
    let val = generate_split(cfg, &split, SplitName::Val, &seen)?;
    let test = generate_split(cfg, &split, SplitName::Test, &seen)?;
    for (name, problems) in [(SplitName::Train, &train), (SplitName::Val, &val), (SplitName::Test, &test)] {
        write_binary(&binary_path(dir, name), cfg.resolution, problems)?;
        write_meta(&meta_path(dir, name), cfg.seed, problems)?;
    }
    let file = SplitFile {
        config: cfg.clone(),
        split: split.clone(),
    };
    std::fs::write(dir.join("split.json"), serde_json::to_vec_pretty(&file)?)?;
    Ok(split)
}

/// Reads the regime description written next to the split files.
pub fn load_split_info(dir: &Path) -> Result<(DatasetConfig, Split)> {
    let f: SplitFile = serde_json::from_slice(&std::fs::read(dir.join("split.json"))?)?;
    Ok((f.config, f.split))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated dataset file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("missing PGMD magic".into()));
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let resolution = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(c.take(4)?.try_into().unwrap()) as usize;
    let mut problems = Vec::with_capacity(count);
    for _ in 0..count {
        let panels = c.take(16 * resolution * resolution)?.to_vec();
        let target = c.u8()?;
        if target >= 8 {
            return Err(Error::Format(format!("target {target} out of range")));
        }
        let n = c.u8()? as usize;
        let mut triples = Vec::with_capacity(n);
        for _ in 0..n {
            triples.push(Triple::from_code(c.take(3)?.try_into().unwrap())?);
        }
        let structure = Structure::new(triples).map_err(|e| Error::Format(e.to_string()))?;
        let regime = Regime::from_code(c.u8()?)?;
        problems.push(StoredProblem {
            panels,
            target,
            structure,
            regime,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Ok(Dataset { resolution, problems })
}

pub fn load_split(dir: &Path, name: SplitName) -> Result<Dataset> {
    decode(&std::fs::read(binary_path(dir, name))?)
}

pub fn load_metadata(dir: &Path, name: SplitName) -> Result<Vec<MetaRecord>> {
    let f = BufReader::new(File::open(meta_path(dir, name))?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
