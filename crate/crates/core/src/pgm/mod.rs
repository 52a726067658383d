//! Procedurally generated matrix problems.

mod choices;
pub mod dataset;
mod realize;
mod render;
mod rules;
mod split;
mod structure;
mod types;

use rand::Rng;

pub use choices::{generate_choices, generate_choices_with, perturb, DISTRACTOR_RETRIES};
pub use dataset::{build_dataset, generate_split, load_metadata, load_split, load_split_info, split_rng, Counts, Dataset, DatasetConfig, MetaRecord, StoredProblem};
pub use realize::{realize_grid, REALIZE_RETRIES};
pub use render::{gray, render_panel, SUPPORTED_RESOLUTIONS};
pub use rules::{check_rules, read_value, relation_holds};
pub use split::{compatible_attribute_pairs, compatible_triple_pairs, key_name, make_split, Split, SplitName};
pub use structure::{ordered_pair, sample_structure, StructureFilter, SAMPLE_RETRIES};
pub use types::*;

use crate::error::{Error, Result};

/// Samples a structure from `filter` and assembles a full problem.
pub fn generate_problem<R: Rng + ?Sized>(
    rng: &mut R,
    filter: &StructureFilter,
    resolution: usize,
    regime: Regime,
) -> Result<Problem> {
    let s = sample_structure(rng, filter)?;
    problem_for_structure(rng, s, resolution, regime)
}

/// Realizes `s`, renders it and attaches raster-distinct choices.
pub fn problem_for_structure<R: Rng + ?Sized>(rng: &mut R, s: Structure, resolution: usize, regime: Regime) -> Result<Problem> {
    if !SUPPORTED_RESOLUTIONS.contains(&resolution) {
        return Err(Error::param(format!("resolution {resolution} is not one of {SUPPORTED_RESOLUTIONS:?}")));
    }
    let grid = realize_grid(&s, rng)?;
    let mut seen = vec![render_panel(&grid[8], resolution)?];
    let mut reject = |p: &PanelSpec| match render_panel(p, resolution) {
        Ok(img) if !seen.contains(&img) => {
            seen.push(img);
            false
        }
        _ => true,
    };
    let (choices, target) = generate_choices_with(&grid, &s, rng, &mut reject)?;
    let context: Vec<PanelSpec> = grid[..8].to_vec();
    let mut panels_raster = Vec::with_capacity(16);
    for p in context.iter().chain(&choices) {
        panels_raster.push(render_panel(p, resolution)?);
    }
    Ok(Problem {
        context,
        choices,
        target,
        structure: s,
        resolution,
        panels_raster,
        regime,
    })
}

/// Number of candidates that satisfy the rules in the missing slot.
pub fn count_solutions(p: &Problem) -> usize {
    (0..p.choices.len()).filter(|&k| check_rules(&p.structure, &p.grid_with(k))).count()
}
