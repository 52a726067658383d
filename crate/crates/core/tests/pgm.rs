use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ravenforge::pgm::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((observed.len() - 1) as f64).unwrap().cdf(stat)
}

/// Two-sample homogeneity test on category counts.
fn homogeneity_p(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let mut stat = 0.0;
    let mut cells = 0;
    for (x, y) in a.iter().zip(b) {
        let total = x + y;
        if total == 0.0 {
            continue;
        }
        cells += 1;
        let ea = total * na / (na + nb);
        let eb = total * nb / (na + nb);
        stat += (x - ea).powi(2) / ea + (y - eb).powi(2) / eb;
    }
    1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn every_problem_has_exactly_one_solution_across_regimes() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for regime in Regime::ALL {
        let split = make_split(regime, &mut rng);
        for name in SplitName::ALL {
            for _ in 0..150 {
                let p = generate_problem(&mut rng, split.filter(name), 40, regime).unwrap();
                assert_eq!(count_solutions(&p), 1, "{}", p.structure);
                assert!(check_rules(&p.structure, &p.grid_with(p.target as usize)));
                for (i, a) in p.panels_raster[8..].iter().enumerate() {
                    for b in &p.panels_raster[8 + i + 1..] {
                        assert_ne!(a, b, "duplicate choice rasters");
                    }
                }
            }
        }
    }
}

#[test]
fn target_index_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = StructureFilter::default();
    let mut counts = [0.0f64; 8];
    for _ in 0..10_000 {
        let s = sample_structure(&mut rng, &f).unwrap();
        let g = realize_grid(&s, &mut rng).unwrap();
        let (_, target) = generate_choices(&g, &s, &mut rng).unwrap();
        counts[target as usize] += 1.0;
    }
    let p = chi_square_p(&counts, &[1250.0; 8]);
    assert!(p > 0.01, "p = {p}, counts {counts:?}");
}

#[test]
fn neutral_train_and_test_share_triple_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let split = make_split(Regime::Neutral, &mut rng);
    let all = Triple::all();
    let tally = |rng: &mut ChaCha8Rng, f: &StructureFilter| {
        let mut c = vec![0.0; all.len()];
        for _ in 0..10_000 {
            for t in sample_structure(rng, f).unwrap().triples() {
                c[all.iter().position(|x| x == t).unwrap()] += 1.0;
            }
        }
        c
    };
    let a = tally(&mut rng, &split.train);
    let b = tally(&mut rng, &split.test);
    let p = homogeneity_p(&a, &b);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn holdout_filters_are_sound() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pairs = make_split(Regime::HoTriplePairs, &mut rng);
    let attrs = make_split(Regime::HoAttributePairs, &mut rng);
    let triples = make_split(Regime::HoTriples, &mut rng);
    let pair_set = |s: &Structure| {
        let t = s.triples();
        let mut v = Vec::new();
        for i in 0..t.len() {
            for j in i + 1..t.len() {
                v.push(ordered_pair(t[i], t[j]));
            }
        }
        v
    };
    for _ in 0..10_000 {
        let s = sample_structure(&mut rng, &pairs.train).unwrap();
        assert!(pair_set(&s).iter().all(|p| !pairs.held_out_triple_pairs.contains(p)));
        let s = sample_structure(&mut rng, &triples.train).unwrap();
        assert!(s.triples().iter().all(|t| !triples.held_out_triples.contains(t)));
        let s = sample_structure(&mut rng, &attrs.train).unwrap();
        for (a, b) in pair_set(&s) {
            assert!(!attrs.held_out_attribute_pairs.contains(&ordered_pair(a.key(), b.key())));
        }
    }
    for _ in 0..2_000 {
        let s = sample_structure(&mut rng, &pairs.test).unwrap();
        assert!(s.len() >= 2);
        assert!(pair_set(&s).iter().any(|p| pairs.held_out_triple_pairs.contains(p)));
        let s = sample_structure(&mut rng, &triples.test).unwrap();
        assert!(s.triples().iter().any(|t| triples.held_out_triples.contains(t)));
        let s = sample_structure(&mut rng, &attrs.test).unwrap();
        assert!(pair_set(&s)
            .iter()
            .any(|(a, b)| attrs.held_out_attribute_pairs.contains(&ordered_pair(a.key(), b.key()))));
    }
}

/// Changes one governed attribute of one panel by the smallest amount the
/// attribute allows: another level, one shape more or fewer, one cell toggled.
fn mutate(rng: &mut ChaCha8Rng, grid: &mut [PanelSpec], key: AttrKey, slot: usize) {
    let p = &mut grid[slot];
    match key.1 {
        Attribute::Number => {
            let n = p.shapes.len();
            let grow = n == 1 || (n < 9 && rng.random_bool(0.5));
            if grow {
                let free: Vec<u8> = (0..9).filter(|c| p.shapes.iter().all(|s| s.position != *c)).collect();
                let model = p.shapes[0];
                p.shapes.push(ShapeObj {
                    position: *free.choose(rng).unwrap(),
                    ..model
                });
            } else {
                let i = rng.random_range(0..n);
                p.shapes.remove(i);
            }
            p.normalize();
        }
        Attribute::Position => {
            let cell = rng.random_range(0..9u8);
            match p.shapes.iter().position(|s| s.position == cell) {
                Some(i) if p.shapes.len() > 1 => {
                    p.shapes.remove(i);
                }
                Some(_) => {
                    let model = p.shapes[0];
                    p.shapes.push(ShapeObj {
                        position: (cell + 1) % 9,
                        ..model
                    });
                }
                None => {
                    let model = p.shapes[0];
                    p.shapes.push(ShapeObj { position: cell, ..model });
                }
            }
            p.normalize();
        }
        _ => {
            assert!(perturb(rng, p, key));
        }
    }
}

#[test]
fn single_attribute_mutations_break_the_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let f = StructureFilter::default();
    let (mut total, mut caught) = (0usize, 0usize);
    let mut misses: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..5_000 {
        let s = sample_structure(&mut rng, &f).unwrap();
        let grid = realize_grid(&s, &mut rng).unwrap();
        let t = *s.triples().choose(&mut rng).unwrap();
        // The derived panel of a row.
        let slot = 3 * rng.random_range(0..3) + 2;
        let mut g = grid.clone();
        mutate(&mut rng, &mut g, t.key(), slot);
        if g == grid {
            continue;
        }
        total += 1;
        if check_rules(&s, &g) {
            *misses.entry(t.to_string()).or_default() += 1;
        } else {
            caught += 1;
        }
    }
    let rate = caught as f64 / total as f64;
    assert!(rate >= 0.99, "caught {caught}/{total}, misses {misses:?}");
}

#[test]
fn dataset_build_counts_determinism_and_audit() {
    let cfg = DatasetConfig {
        regime: Regime::HoTriples,
        counts: Counts {
            train: 1000,
            val: 100,
            test: 200,
        },
        resolution: 40,
        seed: 7,
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let split = build_dataset(&cfg, a.path()).unwrap();
    build_dataset(&cfg, b.path()).unwrap();
    for name in SplitName::ALL {
        for file in [format!("{}.pgmd", name.as_str()), format!("{}.jsonl", name.as_str())] {
            assert_eq!(std::fs::read(a.path().join(&file)).unwrap(), std::fs::read(b.path().join(&file)).unwrap(), "{file}");
        }
        let data = load_split(a.path(), name).unwrap();
        let meta = load_metadata(a.path(), name).unwrap();
        assert_eq!(data.len(), cfg.counts.get(name));
        assert_eq!(meta.len(), data.len());
        for (rec, stored) in meta.iter().zip(&data.problems) {
            assert_eq!(rec.target, stored.target);
            assert_eq!(rec.structure, stored.structure);
            assert_eq!(stored.regime, Regime::HoTriples);
            let passing = (0..8)
                .filter(|&k| {
                    let mut g = rec.context.clone();
                    g.push(rec.choices[k].clone());
                    check_rules(&rec.structure, &g)
                })
                .count();
            assert_eq!(passing, 1);
            for (k, spec) in rec.context.iter().chain(&rec.choices).enumerate() {
                assert_eq!(render_panel(spec, 40).unwrap(), stored.panel(k, 40));
            }
            if name != SplitName::Test {
                assert!(rec.structure.triples().iter().all(|t| !split.held_out_triples.contains(t)));
            }
        }
    }
    assert_eq!(std::fs::read(a.path().join("split.json")).unwrap(), std::fs::read(b.path().join("split.json")).unwrap());
    let (back_cfg, back_split) = load_split_info(a.path()).unwrap();
    assert_eq!(back_cfg, cfg);
    assert_eq!(back_split, split);
}

#[test]
fn corrupted_dataset_files_are_rejected() {
    let cfg = DatasetConfig {
        regime: Regime::Neutral,
        counts: Counts { train: 3, val: 1, test: 1 },
        resolution: 40,
        seed: 1,
    };
    let dir = tempfile::tempdir().unwrap();
    build_dataset(&cfg, dir.path()).unwrap();
    let path = dir.path().join("train.pgmd");
    let bytes = std::fs::read(&path).unwrap();
    assert!(ravenforge::pgm::dataset::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(ravenforge::pgm::dataset::decode(&bad).is_err());
    let zero = DatasetConfig {
        counts: Counts { train: 0, val: 1, test: 1 },
        ..cfg
    };
    assert!(build_dataset(&zero, dir.path()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn generation_is_a_function_of_the_seed(seed in any::<u64>()) {
        let f = StructureFilter::default();
        let a = generate_problem(&mut ChaCha8Rng::seed_from_u64(seed), &f, 40, Regime::Neutral).unwrap();
        let b = generate_problem(&mut ChaCha8Rng::seed_from_u64(seed), &f, 40, Regime::Neutral).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(count_solutions(&a), 1);
        prop_assert!(a.panels_raster.iter().all(|r| r.len() == 1600));
    }
}
