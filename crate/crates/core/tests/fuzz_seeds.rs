//! Replays the checked-in fuzz seeds, plus mutations of them, through the
//! same parsers the fuzz targets drive. Runs on stable without libFuzzer.

use std::fs;
use std::path::PathBuf;

use analogy_core::config::RunConfig;
use analogy_core::corpus::Corpus;
use analogy_core::model::{checkpoint_from_bytes, parse_checkpoint, Architecture};
use analogy_core::rng;
use rand::Rng;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<Vec<u8>> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| fs::read(e.unwrap().path()).unwrap())
        .collect();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out.sort();
    out
}

/// Each seed, then byte flips, truncations and splices of it.
fn mutants(seeds: &[Vec<u8>], per_seed: usize) -> Vec<Vec<u8>> {
    let mut r = rng::stream(0xF0, &[]);
    let mut out = Vec::new();
    for s in seeds {
        out.push(s.clone());
        for _ in 0..per_seed {
            let mut m = s.clone();
            match r.random_range(0..3) {
                0 if !m.is_empty() => {
                    let i = r.random_range(0..m.len());
                    m[i] = r.random();
                }
                1 => m.truncate(r.random_range(0..=m.len())),
                _ => {
                    let at = r.random_range(0..=m.len());
                    let junk: Vec<u8> = (0..r.random_range(1..9)).map(|_| r.random()).collect();
                    m.splice(at..at, junk);
                }
            }
            out.push(m);
        }
    }
    out
}

#[test]
fn corpus_parser_survives_seeds_and_mutants() {
    let seeds = seeds("load_corpus");
    assert!(seeds.iter().any(|s| Corpus::from_bytes(s).is_ok()), "a valid seed is checked in");
    for data in mutants(&seeds, 300) {
        if let Ok(c) = Corpus::from_bytes(&data) {
            assert_eq!(c.to_bytes(), data);
        }
    }
}

#[test]
fn checkpoint_parser_survives_seeds_and_mutants() {
    let arch = Architecture {
        image_size: 8,
        conv1: 2,
        conv2: 2,
        hidden: 4,
        embed_dim: 3,
        ..Architecture::default()
    };
    let seeds = seeds("load_checkpoint");
    assert!(seeds.iter().any(|s| checkpoint_from_bytes(s, arch).is_ok()), "a valid seed is checked in");
    for data in mutants(&seeds, 300) {
        let _ = parse_checkpoint(&data);
        let _ = checkpoint_from_bytes(&data, arch);
    }
}

#[test]
fn config_parser_survives_seeds_and_mutants() {
    let seeds = seeds("parse_config");
    for data in mutants(&seeds, 300) {
        let Ok(text) = std::str::from_utf8(&data) else { continue };
        if let Ok(cfg) = RunConfig::parse(text) {
            let again = RunConfig::parse(&cfg.to_text()).expect("echo parses");
            assert_eq!(again.to_text(), cfg.to_text());
            let _ = cfg.validate();
        }
    }
}
