//! Replays the checked-in fuzz corpus seeds, plus truncations and byte
//! flips of each, through every parser. Regenerate the seeds with
//! `cargo test --test fuzz_seeds -- --ignored write_seeds`.

use std::path::PathBuf;

use proptest::prelude::*;
use twin_htp::cli::RunConfig;
use twin_htp::data::{decode_sequence, encode_sequence, synth_scene, synth_sequence_with, SynergyMode, SynthParams};
use twin_htp::encoders::{decode_vision_features, encode_vision_features, FileProvider};
use twin_htp::geometry::{OccupancyGrid, GridDims};
use twin_htp::numerics::{decode_checkpoint, encode_checkpoint, Checkpoint};

const TARGETS: [&str; 5] = ["sequence_file", "occupancy_grid", "checkpoint", "config", "vision_features"];

fn corpus(target: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target)
}

/// Mirrors the fuzz targets: parse, and re-parse anything accepted.
fn exercise(target: &str, data: &[u8]) {
    match target {
        "sequence_file" => {
            if let Ok(s) = decode_sequence(data) {
                assert_eq!(decode_sequence(&encode_sequence(&s)).unwrap(), s);
            }
        }
        "occupancy_grid" => {
            if let Ok(g) = OccupancyGrid::from_bytes(data) {
                assert_eq!(OccupancyGrid::from_bytes(&g.to_bytes()).unwrap(), g);
            }
        }
        "checkpoint" => {
            if let Ok(c) = decode_checkpoint(data) {
                assert_eq!(decode_checkpoint(&encode_checkpoint(&c)).unwrap(), c);
            }
        }
        "config" => {
            if let Ok(cfg) = std::str::from_utf8(data).map_err(|_| ()).and_then(|t| RunConfig::from_toml_str(t, None).map_err(|_| ())) {
                cfg.validate().unwrap();
            }
        }
        "vision_features" => {
            if let Ok(p) = decode_vision_features(data) {
                assert_eq!(decode_vision_features(&encode_vision_features(&p)).unwrap(), p);
            }
        }
        other => panic!("unknown target {other}"),
    }
}

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(corpus(target))
        .unwrap_or_else(|e| panic!("{}: {e}", corpus(target).display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("seed-"))
        .collect();
    files.sort();
    files.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

#[test]
fn every_target_has_seeds_that_parse() {
    for t in TARGETS {
        let s = seeds(t);
        assert!(!s.is_empty(), "{t} has no seeds");
        let accepted = s
            .iter()
            .filter(|b| match t {
                "sequence_file" => decode_sequence(b).is_ok(),
                "occupancy_grid" => OccupancyGrid::from_bytes(b).is_ok(),
                "checkpoint" => decode_checkpoint(b).is_ok(),
                "config" => RunConfig::from_toml_str(std::str::from_utf8(b).unwrap(), None).is_ok(),
                _ => decode_vision_features(b).is_ok(),
            })
            .count();
        assert!(accepted > 0, "{t}: no seed is accepted");
    }
}

#[test]
fn truncations_and_flips_never_panic() {
    for t in TARGETS {
        for seed in seeds(t) {
            let step = (seed.len() / 64).max(1);
            for cut in (0..seed.len()).step_by(step) {
                exercise(t, &seed[..cut]);
            }
            for i in (0..seed.len()).step_by(step) {
                for mask in [0x01u8, 0x80, 0xff] {
                    let mut m = seed.clone();
                    m[i] ^= mask;
                    exercise(t, &m);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]
    #[test]
    fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..512), which in 0usize..5) {
        exercise(TARGETS[which], &bytes);
    }

    #[test]
    fn seed_prefix_with_random_tail_never_panics(which in 0usize..5, keep in 0.0..1.0f64, tail in prop::collection::vec(any::<u8>(), 0..64)) {
        let s = seeds(TARGETS[which]);
        let seed = &s[0];
        let mut data = seed[..(seed.len() as f64 * keep) as usize].to_vec();
        data.extend(tail);
        exercise(TARGETS[which], &data);
    }
}

#[test]
#[ignore]
fn write_seeds() {
    let put = |t: &str, name: &str, bytes: &[u8]| {
        std::fs::create_dir_all(corpus(t)).unwrap();
        std::fs::write(corpus(t).join(format!("seed-{name}")), bytes).unwrap();
    };
    let params = SynthParams {
        plane_points: 12,
        box_points: 6,
        arm_points: 4,
        ..SynthParams::default()
    };
    let seq = synth_sequence_with(&synth_scene(1), SynergyMode::HeadLeads, 2, 2, 3, &params).unwrap();
    put("sequence_file", "small", &encode_sequence(&seq));

    let dims: GridDims = (3, 2, 2);
    let mut g = OccupancyGrid::empty([0.0, -0.5, 1.0], 0.05, dims);
    g.cells[3] = 1;
    put("occupancy_grid", "small", &g.to_bytes());
    put("occupancy_grid", "empty", &OccupancyGrid::empty([0.0; 3], 1.0, (1, 1, 1)).to_bytes());

    let mut c = Checkpoint {
        metadata: serde_json::json!({"config_hash": "ab", "epoch": 1, "adam_step": 4}),
        ..Default::default()
    };
    c.arrays.insert("param:w".into(), ndarray::array![[0.5, -1.0], [2.0, 0.25]]);
    c.arrays.insert("adam.m:w".into(), ndarray::Array2::zeros((2, 2)));
    put("checkpoint", "small", &encode_checkpoint(&c));

    put("config", "overlay", b"[model]\nego_mode = \"se3\"\n[train]\nepochs = 3\n");
    put("config", "paper", b"preset = \"paper\"\n");
    put("config", "sweeps", b"[ablate]\nsweeps = [\"pattern\"]\nepochs = 1\n[model.modalities]\nimages = true\ntext = false\npoint_clouds = false\n");

    let mut p = FileProvider { x: 3, ..Default::default() };
    p.records.insert("train-0000".into(), ndarray::array![[0.0, 1.0, 0.5], [0.25, -1.0, 2.0]]);
    put("vision_features", "small", &encode_vision_features(&p));
}
