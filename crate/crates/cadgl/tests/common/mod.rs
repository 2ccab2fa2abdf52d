#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use cadgl_core::ddigraph::{DdiDataset, Edge, Split};
use cadgl_core::synth::SynthParams;
use cadgl_core::trainer::TrainConfig;
use cadgl_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Ten drugs, two types, twenty interactions on two interleaved rings.
pub fn twenty_edge_fixture() -> DdiDataset {
    let n = 10;
    let edges = (0..20usize)
        .map(|k| {
            let a = k % n;
            Edge {
                src: a,
                dst: (a + 1 + k / n * 2) % n,
                ty: k % 2,
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f: Vec<f64> = (0..n * 8).map(|_| StandardNormal.sample(&mut rng)).collect();
    DdiDataset::new(
        (0..n).map(|i| format!("D{i}")).collect(),
        vec!["0".into(), "1".into()],
        Tensor::new(&[n, 8], f).unwrap(),
        edges,
    )
    .unwrap()
}

/// Every edge in every part, for memorisation runs.
pub fn all_in_all(ds: &DdiDataset) -> Split {
    let all: Vec<usize> = (0..ds.edges().len()).collect();
    Split {
        train: all.clone(),
        valid: all.clone(),
        test: all,
        seed: 0,
    }
}

pub fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        latent_dim: 8,
        d_hid: 8,
        d_out: 8,
        t_dim: 4,
        decoder_hidden: vec![16],
        max_degree_bucket: 6,
        lr: 0.01,
        ..TrainConfig::default()
    }
}

pub fn small_synth(seed: u64) -> SynthParams {
    SynthParams {
        n_drugs: 40,
        n_types: 3,
        n_blocks: 4,
        f_dim: 10,
        p_in: 0.3,
        p_out: 0.02,
        seed,
    }
}

/// The six-epoch run config used by the CLI tests.
pub fn small_run_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "train": {
            "epochs": 6, "latent_dim": 8, "d_hid": 8, "d_out": 8, "t_dim": 4,
            "decoder_hidden": [16], "max_degree_bucket": 6, "lr": 0.01
        },
        "data": { "synthetic": small_synth(3) },
        "out_dir": "run"
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn cadgl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cadgl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}
