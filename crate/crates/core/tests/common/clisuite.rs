//! Drives the `pmm` binary end to end inside a scratch directory.

use std::path::Path;
use std::process::{Command, Output};

pub fn pmm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn pmm")
}

/// Runs `args` and returns stdout, or the exit status and stderr.
pub fn pmm_ok(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = pmm(dir, args);
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("pmm {}: {}: {}", args.join(" "), out.status, String::from_utf8_lossy(&out.stderr)))
    }
}

pub const DATASET_CFG: &str = "[dataset]\ntemplate = biped\nsequences_per_class = 1\nduration = 4\nseed = 3\n";

pub const TRAIN_CFG: &str = "[train]\nsteps = 30\nbatch = 8\nhidden = 8\ncodebook_size = 4\nembedding_dim = 4\nseed = 5\n\n[data.biped]\ndir = data\n\n[output]\ncheckpoint = model.ckpt\n";

pub const QUERY_CFG: &str = "template = biped\nclass = walk\nfrequency = 2.0\nduration = 3\nseed = 11\n";

/// Files written by [`pipeline`], in the order they are produced.
pub const PRODUCTS: &[&str] = &[
    "data/biped_walk_0.motion",
    "data/biped_walk_0.gt",
    "q.motion",
    "q.gt",
    "model.ckpt",
    "q.track",
    "q.txt",
    "db.bin",
    "out.motion",
    "match.txt",
];

/// gen, train, embed, build-db and match in `dir`. Returns every product's bytes.
pub fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    std::fs::write(dir.join("ds.cfg"), DATASET_CFG).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("train.cfg"), TRAIN_CFG).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("walk.cfg"), QUERY_CFG).map_err(|e| e.to_string())?;
    pmm_ok(dir, &["gen", "--spec", "ds.cfg", "--out", "data"])?;
    pmm_ok(dir, &["gen", "--spec", "walk.cfg", "--out", "q.motion"])?;
    pmm_ok(dir, &["train", "--config", "train.cfg"])?;
    pmm_ok(dir, &["embed", "--checkpoint", "model.ckpt", "--motion", "q.motion", "--out", "q.track", "--text", "q.txt"])?;
    pmm_ok(
        dir,
        &[
            "build-db",
            "--checkpoint",
            "model.ckpt",
            "--motion",
            "data/biped_idle_0.motion",
            "--motion",
            "data/biped_walk_0.motion",
            "--motion",
            "data/biped_run_0.motion",
            "--out",
            "db.bin",
        ],
    )?;
    let summary = pmm_ok(dir, &["match", "--db", "db.bin", "--query", "q.track", "--out", "out.motion"])?;
    std::fs::write(dir.join("match.txt"), summary).map_err(|e| e.to_string())?;
    PRODUCTS
        .iter()
        .map(|p| std::fs::read(dir.join(p)).map(|b| (p.to_string(), b)).map_err(|e| format!("{p}: {e}")))
        .collect()
}
