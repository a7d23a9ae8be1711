#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

pub fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(name);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&v).unwrap()
}

pub fn schema_errors(validator: &jsonschema::Validator, v: &serde_json::Value) -> Vec<String> {
    validator.iter_errors(v).map(|e| e.to_string()).collect()
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the binary with `out` as output directory (through the environment).
pub fn switchmfg(out: &Path, args: &[&str]) -> Run {
    let o: Output = Command::new(env!("CARGO_BIN_EXE_switchmfg"))
        .args(args)
        .env("SWITCHMFG_OUT", out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    Run {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

pub fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

/// Numeric CSV with a header row; empty cells become NaN.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| {
            l.split(',')
                .map(|c| {
                    if c.is_empty() {
                        f64::NAN
                    } else {
                        c.parse().unwrap()
                    }
                })
                .collect()
        })
        .collect();
    (header, rows)
}

/// `Y` of every `(player, step)` from a `bsde_solution.csv`, taking the sup over paths
/// of the deviation from `reference[step][player]`.
pub fn sup_error_against(solution_csv: &Path, reference: &[Vec<f64>]) -> f64 {
    let (h, rows) = read_csv(solution_csv);
    assert_eq!(&h[..4], ["player", "path", "step", "Y"]);
    let mut e = 0.0_f64;
    for r in rows {
        let (i, k) = (r[0] as usize, r[2] as usize);
        e = e.max((r[3] - reference[k][i]).abs());
    }
    e
}

/// Oracle fixture as `[step][player]`.
pub fn oracle(name: &str) -> Vec<Vec<f64>> {
    let (h, rows) = read_csv(&fixture(name));
    assert_eq!(h[0], "step");
    rows.into_iter().map(|r| r[1..].to_vec()).collect()
}

/// Every file below `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

/// A configuration small enough to run every command in seconds.
pub fn small_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "grid": {"horizon": 1.0, "n_steps": 10},
        "mfg": {
            "n_atoms": 3, "n_eta": 2, "n_wage": 3, "n_time_blocks": 2,
            "mc_paths": 120, "flow_samples": 120, "max_fp_iters": 4, "max_sweeps": 2
        },
        "sweep": {
            "n_list": [3, 6], "reps": 2, "paths_per_rep": 96, "eval_paths": 3,
            "reference_size": 120, "floor_draws": 6, "mf_paths": 300
        },
        "agent": {"paths": 64, "sims": 2000, "record_sims": 4},
        "thresholds": {"lemma_n": [3, 6]}
    });
    let path = dir.join("small.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}
