mod common;

use common::*;

#[test]
fn cost_check_default_and_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let r = switchmfg(dir.path(), &["cost-check"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("max_gap:"));
    let report = read_json(&dir.path().join("cost-check/conjugacy_report.json"));
    assert!(report["max_gap"].as_f64().unwrap() <= 5e-4);
    assert_eq!(report["passed"], true);

    let r = switchmfg(dir.path(), &["cost-check", "--cost.kappa=-1"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("kappa"), "{}", r.stderr);

    let r = switchmfg(dir.path(), &["cost-check", "--format", "json"]);
    assert_eq!(r.code, 0);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["n_points"], 61);

    // a grid too coarse for the default threshold
    let r = switchmfg(dir.path(), &["cost-check", "--cost_check.a_step=0.3"]);
    assert_eq!(r.code, 1, "{}", r.stdout);
}

#[test]
fn config_files_overrides_and_typos() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"cost": {"form": "quadratic_capped", "kappa": 2.0, "a_max": 1.0}}"#,
    )
    .unwrap();
    let r = switchmfg(
        dir.path(),
        &["cost-check", "--config", cfg.to_str().unwrap()],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let m = read_json(&dir.path().join("cost-check/manifest.json"));
    assert_eq!(m["config"]["cost"]["kappa"], 2.0);
    assert_eq!(m["files"], serde_json::json!(["conjugacy_report.json"]));
    assert!(schema_errors(&schema("manifest.schema.json"), &m).is_empty());

    std::fs::write(&cfg, r#"{"costs": {}}"#).unwrap();
    let r = switchmfg(
        dir.path(),
        &["cost-check", "--config", cfg.to_str().unwrap()],
    );
    assert_eq!(r.code, 2);
    let r = switchmfg(dir.path(), &["cost-check", "--cost.kapa=1"]);
    assert_eq!(r.code, 2);
    let missing = dir.path().join("missing.json");
    let r = switchmfg(
        dir.path(),
        &["cost-check", "--config", missing.to_str().unwrap()],
    );
    assert_eq!(r.code, 2);
}

#[test]
fn solve_agent_matches_oracle_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let contracts = fixture("contracts_n3.json");
    let args = [
        "solve-agent",
        "--contracts",
        contracts.to_str().unwrap(),
        "--grid.n_steps=100",
        "--agent.sims=20000",
    ];
    let r = switchmfg(dir.path(), &args);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    let out = dir.path().join("solve-agent");
    let e = sup_error_against(
        &out.join("bsde_solution.csv"),
        &oracle("ode_oracle_n3_100.csv"),
    );
    assert!(e <= 1e-2, "{e}");
    let first = snapshot(&out);
    assert_eq!(switchmfg(dir.path(), &args).code, 0);
    assert_eq!(first, snapshot(&out));
    let check = read_json(&out.join("agent_check.json"));
    assert!(check["z"].as_f64().unwrap() <= 3.0);

    let missing = dir.path().join("nope.json");
    let r = switchmfg(
        dir.path(),
        &["solve-agent", "--contracts", missing.to_str().unwrap()],
    );
    assert_eq!(r.code, 2);
    let r = switchmfg(dir.path(), &["solve-agent"]);
    assert_eq!(r.code, 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"contracts": [{"xi": 0, "wage": [0.1, 0.2]}, {"xi": 1, "wage": 0}]}"#,
    )
    .unwrap();
    let r = switchmfg(
        dir.path(),
        &["solve-agent", "--contracts", bad.to_str().unwrap()],
    );
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("wage"), "{}", r.stderr);
}

#[test]
fn simulate_writes_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let contracts = fixture("contracts_n2.json");
    let r = switchmfg(
        dir.path(),
        &[
            "simulate",
            "--contracts",
            contracts.to_str().unwrap(),
            "--agent.sims=5000",
            "--agent.record_sims=3",
            "--grid.n_steps=20",
        ],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let out = dir.path().join("simulate");
    let (h, rows) = read_csv(&out.join("trajectories.csv"));
    assert_eq!(h, ["sim", "step", "regime", "X_1", "X_2"]);
    assert_eq!(rows.len(), 3 * 21);
    let v = read_json(&out.join("values.json"));
    assert_eq!(v["principals"].as_array().unwrap().len(), 2);
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(
        m["files"],
        serde_json::json!(["trajectories.csv", "values.json"])
    );
}

#[test]
fn solve_mfg_flags_and_histories() {
    let dir = tempfile::tempdir().unwrap();
    let small = small_config(dir.path());
    let small = small.to_str().unwrap();

    let r = switchmfg(
        dir.path(),
        &["solve-mfg", "--config", small, "--max-iters", "0"],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("converged=false"));
    let eq = read_json(&dir.path().join("solve-mfg/equilibrium.json"));
    assert_eq!(eq["converged"], false);
    assert_eq!(eq["iterations"], 0);

    let r = switchmfg(
        dir.path(),
        &[
            "solve-mfg",
            "--config",
            small,
            "--mfg.n_atoms=1",
            "--mfg.n_eta=1",
            "--mfg.eta_max=0",
            "--mfg.n_wage=1",
        ],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let eq = read_json(&dir.path().join("solve-mfg/equilibrium.json"));
    assert_eq!(eq["converged"], true);
    assert!(eq["iterations"].as_u64().unwrap() <= 2);
    let (h, rows) = read_csv(&dir.path().join("solve-mfg/residual_history.csv"));
    assert_eq!(h, ["iteration", "residual", "damping"]);
    assert_eq!(rows.len() as u64, eq["iterations"].as_u64().unwrap());
    assert!(dir.path().join("solve-mfg/defect.json").exists());
}

#[test]
fn experiments_reuse_equilibria_and_gate() {
    let dir = tempfile::tempdir().unwrap();
    let small = small_config(dir.path());
    let small = small.to_str().unwrap();
    let r = switchmfg(dir.path(), &["solve-mfg", "--config", small]);
    assert!(r.code <= 1, "{}", r.stderr);
    let eq_path = dir.path().join("solve-mfg/equilibrium.json");
    let eq_text = std::fs::read_to_string(&eq_path).unwrap();

    // a different master seed would change a fresh solve; the supplied equilibrium is copied
    let r = switchmfg(
        dir.path(),
        &[
            "chaos-sweep",
            "--config",
            small,
            "--equilibrium",
            eq_path.to_str().unwrap(),
            "--seeds.master=99",
            "--format",
            "json",
            "--thresholds.spearman=-2",
        ],
    );
    assert_eq!(r.code, 1, "{}{}", r.stdout, r.stderr);
    assert!(
        r.stdout.contains("spearman: FAIL (statistic"),
        "{}",
        r.stdout
    );
    let out = dir.path().join("chaos-sweep");
    assert_eq!(
        std::fs::read_to_string(out.join("equilibrium.json")).unwrap(),
        eq_text
    );
    let report = read_json(&out.join("chaos_report.json"));
    assert!(schema_errors(&schema("chaos_report.schema.json"), &report).is_empty());
    for n in [3, 6] {
        let l = read_json(&out.join(format!("lemma_report_n{n}.json")));
        assert!(schema_errors(&schema("lemma_report.schema.json"), &l).is_empty());
    }
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["seeds"]["master"], 99);
    assert_eq!(m["config_hash"], report["config_hash"]);
    assert!(schema_errors(&schema("manifest.schema.json"), &m).is_empty());

    let r = switchmfg(
        dir.path(),
        &[
            "value-convergence",
            "--config",
            small,
            "--equilibrium",
            eq_path.to_str().unwrap(),
            "--format",
            "json",
        ],
    );
    assert!(r.code <= 1, "{}", r.stderr);
    assert!(r.stdout.contains("value gap:"));
    let t = read_json(&dir.path().join("value-convergence/value_convergence.json"));
    assert!(schema_errors(&schema("value_table.schema.json"), &t).is_empty());

    // lemma sizes must be swept sizes
    let r = switchmfg(
        dir.path(),
        &["chaos-sweep", "--config", small, "--thresholds.lemma_n=[5]"],
    );
    assert_eq!(r.code, 2);
    let other = dir.path().join("other.json");
    std::fs::write(&other, r#"{"grid": {"horizon": 1.0, "n_steps": 12}}"#).unwrap();
    let r = switchmfg(
        dir.path(),
        &[
            "value-convergence",
            "--config",
            other.to_str().unwrap(),
            "--equilibrium",
            eq_path.to_str().unwrap(),
        ],
    );
    assert_eq!(r.code, 2, "{}", r.stderr);
}
