use super::*;
use crate::agent_bsde::RegressionConfig;
use crate::cost_model::CostSpec;
use crate::mfg_solver::{fixed_point, EquilibriumResult, MfgConfig};
use crate::stochastic_core::{DistanceKind, TimeGrid};
use crate::switching_simulator::UtilitySpec;

fn equilibrium(degenerate: bool) -> EquilibriumResult {
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let cfg = if degenerate {
        MfgConfig {
            n_atoms: 1,
            n_eta: 1,
            eta_max: 0.0,
            n_wage: 1,
            mc_paths: 50,
            flow_samples: 50,
            ..MfgConfig::default()
        }
    } else {
        MfgConfig {
            n_atoms: 5,
            n_eta: 3,
            n_wage: 4,
            n_time_blocks: 2,
            mc_paths: 300,
            flow_samples: 300,
            max_fp_iters: 10,
            ..MfgConfig::default()
        }
    };
    fixed_point(
        &cfg,
        grid,
        &CostSpec::default(),
        &UtilitySpec::capped(0.25),
        3,
    )
    .unwrap()
}

fn small_sweep() -> SweepConfig {
    SweepConfig {
        n_list: vec![3, 6],
        reps: 3,
        paths_per_rep: 96,
        eval_paths: 3,
        reference_size: 400,
        floor_draws: 24,
        mf_paths: 400,
        ..SweepConfig::default()
    }
}

#[test]
fn sweep_config_validation() {
    assert!(SweepConfig::default().validate().is_ok());
    for bad in [
        SweepConfig {
            n_list: vec![8, 4],
            ..SweepConfig::default()
        },
        SweepConfig {
            n_list: vec![1, 4],
            ..SweepConfig::default()
        },
        SweepConfig {
            reps: 0,
            ..SweepConfig::default()
        },
        SweepConfig {
            eval_paths: 0,
            ..SweepConfig::default()
        },
        SweepConfig {
            reference_size: 100,
            ..SweepConfig::default()
        },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    assert!(serde_json::from_str::<SweepConfig>(r#"{"replicas": 3}"#).is_err());
}

#[test]
fn degenerate_equilibrium_has_no_chaos() {
    let eq = equilibrium(true);
    let cfg = SweepConfig {
        paths_per_rep: 16,
        ..small_sweep()
    };
    let reg = RegressionConfig::default();
    let cost = CostSpec::default();
    let r = chaos_sweep(&eq, &cfg, &cost, &reg, 1).unwrap();
    for row in &r.rows {
        assert!(row.mean_d2 <= 1e-20, "{row:?}");
        assert!(row.mean_d2_copies <= 1e-20 && row.floor <= 1e-20);
        assert!(row.mean_sup_dy2 <= 1e-20 && row.mean_int_dz2 <= 1e-20);
        assert_eq!(row.median_ratio_y, None);
    }
    let l = lemma_estimates_check(3, &eq, &cfg, &cost, &reg, 1).unwrap();
    assert!(l.degenerate);
    assert!(l.reps.iter().all(|s| s.ratio_y == Ratio::Degenerate));
    let json = to_stable_json(&l).unwrap();
    assert!(json.contains("\"degenerate\""));
    let v = value_convergence(&eq, &cfg, &cost, &reg, &UtilitySpec::capped(0.25), 1).unwrap();
    for row in &v.rows {
        assert!(row.gap <= 1e-9, "{row:?}");
    }
    assert!((v.value_mf - eq.value).abs() <= 1e-9);
}

#[test]
fn sweep_statistics_are_consistent() {
    let eq = equilibrium(false);
    let cfg = small_sweep();
    let reg = RegressionConfig::default();
    let cost = CostSpec::default();
    let r = chaos_sweep(&eq, &cfg, &cost, &reg, 9).unwrap();
    assert_eq!(r.rows.iter().map(|x| x.n).collect::<Vec<_>>(), vec![3, 6]);
    assert_eq!(r.reference_size, 400);
    for row in &r.rows {
        assert_eq!(row.estimator, DistanceKind::Exact);
        assert_eq!(row.replications + row.failed, 3);
        // the optimal assignment never costs more than the index pairing
        assert!(row.mean_d2 <= row.mean_d2_coupled + 1e-12);
        assert!(row.mean_d2 > 0.0 && row.floor > 0.0);
        // copies and a disjoint reference subsample are two independent n-samples of one law,
        // exactly like the two halves behind the floor
        let se = (row.stderr_d2_copies.powi(2) + row.floor_stderr.powi(2)).sqrt();
        assert!(
            (row.mean_d2_copies - row.floor).abs() <= 4.0 * se,
            "{row:?}"
        );
    }
    // a single cell is reproducible on its own
    let l = lemma_estimates_check(6, &eq, &cfg, &cost, &reg, 9).unwrap();
    let mean: f64 = l.reps.iter().map(|s| s.d2).sum::<f64>() / l.reps.len() as f64;
    assert_eq!(mean.to_bits(), r.rows[1].mean_d2.to_bits());
    assert!(l.all_finite);
    assert!(l.reps.iter().all(|s| s.d2 <= s.d2_coupled + 1e-12));
}

#[test]
fn coupled_estimator_above_the_cap() {
    let eq = equilibrium(false);
    let cfg = SweepConfig {
        n_list: vec![3, 6],
        assignment_cap: 4,
        reps: 1,
        ..small_sweep()
    };
    let r = chaos_sweep(
        &eq,
        &cfg,
        &CostSpec::default(),
        &RegressionConfig::default(),
        2,
    )
    .unwrap();
    assert_eq!(r.rows[0].estimator, DistanceKind::Exact);
    assert_eq!(r.rows[1].estimator, DistanceKind::Coupled);
    assert_eq!(r.rows[1].mean_rhs, None);
    assert_eq!(r.rows[1].mean_d2, r.rows[1].mean_d2_coupled);
    assert!(lemma_estimates_check(
        6,
        &eq,
        &cfg,
        &CostSpec::default(),
        &RegressionConfig::default(),
        2
    )
    .is_err());
}

#[test]
fn failed_replications_fail_the_run() {
    let eq = equilibrium(false);
    // too few paths for the regression design: every replication fails
    let cfg = SweepConfig {
        paths_per_rep: 4,
        eval_paths: 2,
        ..small_sweep()
    };
    let err = chaos_sweep(
        &eq,
        &cfg,
        &CostSpec::default(),
        &RegressionConfig::default(),
        2,
    )
    .unwrap_err();
    assert!(err.to_string().contains("replications failed"), "{err}");
}

#[test]
fn value_convergence_needs_bounded_utility() {
    let eq = equilibrium(true);
    let cfg = small_sweep();
    let u = UtilitySpec {
        cap: f64::INFINITY,
        ..UtilitySpec::default()
    };
    assert!(value_convergence(
        &eq,
        &cfg,
        &CostSpec::default(),
        &RegressionConfig::default(),
        &u,
        1
    )
    .is_err());
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(name);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&v).unwrap()
}

fn assert_valid(validator: &jsonschema::Validator, text: &str) {
    let v: serde_json::Value = serde_json::from_str(text).unwrap();
    let errors: Vec<String> = validator.iter_errors(&v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
}

#[test]
fn reports_are_stable_and_match_their_schemas() {
    let eq = equilibrium(false);
    let cfg = SweepConfig {
        reps: 2,
        ..small_sweep()
    };
    let reg = RegressionConfig::default();
    let cost = CostSpec::default();
    let u = UtilitySpec::capped(0.25);
    let chaos = chaos_sweep(&eq, &cfg, &cost, &reg, 4).unwrap();
    let lemma = lemma_estimates_check(3, &eq, &cfg, &cost, &reg, 4).unwrap();
    let value = value_convergence(&eq, &cfg, &cost, &reg, &u, 4).unwrap();
    assert_valid(
        &schema("chaos_report.schema.json"),
        &to_stable_json(&chaos).unwrap(),
    );
    assert_valid(
        &schema("lemma_report.schema.json"),
        &to_stable_json(&lemma).unwrap(),
    );
    assert_valid(
        &schema("value_table.schema.json"),
        &to_stable_json(&value).unwrap(),
    );

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for format in [ReportFormat::Csv, ReportFormat::Json] {
        let again = chaos_sweep(&eq, &cfg, &cost, &reg, 4).unwrap();
        let pa = write_chaos_report(&chaos, format, a.path()).unwrap();
        let pb = write_chaos_report(&again, format, b.path()).unwrap();
        assert_eq!(
            std::fs::read(&pa[0]).unwrap(),
            std::fs::read(&pb[0]).unwrap()
        );
        write_value_table(&value, format, a.path()).unwrap();
        write_lemma_report(&lemma, format, a.path()).unwrap();
    }

    let csv = std::fs::read_to_string(a.path().join("chaos_report.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header, CHAOS_CSV_HEADER.split(',').collect::<Vec<_>>());
    for (line, row) in lines.zip(&chaos.rows) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), header.len());
        let col = |name: &str| cells[header.iter().position(|h| *h == name).unwrap()];
        assert_eq!(col("n").parse::<usize>().unwrap(), row.n);
        assert_eq!(col("estimator"), "exact");
        assert_eq!(
            col("mean_d2").parse::<f64>().unwrap(),
            crate::util::round_g12(row.mean_d2)
        );
        assert_eq!(
            col("floor").parse::<f64>().unwrap(),
            crate::util::round_g12(row.floor)
        );
    }
    let vcsv = std::fs::read_to_string(a.path().join("value_convergence.csv")).unwrap();
    assert!(vcsv.starts_with(VALUE_CSV_HEADER));
    assert_eq!(vcsv.lines().count(), 1 + cfg.n_list.len());

    let m = Manifest {
        command: "chaos-sweep".into(),
        files: vec!["chaos_report.csv".into()],
        seeds: [("master".to_string(), 4u64)].into_iter().collect(),
        config_hash: "0".repeat(64),
        config: serde_json::json!({"sweep": {"reps": 2}}),
    };
    let path = write_manifest(a.path(), &m).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_valid(&schema("manifest.schema.json"), &text);
    assert_eq!(serde_json::from_str::<Manifest>(&text).unwrap(), m);
}
