use super::*;
use crate::agent_bsde::{ContractSpec, DiscreteMeasure};
use crate::cost_model::CostSpec;
use crate::stochastic_core::{generate_brownian, FlowRole, MeasureFlow, TimeGrid};
use crate::switching_simulator::UtilitySpec;

fn small_config() -> MfgConfig {
    MfgConfig {
        n_atoms: 5,
        n_eta: 3,
        n_wage: 4,
        n_time_blocks: 2,
        mc_paths: 300,
        flow_samples: 300,
        ..MfgConfig::default()
    }
}

fn level_flow(grid: TimeGrid, level: f64) -> MeasureFlow {
    MeasureFlow::constant_path(grid, FlowRole::MeanField, &vec![level; grid.n_points()], 8).unwrap()
}

#[test]
fn config_validation() {
    assert!(MfgConfig::default().validate().is_ok());
    assert_eq!(MfgConfig::default().atoms().len(), 9);
    assert_eq!(
        MfgConfig::default().eta_grid(),
        vec![0.0, 0.25, 0.5, 0.75, 1.0]
    );
    assert_eq!(MfgConfig::default().wage_grid().len(), 7);
    for bad in [
        MfgConfig {
            damping: 0.0,
            ..MfgConfig::default()
        },
        MfgConfig {
            damping: 1.5,
            ..MfgConfig::default()
        },
        MfgConfig {
            tol_fp: 0.0,
            ..MfgConfig::default()
        },
        MfgConfig {
            n_wage: 0,
            ..MfgConfig::default()
        },
    ] {
        assert!(bad.validate().is_err());
    }
    let json = r#"{"n_atoms": 3, "typo_field": 1}"#;
    assert!(serde_json::from_str::<MfgConfig>(json).is_err());
}

#[test]
fn self_consistent_flow_gives_terminal_reward() {
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let bundle = generate_brownian(grid, 50, 1, 1).unwrap();
    let u = UtilitySpec::default();
    let params = ContractSpec::constant(DiscreteMeasure::dirac(0.7), 0.0, 0.0, &grid);
    let e = principal_objective(
        &params,
        &level_flow(grid, 0.7),
        &bundle,
        &CostSpec::default(),
        &u,
    )
    .unwrap();
    assert!((e.j - (1.0 - 0.49)).abs() < 1e-12, "{e:?}");
    assert_eq!(e.stderr, 0.0);
}

/// Continuous-time oracle for a constant-level flow `L`, constant wage and `η = 0`:
/// `Y' = -(c*(L - Y) + w)`, `(log β)' = -a*(L - Y)`, `J' = β (1 - U(w))`, RK4 on `refine * n` steps.
fn quadrature_oracle(
    y0: f64,
    level: f64,
    w: f64,
    horizon: f64,
    steps: usize,
    u: &UtilitySpec,
) -> f64 {
    let c = CostSpec::default();
    let f = |s: [f64; 3]| -> [f64; 3] {
        [
            -(c.conjugate(level - s[0]) + w),
            -c.argmax_intensity(level - s[0]),
            s[1].exp() * (1.0 - u.eval(w)),
        ]
    };
    let h = horizon / steps as f64;
    let mut s = [y0, 0.0, 0.0];
    let add =
        |a: [f64; 3], b: [f64; 3], t: f64| [a[0] + t * b[0], a[1] + t * b[1], a[2] + t * b[2]];
    for _ in 0..steps {
        let k1 = f(s);
        let k2 = f(add(s, k1, h / 2.0));
        let k3 = f(add(s, k2, h / 2.0));
        let k4 = f(add(s, k3, h));
        for i in 0..3 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    s[2] - s[1].exp() * u.eval(s[0])
}

#[test]
fn deterministic_objective_matches_quadrature() {
    let u = UtilitySpec::capped(0.8);
    let cost = CostSpec::default();
    let err = |steps: usize| {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let bundle = generate_brownian(grid, 4, 1, 1).unwrap();
        let params = ContractSpec::constant(DiscreteMeasure::dirac(0.4), 0.0, 0.3, &grid);
        let e = principal_objective(&params, &level_flow(grid, 1.0), &bundle, &cost, &u).unwrap();
        assert_eq!(e.stderr, 0.0);
        (e.j - quadrature_oracle(0.4, 1.0, 0.3, 1.0, steps * 10, &u)).abs()
    };
    let (e1, e2) = (err(3000), err(6000));
    assert!(e2 <= 1e-4, "{e2}");
    assert!((1.6..=2.4).contains(&(e1 / e2)), "{e1} {e2}");
}

#[test]
fn objective_is_reproducible_and_monotone_in_utility() {
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let bundle = generate_brownian(grid, 400, 1, 2).unwrap();
    let cost = CostSpec::default();
    let p = level_flow(grid, 1.2);
    let params = ContractSpec::from_blocks(
        DiscreteMeasure {
            atoms: vec![1.0, 1.5],
            weights: vec![0.5, 0.5],
        },
        &[0.5, 1.0],
        &[0.2, 0.4],
        &grid,
    );
    let a = principal_objective(&params, &p, &bundle, &cost, &UtilitySpec::capped(0.3)).unwrap();
    let b = principal_objective(&params, &p, &bundle, &cost, &UtilitySpec::capped(0.3)).unwrap();
    assert_eq!(a.j.to_bits(), b.j.to_bits());
    let mut last = f64::INFINITY;
    for cap in [0.0001, 0.1, 0.3, 1.0, 10.0] {
        let j = principal_objective(&params, &p, &bundle, &cost, &UtilitySpec::capped(cap))
            .unwrap()
            .j;
        assert!(j <= last);
        last = j;
    }
}

#[test]
fn singleton_grids_return_the_only_point() {
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let cfg = MfgConfig {
        n_atoms: 1,
        n_eta: 1,
        n_wage: 1,
        ..small_config()
    };
    let bundle = generate_brownian(grid, cfg.mc_paths, 1, 3).unwrap();
    let p = level_flow(grid, 1.3);
    let u = UtilitySpec::capped(0.5);
    let br = best_response(&p, &cfg, &bundle, &CostSpec::default(), &u, None).unwrap();
    assert_eq!(br.params, GridParams::midpoint(&cfg));
    let j = principal_objective(&br.spec, &p, &bundle, &CostSpec::default(), &u).unwrap();
    assert_eq!(j.j, br.j);
}

#[test]
fn zero_utility_with_inactive_retention_ignores_wages() {
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let cfg = small_config();
    let bundle = generate_brownian(grid, cfg.mc_paths, 1, 4).unwrap();
    let p = level_flow(grid, -20.0);
    let cost = CostSpec::default();
    let mut js = Vec::new();
    for w in cfg.wage_grid() {
        let params = ContractSpec::constant(DiscreteMeasure::dirac(1.0), 0.5, w, &grid);
        let e = principal_objective(&params, &p, &bundle, &cost, &UtilitySpec::zero()).unwrap();
        js.push(e);
    }
    let max = js.iter().map(|e| e.j).fold(f64::MIN, f64::max);
    let min = js.iter().map(|e| e.j).fold(f64::MAX, f64::min);
    let se = js.iter().map(|e| e.stderr).fold(0.0, f64::max);
    assert!(max - min <= 2.0 * se.max(1e-15), "{max} {min} {se}");
    let br = best_response(&p, &cfg, &bundle, &cost, &UtilitySpec::zero(), None).unwrap();
    assert!((br.j - 1.0).abs() < 1e-12);
}

fn stochastic_flow(grid: TimeGrid, cfg: &MfgConfig) -> MeasureFlow {
    let params = ContractSpec::constant(
        DiscreteMeasure {
            atoms: vec![1.0, 1.6],
            weights: vec![0.5, 0.5],
        },
        0.6,
        0.1,
        &grid,
    );
    let b = generate_brownian(grid, cfg.flow_samples, 1, 9).unwrap();
    crate::agent_bsde::build_meanfield_contract(
        &params,
        &level_flow(grid, 1.3),
        &b,
        &CostSpec::default(),
        1.0,
    )
    .unwrap()
    .flow
}

#[test]
fn best_response_is_coordinatewise_optimal_and_grows_with_the_grid() {
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let cfg = small_config();
    let p = stochastic_flow(grid, &cfg);
    let bundle = generate_brownian(grid, cfg.mc_paths, 1, 5).unwrap();
    let cost = CostSpec::default();
    let u = UtilitySpec::capped(0.25);
    let br = best_response(&p, &cfg, &bundle, &cost, &u, None).unwrap();
    let j_at = |g: &GridParams| {
        principal_objective(&g.to_spec(&cfg, &grid), &p, &bundle, &cost, &u)
            .unwrap()
            .j
    };
    for b in 0..cfg.n_time_blocks {
        for v in 0..cfg.n_eta {
            let mut g = br.params.clone();
            g.eta_idx[b] = v;
            assert!(
                j_at(&g) - br.j < br.stderr.max(1e-12),
                "eta block {b} value {v}"
            );
        }
        for v in 0..cfg.n_wage {
            let mut g = br.params.clone();
            g.wage_idx[b] = v;
            assert!(
                j_at(&g) - br.j < br.stderr.max(1e-12),
                "wage block {b} value {v}"
            );
        }
    }
    // nested wage grids: {0, 0.6} inside {0, 0.2, 0.4, 0.6}
    let coarse = MfgConfig {
        n_wage: 2,
        ..cfg.clone()
    };
    let br_coarse = best_response(&p, &coarse, &bundle, &cost, &u, None).unwrap();
    assert!(br.j >= br_coarse.j - br.stderr.max(br_coarse.stderr));
}

#[test]
fn degenerate_config_converges_immediately() {
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let cfg = MfgConfig {
        n_atoms: 1,
        n_eta: 1,
        eta_max: 0.0,
        n_wage: 1,
        ..small_config()
    };
    let eq = fixed_point(
        &cfg,
        grid,
        &CostSpec::default(),
        &UtilitySpec::capped(0.5),
        1,
    )
    .unwrap();
    assert!(eq.converged);
    assert!(eq.iterations() <= 2);
    assert!(eq.final_residual().unwrap() <= cfg.tol_fp);
}

#[test]
fn zero_iterations_reports_not_converged() {
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let cfg = MfgConfig {
        max_fp_iters: 0,
        ..small_config()
    };
    let eq = fixed_point(&cfg, grid, &CostSpec::default(), &UtilitySpec::default(), 1).unwrap();
    assert!(!eq.converged);
    assert!(eq.residual_history.is_empty());
    assert!(eq.value.is_finite());
}

#[test]
fn fixed_point_round_trips_and_is_deterministic() {
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let cfg = MfgConfig {
        max_fp_iters: 6,
        ..small_config()
    };
    let u = UtilitySpec::capped(0.25);
    let a = fixed_point(&cfg, grid, &CostSpec::default(), &u, 5).unwrap();
    let b = fixed_point(&cfg, grid, &CostSpec::default(), &u, 5).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert!(a.residual_history.iter().all(|r| r.is_finite()));
    assert!(a.residual_history.len() <= 6);
    let dir = tempfile::tempdir().unwrap();
    let paths = a.write(dir.path()).unwrap();
    let back = EquilibriumResult::read(&paths[0]).unwrap();
    assert_eq!(back.params, a.params);
    assert_eq!(back.flow.n_samples(), a.flow.n_samples());
    assert_eq!(back.to_json().unwrap(), a.to_json().unwrap());
    let d = equilibrium_defect(&a, &CostSpec::default(), &u).unwrap();
    assert!(d.j_change_stderrs.is_finite());
}
