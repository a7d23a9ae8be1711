use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::agent_bsde::{
    solve_nplayer, BsdeSolution, NPlayerProblem, PlayerContract, SolveOptions,
};
use crate::chaos_experiments::{
    chaos_sweep, to_stable_json, value_convergence, write_chaos_report, write_lemma_report,
    write_manifest, write_value_table, LemmaReport, Manifest, ReportFormat,
};
use crate::cost_model::{uniform_grid, verify_conjugacy};
use crate::error::{Error, Result};
use crate::mfg_solver::{equilibrium_defect, fixed_point, EquilibriumResult};
use crate::stochastic_core::generate_brownian;
use crate::switching_simulator::{
    agent_value_mc, principal_value_direct, simulate_switching, OptimalPolicy, SimSetup,
    SwitchTrajectory, SwitchingSystem, ValueReport,
};
use crate::util::{fmt_g12, round_g12};

/// What a command produced; `failures` lists the gates that did not hold.
#[derive(Debug, Default)]
pub struct Outcome {
    pub failures: Vec<String>,
}

impl Outcome {
    fn gate(&mut self, name: &str, ok: bool, detail: String) {
        println!("{name}: {} ({detail})", if ok { "pass" } else { "FAIL" });
        if !ok {
            self.failures.push(format!("{name}: {detail}"));
        }
    }
}

/// Output directory of one command, collecting the written files.
struct Run<'a> {
    cfg: &'a ExperimentConfig,
    command: &'static str,
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ExperimentConfig, command: &'static str) -> Result<Self> {
        let dir = cfg.out_dir.join(command);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Run {
            cfg,
            command,
            dir,
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn add(&mut self, paths: Vec<PathBuf>) {
        self.files.extend(paths);
    }

    fn finish(self) -> Result<()> {
        let mut files: Vec<String> = self
            .files
            .iter()
            .filter_map(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .collect();
        files.sort();
        files.dedup();
        let s = self.cfg.seeds;
        let m = Manifest {
            command: self.command.into(),
            files,
            seeds: BTreeMap::from([
                ("brownian".to_string(), s.brownian),
                ("jumps".to_string(), s.jumps),
                ("master".to_string(), s.master),
            ]),
            config_hash: self.cfg.hash()?,
            config: self.cfg.echo()?,
        };
        write_manifest(&self.dir, &m)?;
        log::info!("{} wrote {}", self.command, self.dir.display());
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct CostCheckReport {
    kappa: f64,
    a_max: f64,
    y_min: f64,
    y_max: f64,
    y_step: f64,
    #[serde(flatten)]
    report: crate::cost_model::ConjugacyReport,
    max_gap_threshold: f64,
    passed: bool,
}

pub fn cost_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let c = &cfg.cost_check;
    let y = uniform_grid(c.y_min, c.y_max, c.y_step);
    let report = verify_conjugacy(&cfg.cost, &y, c.a_step)?;
    let passed = report.max_gap <= c.max_gap
        && report.max_fenchel_young_defect <= c.max_fenchel_young_defect;
    let out = CostCheckReport {
        kappa: cfg.cost.kappa,
        a_max: cfg.cost.a_max,
        y_min: c.y_min,
        y_max: c.y_max,
        y_step: c.y_step,
        report,
        max_gap_threshold: c.max_gap,
        passed,
    };
    let json = to_stable_json(&out)?;
    let mut run = Run::new(cfg, "cost-check")?;
    run.write("conjugacy_report.json", &json)?;
    run.finish()?;
    let mut outcome = Outcome::default();
    match cfg.format {
        ReportFormat::Json => print!("{json}"),
        ReportFormat::Csv => {
            let r = &out.report;
            println!("points: {}", r.n_points);
            println!("max_gap: {}", fmt_g12(r.max_gap));
            println!("gap_bound: {}", fmt_g12(r.gap_bound));
            println!(
                "max_fenchel_young_defect: {}",
                fmt_g12(r.max_fenchel_young_defect)
            );
            println!("max_lipschitz_ratio: {}", fmt_g12(r.max_lipschitz_ratio));
        }
    }
    if !passed {
        outcome.failures.push(format!(
            "max_gap {} or Fenchel-Young defect {} above threshold",
            fmt_g12(out.report.max_gap),
            fmt_g12(out.report.max_fenchel_young_defect)
        ));
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Wage {
    Constant(f64),
    Path(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContractEntry {
    #[serde(default)]
    x0: f64,
    xi: f64,
    #[serde(default)]
    xi_slope: f64,
    wage: Wage,
}

/// Input of `solve-agent` and `simulate`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContractsFile {
    contracts: Vec<ContractEntry>,
    /// Drift of each output on the regression paths (all zero when absent).
    #[serde(default)]
    drift: Option<Vec<f64>>,
}

fn read_contracts(path: &Path, n_steps: usize) -> Result<NPlayerProblem> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: ContractsFile = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut contracts = Vec::with_capacity(f.contracts.len());
    for (i, c) in f.contracts.into_iter().enumerate() {
        let wage = match c.wage {
            Wage::Constant(w) => vec![w; n_steps],
            Wage::Path(w) if w.len() == n_steps => w,
            Wage::Path(w) => {
                return Err(Error::Config(format!(
                    "contract {i}: wage has {} entries, the grid has {n_steps} steps",
                    w.len()
                )))
            }
        };
        let finite = [c.x0, c.xi, c.xi_slope]
            .iter()
            .chain(&wage)
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Config(format!(
                "contract {i} has non-finite entries"
            )));
        }
        contracts.push(PlayerContract::Fixed {
            x0: c.x0,
            xi: c.xi,
            xi_slope: c.xi_slope,
            wage,
        });
    }
    if contracts.len() < 2 {
        return Err(Error::Config(
            "a contracts file needs at least 2 contracts".into(),
        ));
    }
    let mut problem = NPlayerProblem::new(contracts);
    if let Some(d) = f.drift {
        if d.len() != problem.contracts.len() {
            return Err(Error::LengthMismatch {
                what: "drift vs contracts",
                left: d.len(),
                right: problem.contracts.len(),
            });
        }
        problem.drift = d;
    }
    Ok(problem)
}

fn solve_contracts(
    cfg: &ExperimentConfig,
    contracts: &Path,
) -> Result<(BsdeSolution, SwitchingSystem)> {
    let problem = read_contracts(contracts, cfg.grid.n_steps)?;
    let n = problem.contracts.len();
    let bundle = generate_brownian(cfg.grid, cfg.agent.paths, n, cfg.seeds.brownian)?;
    let sol = solve_nplayer(
        &problem,
        &bundle,
        &cfg.cost,
        &cfg.regression,
        SolveOptions::default(),
    )?;
    if !sol.converged {
        log::warn!("Picard iteration stopped before reaching its tolerance");
    }
    let system = SwitchingSystem::new(cfg.grid, problem.contracts, cfg.utility, cfg.cost)?;
    Ok((sol, system))
}

fn setup(cfg: &ExperimentConfig, n_sims: usize, record: bool) -> SimSetup {
    SimSetup {
        n_sims,
        i0: 0,
        seed_brownian: cfg.seeds.brownian,
        seed_jumps: cfg.seeds.jumps,
        record,
    }
}

fn mean_initial(sol: &BsdeSolution, i: usize) -> f64 {
    (0..sol.n_paths).map(|p| sol.y(i, p, 0)).sum::<f64>() / sol.n_paths as f64
}

#[derive(Debug, Serialize)]
struct AgentCheck {
    regime: usize,
    bsde_y0: f64,
    simulated: ValueReport,
    z: f64,
    max_z: f64,
    picard_iterations: usize,
    converged: bool,
}

pub fn solve_agent(cfg: &ExperimentConfig, contracts: &Path) -> Result<Outcome> {
    let (sol, system) = solve_contracts(cfg, contracts)?;
    let bsde_y0 = mean_initial(&sol, 0);
    let simulated = agent_value_mc(&sol, &system, &setup(cfg, cfg.agent.sims, false))?;
    let z = if simulated.stderr > 0.0 {
        (simulated.estimate - bsde_y0).abs() / simulated.stderr
    } else {
        0.0
    };
    let check = AgentCheck {
        regime: 0,
        bsde_y0,
        simulated: simulated.rounded(),
        z,
        max_z: cfg.agent.max_z,
        picard_iterations: sol.picard_residuals.len(),
        converged: sol.converged,
    };
    let mut run = Run::new(cfg, "solve-agent")?;
    run.write("bsde_solution.csv", &sol.to_csv())?;
    run.write("agent_check.json", &to_stable_json(&check)?)?;
    run.finish()?;
    let mut outcome = Outcome::default();
    outcome.gate(
        "agent value",
        z <= cfg.agent.max_z,
        format!(
            "BSDE {} vs simulated {} +- {}, z = {:.3}",
            fmt_g12(bsde_y0),
            fmt_g12(simulated.estimate),
            fmt_g12(simulated.stderr),
            z
        ),
    );
    Ok(outcome)
}

#[derive(Debug, Serialize)]
struct SimulationValues {
    bsde_y0: Vec<f64>,
    agent: ValueReport,
    principals: Vec<ValueReport>,
}

pub fn simulate(cfg: &ExperimentConfig, contracts: &Path) -> Result<Outcome> {
    let (sol, system) = solve_contracts(cfg, contracts)?;
    let policy = OptimalPolicy::new(&sol, cfg.cost);
    let recorded = simulate_switching(&policy, &system, &setup(cfg, cfg.agent.record_sims, true))?;
    let sims = setup(cfg, cfg.agent.sims, false);
    let agent = agent_value_mc(&sol, &system, &sims)?.rounded();
    let principals = (0..system.n())
        .map(|i| principal_value_direct(i, &sol, &system, &sims).map(|v| v.rounded()))
        .collect::<Result<Vec<_>>>()?;
    let values = SimulationValues {
        bsde_y0: (0..sol.n_players)
            .map(|i| round_g12(mean_initial(&sol, i)))
            .collect(),
        agent,
        principals,
    };
    let mut run = Run::new(cfg, "simulate")?;
    run.write("trajectories.csv", &SwitchTrajectory::to_csv(&recorded))?;
    run.write("values.json", &to_stable_json(&values)?)?;
    run.finish()?;
    println!(
        "agent value: {} +- {}",
        fmt_g12(agent.estimate),
        fmt_g12(agent.stderr)
    );
    for (i, v) in values.principals.iter().enumerate() {
        println!(
            "principal {i}: {} +- {}",
            fmt_g12(v.estimate),
            fmt_g12(v.stderr)
        );
    }
    Ok(Outcome::default())
}

fn residual_csv(eq: &EquilibriumResult) -> String {
    let mut out = String::from("iteration,residual,damping\n");
    for (k, (r, d)) in eq
        .residual_history
        .iter()
        .zip(&eq.damping_history)
        .enumerate()
    {
        let _ = writeln!(out, "{},{},{}", k + 1, fmt_g12(*r), fmt_g12(*d));
    }
    out
}

pub fn solve_mfg(cfg: &ExperimentConfig) -> Result<Outcome> {
    let eq = fixed_point(
        &cfg.mfg,
        cfg.grid,
        &cfg.cost,
        &cfg.utility,
        cfg.seeds.master,
    )?;
    let defect = equilibrium_defect(&eq, &cfg.cost, &cfg.utility)?;
    let mut run = Run::new(cfg, "solve-mfg")?;
    run.add(eq.write(&run.dir)?);
    run.write("residual_history.csv", &residual_csv(&eq))?;
    run.write("defect.json", &to_stable_json(&defect)?)?;
    run.finish()?;
    println!("converged={}", eq.converged);
    println!("iterations: {}", eq.iterations());
    if let Some(r) = eq.final_residual() {
        println!("final residual: {}", fmt_g12(r));
    }
    println!(
        "value: {} +- {}",
        fmt_g12(eq.value),
        fmt_g12(eq.value_stderr)
    );
    let mut outcome = Outcome::default();
    // an unconverged search is reported through its flag and history, not as a failure
    if eq.converged {
        outcome.gate(
            "best-response defect",
            defect.j_change_stderrs < cfg.thresholds.defect_stderrs,
            format!(
                "{:.3} stderr, threshold {}",
                defect.j_change_stderrs, cfg.thresholds.defect_stderrs
            ),
        );
    }
    Ok(outcome)
}

/// Reads `path` or solves the equilibrium; either way it is copied into the run directory.
fn equilibrium(
    cfg: &ExperimentConfig,
    path: Option<&Path>,
    run: &mut Run,
) -> Result<EquilibriumResult> {
    let eq = match path {
        Some(p) => {
            let eq = EquilibriumResult::read(p)?;
            if !eq.grid.same_as(&cfg.grid) {
                return Err(Error::GridMismatch(format!(
                    "{} uses {} steps on [0, {}], the config {} on [0, {}]",
                    p.display(),
                    eq.grid.n_steps,
                    eq.grid.horizon,
                    cfg.grid.n_steps,
                    cfg.grid.horizon
                )));
            }
            eq
        }
        None => {
            log::info!("solving the mean-field equilibrium");
            fixed_point(
                &cfg.mfg,
                cfg.grid,
                &cfg.cost,
                &cfg.utility,
                cfg.seeds.master,
            )?
        }
    };
    if !eq.converged {
        log::warn!("the equilibrium search did not converge");
    }
    run.add(eq.write(&run.dir)?);
    Ok(eq)
}

fn ratio_detail(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into())
}

pub fn chaos(cfg: &ExperimentConfig, eq_path: Option<&Path>) -> Result<Outcome> {
    let th = &cfg.thresholds;
    for &n in &th.lemma_n {
        if !cfg.sweep.n_list.contains(&n) {
            return Err(Error::Config(format!(
                "thresholds.lemma_n entry {n} is not in sweep.n_list"
            )));
        }
        if n > cfg.sweep.assignment_cap {
            return Err(Error::Config(format!(
                "thresholds.lemma_n entry {n} exceeds sweep.assignment_cap"
            )));
        }
    }
    let hash = cfg.hash()?;
    let mut run = Run::new(cfg, "chaos-sweep")?;
    let eq = equilibrium(cfg, eq_path, &mut run)?;
    let mut report = chaos_sweep(
        &eq,
        &cfg.sweep,
        &cfg.cost,
        &cfg.regression,
        cfg.seeds.master,
    )?;
    report.config_hash = Some(hash.clone());
    run.add(write_chaos_report(&report, cfg.format, &run.dir)?);
    let mut lemmas = Vec::new();
    for &n in &th.lemma_n {
        let row = report
            .rows
            .iter()
            .find(|r| r.n == n)
            .expect("checked above");
        let reps = report.cells.iter().filter(|c| c.n == n).cloned().collect();
        let mut l = LemmaReport::from_reps(n, reps, row.failed, cfg.seeds.master);
        l.config_hash = Some(hash.clone());
        run.add(write_lemma_report(&l, cfg.format, &run.dir)?);
        lemmas.push(l);
    }
    run.finish()?;

    let mut outcome = Outcome::default();
    for r in &report.rows {
        println!(
            "n={:<4} mean d2 {} +- {}   floor {}",
            r.n,
            fmt_g12(r.mean_d2),
            fmt_g12(r.stderr_d2),
            fmt_g12(r.floor)
        );
    }
    let (first, last) = (&report.rows[0], &report.rows[report.rows.len() - 1]);
    outcome.gate(
        "decrease",
        last.mean_d2 < first.mean_d2,
        format!(
            "mean d2 {} at n={} vs {} at n={}",
            fmt_g12(last.mean_d2),
            last.n,
            fmt_g12(first.mean_d2),
            first.n
        ),
    );
    outcome.gate(
        "spearman",
        report.spearman <= th.spearman,
        format!(
            "statistic {:.3}, threshold {}",
            report.spearman, th.spearman
        ),
    );
    outcome.gate(
        "floor",
        last.mean_d2 <= th.floor_factor * last.floor,
        format!(
            "mean d2 {} vs {} x floor {}",
            fmt_g12(last.mean_d2),
            th.floor_factor,
            fmt_g12(last.floor)
        ),
    );
    for l in &lemmas {
        outcome.gate(
            &format!("ratios finite n={}", l.n),
            l.all_finite
                && !l.degenerate
                && l.median_ratio_y.is_some()
                && l.median_ratio_z.is_some(),
            format!(
                "median Y {} Z {}",
                ratio_detail(l.median_ratio_y),
                ratio_detail(l.median_ratio_z)
            ),
        );
    }
    if let Some(l) = lemmas.first() {
        let ok = |s: Option<f64>| s.is_some_and(|v| v <= th.ratio_spread);
        outcome.gate(
            &format!("ratio spread n={}", l.n),
            ok(l.spread_y) && ok(l.spread_z),
            format!(
                "max/median Y {} Z {}, threshold {}",
                ratio_detail(l.spread_y),
                ratio_detail(l.spread_z),
                th.ratio_spread
            ),
        );
    }
    for w in lemmas.windows(2) {
        let growth = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) if a > 0.0 => Some(b / a - 1.0),
            _ => None,
        };
        let gy = growth(w[0].median_ratio_y, w[1].median_ratio_y);
        let gz = growth(w[0].median_ratio_z, w[1].median_ratio_z);
        let ok = |g: Option<f64>| g.is_some_and(|v| v <= th.ratio_growth);
        outcome.gate(
            &format!("ratio growth n={}..{}", w[0].n, w[1].n),
            ok(gy) && ok(gz),
            format!(
                "median increase Y {} Z {}, threshold {}",
                ratio_detail(gy),
                ratio_detail(gz),
                th.ratio_growth
            ),
        );
    }
    Ok(outcome)
}

pub fn value(cfg: &ExperimentConfig, eq_path: Option<&Path>) -> Result<Outcome> {
    let mut run = Run::new(cfg, "value-convergence")?;
    let eq = equilibrium(cfg, eq_path, &mut run)?;
    let mut table = value_convergence(
        &eq,
        &cfg.sweep,
        &cfg.cost,
        &cfg.regression,
        &cfg.utility,
        cfg.seeds.master,
    )?;
    table.config_hash = Some(cfg.hash()?);
    run.add(write_value_table(&table, cfg.format, &run.dir)?);
    run.finish()?;
    println!(
        "mean-field value {} +- {}",
        fmt_g12(table.value_mf),
        fmt_g12(table.value_mf_stderr)
    );
    for r in &table.rows {
        println!(
            "n={:<4} value {} +- {}   gap {} +- {}",
            r.n,
            fmt_g12(r.value),
            fmt_g12(r.stderr),
            fmt_g12(r.gap),
            fmt_g12(r.gap_stderr)
        );
    }
    let (first, last) = (&table.rows[0], &table.rows[table.rows.len() - 1]);
    let mut outcome = Outcome::default();
    outcome.gate(
        "value gap",
        last.gap < first.gap,
        format!(
            "{} at n={} vs {} at n={}",
            fmt_g12(last.gap),
            last.n,
            fmt_g12(first.gap),
            first.n
        ),
    );
    Ok(outcome)
}
