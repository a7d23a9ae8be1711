use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::agent_bsde::RegressionConfig;
use crate::chaos_experiments::{ReportFormat, SweepConfig};
use crate::cost_model::CostSpec;
use crate::error::{Error, Result};
use crate::mfg_solver::MfgConfig;
use crate::stochastic_core::TimeGrid;
use crate::switching_simulator::UtilitySpec;

/// Environment variable that replaces `out_dir`.
pub const OUT_ENV: &str = "SWITCHMFG_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Equilibrium search and experiment replications.
    pub master: u64,
    pub brownian: u64,
    pub jumps: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            master: 7,
            brownian: 1,
            jumps: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    /// Regression paths for `solve-agent` and `simulate`.
    pub paths: usize,
    /// Simulations for the agent-value cross-check and the value reports.
    pub sims: usize,
    /// Simulations exported as trajectories by `simulate`.
    pub record_sims: usize,
    /// Largest tolerated `|z|` between the BSDE value and the simulated agent value.
    pub max_z: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            paths: 1000,
            sims: 100_000,
            record_sims: 100,
            max_z: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostCheckConfig {
    pub y_min: f64,
    pub y_max: f64,
    pub y_step: f64,
    pub a_step: f64,
    pub max_gap: f64,
    pub max_fenchel_young_defect: f64,
}

impl Default for CostCheckConfig {
    fn default() -> Self {
        CostCheckConfig {
            y_min: -3.0,
            y_max: 3.0,
            y_step: 0.1,
            a_step: 1e-3,
            max_gap: 5e-4,
            max_fenchel_young_defect: 1e-12,
        }
    }
}

/// Pass/fail levels of the experiment commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Largest admitted Spearman correlation between `n` and the mean distance.
    pub spearman: f64,
    /// The largest-`n` mean distance must stay within this multiple of the floor.
    pub floor_factor: f64,
    /// Sizes at which the stability ratios are summarized.
    pub lemma_n: Vec<usize>,
    /// Largest admitted `max / median` of the ratios across replications.
    pub ratio_spread: f64,
    /// Largest admitted relative growth of the median ratio between consecutive `lemma_n`.
    pub ratio_growth: f64,
    /// Largest admitted best-response improvement at the equilibrium, in standard errors.
    pub defect_stderrs: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            spearman: -0.8,
            floor_factor: 5.0,
            lemma_n: vec![8, 16],
            ratio_spread: 10.0,
            ratio_growth: 0.5,
            defect_stderrs: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub cost: CostSpec,
    pub utility: UtilitySpec,
    pub grid: TimeGrid,
    pub regression: RegressionConfig,
    pub mfg: MfgConfig,
    pub sweep: SweepConfig,
    pub seeds: Seeds,
    pub agent: AgentConfig,
    pub cost_check: CostCheckConfig,
    pub thresholds: Thresholds,
    pub out_dir: PathBuf,
    pub format: ReportFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            cost: CostSpec::default(),
            utility: UtilitySpec::capped(0.25),
            grid: TimeGrid {
                horizon: 1.0,
                n_steps: 50,
            },
            regression: RegressionConfig::default(),
            mfg: MfgConfig::default(),
            sweep: SweepConfig::default(),
            seeds: Seeds::default(),
            agent: AgentConfig::default(),
            cost_check: CostCheckConfig::default(),
            thresholds: Thresholds::default(),
            out_dir: PathBuf::from("out"),
            format: ReportFormat::Csv,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        self.utility.validate()?;
        self.grid.validate()?;
        self.regression.validate()?;
        self.mfg.validate()?;
        self.sweep.validate()?;
        let c = &self.cost_check;
        if !(c.y_step > 0.0 && c.y_max >= c.y_min) {
            return Err(Error::Config(
                "cost_check needs y_step > 0 and y_max >= y_min".into(),
            ));
        }
        if self.agent.paths < 2 || self.agent.sims == 0 {
            return Err(Error::Config(
                "agent.paths must be >= 2 and agent.sims >= 1".into(),
            ));
        }
        if self.thresholds.lemma_n.iter().any(|&n| n < 2) {
            return Err(Error::Config(
                "thresholds.lemma_n entries must be >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Defaults, then the config file, then `SWITCHMFG_OUT`, then `--key.path=value` overrides.
    pub fn load(
        file: Option<&Path>,
        overrides: &[(String, String)],
        env_out: Option<String>,
    ) -> Result<Self> {
        let base = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str::<ExperimentConfig>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        let mut v = serde_json::to_value(&base)?;
        if let Some(out) = env_out {
            v["out_dir"] = Value::String(out);
        }
        for (key, raw) in overrides {
            set_path(&mut v, key, parse_value(raw))?;
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configuration without output location, as echoed in manifests.
    pub fn echo(&self) -> Result<Value> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(m) = &mut v {
            m.remove("out_dir");
        }
        Ok(v)
    }

    /// SHA-256 of the compact, key-sorted JSON of [`ExperimentConfig::echo`].
    pub fn hash(&self) -> Result<String> {
        let text = serde_json::to_string(&self.echo()?)?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }
}

/// JSON literal when it parses as one, otherwise a string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside an object")))?;
        if !obj.contains_key(*part) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        if depth + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(*part).expect("checked above");
    }
    Err(Error::Config("empty config key".into()))
}
