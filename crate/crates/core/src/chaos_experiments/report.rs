use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::sweep::{ChaosReport, LemmaReport, Ratio};
use super::value::ValueTable;
use crate::error::{Error, Result};
use crate::util::{fmt_g12, round_g12};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const CHAOS_CSV_HEADER: &str = "n,replications,failed,estimator,mean_d2,stderr_d2,mean_d2_coupled,mean_d2_copies,stderr_d2_copies,floor,floor_stderr,mean_sup_dy2,mean_int_dz2,mean_rhs,median_ratio_y,max_ratio_y,median_ratio_z,max_ratio_z";
pub const LEMMA_CSV_HEADER: &str =
    "n,rep,seed,estimator,d2,sup_dy2,int_dz2,rhs,ratio_y,ratio_z,picard_iterations";
pub const VALUE_CSV_HEADER: &str = "n,replications,failed,value,stderr,gap,gap_stderr,difference,value_mf,value_mf_stderr,value_equilibrium";

/// Files and inputs of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub files: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub config_hash: String,
    pub config: Value,
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_g12).unwrap_or_default()
}

fn ratio(r: Ratio) -> String {
    match r {
        Ratio::Value(v) => fmt_g12(v),
        Ratio::Degenerate => "degenerate".into(),
        Ratio::Unavailable => String::new(),
    }
}

fn kind(k: crate::stochastic_core::DistanceKind) -> &'static str {
    match k {
        crate::stochastic_core::DistanceKind::Exact => "exact",
        crate::stochastic_core::DistanceKind::Coupled => "coupled",
    }
}

/// Rounds every float to 12 significant digits; integers are left alone.
fn rounded(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_g12(n.as_f64().unwrap_or(f64::NAN));
            serde_json::Number::from_f64(x)
                .map(Value::Number)
                .unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(rounded).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, rounded(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with sorted keys and `%.12g` floats; non-finite floats become `null`.
pub fn to_stable_json<T: Serialize>(value: &T) -> Result<String> {
    let v = rounded(serde_json::to_value(value)?);
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

impl ChaosReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CHAOS_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let cells = [
                r.n.to_string(),
                r.replications.to_string(),
                r.failed.to_string(),
                kind(r.estimator).into(),
                fmt_g12(r.mean_d2),
                fmt_g12(r.stderr_d2),
                fmt_g12(r.mean_d2_coupled),
                fmt_g12(r.mean_d2_copies),
                fmt_g12(r.stderr_d2_copies),
                fmt_g12(r.floor),
                fmt_g12(r.floor_stderr),
                fmt_g12(r.mean_sup_dy2),
                fmt_g12(r.mean_int_dz2),
                opt(r.mean_rhs),
                opt(r.median_ratio_y),
                opt(r.max_ratio_y),
                opt(r.median_ratio_z),
                opt(r.max_ratio_z),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

impl LemmaReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LEMMA_CSV_HEADER);
        out.push('\n');
        for r in &self.reps {
            let cells = [
                r.n.to_string(),
                r.rep.to_string(),
                r.seed.to_string(),
                kind(r.estimator).into(),
                fmt_g12(r.d2),
                fmt_g12(r.sup_dy2),
                fmt_g12(r.int_dz2),
                opt(r.rhs),
                ratio(r.ratio_y),
                ratio(r.ratio_z),
                r.picard_iterations.to_string(),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

impl ValueTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(VALUE_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let cells = [
                r.n.to_string(),
                r.replications.to_string(),
                r.failed.to_string(),
                fmt_g12(r.value),
                fmt_g12(r.stderr),
                fmt_g12(r.gap),
                fmt_g12(r.gap_stderr),
                fmt_g12(r.difference),
                fmt_g12(self.value_mf),
                fmt_g12(self.value_mf_stderr),
                fmt_g12(self.value_equilibrium),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn write_chaos_report(
    report: &ChaosReport,
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    Ok(vec![match format {
        ReportFormat::Csv => write(out_dir, "chaos_report.csv", &report.to_csv())?,
        ReportFormat::Json => write(out_dir, "chaos_report.json", &to_stable_json(report)?)?,
    }])
}

/// Writes `lemma_report_n{n}.csv` or `.json`.
pub fn write_lemma_report(
    report: &LemmaReport,
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let stem = format!("lemma_report_n{}", report.n);
    Ok(vec![match format {
        ReportFormat::Csv => write(out_dir, &format!("{stem}.csv"), &report.to_csv())?,
        ReportFormat::Json => write(out_dir, &format!("{stem}.json"), &to_stable_json(report)?)?,
    }])
}

pub fn write_value_table(
    table: &ValueTable,
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    Ok(vec![match format {
        ReportFormat::Csv => write(out_dir, "value_convergence.csv", &table.to_csv())?,
        ReportFormat::Json => write(out_dir, "value_convergence.json", &to_stable_json(table)?)?,
    }])
}

pub fn write_manifest(out_dir: &Path, manifest: &Manifest) -> Result<PathBuf> {
    write(out_dir, "manifest.json", &to_stable_json(manifest)?)
}
