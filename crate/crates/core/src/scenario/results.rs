//! Trajectory CSVs and run manifests.
//!
//! Floats are written with 17 significant digits so that reading a CSV back
//! recovers every value exactly. Files are written to a temporary sibling and
//! renamed into place, so readers never observe a partial file.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Scenario, ScenarioError};
use crate::dynamics::{SimulationSettings, Trajectory, TIME_TO_THRESHOLD_LEVEL};
use crate::equilibrium::EquilibriumResult;

/// Everything produced by one simulation run.
#[derive(Debug, Clone, Copy)]
pub struct RunRecord<'a> {
    pub scenario: &'a Scenario,
    pub settings: &'a SimulationSettings,
    pub equilibrium: &'a EquilibriumResult,
    pub trajectory: &'a Trajectory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFiles {
    pub trajectory: PathBuf,
    pub manifest: PathBuf,
}

/// 17 significant digits, round-trip exact.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ScenarioError> {
    let fail = |message: String| ScenarioError::Write {
        path: path.to_path_buf(),
        message,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| fail(e.to_string()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(e.to_string()))?;
    tmp.write_all(bytes).map_err(|e| fail(e.to_string()))?;
    tmp.persist(path).map_err(|e| fail(e.error.to_string()))?;
    Ok(())
}

pub fn trajectory_header(link_ids: &[&str], paths: usize) -> Vec<String> {
    let mut header = vec!["t".to_string()];
    header.extend(link_ids.iter().map(|id| format!("rho_{id}")));
    header.extend((1..=paths).map(|p| format!("pi_p{p}")));
    header.extend(link_ids.iter().map(|id| format!("f_{id}")));
    header.extend(["V", "W", "dist_l1"].map(String::from));
    header
}

/// One row per recorded sample; `dist_l1` is empty without a reference.
pub fn trajectory_csv(
    link_ids: &[&str],
    trajectory: &Trajectory,
) -> Result<Vec<u8>, ScenarioError> {
    let paths = trajectory.samples.first().map_or(0, |s| s.state.pi.len());
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| ScenarioError::Serialize(e.to_string());
    writer
        .write_record(trajectory_header(link_ids, paths))
        .map_err(csv_err)?;
    for sample in &trajectory.samples {
        let mut row = vec![format_float(sample.t)];
        row.extend(sample.state.rho.iter().map(|&x| format_float(x)));
        row.extend(sample.state.pi.iter().map(|&x| format_float(x)));
        row.extend(sample.flows.iter().map(|&x| format_float(x)));
        row.push(format_float(sample.v));
        row.push(format_float(sample.w));
        row.push(sample.dist_l1.map(format_float).unwrap_or_default());
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer
        .into_inner()
        .map_err(|e| ScenarioError::Serialize(e.to_string()))
}

/// Header and rows of a numeric CSV; empty cells read as `None`.
pub type CsvTable = (Vec<String>, Vec<Vec<Option<f64>>>);

pub fn read_numeric_csv(path: &Path) -> Result<CsvTable, ScenarioError> {
    let read_err = |message: String| ScenarioError::Read {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, message),
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| read_err(e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| read_err(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| read_err(e.to_string()))?;
        let row = record
            .iter()
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>()
                        .map(Some)
                        .map_err(|e| read_err(format!("`{cell}`: {e}")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run: RunSection,
    pub settings: SettingsSection,
    pub equilibrium: EquilibriumSection,
    pub result: ResultSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub scenario: String,
    pub scenario_sha256: String,
    pub crate_version: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsSection {
    pub eta: f64,
    pub local_decision: String,
    pub integrator: String,
    pub dt: f64,
    pub t_end: f64,
    pub stride: usize,
    pub convergence_tol: f64,
    pub stop_on_convergence: bool,
    pub blowup_ceiling: f64,
    pub lyapunov_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSection {
    pub solver: String,
    pub iterations: usize,
    pub fixed_point_residual: f64,
    pub wardrop_gap: f64,
    pub potential: f64,
    pub rho_h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSection {
    pub steps: usize,
    pub final_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal_distance_l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal_distance_l2: Option<f64>,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_to_threshold: Option<f64>,
    pub simplex_repairs: usize,
    pub max_simplex_drift: f64,
}

impl Manifest {
    pub fn new(record: &RunRecord<'_>) -> Result<Self, ScenarioError> {
        let RunRecord {
            scenario,
            settings,
            equilibrium,
            trajectory,
        } = *record;
        let last = trajectory.last();
        let l2 = last
            .state
            .rho
            .iter()
            .zip(&equilibrium.rho_h)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Ok(Self {
            run: RunSection {
                scenario: scenario.name().to_string(),
                scenario_sha256: scenario.config.sha256()?,
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
                status: trajectory.status.as_str().to_string(),
            },
            settings: SettingsSection {
                eta: scenario.eta,
                local_decision: scenario.config.dynamics.local_decision.name().to_string(),
                integrator: settings.integrator.name().to_string(),
                dt: trajectory.dt,
                t_end: settings.t_end,
                stride: settings.stride,
                convergence_tol: settings.convergence_tol,
                stop_on_convergence: settings.stop_on_convergence,
                blowup_ceiling: settings.blowup_ceiling,
                lyapunov_alpha: settings.lyapunov.alpha(),
            },
            equilibrium: EquilibriumSection {
                solver: equilibrium.solver.name().to_string(),
                iterations: equilibrium.iterations,
                fixed_point_residual: equilibrium.fixed_point_residual,
                wardrop_gap: equilibrium.wardrop_gap,
                potential: equilibrium.potential_value,
                rho_h: equilibrium.rho_h.clone(),
            },
            result: ResultSection {
                steps: trajectory.steps,
                final_time: last.t,
                terminal_distance_l1: last.dist_l1,
                terminal_distance_l2: last.dist_l1.map(|_| l2),
                threshold: TIME_TO_THRESHOLD_LEVEL,
                time_to_threshold: trajectory.time_to_threshold(TIME_TO_THRESHOLD_LEVEL),
                simplex_repairs: trajectory.simplex_repairs,
                max_simplex_drift: trajectory.max_simplex_drift,
            },
        })
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Serialize(e.to_string()))
    }
}

/// Writes `<stem>.csv` and `<stem>.manifest.toml` into `dir`.
pub fn write_results(
    record: &RunRecord<'_>,
    dir: &Path,
    stem: &str,
) -> Result<OutputFiles, ScenarioError> {
    let files = OutputFiles {
        trajectory: dir.join(format!("{stem}.csv")),
        manifest: dir.join(format!("{stem}.manifest.toml")),
    };
    let csv = trajectory_csv(&record.scenario.link_ids(), record.trajectory)?;
    write_atomic(&files.trajectory, &csv)?;
    write_atomic(
        &files.manifest,
        Manifest::new(record)?.to_toml()?.as_bytes(),
    )?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [
            0.1,
            1.0 / 3.0,
            6.02214076e23,
            5e-324,
            -0.0,
            123456789.12345679,
        ] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(format_float(f64::INFINITY), "inf");
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            trajectory_header(&["a", "b"], 3),
            ["t", "rho_a", "rho_b", "pi_p1", "pi_p2", "pi_p3", "f_a", "f_b", "V", "W", "dist_l1"]
        );
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(
            std::fs::read_dir(path.parent().unwrap()).unwrap().count(),
            1
        );
    }
}
