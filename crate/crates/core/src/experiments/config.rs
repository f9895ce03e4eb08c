//! JSON experiment configuration.
//!
//! Angles are degrees and frequencies hertz in the file; everything is
//! converted to radians on resolution. Unknown and duplicate keys are parse
//! errors.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{ideal_injection_phases, OscillatorConfig, StageModel};
use crate::error::{Error, Result};
use crate::montecarlo::{MismatchSpec, Solver};
use crate::sensitivity::MAX_THETA;
use crate::sim::SimSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Lock,
    SensitivityVsTheta,
    SensitivityVsPhi0,
    SensitivityVsFfr,
    ZeroSensitivity,
    MonteCarlo,
    Simulate,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Lock,
        Experiment::SensitivityVsTheta,
        Experiment::SensitivityVsPhi0,
        Experiment::SensitivityVsFfr,
        Experiment::ZeroSensitivity,
        Experiment::MonteCarlo,
        Experiment::Simulate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Lock => "lock",
            Experiment::SensitivityVsTheta => "sensitivity-vs-theta",
            Experiment::SensitivityVsPhi0 => "sensitivity-vs-phi0",
            Experiment::SensitivityVsFfr => "sensitivity-vs-ffr",
            Experiment::ZeroSensitivity => "zero-sensitivity",
            Experiment::MonteCarlo => "monte-carlo",
            Experiment::Simulate => "simulate",
        }
    }

    fn needs_sim(self, include_oracle: bool, solver: McSolver) -> bool {
        match self {
            Experiment::Simulate => true,
            Experiment::MonteCarlo => solver == McSolver::TimeDomain,
            Experiment::SensitivityVsTheta | Experiment::SensitivityVsPhi0 | Experiment::SensitivityVsFfr => {
                include_oracle
            }
            _ => false,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McSolver {
    #[default]
    TimeDomain,
    Phasor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub r_load: f64,
    pub c_load: f64,
    pub gm_peak: f64,
    #[serde(default)]
    pub theta_vi0_deg: f64,
    /// Degrees of extra lag per unit of relative input amplitude.
    #[serde(default)]
    pub am_pm_coeff_deg: f64,
}

impl StageSection {
    fn to_model(&self) -> StageModel {
        StageModel {
            r_load: self.r_load,
            c_load: self.c_load,
            gm_peak: self.gm_peak,
            theta_vi0: self.theta_vi0_deg.to_radians(),
            am_pm_coeff: self.am_pm_coeff_deg.to_radians(),
        }
    }
}

/// Either `stage` (all stages identical) or `stages` (one per stage).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorSection {
    pub n_stages: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<StageSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<StageSection>>,
    pub injection_ratio: f64,
    pub f_inj: f64,
    #[serde(default)]
    pub injection_phases_deg: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Injection ratios for the sweep and Monte Carlo experiments.
    #[serde(default)]
    pub k_values: Option<Vec<f64>>,
    #[serde(default)]
    pub theta_deg: Option<Vec<f64>>,
    #[serde(default)]
    pub phi0_deg: Option<Vec<f64>>,
    /// Explicit free-running grid; `null` spans each k's locking range.
    #[serde(default)]
    pub f_fr_hz: Option<Vec<f64>>,
    #[serde(default)]
    pub f_fr_step_hz: Option<f64>,
    /// θ points of the simulated slope behind the oracle column.
    #[serde(default)]
    pub oracle_theta_deg: Option<Vec<f64>>,
}

/// The file as written, and after [`ConfigFile::materialize`] the fully
/// resolved form echoed into the metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub experiment: Option<Experiment>,
    pub oscillator: OscillatorSection,
    #[serde(default)]
    pub sim: SimSettings,
    #[serde(default)]
    pub mismatch: Option<MismatchSpec>,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub mc_solver: McSolver,
    /// Per-stage injection phase errors for `simulate`, degrees.
    #[serde(default)]
    pub injection_errors_deg: Option<Vec<f64>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub include_oracle: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// `start, start+step, ...` up to `stop` inclusive.
fn grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

pub const DEFAULT_K_VALUES: [f64; 4] = [0.05, 0.10, 0.15, 0.20];
pub const DEFAULT_F_FR_STEP_HZ: f64 = 50e6;

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub k_values: Vec<f64>,
    /// Radians.
    pub theta: Vec<f64>,
    /// Radians.
    pub phi0: Vec<f64>,
    pub f_fr: Option<Vec<f64>>,
    pub f_fr_step: f64,
    /// Radians.
    pub oracle_theta: Vec<f64>,
}

/// Validated configuration in internal units.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub oscillator: OscillatorConfig,
    pub sim: SimSettings,
    pub mismatch: Option<MismatchSpec>,
    pub sweep: Sweep,
    pub solver: Solver,
    /// Radians, one per stage.
    pub injection_errors: Vec<f64>,
    pub output_dir: PathBuf,
    pub include_oracle: bool,
    /// Resolved file form, every default explicit.
    pub resolved: ConfigFile,
}

impl ExperimentConfig {
    pub fn seed(&self) -> Option<u64> {
        self.mismatch.as_ref().map(|m| m.seed)
    }
}

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn load_config_file(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Reads, materializes and validates a configuration that names its
/// experiment.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    load_config_file(path)?.resolve()
}

fn check_increasing(field: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::validation(field, "must be nonempty"));
    }
    if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation(field, "must be finite and strictly increasing"));
    }
    Ok(())
}

impl ConfigFile {
    /// Fills every default so the echo is self-contained.
    pub fn materialize(mut self) -> Result<ConfigFile> {
        let osc = &mut self.oscillator;
        let n = osc.n_stages;
        match (osc.stage.take(), osc.stages.take()) {
            (Some(s), None) => osc.stages = Some(vec![s; n]),
            (None, Some(v)) => osc.stages = Some(v),
            (Some(_), Some(_)) => {
                return Err(Error::validation("oscillator.stage", "give either `stage` or `stages`, not both"))
            }
            (None, None) => return Err(Error::validation("oscillator.stages", "missing; give `stage` or `stages`")),
        }
        if osc.injection_phases_deg.is_none() {
            osc.injection_phases_deg = Some(ideal_injection_phases(n).iter().map(|p| p.to_degrees()).collect());
        }
        let experiment = self.experiment;
        if experiment == Some(Experiment::MonteCarlo) && self.mismatch.is_none() {
            self.mismatch = Some(MismatchSpec::default());
        }
        if experiment == Some(Experiment::Simulate) && self.injection_errors_deg.is_none() {
            self.injection_errors_deg = Some(vec![0.0; n]);
        }
        let s = &mut self.sweep;
        s.k_values.get_or_insert_with(|| DEFAULT_K_VALUES.to_vec());
        s.theta_deg.get_or_insert_with(|| grid(-10.0, 10.0, 1.0));
        s.phi0_deg.get_or_insert_with(|| grid(0.0, 90.0, 5.0));
        s.f_fr_step_hz.get_or_insert(DEFAULT_F_FR_STEP_HZ);
        s.oracle_theta_deg.get_or_insert_with(|| vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        Ok(self)
    }

    pub fn resolve(self) -> Result<ExperimentConfig> {
        let file = self.materialize()?;
        let experiment = file
            .experiment
            .ok_or_else(|| Error::validation("experiment", "missing; set it in the file or on the command line"))?;
        let osc = &file.oscillator;
        let n = osc.n_stages;
        let stages = osc.stages.as_deref().unwrap_or_default();
        if stages.len() != n {
            return Err(Error::validation(
                "oscillator.stages",
                format!("has {} entries, n_stages is {n}", stages.len()),
            ));
        }
        let phases = osc.injection_phases_deg.as_deref().unwrap_or_default();
        if phases.len() != n {
            return Err(Error::validation(
                "oscillator.injection_phases_deg",
                format!("has {} entries, n_stages is {n}", phases.len()),
            ));
        }
        let oscillator = OscillatorConfig {
            n_stages: n,
            stages: stages.iter().map(StageSection::to_model).collect(),
            injection_ratio: osc.injection_ratio,
            f_inj: osc.f_inj,
            injection_phases: phases.iter().map(|p| p.to_radians()).collect(),
        };
        oscillator.validate()?;

        let s = &file.sweep;
        let rad = |v: &Option<Vec<f64>>| v.as_deref().unwrap_or_default().iter().map(|d| d.to_radians()).collect::<Vec<_>>();
        let sweep = Sweep {
            k_values: s.k_values.clone().unwrap_or_default(),
            theta: rad(&s.theta_deg),
            phi0: rad(&s.phi0_deg),
            f_fr: s.f_fr_hz.clone(),
            f_fr_step: s.f_fr_step_hz.unwrap_or(DEFAULT_F_FR_STEP_HZ),
            oracle_theta: rad(&s.oracle_theta_deg),
        };
        let uses_k_values = !matches!(experiment, Experiment::Lock | Experiment::Simulate);
        if uses_k_values {
            check_increasing("sweep.k_values", &sweep.k_values)?;
            for &k in &sweep.k_values {
                oscillator.with_injection_ratio(k).validate()?;
            }
        }
        match experiment {
            Experiment::SensitivityVsTheta => {
                check_increasing("sweep.theta_deg", &sweep.theta)?;
                if sweep.theta.iter().any(|t| t.abs() > MAX_THETA) {
                    return Err(Error::validation(
                        "sweep.theta_deg",
                        format!("|theta| must be <= {:.4} deg", MAX_THETA.to_degrees()),
                    ));
                }
            }
            Experiment::SensitivityVsPhi0 => check_increasing("sweep.phi0_deg", &sweep.phi0)?,
            Experiment::SensitivityVsFfr => {
                if let Some(f) = &sweep.f_fr {
                    check_increasing("sweep.f_fr_hz", f)?;
                    if f.iter().any(|&x| x <= 0.0) {
                        return Err(Error::validation("sweep.f_fr_hz", "must be > 0"));
                    }
                }
                if !(sweep.f_fr_step.is_finite() && sweep.f_fr_step > 0.0) {
                    return Err(Error::validation("sweep.f_fr_step_hz", "must be finite and > 0"));
                }
            }
            _ => {}
        }
        let include_oracle = file.include_oracle;
        if include_oracle && uses_k_values && experiment.needs_sim(true, file.mc_solver) {
            check_increasing("sweep.oracle_theta_deg", &sweep.oracle_theta)?;
            if sweep.oracle_theta.len() < 2 || sweep.oracle_theta.iter().any(|t| t.abs() > MAX_THETA) {
                return Err(Error::validation(
                    "sweep.oracle_theta_deg",
                    "needs >= 2 points, each within the small-error range",
                ));
            }
        }
        if experiment.needs_sim(include_oracle, file.mc_solver) {
            file.sim.validate(n)?;
        }
        let mismatch = file.mismatch.clone();
        if experiment == Experiment::MonteCarlo {
            mismatch.as_ref().expect("materialized mismatch").validate()?;
        }
        let injection_errors: Vec<f64> = file
            .injection_errors_deg
            .as_deref()
            .map(|e| e.iter().map(|d| d.to_radians()).collect())
            .unwrap_or_else(|| vec![0.0; n]);
        if injection_errors.len() != n || injection_errors.iter().any(|e| !e.is_finite()) {
            return Err(Error::validation("injection_errors_deg", format!("needs {n} finite entries")));
        }
        let solver = match file.mc_solver {
            McSolver::TimeDomain => Solver::TimeDomain(file.sim.clone()),
            McSolver::Phasor => Solver::Phasor,
        };
        Ok(ExperimentConfig {
            experiment,
            oscillator,
            sim: file.sim.clone(),
            mismatch,
            sweep,
            solver,
            injection_errors,
            output_dir: file.output_dir.clone(),
            include_oracle,
            resolved: file,
        })
    }
}
