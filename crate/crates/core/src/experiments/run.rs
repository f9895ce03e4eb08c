//! Experiment drivers. Each computes its tables in deterministic order and
//! hands them to a single writer.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::{Experiment, ExperimentConfig};
use super::csv::{emit_csv, format_g, Cell, Table, WAVEFORM_DIGITS};
use crate::config::OscillatorConfig;
use crate::error::{Error, Result};
use crate::lock::{self, LockingRange};
use crate::montecarlo::{run_mismatch_study, ERROR_METRIC};
use crate::roots::bisect;
use crate::sensitivity::{self, find_zero_sensitivity_frequency, sweep_sensitivity, SweepAxis, SweepRow};
use crate::sim::{self, extract_phases, measure_sensitivity_sim, simulated_quadrature_errors};

/// Files written by one run, metadata last.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub elapsed_seconds: f64,
}

struct Artifacts {
    tables: Vec<(String, Table)>,
    notes: Value,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let start = Instant::now();
    let art = match cfg.experiment {
        Experiment::Lock => lock_experiment(cfg)?,
        Experiment::SensitivityVsTheta => theta_experiment(cfg)?,
        Experiment::SensitivityVsPhi0 => phi0_experiment(cfg)?,
        Experiment::SensitivityVsFfr => ffr_experiment(cfg)?,
        Experiment::ZeroSensitivity => zero_experiment(cfg)?,
        Experiment::MonteCarlo => monte_carlo_experiment(cfg)?,
        Experiment::Simulate => simulate_experiment(cfg)?,
    };
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(art.tables.len() + 1);
    for (name, table) in &art.tables {
        let path = dir.join(name);
        emit_csv(table, &path)?;
        files.push(path);
    }
    let elapsed_seconds = start.elapsed().as_secs_f64();
    let meta = json!({
        "tool": "ilro",
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": cfg.experiment.name(),
        "elapsed_seconds": elapsed_seconds,
        "seed": cfg.seed(),
        "files": art.tables.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        "notes": art.notes,
        "config": cfg.resolved,
    });
    let path = dir.join("metadata.json");
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(RunOutput { files, elapsed_seconds })
}

fn k_label(k: f64) -> String {
    format_g(k, 12)
}

fn deg(x: Option<f64>) -> Cell {
    x.map(f64::to_degrees).into()
}

fn range_cells(r: Result<LockingRange>) -> [Cell; 2] {
    match r {
        Ok(r) => [r.f_min.into(), r.f_max.into()],
        Err(_) => [f64::NAN.into(), f64::NAN.into()],
    }
}

fn lock_experiment(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let c = &cfg.oscillator;
    let state = lock::solve_lock_state(c)?;
    let mut summary = Table::new(&[
        "k_inj",
        "f_inj_hz",
        "f_fr_hz",
        "locked",
        "phi0_deg",
        "psi_deg",
        "fr_range_min_hz",
        "fr_range_max_hz",
        "inj_range_min_hz",
        "inj_range_max_hz",
    ]);
    let mut row = vec![
        state.k_inj.into(),
        state.f_inj.into(),
        state.f_fr.into(),
        state.locked.into(),
        deg(state.phi0),
        deg(state.psi),
    ];
    row.extend(range_cells(lock::locking_range(c)));
    row.extend(range_cells(lock::injection_locking_range(c)));
    summary.push(row);

    let mut nodes = Table::new(&["node", "magnitude_v", "phase_deg"]);
    for (j, p) in state.node_phasors.iter().enumerate() {
        nodes.push(vec![Cell::Text(format!("node{j}")), p.magnitude().into(), p.angle().to_degrees().into()]);
    }
    Ok(Artifacts {
        tables: vec![("lock.csv".into(), summary), ("lock_nodes.csv".into(), nodes)],
        notes: json!({}),
    })
}

/// Simulated slope d(2α)/dθ for a ring retuned to `f_fr`; NaN when any
/// oracle point fails to lock.
fn oracle_slope(cfg: &ExperimentConfig, config: &OscillatorConfig) -> Result<f64> {
    match measure_sensitivity_sim(config, &cfg.sim, &cfg.sweep.oracle_theta) {
        Ok(s) => Ok(s.slope),
        Err(Error::PartialLock { .. }) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

const SENS_COLUMNS: [&str; 4] = ["implicit", "closed_form", "closed_form_rederived", "approx"];

fn sensitivity_cells(row: &SweepRow) -> Vec<Cell> {
    let mut cells = vec![row.locked.into()];
    let op = row.op.as_ref();
    cells.push(deg(op.map(|o| o.phi0)));
    cells.push(deg(op.map(|o| o.psi)));
    let r = row.result.as_ref();
    cells.push(r.map(|r| r.implicit).into());
    cells.push(r.map(|r| r.closed_form).into());
    cells.push(r.map(|r| r.closed_form_rederived).into());
    cells.push(r.map(|r| r.approx).into());
    cells
}

fn sensitivity_header(x: &str, oracle: bool) -> Table {
    let mut h = vec![x, "locked", "phi0_deg", "psi_deg"];
    h.extend(SENS_COLUMNS);
    if oracle {
        h.push("oracle");
    }
    Table::new(&h)
}

fn theta_experiment(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let thetas = &cfg.sweep.theta;
    let mut tables = Vec::new();
    for &k in &cfg.sweep.k_values {
        let c = cfg.oscillator.with_injection_ratio(k);
        let rows = sweep_sensitivity(&c, SweepAxis::Theta, thetas)?;
        let sim = if cfg.include_oracle && rows.iter().any(|r| r.locked) {
            Some(simulated_quadrature_errors(&c, &cfg.sim, thetas)?)
        } else {
            None
        };
        let mut h = vec!["theta_deg", "quadrature_error_deg", "locked"];
        if cfg.include_oracle {
            h.push("sim_quadrature_error_deg");
        }
        let mut t = Table::new(&h);
        for (i, r) in rows.iter().enumerate() {
            let mut cells = vec![r.x.to_degrees().into(), deg(r.quadrature_error), r.locked.into()];
            if cfg.include_oracle {
                cells.push(deg(sim.as_ref().and_then(|s| s[i])));
            }
            t.push(cells);
        }
        tables.push((format!("sensitivity_vs_theta_k{}.csv", k_label(k)), t));
    }
    Ok(Artifacts { tables, notes: json!({}) })
}

/// Free-running frequency at which the locked ring sits at `phi0`, if the
/// locking range reaches it.
fn free_running_for_phi0(config: &OscillatorConfig, phi0: f64) -> Result<Option<OscillatorConfig>> {
    let range = lock::locking_range(config)?;
    if range.width() == 0.0 {
        return Ok(None);
    }
    let shrink = 1e-6 * range.width();
    let (lo, hi) = (range.f_min + shrink, range.f_max - shrink);
    let phi_at = |f: f64| -> f64 {
        match sensitivity::sensitivity_at_free_running(config, f) {
            Ok(Some((op, _))) => op.phi0,
            _ => f64::NAN,
        }
    };
    let (a, b) = (phi_at(lo) - phi0, phi_at(hi) - phi0);
    if !(a.is_finite() && b.is_finite()) || a * b > 0.0 {
        return Ok(None);
    }
    let f = bisect(lo, hi, |f| phi_at(f) - phi0, 1e-9 * config.f_inj, 1e-12)?;
    Ok(Some(lock::with_free_running(config, f)?))
}

fn phi0_experiment(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let mut tables = Vec::new();
    for &k in &cfg.sweep.k_values {
        let c = cfg.oscillator.with_injection_ratio(k);
        let rows = sweep_sensitivity(&c, SweepAxis::Phi0, &cfg.sweep.phi0)?;
        let oracle: Vec<f64> = if cfg.include_oracle {
            rows.par_iter()
                .map(|r| match (r.locked, r.op) {
                    (true, Some(op)) => match free_running_for_phi0(&c, op.phi0)? {
                        Some(retuned) => oracle_slope(cfg, &retuned),
                        None => Ok(f64::NAN),
                    },
                    _ => Ok(f64::NAN),
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let mut t = sensitivity_header("phi0_deg_target", cfg.include_oracle);
        for (i, r) in rows.iter().enumerate() {
            let mut cells = vec![r.x.to_degrees().into()];
            cells.extend(sensitivity_cells(r));
            if cfg.include_oracle {
                cells.push(oracle[i].into());
            }
            t.push(cells);
        }
        tables.push((format!("sensitivity_vs_phi0_k{}.csv", k_label(k)), t));
    }
    Ok(Artifacts { tables, notes: json!({}) })
}

/// Multiples of `step` strictly inside the locking range.
fn f_fr_grid(range: &LockingRange, step: f64) -> Vec<f64> {
    let first = (range.f_min / step).floor() as i64 + 1;
    let last = (range.f_max / step).ceil() as i64 - 1;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn ffr_experiment(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let mut tables = Vec::new();
    let mut crossings = Vec::new();
    for &k in &cfg.sweep.k_values {
        let c = cfg.oscillator.with_injection_ratio(k);
        let grid = match &cfg.sweep.f_fr {
            Some(g) => g.clone(),
            None => f_fr_grid(&lock::locking_range(&c)?, cfg.sweep.f_fr_step),
        };
        let rows = if grid.is_empty() { Vec::new() } else { sweep_sensitivity(&c, SweepAxis::FreeRunning, &grid)? };
        let oracle: Vec<f64> = if cfg.include_oracle {
            rows.par_iter()
                .map(|r| if r.locked { oracle_slope(cfg, &lock::with_free_running(&c, r.x)?) } else { Ok(f64::NAN) })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let mut t = sensitivity_header("f_fr_hz", cfg.include_oracle);
        for (i, r) in rows.iter().enumerate() {
            let mut cells = vec![r.x.into()];
            cells.extend(sensitivity_cells(r));
            if cfg.include_oracle {
                cells.push(oracle[i].into());
            }
            t.push(cells);
        }
        tables.push((format!("sensitivity_vs_ffr_k{}.csv", k_label(k)), t));
        crossings.push(json!({ "k_inj": k, "f_opt_hz": find_zero_sensitivity_frequency(&c)?.f_opt }));
    }
    Ok(Artifacts {
        tables,
        notes: json!({ "zero_crossings": crossings }),
    })
}

fn zero_experiment(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let found = cfg
        .sweep
        .k_values
        .par_iter()
        .map(|&k| find_zero_sensitivity_frequency(&cfg.oscillator.with_injection_ratio(k)))
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(&["k_inj", "found", "f_opt_hz", "above_injection", "range_min_hz", "range_max_hz"]);
    for (&k, z) in cfg.sweep.k_values.iter().zip(&found) {
        t.push(vec![
            k.into(),
            z.f_opt.is_some().into(),
            z.f_opt.into(),
            z.above_injection().map_or(Cell::Num(f64::NAN), Cell::from),
            z.locking_range.f_min.into(),
            z.locking_range.f_max.into(),
        ]);
    }
    Ok(Artifacts {
        tables: vec![("zero_sensitivity.csv".into(), t)],
        notes: json!({}),
    })
}

fn monte_carlo_experiment(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let spec = cfg.mismatch.as_ref().expect("validated mismatch");
    let study = run_mismatch_study(&cfg.oscillator, spec, &cfg.sweep.k_values, &cfg.solver)?;
    let mut raw = Table::new(&["k_inj", "sample_index", "phase_error_deg"]);
    let mut summary = Table::new(&["k_inj", "sigma_deg", "n_locked", "n_unlocked"]);
    for (j, &k) in study.k_grid.iter().enumerate() {
        for (i, e) in study.per_k_samples[j].iter().enumerate() {
            raw.push(vec![k.into(), i.into(), (*e).into()]);
        }
        summary.push(vec![
            k.into(),
            study.per_k_sigma[j].into(),
            study.locked_count(j).into(),
            study.unlocked_count(j).into(),
        ]);
    }
    Ok(Artifacts {
        tables: vec![("monte_carlo_raw.csv".into(), raw), ("monte_carlo_summary.csv".into(), summary)],
        notes: json!({
            "error_metric": ERROR_METRIC,
            "nonincreasing_within_noise": study.nonincreasing_within_noise(),
        }),
    })
}

fn simulate_experiment(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let w = sim::simulate(&cfg.oscillator, &cfg.sim, &cfg.injection_errors)?;
    let mut names = vec!["t_s".to_string()];
    names.extend(w.node_names());
    let mut wave = Table::new(&names).with_digits(WAVEFORM_DIGITS);
    for (k, &t) in w.t.iter().enumerate() {
        let mut row = Vec::with_capacity(names.len());
        row.push(t.into());
        row.extend(w.nodes.iter().map(|s| Cell::Num(s[k])));
        wave.push(row);
    }
    let reading = extract_phases(&w, &cfg.sim)?;
    let locked = sim::detect_lock(&reading, &cfg.sim);
    let mut phases = Table::new(&["node", "amplitude_v", "phase_deg"]);
    for (j, name) in w.node_names().into_iter().enumerate() {
        phases.push(vec![
            Cell::Text(name),
            reading.amplitudes[j].into(),
            reading.node_phases[j].to_degrees().into(),
        ]);
    }
    Ok(Artifacts {
        tables: vec![("waveforms.csv".into(), wave), ("phases.csv".into(), phases)],
        notes: json!({ "locked": locked, "drift_rate_rad_per_s": reading.drift_rate }),
    })
}
