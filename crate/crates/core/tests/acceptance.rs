//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Criteria run one after another so the runtime bounds
//! are measured without contention.

use std::f64::consts::PI;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ilro::config::reference;
use ilro::experiments::{parse_config, run_experiment, Experiment};
use ilro::lock::{free_running_frequency, locking_range, solve_node_phasors, with_free_running};
use ilro::montecarlo::{run_mismatch_study, MismatchSpec, MismatchStudy, Solver};
use ilro::sensitivity::{
    find_zero_sensitivity_frequency, sensitivity_at_free_running, sensitivity_closed_form,
    sensitivity_closed_form_rederived, sensitivity_finite_difference, DEFAULT_STEP,
};
use ilro::sim::{detect_lock, measure_free_running, measure_sensitivity_sim, simulate_phases, SimSettings};
use ilro::{wrap_angle, OperatingPoint, OscillatorConfig};

const K_GRID: [f64; 4] = [0.05, 0.10, 0.15, 0.20];
const PHI0_DEG: [f64; 6] = [0.0, 15.0, 30.0, 45.0, 60.0, 75.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(elapsed: Duration, limit: Duration) -> Outcome {
    Outcome {
        pass: elapsed < limit,
        detail: format!("{:.1} s (limit {} s)", elapsed.as_secs_f64(), limit.as_secs()),
    }
}

fn grid() -> impl Iterator<Item = (f64, f64)> {
    K_GRID
        .into_iter()
        .flat_map(|k| PHI0_DEG.into_iter().map(move |p| (k, p.to_radians())))
}

fn closed_form_vs_implicit() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in [2, 4] {
        for (k, phi0) in grid() {
            let op = OperatingPoint::from_geometry(k, phi0);
            let cf = sensitivity_closed_form_rederived(&op, n).unwrap();
            let fd = sensitivity_finite_difference(&op, n, DEFAULT_STEP).unwrap();
            worst = worst.max(((cf - fd) / fd).abs());
        }
    }
    Outcome {
        pass: worst < 1e-6,
        detail: format!("worst relative error {worst:.2e} (bar 1e-6)"),
    }
}

fn zero_detuning_limit() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in [2, 4] {
        for (k, phi0) in grid() {
            let op = OperatingPoint { k_inj: k, phi0, psi: 0.0 };
            let cf = sensitivity_closed_form(&op, n).unwrap();
            worst = worst.max((cf - k * phi0.cos() / n as f64).abs());
        }
    }
    Outcome {
        pass: worst < 1e-12,
        detail: format!("worst absolute error {worst:.2e} (bar 1e-12)"),
    }
}

fn stage_count_scaling() -> Outcome {
    let mut worst: f64 = 0.0;
    for (k, phi0) in grid() {
        for psi in [0.0, OperatingPoint::from_geometry(k, phi0).psi] {
            let op = OperatingPoint { k_inj: k, phi0, psi };
            let printed = sensitivity_closed_form(&op, 4).unwrap() - 0.5 * sensitivity_closed_form(&op, 2).unwrap();
            let rederived = sensitivity_closed_form_rederived(&op, 4).unwrap()
                - 0.5 * sensitivity_closed_form_rederived(&op, 2).unwrap();
            worst = worst.max(printed.abs()).max(rederived.abs());
        }
    }
    Outcome {
        pass: worst < 1e-12,
        detail: format!("worst |s4 - s2/2| {worst:.2e} (bar 1e-12)"),
    }
}

fn zero_sensitivity_trend() -> Outcome {
    let start = Instant::now();
    let mut f_opt = Vec::new();
    for k in K_GRID {
        let z = find_zero_sensitivity_frequency(&reference::two_stage(k)).unwrap();
        f_opt.push(z.f_opt);
    }
    let time = within(start.elapsed(), Duration::from_secs(30));
    let found: Vec<f64> = f_opt.iter().flatten().copied().collect();
    let pass = found.len() == K_GRID.len()
        && found.iter().all(|&f| f > reference::F_INJ)
        && found.windows(2).all(|w| w[1] > w[0])
        && time.pass;
    let ghz: Vec<String> = f_opt
        .iter()
        .map(|f| f.map_or("none".into(), |f| format!("{:.4}", f / 1e9)))
        .collect();
    Outcome {
        pass,
        detail: format!("f_opt [{}] GHz vs f_inj 7 GHz; {}", ghz.join(", "), time.detail),
    }
}

fn analytic_vs_time_domain() -> Outcome {
    let start = Instant::now();
    let settings = SimSettings::default();
    let thetas: Vec<f64> = [-2.0f64, -1.0, 0.0, 1.0, 2.0].iter().map(|d| d.to_radians()).collect();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (label, base) in [
        ("N=2", reference::two_stage_linear_phase as fn(f64) -> OscillatorConfig),
        ("N=4", reference::four_stage),
    ] {
        for k in [0.05, 0.2] {
            let c = base(k);
            let range = locking_range(&c).unwrap();
            for u in [-0.4, 0.0, 0.4] {
                let f_fr = range.center() + u * range.width();
                let analytic = match sensitivity_at_free_running(&c, f_fr).unwrap() {
                    Some((_, s)) => s,
                    None => {
                        failures.push(format!("{label} k={k} f_fr={f_fr:.4e}: phasor unlocked"));
                        continue;
                    }
                };
                match measure_sensitivity_sim(&with_free_running(&c, f_fr).unwrap(), &settings, &thetas) {
                    Ok(sim) => {
                        let rel = ((sim.slope - analytic) / analytic).abs();
                        worst = worst.max(rel);
                        if rel >= 0.10 {
                            failures.push(format!("{label} k={k} f_fr={f_fr:.4e}: {rel:.3}"));
                        }
                    }
                    Err(e) => failures.push(format!("{label} k={k} f_fr={f_fr:.4e}: {e}")),
                }
            }
        }
    }
    let time = within(start.elapsed(), Duration::from_secs(600));
    Outcome {
        pass: failures.is_empty() && time.pass,
        detail: format!(
            "worst relative deviation {:.2}% (bar 10%); {}{}",
            100.0 * worst,
            time.detail,
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join("; ")) }
        ),
    }
}

fn quadrature_and_common_mode() -> Outcome {
    let start = Instant::now();
    let settings = SimSettings::default();
    let c = reference::two_stage(0.1);
    let ideal = simulate_phases(&c, &settings, &[0.0, 0.0]).unwrap();
    let offset = 5f64.to_radians();
    let shifted = simulate_phases(&c, &settings, &[offset, offset]).unwrap();
    let locked = detect_lock(&ideal, &settings) && detect_lock(&shifted, &settings);
    let p = ideal.pair_phases();
    let q = shifted.pair_phases();
    let quad_err = (wrap_angle(p[1] - p[0]) - PI / 2.0).to_degrees();
    let shift_err: f64 = p
        .iter()
        .zip(&q)
        .map(|(a, b)| (wrap_angle(b - a) - offset).to_degrees().abs())
        .fold(0.0, f64::max);
    let diff_change = (wrap_angle(q[1] - q[0]) - wrap_angle(p[1] - p[0])).to_degrees().abs();
    let time = within(start.elapsed(), Duration::from_secs(120));
    Outcome {
        pass: locked && quad_err.abs() < 0.2 && shift_err < 0.05 && diff_change < 0.05 && time.pass,
        detail: format!(
            "quadrature error {quad_err:.2e} deg (bar 0.2); common shift error {shift_err:.2e} deg, \
             differential change {diff_change:.2e} deg (bar 0.05); {}",
            time.detail
        ),
    }
}

fn study_line(label: &str, s: &MismatchStudy) -> String {
    let sig: Vec<String> = s.per_k_sigma.iter().map(|v| format!("{v:.4}")).collect();
    let first = s.per_k_sigma[0];
    let last = s.per_k_sigma[s.per_k_sigma.len() - 1];
    format!(
        "{label} sigma [{}] deg (se {:.4}, end-to-end change {:+.1}%)",
        sig.join(", "),
        s.sigma_standard_error(0),
        100.0 * (last / first - 1.0)
    )
}

fn monte_carlo_trend() -> Outcome {
    let spec = MismatchSpec::default();
    let rings = [("N=2", reference::two_stage(0.1)), ("N=4", reference::four_stage(0.1))];
    let mut pass = true;
    let mut lines = Vec::new();
    let fast = SimSettings {
        measure_periods: 64,
        ..SimSettings::default()
    };
    for (mode, solver, limit) in [
        ("phasor", Solver::Phasor, Duration::from_secs(60)),
        ("time-domain", Solver::TimeDomain(fast), Duration::from_secs(1800)),
    ] {
        let start = Instant::now();
        for (label, c) in &rings {
            match run_mismatch_study(c, &spec, &K_GRID, &solver) {
                Ok(s) => {
                    pass &= s.nonincreasing_within_noise();
                    lines.push(format!("{mode} {}", study_line(label, &s)));
                }
                Err(e) => {
                    pass = false;
                    lines.push(format!("{mode} {label}: {e}"));
                }
            }
        }
        let time = within(start.elapsed(), limit);
        pass &= time.pass;
        lines.push(format!("{mode} {}", time.detail));
    }
    Outcome {
        pass,
        detail: lines.join("; "),
    }
}

fn free_running_cross_check() -> Outcome {
    let settings = SimSettings::default();
    let mut cases: Vec<(String, OscillatorConfig)> = Vec::new();
    for (label, base) in [("N=2", reference::two_stage(0.0)), ("N=4", reference::four_stage(0.0))] {
        cases.push((format!("{label} nominal"), base.clone()));
        for scale in [0.8, 1.2] {
            let mut r = base.clone();
            r.stages.iter_mut().for_each(|s| s.r_load *= scale);
            cases.push((format!("{label} R x{scale}"), r));
            let mut c = base.clone();
            c.stages.iter_mut().for_each(|s| s.c_load *= scale);
            cases.push((format!("{label} C x{scale}"), c));
        }
    }
    let mut worst: f64 = 0.0;
    let mut errors = Vec::new();
    for (label, c) in &cases {
        let phasor = free_running_frequency(c).unwrap();
        match measure_free_running(c, &settings) {
            Ok(sim) => worst = worst.max(((sim - phasor) / phasor).abs()),
            Err(e) => errors.push(format!("{label}: {e}")),
        }
    }
    Outcome {
        pass: errors.is_empty() && worst < 0.02,
        detail: format!(
            "{} configs, worst relative difference {:.3}% (bar 2%){}",
            cases.len(),
            100.0 * worst,
            if errors.is_empty() { String::new() } else { format!("; {}", errors.join("; ")) }
        ),
    }
}

fn config_for(experiment: Experiment, out: &std::path::Path) -> String {
    let oracle = matches!(
        experiment,
        Experiment::SensitivityVsTheta | Experiment::SensitivityVsPhi0 | Experiment::SensitivityVsFfr
    );
    format!(
        r#"{{
  "experiment": "{}",
  "oscillator": {{
    "n_stages": 2,
    "stage": {{"r_load": 1000, "c_load": 2.2736420441699336e-14, "gm_peak": 0.001,
              "theta_vi0_deg": 45, "am_pm_coeff_deg": -20}},
    "injection_ratio": 0.1,
    "f_inj": 7e9
  }},
  "sim": {{"samples_per_period": 200, "settle_periods": 150, "measure_periods": 64}},
  "mismatch": {{"n_samples": 12, "seed": 7}},
  "sweep": {{"k_values": [0.1, 0.2], "theta_deg": [-4, 0, 4], "phi0_deg": [0, 30, 60],
            "f_fr_step_hz": 400000000, "oracle_theta_deg": [-1, 1]}},
  "mc_solver": "time-domain",
  "output_dir": "{}",
  "include_oracle": {oracle}
}}"#,
        experiment.name(),
        out.display()
    )
}

/// CSV bytes of one run, by file name.
fn csv_outputs(experiment: Experiment, jobs: usize, dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let cfg = parse_config(&config_for(experiment, dir)).unwrap().resolve().unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().unwrap();
    let out = pool.install(|| run_experiment(&cfg)).unwrap();
    let mut files: Vec<(String, Vec<u8>)> = out
        .files
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut mismatched = Vec::new();
    let mut files = 0;
    for e in Experiment::ALL {
        let a = csv_outputs(e, 1, &tmp.path().join(format!("{}-a", e.name())));
        let b = csv_outputs(e, 1, &tmp.path().join(format!("{}-b", e.name())));
        let c = csv_outputs(e, 3, &tmp.path().join(format!("{}-c", e.name())));
        files += a.len();
        if a.is_empty() || a != b || a != c {
            mismatched.push(e.name());
        }
    }
    Outcome {
        pass: mismatched.is_empty(),
        detail: format!(
            "{} experiments, {files} CSV files, 1 vs 1 vs 3 threads{}",
            Experiment::ALL.len(),
            if mismatched.is_empty() { String::new() } else { format!("; differing: {}", mismatched.join(", ")) }
        ),
    }
}

/// Phasor cross-check of the common-mode property, used as a sanity line
/// under criterion 6.
fn phasor_common_mode() -> f64 {
    let c = reference::two_stage(0.1);
    let o = 5f64.to_radians();
    let a = solve_node_phasors(&c, &[0.0, 0.0]).unwrap();
    let b = solve_node_phasors(&c, &[o, o]).unwrap();
    a.node_phasors
        .iter()
        .zip(&b.node_phasors)
        .map(|(p, q)| (wrap_angle(q.angle() - p.angle()) - o).to_degrees().abs())
        .fold(0.0, f64::max)
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("closed form vs implicit finite difference", closed_form_vs_implicit),
        ("zero-detuning limit k*cos(phi0)/N", zero_detuning_limit),
        ("stage-count scaling s(4) = s(2)/2", stage_count_scaling),
        ("zero-sensitivity frequency above f_inj, increasing in k", zero_sensitivity_trend),
        ("analytic vs time-domain sensitivity within 10%", analytic_vs_time_domain),
        ("quadrature and common-mode shift", quadrature_and_common_mode),
        ("Monte Carlo sigma nonincreasing in k", monte_carlo_trend),
        ("phasor vs simulated free-running frequency within 2%", free_running_cross_check),
        ("byte-identical CSV across runs and thread counts", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        if i == 5 {
            println!("     phasor common-mode shift error {:.2e} deg", phasor_common_mode());
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
