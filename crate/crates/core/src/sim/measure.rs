//! Measurements built on the integrator: phases, free-running frequency and
//! the simulated error sensitivity.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use super::extract::{detect_lock, PhaseReading, Projector};
use super::{integrate, Ring, SimSettings};
use crate::config::OscillatorConfig;
use crate::error::{Error, Result};
use crate::phasor::wrap_angle;

/// Cycles counted by the free-running measurement.
const FREE_RUNNING_CYCLES: usize = 256;

/// Simulates and extracts phases without storing the waveforms.
pub fn simulate_phases(config: &OscillatorConfig, settings: &SimSettings, injection_errors: &[f64]) -> Result<PhaseReading> {
    settings.validate(config.n_stages)?;
    let ring = Ring::new(config, injection_errors)?;
    let nodes = 2 * config.n_stages;
    let mut proj = Projector::new(
        config.f_inj,
        settings.dt(config.f_inj),
        nodes,
        settings.samples_per_period,
        settings.measure_periods,
    );
    integrate(
        &ring,
        settings,
        settings.settle_periods + settings.measure_periods,
        settings.settle_periods,
        |_, t, x| proj.feed(t, &x[..nodes]),
    )?;
    proj.finish(config.injection_phases[0], ring.a_ref, config.f_inj, settings.measure_periods)
}

/// Free-running frequency from interpolated upward zero crossings of the
/// node-0 differential voltage. Injection is switched off internally.
///
/// The limiter's quadrature section is exact only at its tuning frequency,
/// so the measurement is repeated with the section retuned to the previous
/// result until the two agree.
pub fn measure_free_running(config: &OscillatorConfig, settings: &SimSettings) -> Result<f64> {
    settings.validate(config.n_stages)?;
    let free = config.with_injection_ratio(0.0);
    let mut tuned = config.f_inj;
    for _ in 0..6 {
        let f = count_cycles(&free, settings, tuned)?;
        let settled = (f / tuned - 1.0).abs() < 1e-7;
        tuned = f;
        if settled {
            break;
        }
    }
    Ok(tuned)
}

fn count_cycles(free: &OscillatorConfig, settings: &SimSettings, tuned: f64) -> Result<f64> {
    let ring = Ring::new(free, &vec![0.0; free.n_stages])?.with_quadrature_frequency(tuned);
    // The window is counted in injection periods; leave headroom for rings
    // that run slower than the injection.
    let window = settings.measure_periods.max(2 * FREE_RUNNING_CYCLES);
    let mut prev: Option<(f64, f64)> = None;
    let mut first: Option<f64> = None;
    let mut last = 0.0;
    let mut count = 0usize;
    let mut peak: f64 = 0.0;
    integrate(&ring, settings, settings.settle_periods + window, settings.settle_periods, |_, t, x| {
        let d = x[0] - x[1];
        peak = peak.max(d.abs());
        if let Some((tp, dp)) = prev {
            if dp < 0.0 && d >= 0.0 {
                let tc = tp + (t - tp) * (-dp) / (d - dp);
                first.get_or_insert(tc);
                last = tc;
                count += 1;
            }
        }
        prev = Some((t, d));
    })?;
    if peak < 1e-3 * ring.a_ref {
        return Err(Error::Startup(format!("swing collapsed to {peak:e} V")));
    }
    if count < FREE_RUNNING_CYCLES + 1 {
        return Err(Error::Startup(format!(
            "only {count} cycles in the window; need {}",
            FREE_RUNNING_CYCLES + 1
        )));
    }
    Ok((count - 1) as f64 / (last - first.unwrap_or(last)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSensitivity {
    /// Least-squares slope of 2α against θ.
    pub slope: f64,
    /// Intercept of the fit, radians.
    pub intercept: f64,
    /// `(θ, 2α)` per grid point, radians.
    pub points: Vec<(f64, f64)>,
}

/// Spacing error between node 0 and the node that leads it by π/N (the
/// complement of node N−1), radians.
pub fn adjacent_spacing_error(reading: &PhaseReading, n_stages: usize) -> f64 {
    let p = reading.pair_phases();
    wrap_angle(p[0] - p[n_stages - 1] - PI) - PI / n_stages as f64
}

/// Simulated 2α for each θ, `None` where the ring did not lock.
///
/// An error θ on one injection phase is a common shift of θ/N on every
/// phase, which moves all outputs together, plus a differential part. The
/// differential part is applied as ±θ/N on the two injections adjacent to
/// the measured spacing; that spacing then moves by 2α.
pub fn simulated_quadrature_errors(config: &OscillatorConfig, settings: &SimSettings, thetas: &[f64]) -> Result<Vec<Option<f64>>> {
    let n = config.n_stages;
    thetas
        .par_iter()
        .map(|&theta| {
            let mut errors = vec![0.0; n];
            errors[0] += theta / n as f64;
            errors[n - 1] -= theta / n as f64;
            let r = simulate_phases(config, settings, &errors)?;
            Ok(detect_lock(&r, settings).then(|| adjacent_spacing_error(&r, n)))
        })
        .collect()
}

/// Simulated sensitivity d(2α)/dθ: least-squares slope over `theta_grid`.
pub fn measure_sensitivity_sim(config: &OscillatorConfig, settings: &SimSettings, theta_grid: &[f64]) -> Result<SimSensitivity> {
    crate::sensitivity::check_grid(theta_grid)?;
    let errors = simulated_quadrature_errors(config, settings, theta_grid)?;
    let failed: Vec<usize> = (0..errors.len()).filter(|&j| errors[j].is_none()).collect();
    if !failed.is_empty() {
        return Err(Error::PartialLock { failed });
    }
    let points: Vec<(f64, f64)> = theta_grid.iter().zip(errors).map(|(&t, e)| (t, e.unwrap_or(f64::NAN))).collect();
    let m = points.len() as f64;
    let (xm, ym) = (
        points.iter().map(|p| p.0).sum::<f64>() / m,
        points.iter().map(|p| p.1).sum::<f64>() / m,
    );
    let sxx: f64 = points.iter().map(|p| (p.0 - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::validation("theta_grid", "needs at least two distinct points"));
    }
    let slope = points.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum::<f64>() / sxx;
    Ok(SimSensitivity {
        slope,
        intercept: ym - slope * xm,
        points,
    })
}
