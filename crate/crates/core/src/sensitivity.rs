//! Output phase error caused by an injection phase error.
//!
//! An error θ on one injection phase splits into a common part, which
//! moves every output together, and a differential part θ/N that bends the
//! local triangle `I_t = I_osc + I_inj`. Holding φ₀ and ψ at their
//! unperturbed values, the output shift α satisfies
//!
//! ```text
//! k·sin(φ₀ − ψ − θ/N + α) = sin(ψ − 2α)
//! ```
//!
//! and the quadrature error is 2α.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::OscillatorConfig;
use crate::error::{Error, Result};
use crate::lock::{self, LockingRange, OperatingPoint};
use crate::roots;

/// Largest input error treated as a small disturbance, radians.
pub const MAX_THETA: f64 = 0.5;

/// Default central-difference step, radians.
pub const DEFAULT_STEP: f64 = 1e-6;

/// Bisection tolerance for the zero-sensitivity frequency, hertz.
pub const ZERO_SENSITIVITY_TOL_HZ: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorPerturbation {
    pub theta: f64,
    pub n_stages: usize,
    pub alpha: f64,
    pub quadrature_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensitivityResult {
    /// Central difference of the implicit solve.
    pub implicit: f64,
    /// `(1/N)·k·cos(φ₀+ψ)/cos ψ`.
    pub closed_form: f64,
    /// `(2/N)·k·cos(φ₀−ψ)/(k·cos(φ₀−ψ) + 2·cos ψ)`, the exact derivative of
    /// the implicit equation. This is the default estimator.
    pub closed_form_rederived: f64,
    /// `(1/N)·k·cos φ₀`.
    pub approx: f64,
    /// Slope measured by the time-domain model, when requested.
    pub oracle: Option<f64>,
}

impl SensitivityResult {
    pub fn preferred(&self) -> f64 {
        self.closed_form_rederived
    }
}

fn check_stages(n_stages: usize) -> Result<()> {
    if n_stages < 2 {
        return Err(Error::validation("n_stages", format!("must be >= 2 (got {n_stages})")));
    }
    Ok(())
}

/// Solves for α at fixed (k, φ₀, ψ).
pub fn solve_output_error(op: &OperatingPoint, theta: f64, n_stages: usize) -> Result<ErrorPerturbation> {
    check_stages(n_stages)?;
    if !(theta.is_finite() && theta.abs() <= MAX_THETA) {
        return Err(Error::validation(
            "theta",
            format!("must satisfy |theta| <= {MAX_THETA} rad (got {theta})"),
        ));
    }
    let OperatingPoint { k_inj: k, phi0, psi } = *op;
    let base = phi0 - psi - theta / n_stages as f64;
    let fdf = |a: f64| {
        let s = base + a;
        let t = psi - 2.0 * a;
        (k * s.sin() - t.sin(), k * s.cos() + 2.0 * t.cos())
    };
    if theta == 0.0 && fdf(0.0).0.abs() <= lock::PHASE_TOL {
        return Ok(ErrorPerturbation {
            theta,
            n_stages,
            alpha: 0.0,
            quadrature_error: 0.0,
        });
    }
    // First-order guess, then widen a bracket around it.
    let guess = {
        let (f0, d0) = fdf(0.0);
        if d0 > 0.0 { -f0 / d0 } else { 0.0 }
    };
    let mut w = 1e-3 + 2.0 * guess.abs();
    let (lo, hi) = loop {
        let (lo, hi) = (guess - w, guess + w);
        if fdf(lo).0 < 0.0 && fdf(hi).0 > 0.0 {
            break (lo, hi);
        }
        w *= 2.0;
        if w > std::f64::consts::FRAC_PI_4 {
            return Err(Error::Convergence {
                what: "output phase error bracket".into(),
                iterations: 0,
            });
        }
    };
    let alpha = roots::safeguarded_newton(lo, hi, guess, fdf, 1e-15)?;
    Ok(ErrorPerturbation {
        theta,
        n_stages,
        alpha,
        quadrature_error: 2.0 * alpha,
    })
}

/// `(1/N)·k·cos(φ₀+ψ)/cos ψ`.
pub fn sensitivity_closed_form(op: &OperatingPoint, n_stages: usize) -> Result<f64> {
    check_stages(n_stages)?;
    let c = op.psi.cos();
    if c.abs() < 1e-300 {
        return Err(Error::Singular("cos ψ = 0".into()));
    }
    Ok(op.k_inj * (op.phi0 + op.psi).cos() / (n_stages as f64 * c))
}

/// `(2/N)·k·cos(φ₀−ψ)/(k·cos(φ₀−ψ) + 2·cos ψ)`.
pub fn sensitivity_closed_form_rederived(op: &OperatingPoint, n_stages: usize) -> Result<f64> {
    check_stages(n_stages)?;
    let kc = op.k_inj * (op.phi0 - op.psi).cos();
    let den = kc + 2.0 * op.psi.cos();
    if den.abs() < 1e-300 {
        return Err(Error::Singular("implicit derivative denominator vanishes".into()));
    }
    Ok(2.0 * kc / (n_stages as f64 * den))
}

/// `(1/N)·k·cos φ₀`.
pub fn sensitivity_approx(k_inj: f64, phi0: f64, n_stages: usize) -> f64 {
    k_inj * phi0.cos() / n_stages as f64
}

/// Central difference of 2α over ±`step`.
pub fn sensitivity_finite_difference(op: &OperatingPoint, n_stages: usize, step: f64) -> Result<f64> {
    if !(step > 0.0 && step <= 1e-3) {
        return Err(Error::validation("step", format!("must satisfy 0 < step <= 1e-3 (got {step})")));
    }
    let up = solve_output_error(op, step, n_stages)?.quadrature_error;
    let down = solve_output_error(op, -step, n_stages)?.quadrature_error;
    Ok((up - down) / (2.0 * step))
}

/// Every analytic estimator at one operating point.
pub fn evaluate(op: &OperatingPoint, n_stages: usize) -> Result<SensitivityResult> {
    Ok(SensitivityResult {
        implicit: sensitivity_finite_difference(op, n_stages, DEFAULT_STEP)?,
        closed_form: sensitivity_closed_form(op, n_stages)?,
        closed_form_rederived: sensitivity_closed_form_rederived(op, n_stages)?,
        approx: sensitivity_approx(op.k_inj, op.phi0, n_stages),
        oracle: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZeroSensitivity {
    /// `None` when the sensitivity keeps one sign across the locking range.
    pub f_opt: Option<f64>,
    pub f_inj: f64,
    pub locking_range: LockingRange,
}

impl ZeroSensitivity {
    pub fn above_injection(&self) -> Option<bool> {
        self.f_opt.map(|f| f > self.f_inj)
    }
}

/// Preferred sensitivity with the ring retuned to free-run at `f_fr`;
/// `None` if it does not lock there.
pub fn sensitivity_at_free_running(config: &OscillatorConfig, f_fr: f64) -> Result<Option<(OperatingPoint, f64)>> {
    let state = lock::solve_lock_state(&lock::with_free_running(config, f_fr)?)?;
    if !state.locked {
        return Ok(None);
    }
    let op = state.operating_point()?;
    Ok(Some((op, sensitivity_closed_form_rederived(&op, config.n_stages)?)))
}

/// Free-running frequency inside the locking range where the preferred
/// sensitivity crosses zero.
pub fn find_zero_sensitivity_frequency(config: &OscillatorConfig) -> Result<ZeroSensitivity> {
    let range = lock::locking_range(config)?;
    let mut out = ZeroSensitivity {
        f_opt: None,
        f_inj: config.f_inj,
        locking_range: range,
    };
    if range.width() == 0.0 {
        return Ok(out);
    }
    let pad = 1e-6 * range.width();
    let (a, b) = (range.f_min + pad, range.f_max - pad);
    let sens = |f: f64| -> Result<f64> {
        sensitivity_at_free_running(config, f)?
            .map(|(_, s)| s)
            .ok_or_else(|| Error::NotLocked(format!("f_fr = {f:e} Hz inside the locking range")))
    };
    const SCAN: usize = 64;
    let grid: Vec<f64> = (0..=SCAN).map(|j| a + (b - a) * j as f64 / SCAN as f64).collect();
    let values = grid.iter().map(|&f| sens(f)).collect::<Result<Vec<_>>>()?;
    let Some(j) = (1..=SCAN).find(|&j| values[j - 1].signum() != values[j].signum()) else {
        return Ok(out);
    };
    let (mut lo, mut hi) = (grid[j - 1], grid[j]);
    let s_lo = values[j - 1].signum();
    while hi - lo > ZERO_SENSITIVITY_TOL_HZ {
        let mid = 0.5 * (lo + hi);
        if sens(mid)?.signum() == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    out.f_opt = Some(0.5 * (lo + hi));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// φ₀ in radians, ψ from the geometry at the configured k.
    Phi0,
    /// Free-running frequency in hertz at the configured f_inj.
    FreeRunning,
    /// Input error θ in radians at the configured lock state.
    Theta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub x: f64,
    pub locked: bool,
    pub op: Option<OperatingPoint>,
    pub result: Option<SensitivityResult>,
    /// 2α, only on the θ axis.
    pub quadrature_error: Option<f64>,
}

impl SweepRow {
    fn unlocked(x: f64) -> Self {
        SweepRow {
            x,
            locked: false,
            op: None,
            result: None,
            quadrature_error: None,
        }
    }
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::validation("grid", "must be nonempty"));
    }
    if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("grid", "must be finite and strictly increasing"));
    }
    Ok(())
}

/// One row per grid point, computed in parallel and returned in grid order.
/// Points that do not lock are flagged, not dropped.
pub fn sweep_sensitivity(config: &OscillatorConfig, axis: SweepAxis, grid: &[f64]) -> Result<Vec<SweepRow>> {
    config.validate()?;
    check_grid(grid)?;
    let n = config.n_stages;
    let k = config.injection_ratio;
    let fixed = match axis {
        SweepAxis::Theta => Some(lock::solve_lock_state(config)?),
        _ => None,
    };
    grid.par_iter()
        .map(|&x| -> Result<SweepRow> {
            let op = match axis {
                SweepAxis::Phi0 => {
                    // Only the rising side of ψ(φ₀) is a physical lock.
                    if lock::psi_slope(k, x) <= 0.0 || k == 0.0 {
                        return Ok(SweepRow::unlocked(x));
                    }
                    OperatingPoint::from_geometry(k, x)
                }
                SweepAxis::FreeRunning => match sensitivity_at_free_running(config, x)? {
                    Some((op, _)) => op,
                    None => return Ok(SweepRow::unlocked(x)),
                },
                SweepAxis::Theta => {
                    let state = fixed.as_ref().expect("lock state for theta sweep");
                    if !state.locked {
                        return Ok(SweepRow::unlocked(x));
                    }
                    state.operating_point()?
                }
            };
            let quadrature_error = match axis {
                SweepAxis::Theta => Some(solve_output_error(&op, x, n)?.quadrature_error),
                _ => None,
            };
            Ok(SweepRow {
                x,
                locked: true,
                op: Some(op),
                result: Some(evaluate(&op, n)?),
                quadrature_error,
            })
        })
        .collect()
}
