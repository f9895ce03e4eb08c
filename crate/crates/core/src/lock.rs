//! Injection-locked steady state in the phasor domain.
//!
//! Stage `i` is driven by node `i−1` (node 0 by the complement of node
//! `N−1`) and delays its input by `θ_VI + θ_IV`. The free-running loop closes
//! when every stage delays by exactly `π/N`. Under injection the node current
//! becomes `I_t = I_osc + I_inj`; its extra delay ψ relative to `I_osc` makes
//! up whatever the stage lacks at `f_inj`.
//!
//! φ₀ is the delay of `I_inj` relative to `I_osc`, so φ₀ > 0 when the
//! injection runs slower than the free-running ring (f_fr > f_inj).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{OscillatorConfig, StageModel};
use crate::error::{Error, Result};
use crate::phasor::{wrap_angle, Phasor};
use crate::roots;

/// Residual tolerance for every phase root, radians.
pub const PHASE_TOL: f64 = 1e-12;

/// Relative tolerance on locking-range edges.
pub const RANGE_REL_TOL: f64 = 1e-9;

const SCAN_POINTS: usize = 2048;

/// The phase contribution of one stage, measured as an advance:
/// `π − θ_VI(f, a) − atan(f/f_3dB)`.
pub fn stage_phase_response(f: f64, stage: &StageModel, amplitude_ratio: f64) -> Result<f64> {
    if !(f.is_finite() && f > 0.0) {
        return Err(Error::Domain(format!("frequency must be finite and > 0 (got {f})")));
    }
    if !(amplitude_ratio.is_finite() && amplitude_ratio > 0.0) {
        return Err(Error::Domain(format!(
            "amplitude ratio must be finite and > 0 (got {amplitude_ratio})"
        )));
    }
    Ok(PI - stage.transconductor_lag(f, amplitude_ratio) - stage.load_lag(f))
}

/// Frequency at which the ring's total stage delay is π (the remaining π
/// comes from the crossed differential connection that closes the loop).
pub fn free_running_frequency(config: &OscillatorConfig) -> Result<f64> {
    config.validate()?;
    free_running_of(&config.stages)
}

pub(crate) fn free_running_of(stages: &[StageModel]) -> Result<f64> {
    let residual = |f: f64| -> f64 {
        stages
            .iter()
            .map(|s| s.transconductor_lag(f, 1.0) + s.load_lag(f))
            .sum::<f64>()
            - PI
    };
    let f3_min = stages.iter().map(|s| s.f_3db()).fold(f64::INFINITY, f64::min);
    let f3_max = stages.iter().map(|s| s.f_3db()).fold(0.0, f64::max);
    let (lo, hi) = ((1e-6 * f3_min).ln(), (100.0 * f3_max).ln());
    if residual(hi.exp()) < 0.0 {
        return Err(Error::NoOscillation(format!(
            "stage delays stay below π/N up to {:e} Hz",
            hi.exp()
        )));
    }
    let log_f = roots::bisect(lo, hi, |x| residual(x.exp()), 0.0, PHASE_TOL * 1e-2)?;
    let f = log_f.exp();
    if residual(f).abs() > PHASE_TOL {
        return Err(Error::Convergence {
            what: "free-running frequency".into(),
            iterations: roots::MAX_ITERATIONS,
        });
    }
    Ok(f)
}

/// Delay of `I_t = I_osc + I_inj` relative to `I_osc` for `|I_inj/I_osc| = k`.
pub fn psi_from_geometry(k_inj: f64, phi0: f64) -> f64 {
    (k_inj * phi0.sin()).atan2(1.0 + k_inj * phi0.cos())
}

/// dψ/dφ₀ of [`psi_from_geometry`].
pub fn psi_slope(k_inj: f64, phi0: f64) -> f64 {
    let c = phi0.cos();
    k_inj * (k_inj + c) / (1.0 + 2.0 * k_inj * c + k_inj * k_inj)
}

/// Injection geometry at one node: the three numbers the sensitivity
/// formulas need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub k_inj: f64,
    pub phi0: f64,
    pub psi: f64,
}

impl OperatingPoint {
    /// Operating point with ψ implied by (k, φ₀).
    pub fn from_geometry(k_inj: f64, phi0: f64) -> Self {
        OperatingPoint {
            k_inj,
            phi0,
            psi: psi_from_geometry(k_inj, phi0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LockState {
    /// `None` when not locked.
    pub phi0: Option<f64>,
    /// `None` when not locked.
    pub psi: Option<f64>,
    pub f_fr: f64,
    pub f_inj: f64,
    pub k_inj: f64,
    pub locked: bool,
    /// One phasor per differential node, angles relative to the nominal
    /// injection of node 0. Empty when not locked.
    pub node_phasors: Vec<Phasor>,
}

impl LockState {
    pub fn operating_point(&self) -> Result<OperatingPoint> {
        match (self.locked, self.phi0, self.psi) {
            (true, Some(phi0), Some(psi)) => Ok(OperatingPoint {
                k_inj: self.k_inj,
                phi0,
                psi,
            }),
            _ => Err(Error::NotLocked(format!(
                "f_inj = {:e} Hz, f_fr = {:e} Hz, k_inj = {}",
                self.f_inj, self.f_fr, self.k_inj
            ))),
        }
    }
}

/// The symmetric ring reduced to one stage. The lock condition is
/// `G(φ₀) = Δ` with `G = ψ + θ_VI(f_inj, A(φ₀)) − θ_VI(f_inj, 1)` and Δ the
/// delay the stage is short of `π/N` at `f_inj`.
#[derive(Debug, Clone, Copy)]
struct SymmetricLoop {
    stage: StageModel,
    k: f64,
    f_inj: f64,
    /// |Z(f_inj)| / |Z(f_fr)|.
    zeta: f64,
    lag_ref: f64,
    delta: f64,
}

impl SymmetricLoop {
    fn new(stage: StageModel, n: usize, k: f64, f_inj: f64, f_fr: f64) -> Self {
        let lag_ref = stage.transconductor_lag(f_inj, 1.0);
        SymmetricLoop {
            stage,
            k,
            f_inj,
            zeta: stage.load_magnitude(f_inj) / stage.load_magnitude(f_fr),
            lag_ref,
            delta: PI / n as f64 - lag_ref - stage.load_lag(f_inj),
        }
    }

    fn from_config(config: &OscillatorConfig) -> Result<(Self, f64)> {
        config.validate()?;
        let f_fr = free_running_of(&config.stages)?;
        let l = SymmetricLoop::new(
            config.mean_stage(),
            config.n_stages,
            config.injection_ratio,
            config.f_inj,
            f_fr,
        );
        Ok((l, f_fr))
    }

    fn current_ratio(&self, phi: f64) -> f64 {
        (1.0 + 2.0 * self.k * phi.cos() + self.k * self.k).sqrt()
    }

    /// Node amplitude relative to the free-running amplitude.
    fn amplitude(&self, phi: f64) -> f64 {
        self.zeta * self.current_ratio(phi)
    }

    fn g(&self, phi: f64) -> f64 {
        psi_from_geometry(self.k, phi) + self.stage.transconductor_lag(self.f_inj, self.amplitude(phi))
            - self.lag_ref
    }

    fn dg(&self, phi: f64) -> f64 {
        let a = self.amplitude(phi);
        let da = -self.zeta * self.k * phi.sin() / self.current_ratio(phi);
        psi_slope(self.k, phi)
            + self.stage.lag_sensitivity(self.f_inj, a) * self.stage.lag_setting_slope(a) * da
    }

    /// Maximal φ₀ intervals on which `G` increases (stable lock).
    fn stable_intervals(&self) -> Vec<(f64, f64)> {
        if self.k == 0.0 {
            return Vec::new();
        }
        let h = 2.0 * PI / SCAN_POINTS as f64;
        let grid = |j: usize| -PI + (j as f64 + 0.5) * h;
        let edge = |a: f64, b: f64| {
            roots::bisect(a, b, |x| self.dg(x), 1e-15, 0.0).unwrap_or(0.5 * (a + b))
        };
        let mut out = Vec::new();
        let mut start: Option<f64> = if self.dg(grid(0)) > 0.0 { Some(grid(0)) } else { None };
        for j in 1..SCAN_POINTS {
            let (a, b) = (grid(j - 1), grid(j));
            let (pa, pb) = (self.dg(a) > 0.0, self.dg(b) > 0.0);
            if !pa && pb {
                start = Some(edge(a, b));
            } else if pa && !pb {
                if let Some(s) = start.take() {
                    out.push((s, edge(a, b)));
                }
            }
        }
        if let Some(s) = start {
            out.push((s, grid(SCAN_POINTS - 1)));
        }
        out
    }

    /// Signed distance of Δ from the edge of the reachable range of `G`;
    /// nonnegative iff locked.
    fn margin(&self) -> f64 {
        if self.k == 0.0 {
            return -self.delta.abs();
        }
        self.stable_intervals()
            .into_iter()
            .map(|(a, b)| (self.delta - self.g(a)).min(self.g(b) - self.delta))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn solve_phi0(&self) -> Result<Option<f64>> {
        if self.k == 0.0 {
            return Ok((self.delta.abs() <= PHASE_TOL).then_some(0.0));
        }
        let mut best: Option<f64> = None;
        for (a, b) in self.stable_intervals() {
            let (ga, gb) = (self.g(a) - self.delta, self.g(b) - self.delta);
            let phi = if ga.abs() <= PHASE_TOL {
                a
            } else if gb.abs() <= PHASE_TOL {
                b
            } else if ga < 0.0 && gb > 0.0 {
                let x0 = 0.0f64.clamp(a, b);
                roots::safeguarded_newton(a, b, x0, |x| (self.g(x) - self.delta, self.dg(x)), PHASE_TOL)?
            } else {
                continue;
            };
            if best.is_none_or(|p| phi.abs() < p.abs()) {
                best = Some(phi);
            }
        }
        Ok(best)
    }
}

/// Solves the symmetric ring (all stages taken as the parameter mean).
/// An unlocked configuration is reported through `locked = false`.
pub fn solve_lock_state(config: &OscillatorConfig) -> Result<LockState> {
    let (sys, f_fr) = SymmetricLoop::from_config(config)?;
    let mut state = LockState {
        phi0: None,
        psi: None,
        f_fr,
        f_inj: config.f_inj,
        k_inj: config.injection_ratio,
        locked: false,
        node_phasors: Vec::new(),
    };
    let Some(phi0) = sys.solve_phi0()? else {
        return Ok(state);
    };
    let psi = psi_from_geometry(sys.k, phi0);
    let a_ref = sys.stage.gm_peak * sys.stage.load_magnitude(f_fr);
    let magnitude = a_ref * sys.amplitude(phi0);
    let base = -phi0 + psi + sys.stage.load_lag(config.f_inj);
    let origin = config.injection_phases[0];
    state.node_phasors = config
        .injection_phases
        .iter()
        .map(|p| Phasor::new(magnitude, p - origin + base))
        .collect();
    state.phi0 = Some(wrap_angle(phi0));
    state.psi = Some(psi);
    state.locked = true;
    Ok(state)
}

/// Lock margin in radians; nonnegative iff [`solve_lock_state`] locks.
pub fn lock_margin(config: &OscillatorConfig) -> Result<f64> {
    Ok(SymmetricLoop::from_config(config)?.0.margin())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LockingRange {
    pub f_min: f64,
    pub f_max: f64,
}

impl LockingRange {
    pub fn width(&self) -> f64 {
        self.f_max - self.f_min
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.f_min + self.f_max)
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.f_min && f <= self.f_max
    }
}

/// Free-running frequencies (at the configured `f_inj`) that lock. The
/// free-running frequency is moved by scaling every load capacitance.
pub fn locking_range(config: &OscillatorConfig) -> Result<LockingRange> {
    let (sys, f_fr0) = SymmetricLoop::from_config(config)?;
    let n = config.n_stages;
    let margin = |f_fr: f64| {
        let mut stage = sys.stage;
        stage.c_load *= f_fr0 / f_fr;
        SymmetricLoop::new(stage, n, sys.k, sys.f_inj, f_fr).margin()
    };
    range_search(config.f_inj, sys.k, margin)
}

/// Injection frequencies (at the configured ring) that lock.
pub fn injection_locking_range(config: &OscillatorConfig) -> Result<LockingRange> {
    let (sys, f_fr) = SymmetricLoop::from_config(config)?;
    let n = config.n_stages;
    let margin = |f_inj: f64| SymmetricLoop::new(sys.stage, n, sys.k, f_inj, f_fr).margin();
    range_search(f_fr, sys.k, margin)
}

/// Config with every capacitance scaled so the ring free-runs at `f_fr`.
pub fn with_free_running(config: &OscillatorConfig, f_fr: f64) -> Result<OscillatorConfig> {
    if !(f_fr.is_finite() && f_fr > 0.0) {
        return Err(Error::validation("f_fr", format!("must be finite and > 0 (got {f_fr})")));
    }
    let current = free_running_frequency(config)?;
    Ok(config.with_capacitance_scale(current / f_fr))
}

/// Contiguous locked interval around `center`, searched in log frequency.
fn range_search<M: Fn(f64) -> f64>(center: f64, k: f64, margin: M) -> Result<LockingRange> {
    if k == 0.0 {
        return Ok(LockingRange {
            f_min: center,
            f_max: center,
        });
    }
    let at = |s: f64| margin(center * s.exp());
    let mut s0 = 0.0;
    if at(s0) < 0.0 {
        // Strong amplitude-to-phase conversion can shift the range off
        // zero detuning; find any locked point first.
        let best = (0..=280)
            .map(|j| -0.7 + 0.005 * j as f64)
            .map(|s| (s, at(s)))
            .fold((0.0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best.1 < 0.0 {
            return Err(Error::NotLocked(format!("no locked point within ±70% of {center:e} Hz")));
        }
        s0 = best.0;
    }
    let edge = |dir: f64| -> Result<f64> {
        let mut inside = s0;
        let mut step = 1e-4;
        let mut outside = loop {
            let s = s0 + dir * step;
            if at(s) < 0.0 {
                break s;
            }
            inside = s;
            step *= 2.0;
            if step > 4.0 {
                return Err(Error::Domain("locking range does not close".into()));
            }
        };
        while (outside - inside).abs() > 0.1 * RANGE_REL_TOL {
            let mid = 0.5 * (inside + outside);
            if at(mid) >= 0.0 {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        Ok(center * inside.exp())
    };
    Ok(LockingRange {
        f_min: edge(-1.0)?,
        f_max: edge(1.0)?,
    })
}

/// Steady state of a ring whose stages may differ, with optional per-node
/// injection phase errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSolution {
    /// One phasor per differential node, angles relative to the nominal
    /// injection of node 0.
    pub node_phasors: Vec<Phasor>,
    /// Converged and every stage on its stable branch.
    pub locked: bool,
}

/// Solves the full per-node phasor equations by Newton iteration, seeded
/// from the symmetric solution of the parameter-mean ring.
pub fn solve_node_phasors(config: &OscillatorConfig, injection_errors: &[f64]) -> Result<NodeSolution> {
    config.validate()?;
    let n = config.n_stages;
    if injection_errors.len() != n {
        return Err(Error::validation(
            "injection_errors",
            format!("must have exactly n_stages = {n} entries (got {})", injection_errors.len()),
        ));
    }
    let mut mean = config.clone();
    mean.stages = vec![config.mean_stage(); n];
    let seed = solve_lock_state(&mean)?;
    if !seed.locked {
        return Err(Error::NotLocked("mean ring does not lock".into()));
    }
    let mean_stage = config.mean_stage();
    let a_ref = mean_stage.gm_peak * mean_stage.load_magnitude(seed.f_fr);
    let i_inj = config.injection_current();
    let f = config.f_inj;
    let origin = config.injection_phases[0];
    let inj: Vec<Phasor> = (0..n)
        .map(|i| Phasor::new(i_inj, config.injection_phases[i] - origin + injection_errors[i]))
        .collect();

    let node = |x: &DVector<f64>, i: usize| Phasor::from_rect(x[2 * i] * a_ref, x[2 * i + 1] * a_ref);
    let stage_input = |x: &DVector<f64>, i: usize| {
        if i == 0 {
            node(x, n - 1) * -1.0
        } else {
            node(x, i - 1)
        }
    };
    let osc_current = |x: &DVector<f64>, i: usize| {
        let s = &config.stages[i];
        let v = stage_input(x, i);
        let a = v.magnitude() / a_ref;
        Phasor::new(s.gm_peak, v.angle() + s.transconductor_lag(f, a))
    };
    let residual = |x: &DVector<f64>| {
        let mut r = DVector::zeros(2 * n);
        for i in 0..n {
            let s = &config.stages[i];
            let pred = (osc_current(x, i) + inj[i]).delayed(s.load_lag(f)) * s.load_magnitude(f);
            let (re, im) = (node(x, i) - pred).to_rect();
            r[2 * i] = re / a_ref;
            r[2 * i + 1] = im / a_ref;
        }
        r
    };

    let mut x = DVector::zeros(2 * n);
    for (i, p) in seed.node_phasors.iter().enumerate() {
        let (re, im) = p.to_rect();
        x[2 * i] = re / a_ref;
        x[2 * i + 1] = im / a_ref;
    }
    let mut r = residual(&x);
    let mut converged = false;
    for _ in 0..roots::MAX_ITERATIONS {
        if r.norm() < 1e-13 {
            converged = true;
            break;
        }
        let h = 1e-7;
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        for c in 0..2 * n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            jac.set_column(c, &((residual(&xp) - residual(&xm)) / (2.0 * h)));
        }
        let step = jac.lu().solve(&(-&r)).ok_or_else(|| Error::Singular("node Jacobian".into()))?;
        let mut t = 1.0;
        loop {
            let trial = &x + &step * t;
            let rt = residual(&trial);
            if rt.norm() < r.norm() || t < 1e-6 {
                x = trial;
                r = rt;
                break;
            }
            t *= 0.5;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            what: "node phasor Newton".into(),
            iterations: roots::MAX_ITERATIONS,
        });
    }

    // Per-stage stability: the local injection geometry must sit on the
    // rising side of that stage's lock curve.
    let stable = (0..n).all(|i| {
        let s = &config.stages[i];
        let io = osc_current(&x, i);
        let k_i = i_inj / s.gm_peak;
        let phi = wrap_angle(inj[i].angle() - io.angle());
        let m = (1.0 + 2.0 * k_i * phi.cos() + k_i * k_i).sqrt();
        let a = node(&x, i).magnitude() / a_ref;
        let da = -s.load_magnitude(f) * s.gm_peak * k_i * phi.sin() / (m * a_ref);
        psi_slope(k_i, phi) + s.lag_sensitivity(f, a) * s.lag_setting_slope(a) * da > 0.0
    });
    Ok(NodeSolution {
        node_phasors: (0..n).map(|i| node(&x, i)).collect(),
        locked: stable,
    })
}
