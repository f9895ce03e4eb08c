//! Behavioral time-domain model of the differential ring.
//!
//! Each stage `i` senses the differential voltage `d` of the previous node
//! pair (stage 0 senses node `N−1` with its legs swapped), passes it through
//! a first-order all-pass that supplies the transconductor lag, and drives
//! `±gm_peak·cos(arg u)` into its own node pair. The instantaneous phase of
//! `u` comes from a second all-pass that puts `u` in quadrature at the
//! injection frequency, so for a tone at that frequency the current is an
//! exact sinusoid of amplitude `gm_peak`. Like a hard limiter, it passes
//! only half the small-signal gain to a weaker competing tone, which is what
//! lets the injection suppress the ring's own mode. A slow envelope of the
//! stage input retunes the lag section when the stage has
//! amplitude-to-phase conversion.
//!
//! ```text
//! C·dv_i/dt  = −v_i/R  + I_i + I_inj·cos(ω t − p_i)
//! C·dvb_i/dt = −vb_i/R − I_i − I_inj·cos(ω t − p_i)
//! ```
//!
//! Integration is classical RK4 on the grid `t_n = n·dt` with an integer
//! number of steps per injection period.

mod extract;
mod measure;

pub use extract::{detect_lock, extract_phases, PhaseReading};
pub use measure::{
    adjacent_spacing_error, measure_free_running, measure_sensitivity_sim, simulate_phases,
    simulated_quadrature_errors, SimSensitivity,
};

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::config::OscillatorConfig;
use crate::error::{Error, Result};
use crate::lock;

/// Envelope time constant in injection periods.
const ENVELOPE_PERIODS: f64 = 16.0;
/// Divergence threshold relative to the free-running amplitude.
const DIVERGENCE: f64 = 100.0;
/// Lower bound on tracked amplitudes relative to the free-running amplitude.
const ENVELOPE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    /// RK4 steps per injection period, so `dt = 1/(f_inj·samples_per_period)`.
    pub samples_per_period: usize,
    /// Injection periods discarded before measuring.
    pub settle_periods: usize,
    /// Injection periods in the measurement window.
    pub measure_periods: usize,
    /// Initial node voltages `[v0, v0b, v1, v1b, ...]`, volts. Defaults to
    /// ±0.1 of the free-running amplitude, alternating by stage.
    pub v_init: Option<Vec<f64>>,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            samples_per_period: 256,
            settle_periods: 200,
            measure_periods: 512,
            v_init: None,
        }
    }
}

impl SimSettings {
    pub fn dt(&self, f_inj: f64) -> f64 {
        1.0 / (f_inj * self.samples_per_period as f64)
    }

    pub fn validate(&self, n_stages: usize) -> Result<()> {
        if self.samples_per_period < 200 {
            return Err(Error::validation(
                "sim.samples_per_period",
                format!("must be >= 200 (got {})", self.samples_per_period),
            ));
        }
        if self.measure_periods < 64 {
            return Err(Error::validation(
                "sim.measure_periods",
                format!("must be >= 64 (got {})", self.measure_periods),
            ));
        }
        if let Some(v) = &self.v_init {
            if v.len() != 2 * n_stages {
                return Err(Error::validation(
                    "sim.v_init",
                    format!("must have 2·n_stages = {} entries (got {})", 2 * n_stages, v.len()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation("sim.v_init", "entries must be finite"));
            }
            // The all-zero state is an equilibrium and never starts.
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::validation("sim.v_init", "must not be all zero"));
            }
        }
        Ok(())
    }
}

/// Recorded measurement window.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveforms {
    pub t: Vec<f64>,
    /// `[node0, node0b, node1, node1b, ...]`.
    pub nodes: Vec<Vec<f64>>,
    pub f_inj: f64,
    pub dt: f64,
    /// Free-running amplitude of the parameter-mean stage, volts.
    pub a_ref: f64,
    /// Nominal injection phase of node 0, the zero of reported phases.
    pub phase_origin: f64,
}

impl Waveforms {
    pub fn node_names(&self) -> Vec<String> {
        (0..self.nodes.len())
            .map(|j| if j % 2 == 0 { format!("node{}", j / 2) } else { format!("node{}b", j / 2) })
            .collect()
    }
}

struct StageCoeffs {
    inv_c: f64,
    inv_r: f64,
    gm: f64,
    omega_3db: f64,
    /// Fixed all-pass corner, or `None` when the lag tracks the envelope.
    omega_allpass: Option<f64>,
    has_allpass: bool,
}

/// Right-hand side of the ring ODE. State layout is
/// `[v0, v0b, …, v_{N−1}b | w | q | e]`, each block `N` long: `w` the lag
/// all-pass states, `q` the quadrature all-pass states and `e` the
/// squared-envelope trackers.
pub(crate) struct Ring {
    n: usize,
    stages: Vec<StageCoeffs>,
    config: OscillatorConfig,
    omega: f64,
    omega_q: f64,
    i_inj: f64,
    inj_cos: Vec<f64>,
    inj_sin: Vec<f64>,
    pub(crate) a_ref: f64,
    env_rate: f64,
    env_floor: f64,
}

impl Ring {
    pub(crate) fn new(config: &OscillatorConfig, injection_errors: &[f64]) -> Result<Self> {
        config.validate()?;
        let n = config.n_stages;
        if injection_errors.len() != n {
            return Err(Error::validation(
                "injection_errors",
                format!("must have exactly n_stages = {n} entries (got {})", injection_errors.len()),
            ));
        }
        if injection_errors.iter().any(|e| !e.is_finite()) {
            return Err(Error::validation("injection_errors", "entries must be finite"));
        }
        let mean = config.mean_stage();
        let f_fr = lock::free_running_of(&vec![mean; n])?;
        let a_ref = mean.gm_peak * mean.load_magnitude(f_fr);
        let stages = config
            .stages
            .iter()
            .map(|s| {
                let omega_3db = TAU * s.f_3db();
                let has_allpass = s.theta_vi0 > 0.0;
                let omega_allpass = (has_allpass && s.am_pm_coeff == 0.0)
                    .then(|| omega_3db / (0.5 * s.theta_vi0).tan());
                StageCoeffs {
                    inv_c: 1.0 / s.c_load,
                    inv_r: 1.0 / s.r_load,
                    gm: s.gm_peak,
                    omega_3db,
                    omega_allpass,
                    has_allpass,
                }
            })
            .collect();
        let phases: Vec<f64> = (0..n).map(|i| config.injection_phases[i] + injection_errors[i]).collect();
        Ok(Ring {
            n,
            stages,
            config: config.clone(),
            omega: TAU * config.f_inj,
            omega_q: TAU * config.f_inj,
            i_inj: config.injection_current(),
            inj_cos: phases.iter().map(|p| p.cos()).collect(),
            inj_sin: phases.iter().map(|p| p.sin()).collect(),
            a_ref,
            env_rate: config.f_inj / ENVELOPE_PERIODS,
            env_floor: ENVELOPE_FLOOR * a_ref,
        })
    }

    /// Retunes the quadrature section, which is exact only at this
    /// frequency. Used when the ring runs free.
    pub(crate) fn with_quadrature_frequency(mut self, f: f64) -> Self {
        self.omega_q = TAU * f;
        self
    }

    pub(crate) fn state_len(&self) -> usize {
        5 * self.n
    }

    pub(crate) fn initial_state(&self, v_init: Option<&[f64]>) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; 5 * n];
        let v0 = 0.1 * self.a_ref;
        match v_init {
            Some(v) => x[..2 * n].copy_from_slice(v),
            None => {
                for i in 0..n {
                    let s = if i % 2 == 0 { v0 } else { -v0 };
                    x[2 * i] = s;
                    x[2 * i + 1] = -s;
                }
            }
        }
        let start = x[..2 * n].iter().fold(v0, |m, v| m.max(v.abs()));
        for i in 0..n {
            x[4 * n + i] = 0.5 * start * start;
        }
        x
    }

    fn stage_input(&self, x: &[f64], i: usize) -> f64 {
        let n = self.n;
        if i == 0 {
            0.5 * (x[2 * n - 1] - x[2 * n - 2])
        } else {
            0.5 * (x[2 * (i - 1)] - x[2 * (i - 1) + 1])
        }
    }

    fn deriv(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        let n = self.n;
        let (sn, cs) = (self.omega * t).sin_cos();
        for i in 0..n {
            let st = &self.stages[i];
            let d = self.stage_input(x, i);
            let e = x[4 * n + i];
            let amp = (2.0 * e.max(0.0)).sqrt().max(self.env_floor);
            let u = if st.has_allpass {
                let w = x[2 * n + i];
                let omega_a = match st.omega_allpass {
                    Some(o) => o,
                    None => {
                        let lag = self.config.stages[i].lag_setting(amp / self.a_ref);
                        st.omega_3db / (0.5 * lag).tan()
                    }
                };
                dx[2 * n + i] = omega_a * (d - w);
                2.0 * w - d
            } else {
                dx[2 * n + i] = 0.0;
                d
            };
            let q = x[3 * n + i];
            dx[3 * n + i] = self.omega_q * (u - q);
            let quad = 2.0 * q - u;
            dx[4 * n + i] = self.env_rate * (d * d - e);
            let drive = st.gm * u / (u * u + quad * quad).sqrt().max(self.env_floor);
            let inj = self.i_inj * (cs * self.inj_cos[i] + sn * self.inj_sin[i]);
            let (v, vb) = (x[2 * i], x[2 * i + 1]);
            dx[2 * i] = st.inv_c * (-v * st.inv_r + drive + inj);
            dx[2 * i + 1] = st.inv_c * (-vb * st.inv_r - drive - inj);
        }
    }
}

/// Fixed-step RK4 driver. `sink(step, t, state)` sees every state after the
/// settle window, starting with the state at the window's first instant.
pub(crate) fn integrate<S>(
    ring: &Ring,
    settings: &SimSettings,
    total_periods: usize,
    record_from_period: usize,
    mut sink: S,
) -> Result<()>
where
    S: FnMut(usize, f64, &[f64]),
{
    let spp = settings.samples_per_period;
    let dt = settings.dt(ring.config.f_inj);
    let len = ring.state_len();
    let mut x = ring.initial_state(settings.v_init.as_deref());
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let limit = DIVERGENCE * ring.a_ref;
    let first = record_from_period * spp;
    let last = total_periods * spp;
    for step in 0..last {
        let t = step as f64 * dt;
        if step >= first {
            sink(step - first, t, &x);
        }
        ring.deriv(t, &x, &mut k1);
        for j in 0..len {
            tmp[j] = x[j] + 0.5 * dt * k1[j];
        }
        ring.deriv(t + 0.5 * dt, &tmp, &mut k2);
        for j in 0..len {
            tmp[j] = x[j] + 0.5 * dt * k2[j];
        }
        ring.deriv(t + 0.5 * dt, &tmp, &mut k3);
        for j in 0..len {
            tmp[j] = x[j] + dt * k3[j];
        }
        ring.deriv(t + dt, &tmp, &mut k4);
        for j in 0..len {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if let Some(node) = (0..2 * ring.n).find(|&j| !(x[j].abs() <= limit)) {
            return Err(Error::Instability {
                node: node / 2,
                time: (step + 1) as f64 * dt,
            });
        }
    }
    Ok(())
}

/// Integrates through the settle window and returns the measurement window.
pub fn simulate(config: &OscillatorConfig, settings: &SimSettings, injection_errors: &[f64]) -> Result<Waveforms> {
    settings.validate(config.n_stages)?;
    let ring = Ring::new(config, injection_errors)?;
    let samples = settings.measure_periods * settings.samples_per_period;
    let nn = 2 * config.n_stages;
    let mut t = Vec::with_capacity(samples);
    let mut nodes = vec![Vec::with_capacity(samples); nn];
    integrate(
        &ring,
        settings,
        settings.settle_periods + settings.measure_periods,
        settings.settle_periods,
        |_, time, x| {
            t.push(time);
            for (j, series) in nodes.iter_mut().enumerate() {
                series.push(x[j]);
            }
        },
    )?;
    Ok(Waveforms {
        t,
        nodes,
        f_inj: config.f_inj,
        dt: settings.dt(config.f_inj),
        a_ref: ring.a_ref,
        phase_origin: config.injection_phases[0],
    })
}
