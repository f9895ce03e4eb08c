//! Fundamental-tone phase and amplitude of recorded node voltages.

use std::f64::consts::TAU;

use serde::Serialize;

use super::{SimSettings, Waveforms};
use crate::error::{Error, Result};
use crate::phasor::wrap_angle;

/// Sub-windows used for the drift estimate.
const SEGMENTS: usize = 8;
/// Phase change over the window below which a reading counts as locked.
pub const LOCK_THRESHOLD: f64 = 0.01;
/// Fundamental amplitude below which a node is dead, relative to the
/// free-running amplitude.
const DEAD_NODE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseReading {
    /// Delay of each node `[node0, node0b, node1, ...]` relative to the
    /// nominal node-0 injection, radians in (−π, π].
    pub node_phases: Vec<f64>,
    /// Fundamental amplitude per node, volts.
    pub amplitudes: Vec<f64>,
    /// Residual phase slope of the fastest-drifting node, rad/s.
    pub drift_rate: f64,
    pub f_inj: f64,
    pub measure_periods: usize,
}

impl PhaseReading {
    /// Phases of the true nodes only (one per differential pair).
    pub fn pair_phases(&self) -> Vec<f64> {
        self.node_phases.iter().step_by(2).copied().collect()
    }
}

/// Streaming single-bin correlator at `f_inj`, with per-segment sums for
/// the drift estimate and an upward zero-crossing count of node 0.
pub(crate) struct Projector {
    omega: f64,
    dt: f64,
    nodes: usize,
    segment_len: usize,
    total: Vec<(f64, f64)>,
    segments: Vec<Vec<(f64, f64)>>,
    samples: usize,
    prev_diff: Option<f64>,
    crossings: usize,
}

impl Projector {
    pub(crate) fn new(f_inj: f64, dt: f64, nodes: usize, samples_per_period: usize, measure_periods: usize) -> Self {
        Projector {
            omega: TAU * f_inj,
            dt,
            nodes,
            segment_len: (measure_periods / SEGMENTS) * samples_per_period,
            total: vec![(0.0, 0.0); nodes],
            segments: vec![vec![(0.0, 0.0); nodes]; SEGMENTS],
            samples: 0,
            prev_diff: None,
            crossings: 0,
        }
    }

    pub(crate) fn feed(&mut self, t: f64, values: &[f64]) {
        let (s, c) = (self.omega * t).sin_cos();
        let seg = self.samples / self.segment_len;
        for j in 0..self.nodes {
            let v = values[j];
            self.total[j].0 += v * c;
            self.total[j].1 += v * s;
            if seg < SEGMENTS {
                self.segments[seg][j].0 += v * c;
                self.segments[seg][j].1 += v * s;
            }
        }
        let diff = values[0] - values[1];
        if let Some(p) = self.prev_diff {
            if p < 0.0 && diff >= 0.0 {
                self.crossings += 1;
            }
        }
        self.prev_diff = Some(diff);
        self.samples += 1;
    }

    pub(crate) fn finish(self, phase_origin: f64, a_ref: f64, f_inj: f64, measure_periods: usize) -> Result<PhaseReading> {
        let m = self.samples as f64;
        let mut node_phases = Vec::with_capacity(self.nodes);
        let mut amplitudes = Vec::with_capacity(self.nodes);
        for (j, &(c, s)) in self.total.iter().enumerate() {
            let amp = 2.0 * c.hypot(s) / m;
            if !(amp >= DEAD_NODE * a_ref) {
                return Err(Error::DeadNode { node: j / 2, amplitude: amp });
            }
            amplitudes.push(amp);
            node_phases.push(wrap_angle(s.atan2(c) - phase_origin));
        }

        // Least-squares slope of unwrapped segment phases against time.
        let seg_time = self.segment_len as f64 * self.dt;
        let centers: Vec<f64> = (0..SEGMENTS).map(|q| (q as f64 + 0.5) * seg_time).collect();
        let t_mean = centers.iter().sum::<f64>() / SEGMENTS as f64;
        let t_var: f64 = centers.iter().map(|t| (t - t_mean).powi(2)).sum();
        let mut drift_rate: f64 = 0.0;
        for j in 0..self.nodes {
            let mut phases = Vec::with_capacity(SEGMENTS);
            for seg in &self.segments {
                let p = seg[j].1.atan2(seg[j].0);
                let p = match phases.last() {
                    Some(&prev) => prev + wrap_angle(p - prev),
                    None => p,
                };
                phases.push(p);
            }
            let p_mean = phases.iter().sum::<f64>() / SEGMENTS as f64;
            let slope = centers
                .iter()
                .zip(&phases)
                .map(|(t, p)| (t - t_mean) * (p - p_mean))
                .sum::<f64>()
                / t_var;
            if slope.abs() > drift_rate.abs() {
                drift_rate = slope;
            }
        }

        // Segment phases alias once the beat is faster than a segment; the
        // cycle count catches that case.
        let window = m * self.dt;
        let slip = measure_periods as f64 - self.crossings as f64;
        if slip.abs() >= 2.0 {
            let counted = TAU * slip / window;
            if counted.abs() > drift_rate.abs() {
                drift_rate = counted;
            }
        }
        Ok(PhaseReading {
            node_phases,
            amplitudes,
            drift_rate,
            f_inj,
            measure_periods,
        })
    }
}

pub fn extract_phases(w: &Waveforms, settings: &SimSettings) -> Result<PhaseReading> {
    let spp = settings.samples_per_period;
    if w.t.is_empty() || w.t.len() % spp != 0 {
        return Err(Error::validation(
            "waveforms",
            format!("window of {} samples is not a whole number of {spp}-sample periods", w.t.len()),
        ));
    }
    if w.nodes.len() < 2 || w.nodes.iter().any(|s| s.len() != w.t.len()) {
        return Err(Error::validation("waveforms", "node series must pair up and match the time grid"));
    }
    let periods = w.t.len() / spp;
    if periods < 64 {
        return Err(Error::validation("waveforms", format!("needs >= 64 periods (got {periods})")));
    }
    let mut proj = Projector::new(w.f_inj, w.dt, w.nodes.len(), spp, periods);
    let mut row = vec![0.0; w.nodes.len()];
    for (k, &t) in w.t.iter().enumerate() {
        for (j, series) in w.nodes.iter().enumerate() {
            row[j] = series[k];
        }
        proj.feed(t, &row);
    }
    proj.finish(w.phase_origin, w.a_ref, w.f_inj, periods)
}

/// Locked when the residual drift moves the phase by less than 0.01 rad
/// over the configured measurement window.
pub fn detect_lock(reading: &PhaseReading, settings: &SimSettings) -> bool {
    (reading.drift_rate * settings.measure_periods as f64 / reading.f_inj).abs() < LOCK_THRESHOLD
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(phase: f64, third: f64, df: f64) -> (Waveforms, SimSettings) {
        let settings = SimSettings {
            measure_periods: 64,
            ..SimSettings::default()
        };
        let f = 7e9;
        let spp = settings.samples_per_period;
        let dt = 1.0 / (f * spp as f64);
        let t: Vec<f64> = (0..64 * spp).map(|k| (1000 + k) as f64 * dt).collect();
        let wave = |t: f64, p: f64| {
            (TAU * (f + df) * t - p).cos() + third * (3.0 * (TAU * f * t - p)).cos()
        };
        let nodes = vec![
            t.iter().map(|&t| wave(t, phase)).collect(),
            t.iter().map(|&t| -wave(t, phase)).collect(),
        ];
        let w = Waveforms {
            t,
            nodes,
            f_inj: f,
            dt,
            a_ref: 1.0,
            phase_origin: 0.0,
        };
        (w, settings)
    }

    #[test]
    fn pure_tone_phase() {
        let (w, s) = synthetic(0.3, 0.0, 0.0);
        let r = extract_phases(&w, &s).unwrap();
        assert!((r.node_phases[0] - 0.3).abs() < 1e-6);
        assert!((r.amplitudes[0] - 1.0).abs() < 1e-9);
        assert!((r.node_phases[1] - wrap_angle(0.3 + std::f64::consts::PI)).abs() < 1e-6);
        assert!(r.drift_rate.abs() < 1.0);
        assert!(detect_lock(&r, &s));
    }

    #[test]
    fn third_harmonic_is_orthogonal() {
        let (a, s) = synthetic(0.3, 0.0, 0.0);
        let (b, _) = synthetic(0.3, 0.1, 0.0);
        let pa = extract_phases(&a, &s).unwrap().node_phases[0];
        let pb = extract_phases(&b, &s).unwrap().node_phases[0];
        assert!((pa - pb).abs() < 1e-9);
    }

    #[test]
    fn beat_note_is_not_locked() {
        for df in [2e6, 4e8] {
            let (w, s) = synthetic(0.3, 0.0, df);
            let r = extract_phases(&w, &s).unwrap();
            assert!(!detect_lock(&r, &s), "df = {df}");
        }
    }

    #[test]
    fn zero_drift_is_locked() {
        let r = PhaseReading {
            node_phases: vec![0.0, 0.0],
            amplitudes: vec![1.0, 1.0],
            drift_rate: 0.0,
            f_inj: 7e9,
            measure_periods: 64,
        };
        assert!(detect_lock(&r, &SimSettings::default()));
    }

    #[test]
    fn dead_node_reported() {
        let (mut w, s) = synthetic(0.0, 0.0, 0.0);
        w.nodes[1].iter_mut().for_each(|v| *v = 0.0);
        assert!(matches!(extract_phases(&w, &s), Err(Error::DeadNode { node: 0, .. })));
    }
}
