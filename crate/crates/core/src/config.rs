//! Oscillator description: per-stage behavioral parameters plus the
//! multi-phase injection arrangement.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One differential delay stage: a limiting transconductor with a lagging
/// input network, driving a parallel RC load.
///
/// `theta_vi0` is the transconductor's extra phase lag at the load corner
/// frequency. It lumps the cross-coupled and feed-forward currents into the
/// stage current, so the phasor analysis only sees their sum. The lag is
/// realized as a first-order all-pass, which makes it frequency dependent:
/// `θ_VI(f) = 2·atan(tan(θ/2)·f/f_3dB)`, equal to `θ` at `f = f_3dB`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageModel {
    /// Load resistance, ohms.
    pub r_load: f64,
    /// Load capacitance, farads.
    pub c_load: f64,
    /// Fundamental current magnitude of the limiting transconductor, amperes.
    pub gm_peak: f64,
    /// Transconductor phase lag at `f_3dB`, radians.
    pub theta_vi0: f64,
    /// AM-to-PM slope: lag change per unit of relative input amplitude.
    pub am_pm_coeff: f64,
}

impl StageModel {
    pub fn f_3db(&self) -> f64 {
        1.0 / (TAU * self.r_load * self.c_load)
    }

    /// Total lag setting at a relative input amplitude. Kept between a
    /// quarter of the nominal lag and halfway to π so a large amplitude
    /// excursion can neither remove the lag nor make it a full inversion.
    pub fn lag_setting(&self, amplitude_ratio: f64) -> f64 {
        let (lo, hi) = self.lag_limits();
        (self.theta_vi0 + self.am_pm_coeff * (amplitude_ratio - 1.0)).clamp(lo, hi)
    }

    fn lag_limits(&self) -> (f64, f64) {
        (0.25 * self.theta_vi0, 0.5 * (self.theta_vi0 + PI))
    }

    /// d(lag setting)/d(amplitude ratio); zero where the clamp is active.
    pub(crate) fn lag_setting_slope(&self, amplitude_ratio: f64) -> f64 {
        let (lo, hi) = self.lag_limits();
        let raw = self.theta_vi0 + self.am_pm_coeff * (amplitude_ratio - 1.0);
        if raw > lo && raw < hi {
            self.am_pm_coeff
        } else {
            0.0
        }
    }

    /// Transconductor lag θ_VI at frequency `f` and relative input amplitude.
    pub fn transconductor_lag(&self, f: f64, amplitude_ratio: f64) -> f64 {
        let x = f / self.f_3db();
        2.0 * ((0.5 * self.lag_setting(amplitude_ratio)).tan() * x).atan()
    }

    /// ∂θ_VI/∂(lag setting) at frequency `f`.
    pub(crate) fn lag_sensitivity(&self, f: f64, amplitude_ratio: f64) -> f64 {
        let x = f / self.f_3db();
        let t = (0.5 * self.lag_setting(amplitude_ratio)).tan();
        x * (1.0 + t * t) / (1.0 + t * t * x * x)
    }

    /// RC load lag θ_IV = atan(f/f_3dB).
    pub fn load_lag(&self, f: f64) -> f64 {
        (f / self.f_3db()).atan()
    }

    /// |Z(f)| of the parallel RC load.
    pub fn load_magnitude(&self, f: f64) -> f64 {
        let x = f / self.f_3db();
        self.r_load / (1.0 + x * x).sqrt()
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(
                    format!("{field}.{name}"),
                    format!("must be finite and > 0 (got {v})"),
                ))
            }
        };
        positive("r_load", self.r_load)?;
        positive("c_load", self.c_load)?;
        positive("gm_peak", self.gm_peak)?;
        let f3 = self.f_3db();
        if !(f3.is_finite() && f3 > 0.0) {
            return Err(Error::validation(
                format!("{field}.r_load*c_load"),
                "corner frequency 1/(2πRC) must be finite and positive",
            ));
        }
        if !(self.theta_vi0.is_finite() && (0.0..PI).contains(&self.theta_vi0)) {
            return Err(Error::validation(
                format!("{field}.theta_vi0"),
                format!("must lie in [0, π) rad (got {})", self.theta_vi0),
            ));
        }
        if !self.am_pm_coeff.is_finite() {
            return Err(Error::validation(
                format!("{field}.am_pm_coeff"),
                "must be finite",
            ));
        }
        // The lag lives in an all-pass section; with no nominal lag there is
        // no section whose corner the amplitude could move.
        if self.theta_vi0 == 0.0 && self.am_pm_coeff != 0.0 {
            return Err(Error::validation(
                format!("{field}.am_pm_coeff"),
                "must be 0 when theta_vi0 is 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorConfig {
    /// Number of differential stages N.
    pub n_stages: usize,
    pub stages: Vec<StageModel>,
    /// k_inj = |I_inj| / |I_osc|.
    pub injection_ratio: f64,
    /// Injection frequency, hertz.
    pub f_inj: f64,
    /// Nominal injection delays, radians; ideally `i·π/N`.
    pub injection_phases: Vec<f64>,
}

impl OscillatorConfig {
    /// N identical stages with ideal, equally spaced injection.
    pub fn uniform(n_stages: usize, stage: StageModel, injection_ratio: f64, f_inj: f64) -> Self {
        OscillatorConfig {
            n_stages,
            stages: vec![stage; n_stages],
            injection_ratio,
            f_inj,
            injection_phases: ideal_injection_phases(n_stages),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_stages;
        if n < 2 {
            return Err(Error::validation("n_stages", format!("must be >= 2 (got {n})")));
        }
        if self.stages.len() != n {
            return Err(Error::validation(
                "stages",
                format!("must have exactly n_stages = {n} entries (got {})", self.stages.len()),
            ));
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.validate(&format!("stages[{i}]"))?;
        }
        let k = self.injection_ratio;
        if !(k.is_finite() && (0.0..1.0).contains(&k)) {
            return Err(Error::validation(
                "injection_ratio",
                format!("must satisfy 0 <= k_inj < 1 (got {k})"),
            ));
        }
        if !(self.f_inj.is_finite() && self.f_inj > 0.0) {
            return Err(Error::validation(
                "f_inj",
                format!("must be finite and > 0 (got {})", self.f_inj),
            ));
        }
        if self.injection_phases.len() != n {
            return Err(Error::validation(
                "injection_phases",
                format!("must have exactly n_stages = {n} entries (got {})", self.injection_phases.len()),
            ));
        }
        let step = PI / n as f64;
        for i in 1..n {
            let d = self.injection_phases[i] - self.injection_phases[i - 1];
            if !d.is_finite() || (d - step).abs() > 1e-9 {
                return Err(Error::validation(
                    "injection_phases",
                    format!("nominal phases must be spaced by π/N = {step} rad (entry {i} differs by {d})"),
                ));
            }
        }
        Ok(())
    }

    pub fn with_injection_ratio(&self, k: f64) -> Self {
        OscillatorConfig {
            injection_ratio: k,
            ..self.clone()
        }
    }

    pub fn with_f_inj(&self, f_inj: f64) -> Self {
        OscillatorConfig {
            f_inj,
            ..self.clone()
        }
    }

    /// Multiplies every load capacitance by `factor`. Because every internal
    /// corner tracks the RC product, this divides all stage frequencies
    /// (including the free-running frequency) by `factor`.
    pub fn with_capacitance_scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.stages {
            s.c_load *= factor;
        }
        out
    }

    /// Parameter-wise mean over stages; defines the reference current and
    /// amplitude that k_inj and the AM-PM ratio are measured against.
    pub fn mean_stage(&self) -> StageModel {
        let n = self.stages.len() as f64;
        let mut m = StageModel {
            r_load: 0.0,
            c_load: 0.0,
            gm_peak: 0.0,
            theta_vi0: 0.0,
            am_pm_coeff: 0.0,
        };
        for s in &self.stages {
            m.r_load += s.r_load / n;
            m.c_load += s.c_load / n;
            m.gm_peak += s.gm_peak / n;
            m.theta_vi0 += s.theta_vi0 / n;
            m.am_pm_coeff += s.am_pm_coeff / n;
        }
        m
    }

    /// |I_osc| of the reference stage, amperes.
    pub fn reference_current(&self) -> f64 {
        self.mean_stage().gm_peak
    }

    /// Injection current amplitude, amperes.
    pub fn injection_current(&self) -> f64 {
        self.injection_ratio * self.reference_current()
    }

    pub fn has_am_pm(&self) -> bool {
        self.stages.iter().any(|s| s.am_pm_coeff != 0.0)
    }
}

pub fn ideal_injection_phases(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 * PI / n as f64).collect()
}

/// Reference designs used by the experiments and the acceptance suite.
///
/// The injection frequency is 7 GHz and each design free-runs at exactly
/// that frequency, so `f_fr = f_inj` is the zero-detuning point.
pub mod reference {
    use super::*;

    pub const F_INJ: f64 = 7.0e9;
    pub const R_LOAD: f64 = 1.0e3;
    pub const GM_PEAK: f64 = 1.0e-3;
    /// Amplitude-to-phase slope of the two-stage reference: larger swing,
    /// less lag.
    pub const AM_PM: f64 = -0.5;

    fn c_for_corner(f3: f64) -> f64 {
        1.0 / (TAU * R_LOAD * f3)
    }

    /// Two-stage quadrature ring with amplitude-to-phase conversion.
    ///
    /// With two stages each stage must delay by 90°; the RC load supplies
    /// 45° at its corner and the transconductor the other 45°.
    pub fn two_stage(k: f64) -> OscillatorConfig {
        let stage = StageModel {
            r_load: R_LOAD,
            c_load: c_for_corner(F_INJ),
            gm_peak: GM_PEAK,
            theta_vi0: PI / 4.0,
            am_pm_coeff: AM_PM,
        };
        OscillatorConfig::uniform(2, stage, k, F_INJ)
    }

    /// Two-stage ring without amplitude-to-phase conversion.
    pub fn two_stage_linear_phase(k: f64) -> OscillatorConfig {
        let mut c = two_stage(k);
        for s in &mut c.stages {
            s.am_pm_coeff = 0.0;
        }
        c
    }

    /// Four-stage (eight-phase) ring; each stage delays 45°, all from the load.
    pub fn four_stage(k: f64) -> OscillatorConfig {
        let stage = StageModel {
            r_load: R_LOAD,
            c_load: c_for_corner(F_INJ),
            gm_peak: GM_PEAK,
            theta_vi0: 0.0,
            am_pm_coeff: 0.0,
        };
        OscillatorConfig::uniform(4, stage, k, F_INJ)
    }

    pub fn for_stages(n: usize, k: f64) -> OscillatorConfig {
        match n {
            2 => two_stage_linear_phase(k),
            4 => four_stage(k),
            _ => {
                let stage = StageModel {
                    r_load: R_LOAD,
                    c_load: c_for_corner(F_INJ),
                    gm_peak: GM_PEAK,
                    theta_vi0: (PI / n as f64 - PI / 4.0).max(0.0),
                    am_pm_coeff: 0.0,
                };
                OscillatorConfig::uniform(n, stage, k, F_INJ)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_configs_validate() {
        reference::two_stage(0.1).validate().unwrap();
        reference::four_stage(0.2).validate().unwrap();
        assert!((reference::two_stage(0.1).stages[0].f_3db() - reference::F_INJ).abs() < 1e-3);
    }

    #[test]
    fn injection_ratio_bound_names_field() {
        let err = reference::two_stage(1.5).validate().unwrap_err();
        match err {
            Error::Validation { field, constraint } => {
                assert_eq!(field, "injection_ratio");
                assert!(constraint.contains("< 1"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn uneven_injection_spacing_rejected() {
        let mut c = reference::four_stage(0.1);
        c.injection_phases[2] += 0.01;
        assert!(matches!(c.validate(), Err(Error::Validation { .. })));
    }

    #[test]
    fn common_offset_is_allowed() {
        let mut c = reference::four_stage(0.1);
        for p in &mut c.injection_phases {
            *p += 0.3;
        }
        c.validate().unwrap();
    }

    #[test]
    fn lag_matches_setting_at_corner() {
        let s = reference::two_stage(0.1).stages[0];
        assert!((s.transconductor_lag(s.f_3db(), 1.0) - PI / 4.0).abs() < 1e-15);
        assert!((s.lag_sensitivity(s.f_3db(), 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn capacitance_scale_divides_corner() {
        let c = reference::two_stage(0.1).with_capacitance_scale(2.0);
        assert!((c.stages[0].f_3db() - reference::F_INJ / 2.0).abs() < 1e-3);
    }
}
