//! Random stage mismatch against injection strength.
//!
//! Every (seed, sample, stage, parameter) tuple owns a fixed slice of a
//! ChaCha keystream, so samples can be drawn in any order or in parallel and
//! still come out identical.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::OscillatorConfig;
use crate::error::{Error, Result};
use crate::lock;
use crate::phasor::wrap_angle;
use crate::sim::{self, SimSettings};

/// Description of the per-sample error written into output metadata.
pub const ERROR_METRIC: &str =
    "signed deviation (degrees) of the worst node from ideal pi/N spacing, after removing the mean phase";

/// Largest fraction of unlocked samples tolerated at any k.
pub const MAX_UNLOCKED_FRACTION: f64 = 0.05;

/// Keystream words reserved for one normal draw.
const WORDS_PER_DRAW: u128 = 64;
const PARAMS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MismatchSpec {
    /// Relative standard deviation of `r_load`.
    pub sigma_r: f64,
    /// Relative standard deviation of `c_load`.
    pub sigma_c: f64,
    /// Relative standard deviation of `gm_peak`.
    pub sigma_gm: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for MismatchSpec {
    fn default() -> Self {
        MismatchSpec {
            sigma_r: 0.01,
            sigma_c: 0.01,
            sigma_gm: 0.01,
            n_samples: 200,
            seed: 1,
        }
    }
}

impl MismatchSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_r", self.sigma_r), ("sigma_c", self.sigma_c), ("sigma_gm", self.sigma_gm)] {
            if !(v.is_finite() && (0.0..=0.2).contains(&v)) {
                return Err(Error::validation(
                    format!("mismatch.{name}"),
                    format!("must lie in [0, 0.2] (got {v})"),
                ));
            }
        }
        if self.n_samples < 2 {
            return Err(Error::validation(
                "mismatch.n_samples",
                format!("must be >= 2 (got {})", self.n_samples),
            ));
        }
        Ok(())
    }
}

/// Relative parameter deltas of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageDelta {
    pub r: f64,
    pub c: f64,
    pub gm: f64,
}

/// Independent Gaussian relative deltas for every stage of sample `index`.
pub fn sample_mismatch(spec: &MismatchSpec, n_stages: usize, index: usize) -> Result<Vec<StageDelta>> {
    spec.validate()?;
    if index >= spec.n_samples {
        return Err(Error::validation(
            "index",
            format!("must be < n_samples = {} (got {index})", spec.n_samples),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let mut draw = |stage: usize, param: usize, sigma: f64| -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        rng.set_word_pos((stage * PARAMS + param) as u128 * WORDS_PER_DRAW);
        let z: f64 = rng.sample(StandardNormal);
        sigma * z
    };
    Ok((0..n_stages)
        .map(|s| StageDelta {
            r: draw(s, 0, spec.sigma_r),
            c: draw(s, 1, spec.sigma_c),
            gm: draw(s, 2, spec.sigma_gm),
        })
        .collect())
}

/// Copy of `config` with the deltas applied multiplicatively.
pub fn apply_mismatch(config: &OscillatorConfig, deltas: &[StageDelta]) -> Result<OscillatorConfig> {
    let mut out = config.clone();
    for (s, d) in out.stages.iter_mut().zip(deltas) {
        s.r_load *= 1.0 + d.r;
        s.c_load *= 1.0 + d.c;
        s.gm_peak *= 1.0 + d.gm;
    }
    out.validate()?;
    Ok(out)
}

/// Worst deviation from ideal `π/N` spacing, radians, after removing the
/// common phase.
pub fn worst_spacing_error(pair_phases: &[f64]) -> f64 {
    let n = pair_phases.len();
    let step = PI / n as f64;
    let residual: Vec<f64> = pair_phases
        .iter()
        .enumerate()
        .map(|(i, p)| p - i as f64 * step)
        .collect();
    let (s, c) = residual
        .iter()
        .fold((0.0, 0.0), |(s, c), r| (s + r.sin(), c + r.cos()));
    let mean = s.atan2(c);
    residual
        .iter()
        .map(|r| wrap_angle(r - mean))
        .fold(0.0, |worst: f64, d| if d.abs() > worst.abs() { d } else { worst })
}

/// Which model produces the node phases.
#[derive(Debug, Clone, PartialEq)]
pub enum Solver {
    TimeDomain(SimSettings),
    Phasor,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MismatchStudy {
    pub k_grid: Vec<f64>,
    /// Unbiased standard deviation of the locked samples, degrees.
    pub per_k_sigma: Vec<f64>,
    /// Per-sample error in degrees; `None` for samples that did not lock.
    pub per_k_samples: Vec<Vec<Option<f64>>>,
}

impl MismatchStudy {
    pub fn locked_count(&self, j: usize) -> usize {
        self.per_k_samples[j].iter().flatten().count()
    }

    pub fn unlocked_count(&self, j: usize) -> usize {
        self.per_k_samples[j].len() - self.locked_count(j)
    }

    /// Standard error of `per_k_sigma[j]` under a normal model.
    pub fn sigma_standard_error(&self, j: usize) -> f64 {
        let n = self.locked_count(j) as f64;
        self.per_k_sigma[j] / (2.0 * (n - 1.0)).sqrt()
    }

    /// σ never rises between neighbouring k by more than the pooled
    /// standard error of the two estimates.
    pub fn nonincreasing_within_noise(&self) -> bool {
        (1..self.k_grid.len()).all(|j| {
            let pooled = self.sigma_standard_error(j - 1).hypot(self.sigma_standard_error(j));
            self.per_k_sigma[j] <= self.per_k_sigma[j - 1] + pooled
        })
    }
}

fn sample_error(config: &OscillatorConfig, solver: &Solver) -> Result<Option<f64>> {
    let n = config.n_stages;
    let outcome = match solver {
        Solver::TimeDomain(settings) => sim::simulate_phases(config, settings, &vec![0.0; n])
            .map(|r| sim::detect_lock(&r, settings).then(|| worst_spacing_error(&r.pair_phases()))),
        Solver::Phasor => lock::solve_node_phasors(config, &vec![0.0; n]).map(|s| {
            s.locked.then(|| {
                worst_spacing_error(&s.node_phasors.iter().map(|p| p.angle()).collect::<Vec<_>>())
            })
        }),
    };
    match outcome {
        Ok(e) => Ok(e.map(f64::to_degrees)),
        Err(
            Error::NotLocked(_)
            | Error::Convergence { .. }
            | Error::Singular(_)
            | Error::Instability { .. }
            | Error::DeadNode { .. },
        ) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Runs every (k, sample) pair, in parallel, reduced in (k, sample) order.
pub fn run_mismatch_study(
    config: &OscillatorConfig,
    spec: &MismatchSpec,
    k_grid: &[f64],
    solver: &Solver,
) -> Result<MismatchStudy> {
    config.validate()?;
    spec.validate()?;
    if let Solver::TimeDomain(s) = solver {
        s.validate(config.n_stages)?;
    }
    if k_grid.is_empty() {
        return Err(Error::validation("k_grid", "must be nonempty"));
    }
    for &k in k_grid {
        config.with_injection_ratio(k).validate()?;
    }
    let n = config.n_stages;
    let perturbed = (0..spec.n_samples)
        .map(|i| apply_mismatch(config, &sample_mismatch(spec, n, i)?))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..k_grid.len())
        .flat_map(|j| (0..spec.n_samples).map(move |i| (j, i)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(j, i)| sample_error(&perturbed[i].with_injection_ratio(k_grid[j]), solver))
        .collect::<Result<Vec<_>>>()?;

    let mut per_k_samples = Vec::with_capacity(k_grid.len());
    let mut per_k_sigma = Vec::with_capacity(k_grid.len());
    for (j, chunk) in results.chunks(spec.n_samples).enumerate() {
        let locked: Vec<f64> = chunk.iter().flatten().copied().collect();
        let unlocked = chunk.len() - locked.len();
        if unlocked as f64 > MAX_UNLOCKED_FRACTION * chunk.len() as f64 {
            return Err(Error::StudyInvalid {
                k_inj: k_grid[j],
                unlocked,
                total: chunk.len(),
            });
        }
        per_k_sigma.push(sample_std(&locked));
        per_k_samples.push(chunk.to_vec());
    }
    Ok(MismatchStudy {
        k_grid: k_grid.to_vec(),
        per_k_sigma,
        per_k_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::reference;

    #[test]
    fn zero_sigma_gives_zero_deltas() {
        let spec = MismatchSpec {
            sigma_r: 0.0,
            sigma_c: 0.0,
            sigma_gm: 0.0,
            ..MismatchSpec::default()
        };
        for d in sample_mismatch(&spec, 4, 7).unwrap() {
            assert_eq!((d.r, d.c, d.gm), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn draws_are_keyed_not_sequential() {
        let spec = MismatchSpec::default();
        let a = sample_mismatch(&spec, 4, 3).unwrap();
        let b = sample_mismatch(&spec, 4, 3).unwrap();
        assert_eq!(a, b);
        // A stage's draw does not depend on how many stages exist.
        let c = sample_mismatch(&spec, 2, 3).unwrap();
        assert_eq!(a[..2], c[..]);
        assert_ne!(a, sample_mismatch(&spec, 4, 4).unwrap());
        let other = MismatchSpec { seed: 2, ..spec };
        assert_ne!(a, sample_mismatch(&other, 4, 3).unwrap());
    }

    #[test]
    fn empirical_sigma() {
        let spec = MismatchSpec {
            n_samples: 10_000,
            ..MismatchSpec::default()
        };
        let r: Vec<f64> = (0..spec.n_samples)
            .map(|i| sample_mismatch(&spec, 1, i).unwrap()[0].r)
            .collect();
        let s = sample_std(&r);
        assert!((0.0097..=0.0103).contains(&s), "{s}");
    }

    #[test]
    fn spec_bounds() {
        assert!(MismatchSpec { sigma_c: 0.3, ..MismatchSpec::default() }.validate().is_err());
        assert!(MismatchSpec { n_samples: 1, ..MismatchSpec::default() }.validate().is_err());
        assert!(sample_mismatch(&MismatchSpec::default(), 2, 200).is_err());
    }

    #[test]
    fn spacing_error_ignores_common_shift() {
        let p = [0.3, 0.3 + PI / 4.0, 0.3 + PI / 2.0 + 0.01, 0.3 + 3.0 * PI / 4.0];
        let e = worst_spacing_error(&p);
        assert!((e - 0.0075).abs() < 1e-4, "{e}");
        assert!(worst_spacing_error(&[2.0, 2.0 + PI / 2.0]).abs() < 1e-15);
    }

    #[test]
    fn no_mismatch_no_error() {
        let spec = MismatchSpec {
            sigma_r: 0.0,
            sigma_c: 0.0,
            sigma_gm: 0.0,
            n_samples: 3,
            seed: 9,
        };
        let study = run_mismatch_study(&reference::four_stage(0.1), &spec, &[0.05, 0.2], &Solver::Phasor).unwrap();
        assert!(study.per_k_samples.iter().flatten().all(|e| e.unwrap().abs() < 0.01));
        assert!(study.per_k_sigma.iter().all(|s| *s < 0.01));
    }

    #[test]
    fn phasor_study_is_reproducible_and_suppressed() {
        let spec = MismatchSpec {
            n_samples: 40,
            ..MismatchSpec::default()
        };
        let c = reference::two_stage_linear_phase(0.1);
        let a = run_mismatch_study(&c, &spec, &[0.05, 0.2], &Solver::Phasor).unwrap();
        let b = run_mismatch_study(&c, &spec, &[0.05, 0.2], &Solver::Phasor).unwrap();
        assert_eq!(a, b);
        assert!(a.per_k_sigma[1] < a.per_k_sigma[0]);
    }
}
