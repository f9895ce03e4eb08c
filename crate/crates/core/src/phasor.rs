//! Fundamental-tone phasors.
//!
//! Angles throughout the crate follow the delay convention: a phasor with
//! magnitude `A` and angle `φ` stands for the waveform `A·cos(ωt − φ)`, so a
//! positive angle means the waveform arrives later. Sums of waveforms map to
//! sums of phasors exactly as with the usual convention; only the sign of
//! the angle is mirrored.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Sub};

use serde::Serialize;

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    if !angle.is_finite() {
        return angle;
    }
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Phasor {
    magnitude: f64,
    angle: f64,
}

impl Phasor {
    pub const ZERO: Phasor = Phasor {
        magnitude: 0.0,
        angle: 0.0,
    };

    /// Builds a phasor, folding a negative magnitude into a half-turn.
    pub fn new(magnitude: f64, angle: f64) -> Self {
        if magnitude < 0.0 {
            Phasor {
                magnitude: -magnitude,
                angle: wrap_angle(angle + PI),
            }
        } else {
            Phasor {
                magnitude,
                angle: wrap_angle(angle),
            }
        }
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    /// Cartesian parts `(A·cos φ, A·sin φ)`.
    pub fn to_rect(self) -> (f64, f64) {
        (
            self.magnitude * self.angle.cos(),
            self.magnitude * self.angle.sin(),
        )
    }

    pub fn from_rect(re: f64, im: f64) -> Self {
        Phasor {
            magnitude: re.hypot(im),
            angle: if re == 0.0 && im == 0.0 {
                0.0
            } else {
                wrap_angle(im.atan2(re))
            },
        }
    }

    /// Delays the waveform by `delta` radians.
    pub fn delayed(self, delta: f64) -> Self {
        Phasor::new(self.magnitude, self.angle + delta)
    }

    /// Angle of `self` measured from `reference`, wrapped.
    pub fn angle_from(self, reference: Phasor) -> f64 {
        wrap_angle(self.angle - reference.angle)
    }
}

impl Add for Phasor {
    type Output = Phasor;

    fn add(self, rhs: Phasor) -> Phasor {
        let (a, b) = self.to_rect();
        let (c, d) = rhs.to_rect();
        Phasor::from_rect(a + c, b + d)
    }
}

impl Sub for Phasor {
    type Output = Phasor;

    fn sub(self, rhs: Phasor) -> Phasor {
        self + Phasor::new(rhs.magnitude, rhs.angle + PI)
    }
}

impl Mul<f64> for Phasor {
    type Output = Phasor;

    fn mul(self, rhs: f64) -> Phasor {
        Phasor::new(self.magnitude * rhs, self.angle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_keeps_pi_and_maps_minus_pi() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn negative_magnitude_is_a_half_turn() {
        let p = Phasor::new(-2.0, 0.25);
        assert_eq!(p.magnitude(), 2.0);
        assert!((p.angle() - (0.25 - PI)).abs() < 1e-15);
    }

    #[test]
    fn quadrature_sum() {
        let s = Phasor::new(1.0, 0.0) + Phasor::new(1.0, PI / 2.0);
        assert!((s.magnitude() - 2f64.sqrt()).abs() < 1e-15);
        assert!((s.angle() - PI / 4.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn angles_stay_normalized(m in 0.0f64..10.0, a in -100.0f64..100.0, d in -50.0f64..50.0) {
            let p = Phasor::new(m, a).delayed(d);
            prop_assert!(p.magnitude() >= 0.0);
            prop_assert!(p.angle() > -PI && p.angle() <= PI);
            let q = p + Phasor::new(m * 0.5, d);
            prop_assert!(q.angle() > -PI && q.angle() <= PI);
        }

        #[test]
        fn subtraction_undoes_addition(m1 in 0.1f64..5.0, a1 in -4.0f64..4.0, m2 in 0.1f64..5.0, a2 in -4.0f64..4.0) {
            let p = Phasor::new(m1, a1);
            let q = Phasor::new(m2, a2);
            let r = (p + q) - q;
            let (x, y) = r.to_rect();
            let (x0, y0) = p.to_rect();
            prop_assert!((x - x0).abs() < 1e-12 && (y - y0).abs() < 1e-12);
        }
    }
}
