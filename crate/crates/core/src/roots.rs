//! Scalar root finding: plain bisection and Newton safeguarded by a bracket.

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 200;

/// Bisection on `[lo, hi]`. Stops when `|f| <= ftol` or the bracket is
/// narrower than `xtol`.
pub fn bisect<F>(mut lo: f64, mut hi: f64, f: F, xtol: f64, ftol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || flo.is_nan() || fhi.is_nan() {
        return Err(Error::Domain(format!(
            "bisection needs a sign change on [{lo:e}, {hi:e}] (f = {flo:e}, {fhi:e})"
        )));
    }
    // Enough halvings to hit xtol, with a generous ceiling for wide brackets.
    for _ in 0..(MAX_ITERATIONS * 5) {
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid.abs() <= ftol || (hi - lo).abs() <= xtol || mid == lo || mid == hi {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Convergence {
        what: "bisection".into(),
        iterations: MAX_ITERATIONS * 5,
    })
}

/// Newton iteration kept inside a sign-change bracket; any step that leaves
/// the bracket (or fails to shrink the residual fast enough) is replaced by
/// a bisection step. `fdf` returns `(f(x), f'(x))`.
///
/// Iterates until the residual is below `ftol` and then takes a couple of
/// extra Newton steps so the root is resolved to machine precision rather
/// than just to the tolerance.
pub fn safeguarded_newton<F>(mut lo: f64, mut hi: f64, x0: f64, fdf: F, ftol: f64) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let (flo, _) = fdf(lo);
    let (fhi, _) = fdf(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || flo.is_nan() || fhi.is_nan() {
        return Err(Error::Domain(format!(
            "Newton bracket [{lo:e}, {hi:e}] has no sign change"
        )));
    }
    let lo_sign = flo.signum();
    let mut x = if x0 > lo.min(hi) && x0 < lo.max(hi) {
        x0
    } else {
        0.5 * (lo + hi)
    };
    let mut polish = 0;
    for _ in 0..MAX_ITERATIONS {
        let (fx, dfx) = fdf(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == lo_sign {
            lo = x;
        } else {
            hi = x;
        }
        if fx.abs() <= ftol {
            polish += 1;
            if polish > 2 {
                return Ok(x);
            }
        }
        let newton = x - fx / dfx;
        let inside = newton.is_finite() && newton > lo.min(hi) && newton < lo.max(hi);
        let next = if inside { newton } else { 0.5 * (lo + hi) };
        if next == x {
            if fx.abs() <= ftol {
                return Ok(x);
            }
            break;
        }
        x = next;
    }
    let (fx, _) = fdf(x);
    if fx.abs() <= ftol {
        Ok(x)
    } else {
        Err(Error::Convergence {
            what: "safeguarded Newton".into(),
            iterations: MAX_ITERATIONS,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(0.0, 2.0, |x| x * x - 2.0, 1e-15, 0.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn bisect_rejects_missing_bracket() {
        assert!(bisect(0.0, 1.0, |x| x + 1.0, 1e-12, 0.0).is_err());
    }

    #[test]
    fn newton_falls_back_when_derivative_is_flat() {
        // f'(0) = 0, so the first Newton step is rejected.
        let r = safeguarded_newton(-1.0, 2.0, 0.0, |x| (x * x * x - 1.0, 3.0 * x * x), 1e-14).unwrap();
        assert!((r - 1.0).abs() < 1e-14);
    }

    #[test]
    fn newton_polishes_below_tolerance() {
        let r = safeguarded_newton(0.0, 1.0, 0.5, |x| (x.cos() - x, -x.sin() - 1.0), 1e-12).unwrap();
        assert!((r.cos() - r).abs() < 1e-15);
    }
}
