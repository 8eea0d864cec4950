//! Strictly increasing scalar functions vanishing at zero (class-K and
//! class-K-infinity) with numeric inverses.

use std::fmt;
use std::sync::Arc;

/// Bisection tolerance for envelope inverses.
pub const INVERSE_TOL: f64 = 1e-10;

#[derive(Clone)]
pub struct Envelope {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Envelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Envelope").field(&self.name).finish()
    }
}

impl Envelope {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    /// `s -> c s^2`
    pub fn quadratic(c: f64) -> Self {
        Self::new(format!("{c}*s^2"), move |s| c * s * s)
    }

    /// `s -> c s`
    pub fn linear(c: f64) -> Self {
        Self::new(format!("{c}*s"), move |s| c * s)
    }

    pub fn identity() -> Self {
        Self::linear(1.0)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.f)(s)
    }

    /// Pointwise product with a positive constant.
    pub fn scaled(&self, c: f64) -> Self {
        let f = Arc::clone(&self.f);
        Self {
            name: format!("{c}*({})", self.name),
            f: Arc::new(move |s| c * f(s)),
        }
    }

    /// Smallest `s >= 0` with `eval(s) >= y`, located by bisection on `[0, hi]`.
    /// `hi` is doubled from `initial_hi` until it brackets `y`. Returns `None`
    /// when `y` is unreachable (the function saturates) or not finite.
    pub fn inverse(&self, y: f64, initial_hi: f64) -> Option<f64> {
        if !y.is_finite() {
            return None;
        }
        if y <= 0.0 {
            return Some(0.0);
        }
        let mut hi = if initial_hi > 0.0 { initial_hi } else { 1.0 };
        let mut doublings = 0;
        while self.eval(hi) < y {
            hi *= 2.0;
            doublings += 1;
            if doublings > 2000 || !hi.is_finite() {
                return None;
            }
        }
        let mut lo = 0.0;
        for _ in 0..400 {
            if hi - lo <= INVERSE_TOL * hi.min(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// Checks strict increase on `points + 1` uniformly spaced samples of `[0, upper]`.
    pub fn is_increasing_on(&self, upper: f64, points: usize) -> bool {
        let mut prev = self.eval(0.0);
        (1..=points).all(|i| {
            let v = self.eval(upper * i as f64 / points as f64);
            let ok = v > prev;
            prev = v;
            ok
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_inverse() {
        let q = Envelope::quadratic(1.0);
        assert_relative_eq!(q.inverse(4.1, 1.0).unwrap(), 4.1f64.sqrt(), epsilon = 1e-9);
        assert_eq!(q.inverse(0.0, 1.0), Some(0.0));
    }

    #[test]
    fn tiny_values_resolve_relatively() {
        let q = Envelope::linear(300.0);
        let s = q.inverse(2.4e-4, 10.0).unwrap();
        assert_relative_eq!(s, 8e-7, max_relative = 1e-8);
    }

    #[test]
    fn saturating_function_has_no_inverse() {
        let q = Envelope::new("tanh", f64::tanh);
        assert!(q.inverse(2.0, 1.0).is_none());
    }

    #[test]
    fn monotonicity_check() {
        assert!(Envelope::quadratic(0.3).is_increasing_on(5.0, 100));
        assert!(!Envelope::new("flat", |_| 1.0).is_increasing_on(5.0, 10));
    }
}
