//! Control Lyapunov function pairs `(V, w)` and generalized lower directional
//! derivatives.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critic::{CLARKE_ALPHA1, CLARKE_ALPHA2};
use crate::dynamics::{ControlInput, SystemModel};
use crate::envelope::Envelope;
use crate::error::{Error, Result};

pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A CLF `V` with decay rate `w = gain * shape` and class-K-infinity envelopes
/// `alpha1(|x|) <= V(x) <= alpha2(|x|)`.
#[derive(Clone)]
pub struct ClfPair {
    v: ScalarField,
    shape: ScalarField,
    pub gain: f64,
    pub alpha1: Envelope,
    pub alpha2: Envelope,
}

impl fmt::Debug for ClfPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClfPair")
            .field("alpha1", &self.alpha1)
            .field("alpha2", &self.alpha2)
            .field("gain", &self.gain)
            .finish()
    }
}

impl ClfPair {
    pub fn new(
        v: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        w: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        alpha1: Envelope,
        alpha2: Envelope,
    ) -> Self {
        Self {
            v: Arc::new(v),
            shape: Arc::new(w),
            gain: 1.0,
            alpha1,
            alpha2,
        }
    }

    /// Same `V` and decay shape with `w = gain * shape`.
    pub fn with_decay_gain(&self, gain: f64) -> Self {
        Self {
            gain,
            ..self.clone()
        }
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        (self.v)(x)
    }

    #[inline]
    pub fn decay(&self, x: &[f64]) -> f64 {
        self.gain * (self.shape)(x)
    }

    /// Decay function at unit gain.
    #[inline]
    pub fn decay_shape(&self, x: &[f64]) -> f64 {
        (self.shape)(x)
    }

    pub fn value_fn(&self) -> &ScalarField {
        &self.v
    }
}

#[inline]
pub fn clarke_value(x: &[f64]) -> f64 {
    let planar_sq = x[0] * x[0] + x[1] * x[1];
    planar_sq + 2.0 * x[2] * x[2] - 2.0 * x[2].abs() * planar_sq.sqrt()
}

/// Form of the decay function `w` relative to `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayShape {
    /// `w = gain * V`.
    Proportional,
    /// `w = gain * V / max(1, |x|)`: quadratic near the origin, linear growth
    /// far out, like the decay bounded inputs can achieve.
    Saturated,
}

/// `V(x) = x1^2 + x2^2 + 2 x3^2 - 2 |x3| sqrt(x1^2 + x2^2)` with
/// `w = decay_gain * V`.
///
/// `V` is the quadratic form `[[1, -1], [-1, 2]]` in `(sqrt(x1^2 + x2^2), |x3|)`,
/// so its eigenvalues give tight quadratic envelopes.
pub fn clarke_clf(decay_gain: f64) -> ClfPair {
    clarke_clf_with(DecayShape::Proportional, decay_gain)
}

pub fn clarke_clf_with(shape: DecayShape, decay_gain: f64) -> ClfPair {
    let a1 = Envelope::quadratic(CLARKE_ALPHA1);
    let a2 = Envelope::quadratic(CLARKE_ALPHA2);
    let pair = match shape {
        DecayShape::Proportional => ClfPair::new(clarke_value, clarke_value, a1, a2),
        DecayShape::Saturated => ClfPair::new(
            clarke_value,
            |x| clarke_value(x) / crate::dynamics::norm(x).max(1.0),
            a1,
            a2,
        ),
    };
    pair.with_decay_gain(decay_gain)
}

/// Geometric ladder `tau0, tau0/2, ..., tau0/2^levels` for difference quotients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlddLadder {
    pub tau0: f64,
    pub levels: u32,
}

impl Default for GlddLadder {
    fn default() -> Self {
        Self {
            tau0: 1e-3,
            levels: 12,
        }
    }
}

/// Lower estimate of `liminf_{t -> 0+} (V(x + t v) - V(x)) / t`: the minimum
/// of forward quotients over the ladder.
pub fn gldd(v_fn: &dyn Fn(&[f64]) -> f64, x: &[f64], dir: &[f64], ladder: GlddLadder) -> Result<f64> {
    if dir.iter().all(|&d| d == 0.0) {
        return Ok(0.0);
    }
    let base = v_fn(x);
    let mut probe = vec![0.0; x.len()];
    let mut best = f64::INFINITY;
    let mut tau = ladder.tau0;
    for _ in 0..=ladder.levels {
        for ((p, &xi), &di) in probe.iter_mut().zip(x).zip(dir) {
            *p = xi + tau * di;
        }
        let q = (v_fn(&probe) - base) / tau;
        if !q.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite difference quotient at tau = {tau}"
            )));
        }
        best = best.min(q);
        tau *= 0.5;
    }
    Ok(best)
}

/// Outcome of the decay-gain calibration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecayCalibration {
    /// Largest candidate `k` with `min_u D_{f(x,u)} V(x) <= -k s(x)` on every
    /// point, `s` the unit-gain decay shape.
    pub gain: f64,
    /// Smallest observed `-min_u D V(x) / s(x)`.
    pub worst_ratio: f64,
    pub points: usize,
}

/// Best achievable GLDD decay `min_u D_{f(x,u)} V(x)` over the control grid.
/// The ladder is shrunk by `min(1, |x|)` so it resolves the local scale.
pub fn best_decay_rate(
    model: &dyn SystemModel,
    clf: &ClfPair,
    x: &[f64],
    controls: &[ControlInput],
    ladder: GlddLadder,
) -> Result<f64> {
    let scale = crate::dynamics::norm(x).min(1.0);
    let local = GlddLadder {
        tau0: ladder.tau0 * scale.max(f64::MIN_POSITIVE),
        levels: ladder.levels,
    };
    let mut best = f64::INFINITY;
    let mut dir = vec![0.0; model.state_dim()];
    for u in controls {
        model.rhs(x, &u.0, &mut dir);
        best = best.min(gldd(clf.value_fn().as_ref(), x, &dir, local)?);
    }
    Ok(best)
}

/// Picks the largest admissible gain among `candidates` for the decay shape of `clf`.
pub fn calibrate_decay_gain(
    model: &dyn SystemModel,
    clf: &ClfPair,
    annulus: &[Vec<f64>],
    controls: &[ControlInput],
    ladder: GlddLadder,
    candidates: &[f64],
) -> Result<DecayCalibration> {
    let ratios: Vec<f64> = annulus
        .par_iter()
        .map(|x| {
            let rate = best_decay_rate(model, clf, x, controls, ladder)?;
            Ok(-rate / clf.decay_shape(x))
        })
        .collect::<Result<_>>()?;
    let worst_ratio = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let gain = candidates
        .iter()
        .cloned()
        .filter(|&k| k > 0.0 && k <= worst_ratio)
        .fold(f64::NAN, f64::max);
    if gain.is_nan() {
        return Err(Error::NumericalFailure(format!(
            "no decay gain among {candidates:?} is admissible; worst ratio {worst_ratio}"
        )));
    }
    Ok(DecayCalibration {
        gain,
        worst_ratio,
        points: annulus.len(),
    })
}
