//! Linear-in-parameters critic `J(x, theta) = <theta, phi(x)>`, its weight
//! set and the positive-definiteness envelopes `q1`, `q2`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{dot, norm};
use crate::envelope::Envelope;
use crate::error::{Error, Result};

/// Smallest eigenvalue of `[[1, -1], [-1, 2]]`.
pub const CLARKE_ALPHA1: f64 = 0.381_966_011_250_105_1;
/// Largest eigenvalue of `[[1, -1], [-1, 2]]`.
pub const CLARKE_ALPHA2: f64 = 2.618_033_988_749_895;

/// Slack for the C4 envelope check.
pub const C4_TOL: f64 = 1e-12;

pub type FeatureMap = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Critic weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticWeights(pub Vec<f64>);

impl CriticWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

/// Activation vector `phi` with its lower class-K bound `l`, i.e.
/// `<theta, phi(x)> >= l(|x|) |theta|` on the weight set.
#[derive(Clone)]
pub struct ActivationSpec {
    pub name: String,
    pub state_dim: usize,
    pub p: usize,
    phi: FeatureMap,
    pub lower_l: Envelope,
    /// Weights for which the critic reproduces the CLF exactly.
    pub theta_match: CriticWeights,
}

impl fmt::Debug for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ActivationSpec")
            .field("name", &self.name)
            .field("p", &self.p)
            .field("lower_l", &self.lower_l)
            .field("theta_match", &self.theta_match)
            .finish()
    }
}

impl ActivationSpec {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        p: usize,
        phi: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        lower_l: Envelope,
        theta_match: CriticWeights,
    ) -> Self {
        Self {
            name: name.into(),
            state_dim,
            p,
            phi: Arc::new(phi),
            lower_l,
            theta_match,
        }
    }

    #[inline]
    pub fn phi_into(&self, x: &[f64], out: &mut [f64]) {
        (self.phi)(x, out)
    }

    pub fn phi(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        self.phi_into(x, &mut out);
        out
    }

    /// `<theta, phi(x)>` without set membership checks.
    #[inline]
    pub fn value_unchecked(&self, theta: &[f64], x: &[f64]) -> f64 {
        let mut buf = [0.0; 16];
        if self.p <= buf.len() {
            self.phi_into(x, &mut buf[..self.p]);
            dot(theta, &buf[..self.p])
        } else {
            dot(theta, &self.phi(x))
        }
    }
}

/// `phi = (x1^2, x2^2, 2 x3^2, -2 |x3| sqrt(x1^2 + x2^2))`, matching the
/// Clarke CLF at `theta = (1, 1, 1, 1)`.
pub fn case_study_activation() -> ActivationSpec {
    let set = WeightSet::case_study();
    // <theta, phi> >= theta_4 V >= 0.5 alpha1 |x|^2 and |theta| <= theta_bar.
    let l = Envelope::quadratic(0.5 * CLARKE_ALPHA1 / set.norm_hi);
    ActivationSpec::new(
        "clarke4",
        3,
        4,
        |x, out| {
            let planar = (x[0] * x[0] + x[1] * x[1]).sqrt();
            out[0] = x[0] * x[0];
            out[1] = x[1] * x[1];
            out[2] = 2.0 * x[2] * x[2];
            out[3] = -2.0 * x[2].abs() * planar;
        },
        l,
        CriticWeights(vec![1.0; 4]),
    )
}

/// Admissible weights: a componentwise box, norm bounds and optionally one
/// component capped by the minimum of the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub norm_lo: f64,
    pub norm_hi: f64,
    pub capped_component: Option<usize>,
}

impl WeightSet {
    pub fn case_study() -> Self {
        Self {
            lo: vec![0.5; 4],
            hi: vec![2.0; 4],
            norm_lo: 1.0,
            norm_hi: 4.0,
            capped_component: Some(3),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        self.violation(theta).is_none()
    }

    pub fn violation(&self, theta: &[f64]) -> Option<String> {
        const TOL: f64 = 1e-12;
        if theta.len() != self.dim() {
            return Some(format!("expected {} weights, got {}", self.dim(), theta.len()));
        }
        for (i, (&t, (&lo, &hi))) in theta.iter().zip(self.lo.iter().zip(&self.hi)).enumerate() {
            if !(t >= lo - TOL && t <= hi + TOL) {
                return Some(format!("theta[{i}] = {t} outside [{lo}, {hi}]"));
            }
        }
        let n = norm(theta);
        if n < self.norm_lo - TOL || n > self.norm_hi + TOL {
            return Some(format!(
                "|theta| = {n} outside [{}, {}]",
                self.norm_lo, self.norm_hi
            ));
        }
        if let Some(c) = self.capped_component {
            let cap = theta
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != c)
                .map(|(_, &t)| t)
                .fold(f64::INFINITY, f64::min);
            if theta[c] > cap + TOL {
                return Some(format!("theta[{c}] = {} exceeds {cap}", theta[c]));
            }
        }
        None
    }

    /// Uniform draw from the box, rejected until it lies in the set.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CriticWeights {
        loop {
            let theta: Vec<f64> = self
                .lo
                .iter()
                .zip(&self.hi)
                .map(|(&lo, &hi)| rng.gen_range(lo..=hi))
                .collect();
            if self.contains(&theta) {
                return CriticWeights(theta);
            }
        }
    }

    /// Box corners that belong to the set. A linear functional attains its
    /// supremum over the set at one of these when the set is the box cut by
    /// the cap constraint.
    pub fn vertices(&self) -> Vec<CriticWeights> {
        let p = self.dim();
        (0..1usize << p)
            .map(|mask| {
                (0..p)
                    .map(|i| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] })
                    .collect::<Vec<_>>()
            })
            .filter(|t| self.contains(t))
            .map(CriticWeights)
            .collect()
    }
}

/// `<theta, phi(x)>` for `theta` in the weight set.
pub fn critic_value(
    spec: &ActivationSpec,
    set: &WeightSet,
    theta: &CriticWeights,
    x: &[f64],
) -> Result<f64> {
    if let Some(why) = set.violation(&theta.0) {
        return Err(Error::WeightOutOfSet(why));
    }
    Ok(spec.value_unchecked(&theta.0, x))
}

/// `q1(s) = l(s) theta_lo` and `q2(s) = theta_hi L_phi s`.
pub fn envelope_functions(
    set: &WeightSet,
    spec: &ActivationSpec,
    lipschitz_phi: f64,
) -> (Envelope, Envelope) {
    let q1 = spec.lower_l.scaled(set.norm_lo);
    let q2 = Envelope::linear(set.norm_hi * lipschitz_phi);
    (q1, q2)
}

/// `q1(|x|) <= J(x, theta) <= q2(|x|)` with [`C4_TOL`] slack.
pub fn check_c4(
    q1: &Envelope,
    q2: &Envelope,
    theta: &CriticWeights,
    spec: &ActivationSpec,
    x: &[f64],
) -> bool {
    c4_slack(q1, q2, theta, spec, x) >= -C4_TOL
}

pub(crate) fn c4_slack(
    q1: &Envelope,
    q2: &Envelope,
    theta: &CriticWeights,
    spec: &ActivationSpec,
    x: &[f64],
) -> f64 {
    let j = spec.value_unchecked(&theta.0, x);
    let s = norm(x);
    (j - q1.eval(s)).min(q2.eval(s) - j)
}
