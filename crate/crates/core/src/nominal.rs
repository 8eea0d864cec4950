//! Nominal sample-and-hold policy: exact one-step lookahead minimization of
//! `V` over a control grid.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clf::ClfPair;
use crate::dynamics::{norm, ControlInput, Rk4Workspace, StateVec, SystemModel};
use crate::error::{Error, Result};
use crate::grid;

#[derive(Debug, Clone)]
pub struct NominalPolicy {
    pub controls: Vec<ControlInput>,
    pub clf: ClfPair,
    pub delta: f64,
    pub substeps: usize,
    /// Inside this radius the decay requirement is waived.
    pub core_radius: f64,
}

/// Lookahead result for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Lookahead {
    pub u: ControlInput,
    pub v_now: f64,
    pub v_next: f64,
    /// `-(delta/2) w(x) - (V(x+) - V(x))`; nonnegative when the decay holds.
    pub margin: f64,
}

impl NominalPolicy {
    pub fn new(
        model: &dyn SystemModel,
        clf: ClfPair,
        grid_resolution: usize,
        delta: f64,
        substeps: usize,
        core_radius: f64,
    ) -> Self {
        Self {
            controls: grid::control_grid(model.input_box(), grid_resolution),
            clf,
            delta,
            substeps,
            core_radius,
        }
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self {
            delta,
            ..self.clone()
        }
    }

    /// Argmin of `V(x_{k+1}^u)` over the grid; ties go to the smaller `|u|`,
    /// then to the lexicographically smaller `u`.
    pub fn lookahead(&self, model: &dyn SystemModel, x: &[f64]) -> Result<Lookahead> {
        let mut ws = Rk4Workspace::new(x.len());
        let mut next = x.to_vec();
        let mut best: Option<(f64, &ControlInput)> = None;
        for u in &self.controls {
            next.copy_from_slice(x);
            ws.advance(model, &mut next, &u.0, self.delta, self.substeps, None)?;
            let v = self.clf.value(&next);
            let better = match best {
                None => true,
                Some((bv, bu)) => rank(v, u, bv, bu) == Ordering::Less,
            };
            if better {
                best = Some((v, u));
            }
        }
        let (v_next, u) = best.ok_or_else(|| Error::InvalidInput("empty control grid".into()))?;
        let v_now = self.clf.value(x);
        let margin = -0.5 * self.delta * self.clf.decay(x) - (v_next - v_now);
        Ok(Lookahead {
            u: u.clone(),
            v_now,
            v_next,
            margin,
        })
    }
}

fn rank(v: f64, u: &ControlInput, best_v: f64, best_u: &ControlInput) -> Ordering {
    v.total_cmp(&best_v)
        .then_with(|| norm(&u.0).total_cmp(&norm(&best_u.0)))
        .then_with(|| {
            u.0.iter()
                .zip(&best_u.0)
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// The lookahead action, required to keep at least half the decay outside the
/// core ball.
pub fn nominal_action(
    policy: &NominalPolicy,
    model: &dyn SystemModel,
    x_k: &StateVec,
) -> Result<ControlInput> {
    let la = policy.lookahead(model, &x_k.0)?;
    let n = x_k.norm();
    if n > policy.core_radius && la.margin < 0.0 {
        return Err(Error::DecayInfeasible { norm: n });
    }
    Ok(la.u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub delta: f64,
    pub points: usize,
    pub passed: usize,
    pub failed: usize,
    pub worst_margin: f64,
    pub worst_state: Vec<f64>,
}

impl DecayReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

/// Evaluates the sample-and-hold decay inequality at every grid point.
pub fn verify_decay(
    policy: &NominalPolicy,
    model: &dyn SystemModel,
    points: &[Vec<f64>],
) -> Result<DecayReport> {
    let margins: Vec<f64> = points
        .par_iter()
        .map(|x| policy.lookahead(model, x).map(|la| la.margin))
        .collect::<Result<_>>()?;
    let mut report = DecayReport {
        delta: policy.delta,
        points: points.len(),
        passed: 0,
        failed: 0,
        worst_margin: f64::INFINITY,
        worst_state: vec![],
    };
    for (x, &m) in points.iter().zip(&margins) {
        if m >= 0.0 {
            report.passed += 1;
        } else {
            report.failed += 1;
        }
        if m < report.worst_margin {
            report.worst_margin = m;
            report.worst_state = x.clone();
        }
    }
    Ok(report)
}

/// Largest candidate sampling period for which the nominal decay holds on
/// every grid point, with that period's report.
pub fn certify_delta(
    policy: &NominalPolicy,
    model: &dyn SystemModel,
    points: &[Vec<f64>],
    candidates: &[f64],
) -> Result<Option<DecayReport>> {
    let mut sorted: Vec<f64> = candidates.iter().cloned().filter(|d| *d > 0.0).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    for delta in sorted {
        let p = policy.with_delta(delta);
        // Cheap rejection before the full sweep.
        let mut early_fail = false;
        for x in points {
            if p.lookahead(model, x)?.margin < 0.0 {
                early_fail = true;
                break;
            }
        }
        if early_fail {
            log::debug!("sampling period {delta} fails the nominal decay test");
            continue;
        }
        return verify_decay(&p, model, points).map(Some);
    }
    Ok(None)
}
