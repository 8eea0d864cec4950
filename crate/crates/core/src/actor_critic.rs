//! Per-step actor-critic problem: minimize the squared Bellman error over
//! `(u, theta)` subject to the critic constraints C1-C4.
//!
//! The solver is a seeded global enumeration over the control grid and a
//! small set of critic weights, followed by a feasible-only coordinate search.
//! When nothing on the grid is feasible the nominal tuple is returned.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clf::ClfPair;
use crate::critic::{ActivationSpec, CriticWeights, WeightSet};
use crate::dynamics::{dot, euler_predict_into, norm, ControlInput, Reward, SystemModel};
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::grid;

/// Margins at or above `-FEAS_TOL` count as satisfied.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// Points per input axis of the seeding grid.
    pub control_resolution: usize,
    /// Random critic weights drawn per step in addition to the previous and
    /// structure-matching ones.
    pub theta_draws: usize,
    /// Objective evaluations allowed in the local search.
    pub max_local_evals: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            control_resolution: 21,
            theta_draws: 32,
            max_local_evals: 200,
        }
    }
}

/// Data of `AC(x_k; R, r)` that does not change between steps.
#[derive(Clone)]
pub struct AcProblem {
    pub model: Arc<dyn SystemModel>,
    pub clf: ClfPair,
    pub activation: ActivationSpec,
    pub weights: WeightSet,
    pub q1: Envelope,
    pub q2: Envelope,
    pub reward: Reward,
    pub eps: [f64; 3],
    pub delta: f64,
    pub settings: SolverSettings,
    pub controls: Vec<ControlInput>,
}

impl std::fmt::Debug for AcProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AcProblem")
            .field("eps", &self.eps)
            .field("delta", &self.delta)
            .field("settings", &self.settings)
            .finish_non_exhaustive()
    }
}

impl AcProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: Arc<dyn SystemModel>,
        clf: ClfPair,
        activation: ActivationSpec,
        weights: WeightSet,
        q1: Envelope,
        q2: Envelope,
        reward: Reward,
        eps: [f64; 3],
        delta: f64,
        settings: SolverSettings,
    ) -> Result<Self> {
        if eps.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::InvalidInput(format!("relaxations must be nonnegative, got {eps:?}")));
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidInput(format!("sampling period must be positive, got {delta}")));
        }
        let controls = grid::control_grid(model.input_box(), settings.control_resolution);
        Ok(Self {
            model,
            clf,
            activation,
            weights,
            q1,
            q2,
            reward,
            eps,
            delta,
            settings,
            controls,
        })
    }

    fn predict(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        euler_predict_into(self.model.as_ref(), x, u, self.delta, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcSolution {
    pub u: ControlInput,
    pub theta: CriticWeights,
    pub objective: f64,
    pub feasible: bool,
    pub fallback_used: bool,
    pub margins: [f64; 4],
}

// Quantities at one state that do not depend on (u, theta).
struct StateTerms {
    phi_now: Vec<f64>,
    w_now: f64,
    q1_now: f64,
    q2_now: f64,
}

// Quantities of one candidate input.
struct InputTerms {
    rho: f64,
    phi_next: Vec<f64>,
    v_next: f64,
}

impl StateTerms {
    fn new(p: &AcProblem, x: &[f64]) -> Self {
        let s = norm(x);
        Self {
            phi_now: p.activation.phi(x),
            w_now: p.clf.decay(x),
            q1_now: p.q1.eval(s),
            q2_now: p.q2.eval(s),
        }
    }
}

impl InputTerms {
    fn new(p: &AcProblem, x: &[f64], u: &[f64]) -> Self {
        let next = p.predict(x, u);
        Self {
            rho: p.reward.eval(x, u),
            phi_next: p.activation.phi(&next),
            v_next: p.clf.value(&next),
        }
    }
}

#[inline]
fn objective_of(rho: f64, j_next_prev: f64, j_now: f64) -> f64 {
    let e = rho + j_next_prev - j_now;
    e * e
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn margins_of(
    p: &AcProblem,
    st: &StateTerms,
    v_next: f64,
    j_now: f64,
    j_now_prev: f64,
    j_next: f64,
) -> [f64; 4] {
    let m1 = j_now_prev + p.eps[0] - j_now;
    let m2 = j_next + p.eps[1] - v_next;
    let m3 = -0.5 * p.delta * st.w_now + p.eps[2] - (j_next - j_now);
    let m4 = (j_now - st.q1_now).min(st.q2_now - j_now);
    [m1, m2, m3, m4]
}

#[inline]
fn all_satisfied(m: &[f64; 4]) -> bool {
    m.iter().all(|&v| v >= -FEAS_TOL)
}

/// `(rho(x, u) + J(x_hat, theta_prev) - J(x, theta))^2` with the Euler
/// prediction `x_hat = x + delta f(x, u)`.
pub fn bellman_error_sq(
    problem: &AcProblem,
    x_k: &[f64],
    u: &ControlInput,
    theta: &CriticWeights,
    theta_prev: &CriticWeights,
) -> f64 {
    let it = InputTerms::new(problem, x_k, &u.0);
    let phi_now = problem.activation.phi(x_k);
    objective_of(it.rho, dot(&theta_prev.0, &it.phi_next), dot(&theta.0, &phi_now))
}

/// Slacks of C1-C4; nonnegative means satisfied.
pub fn constraint_margins(
    problem: &AcProblem,
    x_k: &[f64],
    u: &ControlInput,
    theta: &CriticWeights,
    theta_prev: &CriticWeights,
) -> [f64; 4] {
    let st = StateTerms::new(problem, x_k);
    let it = InputTerms::new(problem, x_k, &u.0);
    margins_of(
        problem,
        &st,
        it.v_next,
        dot(&theta.0, &st.phi_now),
        dot(&theta_prev.0, &st.phi_now),
        dot(&theta.0, &it.phi_next),
    )
}

/// Best feasible candidate found by enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct Seed {
    pub u_index: usize,
    pub theta_index: usize,
    pub objective: f64,
    pub margins: [f64; 4],
}

/// Enumerates `controls x thetas` (controls outer, thetas inner) and keeps the
/// feasible candidate with the smallest objective; earlier candidates win ties.
pub fn stage_one(
    problem: &AcProblem,
    x_k: &[f64],
    theta_prev: &CriticWeights,
    controls: &[ControlInput],
    thetas: &[CriticWeights],
) -> Option<Seed> {
    let st = StateTerms::new(problem, x_k);
    let j_now: Vec<f64> = thetas.iter().map(|t| dot(&t.0, &st.phi_now)).collect();
    let j_now_prev = dot(&theta_prev.0, &st.phi_now);
    let mut best: Option<Seed> = None;
    for (ui, u) in controls.iter().enumerate() {
        let it = InputTerms::new(problem, x_k, &u.0);
        let j_next_prev = dot(&theta_prev.0, &it.phi_next);
        for (ti, t) in thetas.iter().enumerate() {
            let obj = objective_of(it.rho, j_next_prev, j_now[ti]);
            if best.as_ref().is_some_and(|b| obj >= b.objective) {
                continue;
            }
            let j_next = dot(&t.0, &it.phi_next);
            let m = margins_of(problem, &st, it.v_next, j_now[ti], j_now_prev, j_next);
            if all_satisfied(&m) {
                best = Some(Seed {
                    u_index: ui,
                    theta_index: ti,
                    objective: obj,
                    margins: m,
                });
            }
        }
    }
    best
}

/// Critic-weight candidates: previous, structure-matching, then seeded draws.
pub fn theta_candidates(problem: &AcProblem, theta_prev: &CriticWeights, seed: u64) -> Vec<CriticWeights> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(problem.settings.theta_draws + 2);
    out.push(theta_prev.clone());
    out.push(problem.activation.theta_match.clone());
    for _ in 0..problem.settings.theta_draws {
        out.push(problem.weights.sample(&mut rng));
    }
    out
}

// Coordinate search over (u, theta), accepting only feasible improvements.
fn refine(
    problem: &AcProblem,
    x_k: &[f64],
    theta_prev: &CriticWeights,
    mut u: Vec<f64>,
    mut theta: Vec<f64>,
    mut objective: f64,
    mut margins: [f64; 4],
) -> (Vec<f64>, Vec<f64>, f64, [f64; 4]) {
    let st = StateTerms::new(problem, x_k);
    let j_now_prev = dot(&theta_prev.0, &st.phi_now);
    let input_box = problem.model.input_box();
    let res = problem.settings.control_resolution.max(2) as f64 - 1.0;
    let mut u_step: Vec<f64> = input_box.bounds.iter().map(|&(lo, hi)| (hi - lo) / res).collect();
    let mut t_step: Vec<f64> = problem
        .weights
        .lo
        .iter()
        .zip(&problem.weights.hi)
        .map(|(lo, hi)| 0.05 * (hi - lo))
        .collect();

    let mut evals = 0;
    let budget = problem.settings.max_local_evals;
    let mut cand_u = u.clone();
    let mut cand_t = theta.clone();
    while evals < budget {
        let mut improved = false;
        let dims = u.len() + theta.len();
        for d in 0..dims {
            for sign in [1.0, -1.0] {
                if evals >= budget {
                    break;
                }
                cand_u.copy_from_slice(&u);
                cand_t.copy_from_slice(&theta);
                if d < u.len() {
                    cand_u[d] += sign * u_step[d];
                    if !input_box.contains(&cand_u) {
                        continue;
                    }
                } else {
                    cand_t[d - u.len()] += sign * t_step[d - u.len()];
                    if !problem.weights.contains(&cand_t) {
                        continue;
                    }
                }
                evals += 1;
                let it = InputTerms::new(problem, x_k, &cand_u);
                let j_now = dot(&cand_t, &st.phi_now);
                let obj = objective_of(it.rho, dot(&theta_prev.0, &it.phi_next), j_now);
                if obj >= objective {
                    continue;
                }
                let m = margins_of(problem, &st, it.v_next, j_now, j_now_prev, dot(&cand_t, &it.phi_next));
                if all_satisfied(&m) {
                    u.copy_from_slice(&cand_u);
                    theta.copy_from_slice(&cand_t);
                    objective = obj;
                    margins = m;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            u_step.iter_mut().chain(t_step.iter_mut()).for_each(|s| *s *= 0.5);
            if u_step.iter().chain(&t_step).all(|&s| s < 1e-12) {
                break;
            }
        }
    }
    (u, theta, objective, margins)
}

/// Solves `AC(x_k; R, r)`. Falls back to the tuple produced by `fallback`
/// (nominal action, structure-matching weights) when no grid candidate is
/// feasible; the returned solution is then flagged and may itself be
/// infeasible.
pub fn solve_ac<F>(
    problem: &AcProblem,
    x_k: &[f64],
    theta_prev: &CriticWeights,
    seed: u64,
    fallback: F,
) -> Result<AcSolution>
where
    F: FnOnce() -> Result<(ControlInput, CriticWeights)>,
{
    let thetas = theta_candidates(problem, theta_prev, seed);
    match stage_one(problem, x_k, theta_prev, &problem.controls, &thetas) {
        Some(seed) => {
            let (u, theta, objective, margins) = refine(
                problem,
                x_k,
                theta_prev,
                problem.controls[seed.u_index].0.clone(),
                thetas[seed.theta_index].0.clone(),
                seed.objective,
                seed.margins,
            );
            Ok(AcSolution {
                u: ControlInput(u),
                theta: CriticWeights(theta),
                objective,
                feasible: true,
                fallback_used: false,
                margins,
            })
        }
        None => {
            let (u, theta) = fallback()?;
            let margins = constraint_margins(problem, x_k, &u, &theta, theta_prev);
            Ok(AcSolution {
                objective: bellman_error_sq(problem, x_k, &u, &theta, theta_prev),
                feasible: all_satisfied(&margins),
                fallback_used: true,
                u,
                theta,
                margins,
            })
        }
    }
}

pub fn margins_satisfied(m: &[f64; 4]) -> bool {
    all_satisfied(m)
}
