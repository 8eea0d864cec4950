//! Controlled dynamics, sample-and-hold integration and the one-step
//! Euler predictor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack applied when checking input-box membership.
pub const INPUT_BOX_TOL: f64 = 1e-12;

/// System state `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVec(pub Vec<f64>);

impl StateVec {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite state {coords:?}")));
        }
        Ok(Self(coords))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl From<Vec<f64>> for StateVec {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Control input `u`, held constant over one sampling period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlInput(pub Vec<f64>);

impl ControlInput {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl From<Vec<f64>> for ControlInput {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Componentwise input constraints `[lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub bounds: Vec<(f64, f64)>,
}

impl InputBox {
    pub fn symmetric(m: usize, half_width: f64) -> Self {
        Self {
            bounds: vec![(-half_width, half_width); m],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.bounds.len()
            && u.iter()
                .zip(&self.bounds)
                .all(|(&ui, &(lo, hi))| ui >= lo - INPUT_BOX_TOL && ui <= hi + INPUT_BOX_TOL)
    }

    pub fn clamp(&self, u: &mut [f64]) {
        for (ui, &(lo, hi)) in u.iter_mut().zip(&self.bounds) {
            *ui = ui.clamp(lo, hi);
        }
    }
}

/// A controlled vector field `x' = f(x, u)`.
pub trait SystemModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn input_box(&self) -> &InputBox;
    /// Writes `f(x, u)` into `out`. Must be deterministic.
    fn rhs(&self, x: &[f64], u: &[f64], out: &mut [f64]);

    fn rhs_vec(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.rhs(x, u, &mut out);
        out
    }
}

/// `(x1', x2', x3') = (u1, u2, x1 u2 - x2 u1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonholonomicIntegrator {
    input_box: InputBox,
}

impl NonholonomicIntegrator {
    pub fn new(input_box: InputBox) -> Result<Self> {
        if input_box.dim() != 2 {
            return Err(Error::InvalidInput(
                "nonholonomic integrator needs a 2-dimensional input box".into(),
            ));
        }
        Ok(Self { input_box })
    }
}

impl Default for NonholonomicIntegrator {
    fn default() -> Self {
        Self {
            input_box: InputBox::symmetric(2, 1.0),
        }
    }
}

impl SystemModel for NonholonomicIntegrator {
    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn input_box(&self) -> &InputBox {
        &self.input_box
    }

    #[inline]
    fn rhs(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
        out[1] = u[1];
        out[2] = x[0] * u[1] - x[1] * u[0];
    }
}

/// `x' = u` with `n = m`. Handy as a smooth test system.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleIntegrator {
    input_box: InputBox,
}

impl SingleIntegrator {
    pub fn new(input_box: InputBox) -> Self {
        Self { input_box }
    }
}

impl SystemModel for SingleIntegrator {
    fn state_dim(&self) -> usize {
        self.input_box.dim()
    }

    fn input_dim(&self) -> usize {
        self.input_box.dim()
    }

    fn input_box(&self) -> &InputBox {
        &self.input_box
    }

    #[inline]
    fn rhs(&self, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(u);
    }
}

/// Running cost `rho(x, u) = a x'x + b u'u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub state_weight: f64,
    pub input_weight: f64,
}

impl Default for Reward {
    fn default() -> Self {
        Self {
            state_weight: 0.1,
            input_weight: 2.0,
        }
    }
}

impl Reward {
    #[inline]
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        self.state_weight * dot(x, x) + self.input_weight * dot(u, u)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn validate(model: &dyn SystemModel, x: &[f64], u: &[f64], delta: f64) -> Result<()> {
    if x.len() != model.state_dim() {
        return Err(Error::InvalidInput(format!(
            "state has dimension {}, model expects {}",
            x.len(),
            model.state_dim()
        )));
    }
    if !model.input_box().contains(u) {
        return Err(Error::InvalidInput(format!("input {u:?} outside the input box")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidInput(format!("sampling period must be positive, got {delta}")));
    }
    Ok(())
}

/// Scratch buffers for allocation-free RK4 over an augmented state
/// `(x, c)` where `c' = rho(x, u)`.
#[derive(Debug, Clone)]
pub struct Rk4Workspace {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        }
    }

    /// Advances `x` in place over `delta` with `substeps` RK4 steps, holding `u`.
    /// Returns the integral of `reward` along the interval when one is given.
    pub fn advance(
        &mut self,
        model: &dyn SystemModel,
        x: &mut [f64],
        u: &[f64],
        delta: f64,
        substeps: usize,
        reward: Option<&Reward>,
    ) -> Result<f64> {
        let h = delta / substeps as f64;
        let mut cost = 0.0;
        for step in 0..substeps {
            let [k1, k2, k3, k4] = &mut self.k;
            let tmp = &mut self.tmp;
            model.rhs(x, u, k1);
            let c1 = reward.map_or(0.0, |r| r.eval(x, u));

            for i in 0..x.len() {
                tmp[i] = x[i] + 0.5 * h * k1[i];
            }
            model.rhs(tmp, u, k2);
            let c2 = reward.map_or(0.0, |r| r.eval(tmp, u));

            for i in 0..x.len() {
                tmp[i] = x[i] + 0.5 * h * k2[i];
            }
            model.rhs(tmp, u, k3);
            let c3 = reward.map_or(0.0, |r| r.eval(tmp, u));

            for i in 0..x.len() {
                tmp[i] = x[i] + h * k3[i];
            }
            model.rhs(tmp, u, k4);
            let c4 = reward.map_or(0.0, |r| r.eval(tmp, u));

            for i in 0..x.len() {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            cost += h / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4);

            if x.iter().any(|v| !v.is_finite()) || !cost.is_finite() {
                return Err(Error::IntegrationDiverged { step: step + 1 });
            }
        }
        Ok(cost)
    }
}

/// State after holding `u_k` for `delta`, by classical RK4 with `substeps`
/// equal sub-intervals.
pub fn integrate_interval(
    model: &dyn SystemModel,
    x_k: &StateVec,
    u_k: &ControlInput,
    delta: f64,
    substeps: usize,
) -> Result<StateVec> {
    validate(model, &x_k.0, &u_k.0, delta)?;
    if substeps == 0 {
        return Err(Error::InvalidInput("substeps must be at least 1".into()));
    }
    let mut x = x_k.0.clone();
    Rk4Workspace::new(x.len()).advance(model, &mut x, &u_k.0, delta, substeps, None)?;
    Ok(StateVec(x))
}

/// Like [`integrate_interval`], additionally returning the integral of the
/// running cost over the interval.
pub fn integrate_interval_with_cost(
    model: &dyn SystemModel,
    x_k: &StateVec,
    u_k: &ControlInput,
    delta: f64,
    substeps: usize,
    reward: &Reward,
) -> Result<(StateVec, f64)> {
    validate(model, &x_k.0, &u_k.0, delta)?;
    if substeps == 0 {
        return Err(Error::InvalidInput("substeps must be at least 1".into()));
    }
    let mut x = x_k.0.clone();
    let cost =
        Rk4Workspace::new(x.len()).advance(model, &mut x, &u_k.0, delta, substeps, Some(reward))?;
    Ok((StateVec(x), cost))
}

/// One explicit Euler step: `x + delta f(x, u)`.
pub fn euler_predict(
    model: &dyn SystemModel,
    x_k: &StateVec,
    u: &ControlInput,
    delta: f64,
) -> Result<StateVec> {
    validate(model, &x_k.0, &u.0, delta)?;
    let mut out = vec![0.0; x_k.dim()];
    euler_predict_into(model, &x_k.0, &u.0, delta, &mut out);
    Ok(StateVec(out))
}

#[inline]
pub(crate) fn euler_predict_into(
    model: &dyn SystemModel,
    x: &[f64],
    u: &[f64],
    delta: f64,
    out: &mut [f64],
) {
    model.rhs(x, u, out);
    for (o, &xi) in out.iter_mut().zip(x) {
        *o = xi + delta * *o;
    }
}

/// Guaranteed bound `L_f f_bar delta^2` on the Euler prediction error.
pub fn predictor_error_bound(lipschitz_f: f64, f_bar: f64, delta: f64) -> f64 {
    lipschitz_f * f_bar * delta * delta
}
