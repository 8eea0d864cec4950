//! Sample-and-hold closed loop under the nominal or the actor-critic
//! controller, with stability monitors, reaching times and quasi-IH costs.

use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actor_critic::{self, AcProblem, SolverSettings, FEAS_TOL};
use crate::bounds::{Certificate, RadiiSpec};
use crate::clf::ClfPair;
use crate::critic::{ActivationSpec, CriticWeights, WeightSet};
use crate::dynamics::{norm, Reward, Rk4Workspace, SystemModel};
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::nominal::NominalPolicy;

/// An input component counts as saturated at or beyond this magnitude.
pub const SATURATION_LEVEL: f64 = 0.999;

pub const CSV_HEADER: [&str; 19] = [
    "k", "t", "x1", "x2", "x3", "u1", "u2", "theta1", "theta2", "theta3", "theta4", "Jhat", "V",
    "m1", "m2", "m3", "m4", "fallback", "core",
];

pub const CONTOUR_HEADER: [&str; 5] = ["x1_0", "x2_0", "ratio_pct", "reach_time_ac", "reach_time_nom"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Nominal,
    #[serde(alias = "ac")]
    ActorCritic,
}

impl Controller {
    pub fn label(self) -> &'static str {
        match self {
            Controller::Nominal => "nominal",
            Controller::ActorCritic => "ac",
        }
    }
}

/// Model, CLF pair, critic and radii shared by all runs.
#[derive(Clone)]
pub struct Suite {
    pub model: Arc<dyn SystemModel>,
    pub clf: ClfPair,
    pub activation: ActivationSpec,
    pub weights: WeightSet,
    pub q1: Envelope,
    pub q2: Envelope,
    pub reward: Reward,
    pub radii: RadiiSpec,
    pub w_bar: f64,
}

impl Suite {
    pub fn from_certificate(
        model: Arc<dyn SystemModel>,
        activation: ActivationSpec,
        weights: WeightSet,
        reward: Reward,
        cert: &Certificate,
    ) -> Self {
        Self {
            model,
            clf: cert.clf.clone(),
            activation,
            weights,
            q1: cert.q1.clone(),
            q2: cert.q2.clone(),
            reward,
            radii: cert.radii,
            w_bar: cert.report.constants.w_bar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub controller: Controller,
    pub x0: Vec<f64>,
    pub delta: f64,
    pub r: f64,
    pub big_r: f64,
    pub eps: [f64; 3],
    pub horizon_steps: usize,
    pub substeps: usize,
    pub seed: u64,
    pub dwell_steps: usize,
    pub control_resolution: usize,
    pub solver: SolverSettings,
}

impl RunConfig {
    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if self.x0.len() != state_dim || self.x0.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!("bad initial state {:?}", self.x0)));
        }
        if norm(&self.x0) > self.big_r {
            return Err(Error::InvalidInput(format!(
                "initial state norm {} exceeds the starting radius {}",
                norm(&self.x0),
                self.big_r
            )));
        }
        if !(self.delta > 0.0) || self.substeps == 0 || self.control_resolution == 0 {
            return Err(Error::InvalidInput(
                "sampling period, substeps and control resolution must be positive".into(),
            ));
        }
        if !(self.r > 0.0 && self.r < self.big_r) {
            return Err(Error::InvalidRadii(format!("need 0 < r < R, got r = {}, R = {}", self.r, self.big_r)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    pub j_hat: f64,
    pub v: f64,
    pub margins: [f64; 4],
    pub fallback: bool,
    pub core: bool,
}

/// Counts of monitored invariant violations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violations {
    /// States beyond `R*`.
    pub boundedness: usize,
    /// Steps outside `B_{r*}` whose realized critic change exceeds `-w_bar delta/10`.
    pub critic_decay: usize,
    /// Actor-critic steps outside `B_{r*}` whose applied tuple violates C1-C4.
    pub admissibility: usize,
    /// Nominal steps outside `B_{r*}` without the sample-and-hold `V` decay.
    pub nominal_decay: usize,
    /// Critic weights outside the weight set.
    pub weight_set: usize,
}

impl Violations {
    pub fn total(&self) -> usize {
        self.boundedness + self.critic_decay + self.admissibility + self.nominal_decay + self.weight_set
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub controller: Controller,
    pub delta: f64,
    pub r: f64,
    pub records: Vec<StepRecord>,
    pub final_state: Vec<f64>,
    /// Index of the first state after which the trajectory stays in `B_r`.
    pub reach_index: Option<usize>,
    pub total_cost: Option<f64>,
    pub violations: Violations,
    /// Largest realized critic change outside `B_{r*}`.
    pub worst_critic_change: f64,
    pub fallback_steps: usize,
}

impl TrajectoryLog {
    pub fn reaching_time(&self) -> Option<f64> {
        self.reach_index.map(|k| k as f64 * self.delta)
    }

    /// Fraction of the transient steps (before the reaching index) with a
    /// saturated input component.
    pub fn saturation_fraction(&self) -> f64 {
        let end = self.reach_index.unwrap_or(self.records.len()).min(self.records.len());
        if end == 0 {
            return 0.0;
        }
        let sat = self.records[..end]
            .iter()
            .filter(|r| r.u.iter().any(|c| c.abs() >= SATURATION_LEVEL))
            .count();
        sat as f64 / end as f64
    }

    /// Number of trailing states (including the final one) inside `B_r`.
    pub fn trailing_dwell(&self) -> usize {
        let inside = |x: &[f64]| norm(x) <= self.r;
        if !inside(&self.final_state) {
            return 0;
        }
        1 + self.records.iter().rev().take_while(|rec| inside(&rec.x)).count()
    }

    pub fn max_norm(&self) -> f64 {
        self.records
            .iter()
            .map(|r| norm(&r.x))
            .chain(std::iter::once(norm(&self.final_state)))
            .fold(0.0, f64::max)
    }
}

fn reach_index(records: &[StepRecord], final_state: &[f64], r: f64) -> Option<usize> {
    if norm(final_state) > r {
        return None;
    }
    let mut idx = records.len();
    while idx > 0 && norm(&records[idx - 1].x) <= r {
        idx -= 1;
    }
    Some(idx)
}

/// Runs the closed loop from `config.x0`. Inside `B_{r*}` the nominal
/// lookahead action is applied and the critic weights are held.
pub fn run_closed_loop(config: &RunConfig, suite: &Suite) -> Result<TrajectoryLog> {
    let model = suite.model.as_ref();
    config.validate(model.state_dim())?;
    let r_star = suite.radii.r_star;
    let policy = NominalPolicy::new(
        model,
        suite.clf.clone(),
        config.control_resolution,
        config.delta,
        config.substeps,
        r_star,
    );
    let problem = AcProblem::new(
        Arc::clone(&suite.model),
        suite.clf.clone(),
        suite.activation.clone(),
        suite.weights.clone(),
        suite.q1.clone(),
        suite.q2.clone(),
        suite.reward,
        config.eps,
        config.delta,
        SolverSettings {
            control_resolution: config.control_resolution,
            ..config.solver
        },
    )?;
    let theta_match = suite.activation.theta_match.clone();

    let mut ws = Rk4Workspace::new(model.state_dim());
    let mut x = config.x0.clone();
    let mut theta_prev = theta_match.clone();
    let mut records = Vec::with_capacity(config.horizon_steps.min(1 << 16));
    let mut violations = Violations::default();
    let mut worst_critic_change = f64::NEG_INFINITY;
    let mut fallback_steps = 0;
    let mut dwell = 0;
    // Critic value at the previous state with the previous weights, kept when
    // that state was outside the core ball.
    let mut pending_decay: Option<f64> = None;

    for k in 0..config.horizon_steps {
        let n = norm(&x);
        if n > suite.radii.big_r_star {
            violations.boundedness += 1;
        }
        let core = n <= r_star;
        let (u, theta, margins, fallback) = match config.controller {
            _ if core => {
                let u = policy.lookahead(model, &x)?.u;
                let theta = if config.controller == Controller::Nominal {
                    theta_match.clone()
                } else {
                    theta_prev.clone()
                };
                let m = actor_critic::constraint_margins(&problem, &x, &u, &theta, &theta_prev);
                (u, theta, m, false)
            }
            Controller::Nominal => {
                let la = policy.lookahead(model, &x)?;
                if la.margin < 0.0 {
                    violations.nominal_decay += 1;
                }
                let m = actor_critic::constraint_margins(&problem, &x, &la.u, &theta_match, &theta_prev);
                (la.u, theta_match.clone(), m, false)
            }
            Controller::ActorCritic => {
                let step_seed = config.seed.wrapping_add(k as u64);
                let sol = actor_critic::solve_ac(&problem, &x, &theta_prev, step_seed, || {
                    Ok((policy.lookahead(model, &x)?.u, theta_match.clone()))
                })?;
                if !sol.feasible {
                    violations.admissibility += 1;
                }
                if sol.fallback_used {
                    fallback_steps += 1;
                }
                (sol.u, sol.theta, sol.margins, sol.fallback_used)
            }
        };
        if !suite.weights.contains(&theta.0) {
            violations.weight_set += 1;
        }
        let j_hat = suite.activation.value_unchecked(&theta.0, &x);
        if let Some(j_before) = pending_decay.take() {
            let change = j_hat - j_before;
            worst_critic_change = worst_critic_change.max(change);
            if change > -suite.w_bar * config.delta / 10.0 + FEAS_TOL {
                violations.critic_decay += 1;
            }
        }
        if !core {
            pending_decay = Some(j_hat);
        }
        records.push(StepRecord {
            k,
            t: k as f64 * config.delta,
            v: suite.clf.value(&x),
            x: x.clone(),
            u: u.0.clone(),
            theta: theta.0.clone(),
            j_hat,
            margins,
            fallback,
            core,
        });
        ws.advance(model, &mut x, &u.0, config.delta, config.substeps, None)
            .map_err(|e| match e {
                Error::IntegrationDiverged { .. } => Error::IntegrationDiverged { step: k },
                other => other,
            })?;
        theta_prev = theta;

        if norm(&x) <= config.r {
            dwell += 1;
            if config.dwell_steps > 0 && dwell >= config.dwell_steps {
                break;
            }
        } else {
            dwell = 0;
        }
    }
    if norm(&x) > suite.radii.big_r_star {
        violations.boundedness += 1;
    }
    // Critic change into the final state with the weights last applied.
    if let Some(j_before) = pending_decay {
        let change = suite.activation.value_unchecked(&theta_prev.0, &x) - j_before;
        worst_critic_change = worst_critic_change.max(change);
        if change > -suite.w_bar * config.delta / 10.0 + FEAS_TOL {
            violations.critic_decay += 1;
        }
    }

    let reach = reach_index(&records, &x, config.r);
    let mut log = TrajectoryLog {
        controller: config.controller,
        delta: config.delta,
        r: config.r,
        records,
        final_state: x,
        reach_index: reach,
        total_cost: None,
        violations,
        worst_critic_change,
        fallback_steps,
    };
    log.total_cost = quasi_ih_cost(&log, &suite.reward, model, config.substeps).ok();
    Ok(log)
}

/// `J_sim`: the running cost integrated over every sampling interval before
/// the reaching index, using the RK4 substeps with an augmented cost state.
pub fn quasi_ih_cost(
    log: &TrajectoryLog,
    reward: &Reward,
    model: &dyn SystemModel,
    substeps: usize,
) -> Result<f64> {
    let end = log.reach_index.ok_or(Error::CostUndefined)?;
    let mut ws = Rk4Workspace::new(model.state_dim());
    let mut x = vec![0.0; model.state_dim()];
    let mut total = 0.0;
    for rec in &log.records[..end] {
        x.copy_from_slice(&rec.x);
        total += ws.advance(model, &mut x, &rec.u, log.delta, substeps, Some(reward))?;
    }
    Ok(total)
}

/// `100 J_sim[ac] / J_sim[nominal]`; two zero costs give 100.
pub fn cost_ratio(ac: &TrajectoryLog, nominal: &TrajectoryLog) -> Result<f64> {
    let undefined = |what: &str| Error::RatioUndefined(what.to_string());
    let a = ac.total_cost.ok_or_else(|| undefined("actor-critic run did not reach the target ball"))?;
    let b = nominal.total_cost.ok_or_else(|| undefined("nominal run did not reach the target ball"))?;
    if a == 0.0 && b == 0.0 {
        return Ok(100.0);
    }
    if b == 0.0 {
        return Err(undefined("nominal cost is zero"));
    }
    Ok(100.0 * a / b)
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes the per-step records. Floats use the shortest round-trip format.
pub fn write_trajectory_csv<W: Write>(log: &TrajectoryLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for rec in &log.records {
        let mut row: Vec<String> = vec![rec.k.to_string(), rec.t.to_string()];
        row.extend(rec.x.iter().map(f64::to_string));
        row.extend(rec.u.iter().map(f64::to_string));
        row.extend(rec.theta.iter().map(f64::to_string));
        row.push(rec.j_hat.to_string());
        row.push(rec.v.to_string());
        row.extend(rec.margins.iter().map(f64::to_string));
        row.push(flag(rec.fallback).into());
        row.push(flag(rec.core).into());
        if row.len() != CSV_HEADER.len() {
            return Err(Error::InvalidInput(format!(
                "record {} has {} fields, expected {}",
                rec.k,
                row.len(),
                CSV_HEADER.len()
            )));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<StepRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::InvalidInput(format!("unexpected trajectory header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let f = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|e| Error::InvalidInput(format!("column {}: {e}", CSV_HEADER[i])))
        };
        let b = |i: usize| -> Result<bool> {
            match &row[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::InvalidInput(format!("column {}: bad flag {other}", CSV_HEADER[i]))),
            }
        };
        out.push(StepRecord {
            k: row[0]
                .parse()
                .map_err(|e| Error::InvalidInput(format!("column k: {e}")))?,
            t: f(1)?,
            x: vec![f(2)?, f(3)?, f(4)?],
            u: vec![f(5)?, f(6)?],
            theta: vec![f(7)?, f(8)?, f(9)?, f(10)?],
            j_hat: f(11)?,
            v: f(12)?,
            margins: [f(13)?, f(14)?, f(15)?, f(16)?],
            fallback: b(17)?,
            core: b(18)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourRow {
    pub x1_0: f64,
    pub x2_0: f64,
    pub ratio_pct: Option<f64>,
    pub reach_time_ac: Option<f64>,
    pub reach_time_nom: Option<f64>,
}

/// Axis ranges and density of the initial-condition grid; `x3_0` is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContourGrid {
    pub x1_range: [f64; 2],
    pub x2_range: [f64; 2],
    pub density: usize,
    pub x3_0: f64,
    /// Starting radius the contour runs are certified for.
    #[serde(rename = "R")]
    pub r_start: f64,
}

impl Default for ContourGrid {
    fn default() -> Self {
        Self {
            x1_range: [-1.2, 1.2],
            x2_range: [-1.2, 1.2],
            density: 13,
            x3_0: 0.4,
            r_start: 1.75,
        }
    }
}

impl ContourGrid {
    pub fn points(&self) -> Result<Vec<[f64; 2]>> {
        if self.density == 0 {
            return Err(Error::InvalidInput("contour grid density must be positive".into()));
        }
        let xs = crate::grid::linspace(self.x1_range[0], self.x1_range[1], self.density);
        let ys = crate::grid::linspace(self.x2_range[0], self.x2_range[1], self.density);
        Ok(xs.iter().flat_map(|&a| ys.iter().map(move |&b| [a, b])).collect())
    }
}

/// Runs both controllers from every grid point on `workers` threads; rows
/// come back in grid order.
pub fn run_contour(base: &RunConfig, suite: &Suite, grid: &ContourGrid, workers: usize) -> Result<Vec<ContourRow>> {
    let points = grid.points()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| {
        points
            .par_iter()
            .map(|&[a, b]| {
                let x0 = vec![a, b, grid.x3_0];
                let run = |controller| {
                    run_closed_loop(
                        &RunConfig {
                            controller,
                            x0: x0.clone(),
                            ..base.clone()
                        },
                        suite,
                    )
                };
                let ac = run(Controller::ActorCritic)?;
                let nom = run(Controller::Nominal)?;
                let ratio = cost_ratio(&ac, &nom);
                if let Err(e) = &ratio {
                    log::warn!("grid point ({a}, {b}): {e}");
                }
                Ok(ContourRow {
                    x1_0: a,
                    x2_0: b,
                    ratio_pct: ratio.ok(),
                    reach_time_ac: ac.reaching_time(),
                    reach_time_nom: nom.reaching_time(),
                })
            })
            .collect()
    })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_contour_csv<W: Write>(rows: &[ContourRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONTOUR_HEADER)?;
    for r in rows {
        w.write_record([
            r.x1_0.to_string(),
            r.x2_0.to_string(),
            opt_cell(r.ratio_pct),
            opt_cell(r.reach_time_ac),
            opt_cell(r.reach_time_nom),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_contour_csv<R: Read>(input: R) -> Result<Vec<ContourRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(CONTOUR_HEADER.iter().copied()) {
        return Err(Error::InvalidInput(format!("unexpected contour header {header:?}")));
    }
    let parse = |s: &str| -> Result<f64> { s.parse().map_err(|e| Error::InvalidInput(format!("{e}: {s:?}"))) };
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            parse(s).map(Some)
        }
    };
    rd.records()
        .map(|row| {
            let row = row?;
            Ok(ContourRow {
                x1_0: parse(&row[0])?,
                x2_0: parse(&row[1])?,
                ratio_pct: opt(&row[2])?,
                reach_time_ac: opt(&row[3])?,
                reach_time_nom: opt(&row[4])?,
            })
        })
        .collect()
}

/// Median and fraction below 100 % of the defined ratios.
pub fn contour_stats(rows: &[ContourRow]) -> Option<(f64, f64)> {
    let mut vals: Vec<f64> = rows.iter().filter_map(|r| r.ratio_pct).collect();
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    let median = if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    };
    let below = vals.iter().filter(|&&v| v < 100.0).count() as f64 / n as f64;
    Some((median, below))
}

/// Convenience for tests and the CLI: critic weights as a typed value.
pub fn record_weights(rec: &StepRecord) -> CriticWeights {
    CriticWeights(rec.theta.clone())
}
