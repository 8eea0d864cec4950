//! JSON experiment configuration. Every field has a default matching the
//! nonholonomic-integrator case study.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::actor_critic::SolverSettings;
use crate::bounds::{self, Certificate, EstimationSettings, PipelineInputs};
use crate::clf::{clarke_clf_with, DecayShape, GlddLadder};
use crate::critic::{case_study_activation, ActivationSpec, WeightSet};
use crate::dynamics::{InputBox, NonholonomicIntegrator, Reward, SystemModel};
use crate::error::{Error, Result};
use crate::simulator::{ContourGrid, Controller, RunConfig, Suite};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub system: String,
    pub activation: String,
    pub input_bound: f64,
    pub x0: Vec<f64>,
    pub delta: f64,
    pub r: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
    #[serde(rename = "eta_R")]
    pub eta_big_r: f64,
    pub eta_r: f64,
    pub eps: [f64; 3],
    pub horizon_steps: usize,
    pub substeps: usize,
    pub dwell_steps: usize,
    pub seed: u64,
    pub control_resolution: usize,
    pub solver: SolverSettings,
    pub reward: Reward,
    pub estimation: EstimationSettings,
    pub ladder: GlddLadder,
    pub decay_shape: DecayShape,
    pub decay_gain_candidates: Vec<f64>,
    pub delta_candidates: Vec<f64>,
    pub contour: ContourGrid,
    pub validate_steps: usize,
    pub out_dir: String,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: "nonholonomic".into(),
            activation: "clarke4".into(),
            input_bound: 1.0,
            x0: vec![-2.0, -1.5, 0.4],
            delta: 0.01,
            r: 0.1,
            big_r: 3.0,
            eta_big_r: 1.0,
            eta_r: 0.0,
            eps: [5e-8; 3],
            horizon_steps: 20_000,
            substeps: 10,
            dwell_steps: 200,
            seed: 0,
            control_resolution: 21,
            solver: SolverSettings::default(),
            reward: Reward::default(),
            estimation: EstimationSettings::default(),
            ladder: GlddLadder::default(),
            decay_shape: DecayShape::Saturated,
            decay_gain_candidates: vec![1.0, 0.5, 0.1, 0.05, 0.01],
            delta_candidates: default_delta_candidates(),
            contour: ContourGrid::default(),
            validate_steps: 2000,
            out_dir: "out".into(),
            workers: 8,
        }
    }
}

/// `{5, 2, 1} x 10^-k` from 0.1 down to 1e-12.
fn default_delta_candidates() -> Vec<f64> {
    let mut out = vec![0.1];
    for k in 2..=12 {
        let d = 10f64.powi(-k);
        out.extend([5.0 * d, 2.0 * d, d]);
    }
    out
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.system != "nonholonomic" {
            return bad(format!("unknown system {:?}", self.system));
        }
        if self.activation != "clarke4" {
            return bad(format!("unknown activation {:?}", self.activation));
        }
        if !(self.input_bound > 0.0) {
            return bad(format!("input_bound must be positive, got {}", self.input_bound));
        }
        if self.x0.len() != 3 || self.x0.iter().any(|c| !c.is_finite()) {
            return bad(format!("x0 must be three finite numbers, got {:?}", self.x0));
        }
        if !(self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.r > 0.0 && self.r < self.big_r) {
            return Err(Error::InvalidRadii(format!("need 0 < r < R, got r = {}, R = {}", self.r, self.big_r)));
        }
        if self.eps.iter().any(|e| !(*e >= 0.0)) {
            return bad(format!("eps must be nonnegative, got {:?}", self.eps));
        }
        if self.substeps == 0 || self.control_resolution == 0 || self.workers == 0 {
            return bad("substeps, control_resolution and workers must be positive".into());
        }
        if self.estimation.grid_density == 0
            || self.estimation.direction_density == 0
            || self.estimation.annulus_shells == 0
        {
            return bad("estimation densities must be positive".into());
        }
        if self.contour.density == 0 {
            return bad("contour density must be positive".into());
        }
        if !(self.contour.r_start > self.r) {
            return Err(Error::InvalidRadii(format!(
                "contour R = {} must exceed r = {}",
                self.contour.r_start, self.r
            )));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Arc<dyn SystemModel>> {
        Ok(Arc::new(NonholonomicIntegrator::new(InputBox::symmetric(2, self.input_bound))?))
    }

    pub fn activation(&self) -> ActivationSpec {
        case_study_activation()
    }

    pub fn weights(&self) -> WeightSet {
        WeightSet::case_study()
    }

    /// Runs the bounds pipeline for starting radius `big_r` and returns the
    /// certificate with the matching simulation suite.
    pub fn certify(&self, big_r: f64) -> Result<(Certificate, Suite)> {
        let model = self.model()?;
        let activation = self.activation();
        let weights = self.weights();
        let clf = clarke_clf_with(self.decay_shape, 1.0);
        let inputs = PipelineInputs {
            model: model.as_ref(),
            clf: &clf,
            activation: &activation,
            weights: &weights,
            big_r,
            r: self.r,
            eta_big_r: self.eta_big_r,
            eta_r: self.eta_r,
            estimation: self.estimation,
            ladder: self.ladder,
            decay_gain_candidates: &self.decay_gain_candidates,
            delta_candidates: &self.delta_candidates,
            control_resolution: self.control_resolution,
            substeps: self.substeps,
        };
        let cert = bounds::run_pipeline(&inputs)?;
        let suite = Suite::from_certificate(model, activation, weights, self.reward, &cert);
        Ok((cert, suite))
    }

    pub fn run_config(&self, controller: Controller) -> RunConfig {
        RunConfig {
            controller,
            x0: self.x0.clone(),
            delta: self.delta,
            r: self.r,
            big_r: self.big_r,
            eps: self.eps,
            horizon_steps: self.horizon_steps,
            substeps: self.substeps,
            seed: self.seed,
            dwell_steps: self.dwell_steps,
            control_resolution: self.control_resolution,
            solver: self.solver,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_case_study() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.x0, vec![-2.0, -1.5, 0.4]);
        assert_eq!(cfg.eps, [5e-8; 3]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"delta": 0.01, "bogus": 1}"#),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_json(r#"{"solver": {"k": 3}}"#).is_err());
    }

    #[test]
    fn bad_values_rejected() {
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"r": 5.0, "R": 1.0}"#),
            Err(Error::InvalidRadii(_))
        ));
        assert!(ExperimentConfig::from_json(r#"{"contour": {"density": 0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"system": "pendulum"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"activation": "mlp"}"#).is_err());
        assert!(ExperimentConfig::from_json("{not json").is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
