//! Radii, grid-estimated constants and the sampling-time / relaxation
//! windows under which the actor-critic scheme is certified.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clf::{self, ClfPair, DecayCalibration, GlddLadder};
use crate::critic::{envelope_functions, ActivationSpec, WeightSet};
use crate::dynamics::{dist, norm, SystemModel};
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::grid;
use crate::nominal::{certify_delta, DecayReport, NominalPolicy};

/// Starting, target and derived radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiiSpec {
    #[serde(rename = "R")]
    pub big_r: f64,
    pub r: f64,
    #[serde(rename = "eta_R")]
    pub eta_big_r: f64,
    pub eta_r: f64,
    #[serde(rename = "R_star")]
    pub big_r_star: f64,
    pub r_star: f64,
    pub v_star: f64,
    #[serde(rename = "J_bar")]
    pub j_bar: f64,
}

impl RadiiSpec {
    pub fn check(&self) -> Result<()> {
        if !(0.0 < self.r_star && self.r_star <= self.r) {
            return Err(Error::InvalidRadii(format!(
                "core radius {} must lie in (0, r = {}]",
                self.r_star, self.r
            )));
        }
        if !(self.r < self.big_r && self.big_r < self.big_r_star) {
            return Err(Error::InvalidRadii(format!(
                "need r < R < R*, got r = {}, R = {}, R* = {}",
                self.r, self.big_r, self.big_r_star
            )));
        }
        Ok(())
    }
}

/// `R*` with `q1(R*) = J_bar + eta_R` (bisection).
pub fn enlarged_radius(q1: &Envelope, big_r: f64, eta_big_r: f64, j_bar: f64) -> Result<f64> {
    q1.inverse(j_bar + eta_big_r, big_r.max(1.0))
        .ok_or_else(|| Error::InvalidRadii(format!("q1 never reaches {}", j_bar + eta_big_r)))
}

/// Derives `R*`, `v* = q1(r)` and `r* = q2^{-1}(v*/2)`.
pub fn compute_radii(
    q1: &Envelope,
    q2: &Envelope,
    big_r: f64,
    r: f64,
    eta_big_r: f64,
    j_bar: f64,
) -> Result<RadiiSpec> {
    if !(0.0 < r && r < big_r) {
        return Err(Error::InvalidRadii(format!("need 0 < r < R, got r = {r}, R = {big_r}")));
    }
    if eta_big_r <= 0.0 {
        return Err(Error::InvalidRadii(format!("eta_R must be positive, got {eta_big_r}")));
    }
    let big_r_star = enlarged_radius(q1, big_r, eta_big_r, j_bar)?;
    const ORDER_SAMPLES: usize = 1000;
    for i in 1..=ORDER_SAMPLES {
        let s = big_r_star * i as f64 / ORDER_SAMPLES as f64;
        let (a, b) = (q1.eval(s), q2.eval(s));
        if a > b {
            return Err(Error::EnvelopeOrderViolation { at: s, q1: a, q2: b });
        }
    }
    let v_star = q1.eval(r);
    let r_star = q2
        .inverse(0.5 * v_star, big_r_star.max(1.0))
        .ok_or_else(|| Error::InvalidRadii("q2 cannot be inverted at v*/2".into()))?;
    let radii = RadiiSpec {
        big_r,
        r,
        eta_big_r,
        eta_r: 0.0,
        big_r_star,
        r_star,
        v_star,
        j_bar,
    };
    radii.check()?;
    Ok(radii)
}

/// Sampling density and safety margins for grid estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationSettings {
    /// Points per axis of the cube grid.
    pub grid_density: usize,
    /// Points per edge of the cube surface used for directions.
    pub direction_density: usize,
    /// Number of geometric shells in the annulus grid.
    pub annulus_shells: usize,
    /// Points per input axis when probing `f` over the input box.
    pub input_probe: usize,
    pub safety_factor: f64,
}

impl Default for EstimationSettings {
    fn default() -> Self {
        Self {
            grid_density: 21,
            direction_density: 5,
            annulus_shells: 12,
            input_probe: 5,
            safety_factor: 1.1,
        }
    }
}

/// Grid-estimated constants on the enlarged ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimates {
    #[serde(rename = "L_f")]
    pub lipschitz_f: f64,
    pub f_bar: f64,
    #[serde(rename = "L_phi")]
    pub lipschitz_phi: f64,
    #[serde(rename = "L_V")]
    pub lipschitz_v: f64,
    pub w_bar: f64,
    pub grid_density: usize,
}

/// Largest pairwise quotient `|g(a) - g(b)| / |a - b|`.
pub fn pairwise_lipschitz(points: &[Vec<f64>], values: &[Vec<f64>]) -> f64 {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut best = 0.0f64;
            for j in (i + 1)..points.len() {
                let d = dist(&points[i], &points[j]);
                if d < 1e-14 {
                    continue;
                }
                best = best.max(dist(&values[i], &values[j]) / d);
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// Estimates `L_f`, `f_bar`, `L_phi`, `L_V` on the ball of radius `R*` and
/// `w_bar = inf w / 2` on the annulus `r* <= |x| <= R*`. Sup-type values are
/// multiplied by the safety factor.
pub fn estimate_constants(
    model: &dyn SystemModel,
    clf: &ClfPair,
    activation: &ActivationSpec,
    radii: &RadiiSpec,
    settings: &EstimationSettings,
) -> Result<ConstantEstimates> {
    if !(radii.r_star > 0.0 && radii.r_star < radii.big_r_star) {
        return Err(Error::InvalidRadii(format!(
            "need 0 < r* < R*, got r* = {}, R* = {}",
            radii.r_star, radii.big_r_star
        )));
    }
    let n = model.state_dim();
    let ball = grid::ball_grid(n, radii.big_r_star, settings.grid_density, settings.direction_density);
    let probes = grid::control_grid(model.input_box(), settings.input_probe);
    let k = settings.safety_factor;

    let mut lipschitz_f = 0.0f64;
    let mut f_bar = 0.0f64;
    for u in &probes {
        let fx: Vec<Vec<f64>> = ball.iter().map(|x| model.rhs_vec(x, &u.0)).collect();
        f_bar = fx.iter().map(|v| norm(v)).fold(f_bar, f64::max);
        lipschitz_f = lipschitz_f.max(pairwise_lipschitz(&ball, &fx));
    }

    let phis: Vec<Vec<f64>> = ball.iter().map(|x| activation.phi(x)).collect();
    let lipschitz_phi = pairwise_lipschitz(&ball, &phis);
    let vs: Vec<Vec<f64>> = ball.iter().map(|x| vec![clf.value(x)]).collect();
    let lipschitz_v = pairwise_lipschitz(&ball, &vs);

    let annulus = grid::annulus_grid(
        n,
        radii.r_star,
        radii.big_r_star,
        settings.annulus_shells,
        settings.direction_density,
    );
    let w_bar = annulus
        .iter()
        .map(|x| 0.5 * clf.decay(x))
        .fold(f64::INFINITY, f64::min);

    Ok(ConstantEstimates {
        lipschitz_f: k * lipschitz_f,
        f_bar: k * f_bar,
        lipschitz_phi: k * lipschitz_phi,
        lipschitz_v: k * lipschitz_v,
        w_bar,
        grid_density: settings.grid_density,
    })
}

/// `J_bar = sup <theta, phi(x)>` over the ball of radius `R` and the weight set,
/// times the safety factor.
pub fn critic_sup(
    activation: &ActivationSpec,
    set: &WeightSet,
    big_r: f64,
    settings: &EstimationSettings,
) -> f64 {
    let ball = grid::ball_grid(activation.state_dim, big_r, settings.grid_density, settings.direction_density);
    let verts = set.vertices();
    let sup = ball
        .iter()
        .map(|x| {
            let phi = activation.phi(x);
            verts
                .iter()
                .map(|t| crate::dynamics::dot(&t.0, &phi))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    settings.safety_factor * sup
}

/// Closed interval `[lo, hi]`.
pub type Window = [f64; 2];

/// Everything the stability and feasibility guarantees depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    #[serde(flatten)]
    pub constants: ConstantEstimates,
    pub delta_bar: f64,
    pub delta0_bar: f64,
    pub delta1_bar: f64,
    /// Sampling period the windows below are evaluated at.
    pub window_delta: f64,
    pub eps1_window: Window,
    pub eps2_window: Window,
    pub eps3_window: Window,
}

impl BoundsReport {
    /// Fills in the sampling bounds and evaluates the windows at `delta1_bar`.
    pub fn assemble(
        constants: ConstantEstimates,
        delta_bar: f64,
        theta_bar: f64,
        v_star: f64,
    ) -> Result<Self> {
        let (delta0_bar, delta1_bar) = sampling_bounds(&constants, delta_bar, theta_bar, v_star);
        let mut report = Self {
            constants,
            delta_bar,
            delta0_bar,
            delta1_bar,
            window_delta: delta1_bar,
            eps1_window: [0.0; 2],
            eps2_window: [0.0; 2],
            eps3_window: [0.0; 2],
        };
        let (e1, e2, e3) = admissible_windows(&report, delta1_bar)?;
        report.eps1_window = e1;
        report.eps2_window = e2;
        report.eps3_window = e3;
        Ok(report)
    }
}

/// `delta0_bar = min(delta_bar, v*/(4 theta_bar L_phi L_f f_bar), w_bar/(10 theta_bar L_phi L_f f_bar))`
/// and `delta1_bar = min(delta0_bar, w_bar/(10 L_V L_f f_bar))`.
pub fn sampling_bounds(
    constants: &ConstantEstimates,
    delta_bar: f64,
    theta_bar: f64,
    v_star: f64,
) -> (f64, f64) {
    let c = constants;
    let growth = theta_bar * c.lipschitz_phi * c.lipschitz_f * c.f_bar;
    let delta0 = delta_bar
        .min(v_star / (4.0 * growth))
        .min(c.w_bar / (10.0 * growth));
    let delta1 = delta0.min(c.w_bar / (10.0 * c.lipschitz_v * c.lipschitz_f * c.f_bar));
    (delta0, delta1)
}

/// Relaxation windows at sampling period `delta`:
/// `eps1 in [3 w_bar delta/10, w_bar delta/2]`, `eps2 in [0, w_bar delta/10]`,
/// `eps3 in [w_bar delta/10, 3 w_bar delta/10]`.
pub fn admissible_windows(report: &BoundsReport, delta: f64) -> Result<(Window, Window, Window)> {
    if delta > report.delta1_bar {
        return Err(Error::SamplingTooCoarse {
            delta,
            bound: report.delta1_bar,
        });
    }
    let wd = report.constants.w_bar * delta;
    Ok((
        [0.3 * wd, 0.5 * wd],
        [0.0, 0.1 * wd],
        [0.1 * wd, 0.3 * wd],
    ))
}

pub fn in_window(value: f64, window: Window) -> bool {
    value >= window[0] && value <= window[1]
}

/// Inputs of the full bounds pipeline.
#[derive(Clone)]
pub struct PipelineInputs<'a> {
    pub model: &'a dyn SystemModel,
    /// CLF template; its decay function is replaced by the calibrated one.
    pub clf: &'a ClfPair,
    pub activation: &'a ActivationSpec,
    pub weights: &'a WeightSet,
    pub big_r: f64,
    pub r: f64,
    pub eta_big_r: f64,
    pub eta_r: f64,
    pub estimation: EstimationSettings,
    pub ladder: GlddLadder,
    pub decay_gain_candidates: &'a [f64],
    pub delta_candidates: &'a [f64],
    pub control_resolution: usize,
    pub substeps: usize,
}

/// Output of the bounds pipeline: the calibrated CLF pair, critic envelopes,
/// radii and the report.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub clf: ClfPair,
    pub q1: Envelope,
    pub q2: Envelope,
    pub radii: RadiiSpec,
    pub report: BoundsReport,
    pub calibration: DecayCalibration,
    pub nominal_decay: DecayReport,
}

pub fn run_pipeline(inp: &PipelineInputs<'_>) -> Result<Certificate> {
    let n = inp.model.state_dim();
    let settings = &inp.estimation;

    let j_bar = critic_sup(inp.activation, inp.weights, inp.big_r, settings);
    let (q1, _) = envelope_functions(inp.weights, inp.activation, 1.0);
    let big_r_star = enlarged_radius(&q1, inp.big_r, inp.eta_big_r, j_bar)?;

    // L_phi on the enlarged ball fixes q2.
    let ball = grid::ball_grid(n, big_r_star, settings.grid_density, settings.direction_density);
    let phis: Vec<Vec<f64>> = ball.iter().map(|x| inp.activation.phi(x)).collect();
    let lipschitz_phi = settings.safety_factor * pairwise_lipschitz(&ball, &phis);
    let (q1, q2) = envelope_functions(inp.weights, inp.activation, lipschitz_phi);

    let mut radii = compute_radii(&q1, &q2, inp.big_r, inp.r, inp.eta_big_r, j_bar)?;
    radii.eta_r = inp.eta_r;

    let annulus = grid::annulus_grid(
        n,
        radii.r_star,
        radii.big_r_star,
        settings.annulus_shells,
        settings.direction_density,
    );
    let controls = grid::control_grid(inp.model.input_box(), inp.control_resolution);
    let calibration = clf::calibrate_decay_gain(
        inp.model,
        inp.clf,
        &annulus,
        &controls,
        inp.ladder,
        inp.decay_gain_candidates,
    )?;
    let clf = inp.clf.with_decay_gain(calibration.gain);

    let constants = estimate_constants(inp.model, &clf, inp.activation, &radii, settings)?;

    let policy = NominalPolicy::new(
        inp.model,
        clf.clone(),
        inp.control_resolution,
        1.0,
        inp.substeps,
        radii.r_star,
    );
    let nominal_decay = certify_delta(&policy, inp.model, &annulus, inp.delta_candidates)?
        .ok_or_else(|| {
            Error::NumericalFailure(format!(
                "nominal decay fails for every sampling period in {:?}",
                inp.delta_candidates
            ))
        })?;

    let report = BoundsReport::assemble(
        constants,
        nominal_decay.delta,
        inp.weights.norm_hi,
        radii.v_star,
    )?;
    Ok(Certificate {
        clf,
        q1,
        q2,
        radii,
        report,
        calibration,
        nominal_decay,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{InputBox, NonholonomicIntegrator, SingleIntegrator};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn radii_from_quadratic_envelopes() {
        let r = compute_radii(
            &Envelope::quadratic(1.0),
            &Envelope::quadratic(4.0),
            1.0,
            0.5,
            0.1,
            4.0,
        )
        .unwrap();
        assert_abs_diff_eq!(r.big_r_star, 4.1f64.sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(r.v_star, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(r.r_star, (0.125f64 / 4.0).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn radii_from_identity_envelopes() {
        let id = Envelope::identity();
        let r = compute_radii(&id, &id, 1.0, 0.1, 0.1, 1.0).unwrap();
        assert_abs_diff_eq!(r.v_star, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(r.r_star, 0.05, epsilon = 1e-9);
    }

    #[test]
    fn envelope_order_violation_detected() {
        let err = compute_radii(
            &Envelope::quadratic(4.0),
            &Envelope::quadratic(1.0),
            1.0,
            0.5,
            0.1,
            4.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EnvelopeOrderViolation { .. }));
    }

    #[test]
    fn bad_radii_rejected() {
        let id = Envelope::identity();
        assert!(matches!(
            compute_radii(&id, &id, 1.0, 1.5, 0.1, 1.0),
            Err(Error::InvalidRadii(_))
        ));
    }

    #[test]
    fn windows_by_substitution() {
        let report = BoundsReport {
            constants: ConstantEstimates {
                lipschitz_f: 1.0,
                f_bar: 1.0,
                lipschitz_phi: 1.0,
                lipschitz_v: 1.0,
                w_bar: 1.0,
                grid_density: 0,
            },
            delta_bar: 10.0,
            delta0_bar: 0.1,
            delta1_bar: 0.1,
            window_delta: 0.1,
            eps1_window: [0.0; 2],
            eps2_window: [0.0; 2],
            eps3_window: [0.0; 2],
        };
        let (e1, e2, e3) = admissible_windows(&report, 0.1).unwrap();
        for (got, want) in [(e1, [0.03, 0.05]), (e2, [0.0, 0.01]), (e3, [0.01, 0.03])] {
            assert_abs_diff_eq!(got[0], want[0], epsilon = 1e-15);
            assert_abs_diff_eq!(got[1], want[1], epsilon = 1e-15);
        }
        assert!(matches!(
            admissible_windows(&report, 0.2),
            Err(Error::SamplingTooCoarse { .. })
        ));
        let tiny = BoundsReport {
            constants: ConstantEstimates {
                w_bar: 1e-300,
                ..report.constants
            },
            ..report
        };
        let (e1, _, e3) = admissible_windows(&tiny, 0.1).unwrap();
        assert!(e1[1] < 1e-299 && e3[1] < 1e-299);
    }

    #[test]
    fn sampling_bounds_by_substitution() {
        let c = ConstantEstimates {
            lipschitz_f: 1.0,
            f_bar: 1.0,
            lipschitz_phi: 1.0,
            lipschitz_v: 1.0,
            w_bar: 1.0,
            grid_density: 0,
        };
        let (d0, d1) = sampling_bounds(&c, 10.0, 1.0, 4.0);
        assert_abs_diff_eq!(d0, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(d1, 0.1, epsilon = 1e-15);

        // theta_bar enters inversely in the theta-dependent terms.
        let (a, _) = sampling_bounds(&c, 10.0, 1.0, 0.1);
        let (b, _) = sampling_bounds(&c, 10.0, 2.0, 0.1);
        assert_relative_eq!(b, 0.5 * a, epsilon = 1e-15);
    }

    #[test]
    fn linear_model_constants() {
        let model = SingleIntegrator::new(InputBox::symmetric(1, 1.0));
        let clf = ClfPair::new(
            |x| x[0] * x[0],
            |x| x[0] * x[0],
            Envelope::quadratic(1.0),
            Envelope::quadratic(1.0),
        );
        let act = ActivationSpec::new(
            "square",
            1,
            1,
            |x, out| out[0] = x[0] * x[0],
            Envelope::quadratic(1.0),
            crate::critic::CriticWeights(vec![1.0]),
        );
        let radii = RadiiSpec {
            big_r: 0.5,
            r: 0.1,
            eta_big_r: 0.1,
            eta_r: 0.0,
            big_r_star: 1.0,
            r_star: 0.05,
            v_star: 0.01,
            j_bar: 0.25,
        };
        let s = EstimationSettings::default();
        let c = estimate_constants(&model, &clf, &act, &radii, &s).unwrap();
        assert_abs_diff_eq!(c.f_bar / s.safety_factor, 1.0, epsilon = 1e-15);
        assert_eq!(c.lipschitz_f, 0.0);
        // w = |x|^2: infimum on the inner radius.
        assert_relative_eq!(c.w_bar, 0.5 * 0.05 * 0.05, max_relative = 0.05);

        let bad = RadiiSpec {
            r_star: 2.0,
            ..radii
        };
        assert!(matches!(
            estimate_constants(&model, &clf, &act, &bad, &s),
            Err(Error::InvalidRadii(_))
        ));
    }

    #[test]
    fn nonholonomic_f_bar_matches_analytic_maximum() {
        // Oracle: |f|^2 = |u|^2 + (x1 u2 - x2 u1)^2 <= 2 + (|x1| + |x2|)^2,
        // maximized on the ball at x1 = x2 = R/sqrt(2).
        let model = NonholonomicIntegrator::default();
        let clf = clf::clarke_clf(1.0);
        let act = crate::critic::case_study_activation();
        let radii = RadiiSpec {
            big_r: 2.0,
            r: 0.1,
            eta_big_r: 0.1,
            eta_r: 0.0,
            big_r_star: 3.0,
            r_star: 0.05,
            v_star: 0.01,
            j_bar: 1.0,
        };
        let s = EstimationSettings::default();
        let c = estimate_constants(&model, &clf, &act, &radii, &s).unwrap();
        let analytic = (2.0f64 + 18.0).sqrt();
        assert!(c.f_bar >= analytic);
        assert_relative_eq!(c.f_bar, analytic * 1.1, max_relative = 0.05);
        // Jacobian in x is [[0,0,0],[0,0,0],[u2,-u1,0]], spectral norm |u| <= sqrt 2.
        assert!(c.lipschitz_f >= 2f64.sqrt() * 0.99 && c.lipschitz_f <= 2f64.sqrt() * 1.1 + 1e-12);
    }
}
