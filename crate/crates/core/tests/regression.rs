//! Pinned case-study certificate values and closed-loop summaries.

use approx::assert_relative_eq;

use stabrl_core::config::ExperimentConfig;
use stabrl_core::simulator::{self, Controller};

fn close(got: f64, want: f64) {
    assert_relative_eq!(got, want, max_relative = 1e-9);
}

#[test]
fn certificate_at_radius_three() {
    let (cert, suite) = ExperimentConfig::default().certify(3.0).unwrap();
    let radii = &cert.radii;
    let c = &cert.report.constants;

    // Closed forms: sup of the critic over B_R is 4 R^2 on the x3 axis, the
    // input enters the drift with gain sqrt(2) |x|; both carry the 1.1 safety factor.
    close(radii.j_bar, 1.1 * 4.0 * 9.0);
    close(c.lipschitz_f, 1.1 * 2f64.sqrt());
    close(c.f_bar, 1.1 * (2.0 + 2.0 * radii.big_r_star.powi(2)).sqrt());

    close(radii.big_r_star, 29.160545940467273);
    close(radii.r_star, 4.896354045205818e-7);
    close(radii.v_star, 4.774575140626314e-4);
    close(c.lipschitz_phi, 121.89108203115325);
    close(c.lipschitz_v, 124.80229915116618);
    close(c.w_bar, 4.68126993191364e-14);
    close(suite.w_bar, c.w_bar);
    assert_eq!(cert.report.delta_bar, 5e-9);
    close(cert.report.delta0_bar, 1.3597702279640915e-19);
    close(cert.report.delta1_bar, 1.3597702279640915e-19);
    close(cert.report.eps1_window[0], 1.909635444743897e-33);
    close(cert.report.eps1_window[1], 3.1827257412398285e-33);
    assert_eq!(cert.report.eps2_window[0], 0.0);
    close(cert.report.eps2_window[1], 6.365451482479657e-34);
    close(cert.report.eps3_window[0], 6.365451482479657e-34);
    close(cert.report.eps3_window[1], 1.909635444743897e-33);

    assert_eq!(cert.calibration.gain, 1.0);
    close(cert.calibration.worst_ratio, 1.4142133456450516);
    assert_eq!((cert.nominal_decay.points, cert.nominal_decay.passed), (1176, 1176));
}

#[test]
fn certificate_at_contour_radius() {
    let (cert, _) = ExperimentConfig::default().certify(1.75).unwrap();
    let radii = &cert.radii;
    let c = &cert.report.constants;
    close(radii.j_bar, 1.1 * 4.0 * 1.75 * 1.75);
    close(c.lipschitz_f, 1.1 * 2f64.sqrt());
    close(c.f_bar, 1.1 * (2.0 + 2.0 * radii.big_r_star.powi(2)).sqrt());
    close(radii.big_r_star, 17.411729836447194);
    close(radii.r_star, 8.200239632378074e-7);
    close(c.lipschitz_phi, 72.78103071634929);
    close(c.lipschitz_v, 74.51931524958094);
    close(c.w_bar, 1.3130194074461147e-13);
    assert_eq!(cert.report.delta_bar, 1e-8);
    close(cert.report.delta1_bar, 1.0686133253739846e-18);
    assert!(cert.nominal_decay.all_passed());
}

#[test]
fn case_study_runs() {
    let cfg = ExperimentConfig::default();
    let (_, suite) = cfg.certify(cfg.big_r).unwrap();
    let nom = simulator::run_closed_loop(&cfg.run_config(Controller::Nominal), &suite).unwrap();
    let ac = simulator::run_closed_loop(&cfg.run_config(Controller::ActorCritic), &suite).unwrap();

    assert_eq!(nom.reach_index, Some(343));
    assert_eq!(ac.reach_index, Some(1782));
    assert_relative_eq!(nom.total_cost.unwrap(), 12.0456, max_relative = 1e-4);
    assert_relative_eq!(ac.total_cost.unwrap(), 5.8688, max_relative = 1e-4);
    assert_eq!(nom.violations.total(), 0);
    assert_eq!(ac.violations.boundedness + ac.violations.admissibility + ac.violations.weight_set, 0);
    assert_eq!(nom.saturation_fraction(), 1.0);
    assert_eq!(ac.saturation_fraction(), 0.0);
}

#[test]
fn cost_converges_under_finer_integration() {
    let cfg = ExperimentConfig::default();
    let (_, suite) = cfg.certify(cfg.big_r).unwrap();
    for c in [Controller::Nominal, Controller::ActorCritic] {
        let log = simulator::run_closed_loop(&cfg.run_config(c), &suite).unwrap();
        let coarse = log.total_cost.unwrap();
        let fine = simulator::quasi_ih_cost(&log, &suite.reward, suite.model.as_ref(), 10 * cfg.substeps).unwrap();
        assert_relative_eq!(coarse, fine, max_relative = 1e-6);
    }
}
