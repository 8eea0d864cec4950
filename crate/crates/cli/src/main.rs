use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use stabrl_core::bounds::{in_window, Certificate};
use stabrl_core::config::ExperimentConfig;
use stabrl_core::dynamics::norm;
use stabrl_core::simulator::{self, Controller, TrajectoryLog};
use stabrl_core::Error;

#[derive(Parser, Debug)]
#[command(name = "stabrl", version, about = "CLF-constrained actor-critic sample-and-hold simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (JSON). Defaults reproduce the case study.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Which::Both)]
    controller: Which,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate constants, radii, sampling bounds and relaxation windows.
    Bounds,
    /// Simulate from `x0` and write trajectory CSVs.
    Simulate,
    /// Cost-ratio sweep over a grid of initial states.
    Contour,
    /// Run the invariant monitors on a short trajectory; exit 1 on violations.
    Validate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Which {
    Nominal,
    Ac,
    Both,
}

impl Which {
    fn controllers(self) -> Vec<Controller> {
        match self {
            Which::Nominal => vec![Controller::Nominal],
            Which::Ac => vec![Controller::ActorCritic],
            Which::Both => vec![Controller::Nominal, Controller::ActorCritic],
        }
    }
}

enum Failure {
    Usage(String),
    Invariant(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidRadii(_) | Error::InvalidInput(_) => Failure::Usage(e.to_string()),
            other => Failure::Invariant(other.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.display().to_string();
    }
    cfg.check()?;
    let out = PathBuf::from(&cfg.out_dir);
    match cli.command {
        Command::Bounds => cmd_bounds(&cfg, &out),
        Command::Simulate => cmd_simulate(&cfg, &out, cli.controller),
        Command::Contour => cmd_contour(&cfg, &out),
        Command::Validate => cmd_validate(&cfg, cli.controller),
    }
}

fn create_out(out: &Path) -> CmdResult {
    fs::create_dir_all(out).map_err(|e| Failure::Usage(format!("{}: {e}", out.display())))
}

fn io_fail(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Invariant(format!("{}: {e}", path.display()))
}

fn check_start(cfg: &ExperimentConfig, big_r: f64) -> CmdResult {
    let n = norm(&cfg.x0);
    if n > big_r {
        return Err(Failure::Usage(format!(
            "x0 = {:?} has norm {n} outside the starting ball of radius {big_r}",
            cfg.x0
        )));
    }
    Ok(())
}

/// Whether the configured sampling period and relaxations lie inside the
/// certified windows.
fn verdict(cfg: &ExperimentConfig, cert: &Certificate) -> Value {
    let rep = &cert.report;
    let delta_ok = cfg.delta <= rep.delta1_bar;
    let windows = [rep.eps1_window, rep.eps2_window, rep.eps3_window];
    let eps_ok: Vec<bool> = match stabrl_core::bounds::admissible_windows(rep, cfg.delta) {
        Ok((a, b, c)) => [a, b, c].iter().zip(&cfg.eps).map(|(w, e)| in_window(*e, *w)).collect(),
        Err(_) => vec![false; 3],
    };
    let certified = delta_ok && eps_ok.iter().all(|b| *b);
    json!({
        "delta": cfg.delta,
        "eps": cfg.eps,
        "delta_within_bound": delta_ok,
        "eps_within_windows": eps_ok,
        "certified": certified,
        "windows_at_delta1_bar": windows,
    })
}

fn certificate_json(cfg: &ExperimentConfig, cert: &Certificate) -> Value {
    let mut v = serde_json::to_value(&cert.report).expect("report serializes");
    let obj = v.as_object_mut().expect("report is an object");
    obj.insert("radii".into(), serde_json::to_value(cert.radii).expect("radii serialize"));
    obj.insert("decay_gain".into(), json!(cert.calibration.gain));
    obj.insert("decay_worst_ratio".into(), json!(cert.calibration.worst_ratio));
    obj.insert("nominal_decay".into(), serde_json::to_value(&cert.nominal_decay).expect("report serializes"));
    obj.insert("config_verdict".into(), verdict(cfg, cert));
    v
}

fn warn_if_uncertified(cfg: &ExperimentConfig, cert: &Certificate) {
    if !verdict(cfg, cert)["certified"].as_bool().unwrap_or(false) {
        log::warn!(
            "delta = {} and eps = {:?} lie outside the certified bounds (delta1_bar = {:e}); guarantees do not apply",
            cfg.delta,
            cfg.eps,
            cert.report.delta1_bar
        );
    }
}

fn cmd_bounds(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    let (cert, _) = cfg.certify(cfg.big_r)?;
    warn_if_uncertified(cfg, &cert);
    let text = serde_json::to_string_pretty(&certificate_json(cfg, &cert)).expect("json");
    println!("{text}");
    create_out(out)?;
    let path = out.join("bounds.json");
    fs::write(&path, text + "\n").map_err(|e| io_fail(&path, e))
}

fn summary(log: &TrajectoryLog) -> Value {
    json!({
        "controller": log.controller.label(),
        "steps": log.records.len(),
        "reaching_time": log.reaching_time(),
        "cost": log.total_cost,
        "cost_note": if log.total_cost.is_none() { Some(Error::CostUndefined.to_string()) } else { None },
        "saturation_fraction": log.saturation_fraction(),
        "fallback_steps": log.fallback_steps,
        "max_norm": log.max_norm(),
        "violations": log.violations,
    })
}

fn write_log(log: &TrajectoryLog, path: &Path) -> CmdResult {
    let file = File::create(path).map_err(|e| io_fail(path, e))?;
    simulator::write_trajectory_csv(log, BufWriter::new(file))?;
    Ok(())
}

fn cmd_simulate(cfg: &ExperimentConfig, out: &Path, which: Which) -> CmdResult {
    check_start(cfg, cfg.big_r)?;
    let (cert, suite) = cfg.certify(cfg.big_r)?;
    warn_if_uncertified(cfg, &cert);
    create_out(out)?;
    for c in which.controllers() {
        let log = simulator::run_closed_loop(&cfg.run_config(c), &suite)?;
        let path = out.join(format!("trajectory_{}.csv", c.label()));
        write_log(&log, &path)?;
        println!("{}", summary(&log));
    }
    Ok(())
}

fn cmd_contour(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    let big_r = cfg.contour.r_start;
    let (cert, suite) = cfg.certify(big_r)?;
    warn_if_uncertified(cfg, &cert);
    let mut base = cfg.run_config(Controller::Nominal);
    base.big_r = big_r;
    let rows = simulator::run_contour(&base, &suite, &cfg.contour, cfg.workers)?;
    create_out(out)?;
    let path = out.join("contour.csv");
    let file = File::create(&path).map_err(|e| io_fail(&path, e))?;
    simulator::write_contour_csv(&rows, BufWriter::new(file))?;
    let defined = rows.iter().filter(|r| r.ratio_pct.is_some()).count();
    let stats = simulator::contour_stats(&rows);
    println!(
        "{}",
        json!({
            "points": rows.len(),
            "defined": defined,
            "median_ratio_pct": stats.map(|s| s.0),
            "fraction_below_100": stats.map(|s| s.1),
        })
    );
    Ok(())
}

fn cmd_validate(cfg: &ExperimentConfig, which: Which) -> CmdResult {
    check_start(cfg, cfg.big_r)?;
    let (cert, suite) = cfg.certify(cfg.big_r)?;
    let certified = verdict(cfg, &cert)["certified"].as_bool().unwrap_or(false);
    if !certified {
        log::warn!("configuration is outside the certified windows; the critic decay monitor is reported but not enforced");
    }
    let mut failures = Vec::new();
    for c in which.controllers() {
        let mut run = cfg.run_config(c);
        run.horizon_steps = cfg.validate_steps;
        let log = simulator::run_closed_loop(&run, &suite)?;
        let v = log.violations;
        let enforced = v.boundedness
            + v.admissibility
            + v.nominal_decay
            + v.weight_set
            + if certified { v.critic_decay } else { 0 };
        println!("{}", summary(&log));
        if enforced > 0 {
            failures.push(format!("{}: {:?}", c.label(), v));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(format!("invariant violations: {}", failures.join("; "))))
    }
}
