//! `convlab`: the closed-form dynamics checks. Writes one CSV per check, the
//! zoo trajectories, and `summary.json`; exits with code 4 if any check fails.

use std::path::Path;

use serde::Serialize;
use stein_bridge::convlab::toy1d::{run_1d, BRIDGE_OPTIMUM};
use stein_bridge::convlab::{
    bridge_1d_step, run_zoo, svd_reduction_gap, verify_prop1, verify_thm3, verify_thm4, BilinearState,
    BilinearSystem, QuadGame, Toy1DState, Trajectory,
};
use stein_bridge::numkit::RngStream;

use crate::config::{config_hash, Check, LabConfig};
use crate::output::{fmt_f64, fmt_opt, write_json, CsvOut, Meta};
use crate::CliError;

pub const SUMMARY_FILE: &str = "summary.json";

/// Bridge demo run: start and step size.
const BRIDGE_DEMO_START: [f64; 3] = [1.0, 0.0, 0.0];
const BRIDGE_DEMO_ETA: f64 = 0.5;
const BRIDGE_DEMO_STEPS: u64 = 2000;

/// Agreement required between the full run and the per-coordinate reduction.
const REDUCTION_TOL: f64 = 1e-8;

#[derive(Debug, Serialize)]
pub struct CheckResult {
    pub name: Check,
    pub passed: bool,
    pub details: serde_json::Value,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    config: &'a LabConfig,
    passed: bool,
    checks: Vec<CheckResult>,
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("reports serialize")
}

pub fn write_trajectory(path: &Path, meta: &Meta, traj: &Trajectory) -> Result<(), CliError> {
    let mut header = vec!["iteration"];
    header.extend(traj.components.iter().map(String::as_str));
    header.extend(["dist2", "ratio"]);
    let mut out = CsvOut::create(path, meta, &header)?;
    let ratios = traj.ratios();
    for (t, (state, d)) in traj.states.iter().zip(&traj.dist2).enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(state.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(*d));
        row.push(fmt_opt(t.checked_sub(1).map(|i| ratios[i])));
        out.row(row)?;
    }
    out.finish()
}

fn prop1(cfg: &LabConfig, meta: &Meta) -> Result<CheckResult, CliError> {
    let p = &cfg.prop1;
    let report = verify_prop1(&p.etas, p.starts, p.steps, p.order, cfg.seed)?;
    let mut out = CsvOut::create(
        &cfg.out_dir.join("prop1.csv"),
        meta,
        &[
            "eta",
            "bound",
            "max_ratio",
            "worst_start",
            "worst_step",
            "max_final_distance",
            "asymptotic_ratio",
            "worst_case_ratio",
            "bound_holds",
            "converged",
        ],
    )?;
    for r in &report.rows {
        out.row([
            fmt_f64(r.eta),
            fmt_f64(r.bound),
            fmt_f64(r.max_ratio),
            r.worst.0.to_string(),
            r.worst.1.to_string(),
            fmt_f64(r.max_final_distance),
            fmt_f64(r.asymptotic_ratio),
            fmt_f64(r.worst_case_ratio),
            r.bound_holds.to_string(),
            r.converged.to_string(),
        ])?;
    }
    out.finish()?;

    let start = Toy1DState::new(BRIDGE_DEMO_START[0], BRIDGE_DEMO_START[1], BRIDGE_DEMO_START[2], BRIDGE_DEMO_ETA);
    let order = p.order;
    let demo = run_1d(&start, BRIDGE_DEMO_STEPS, BRIDGE_OPTIMUM, |s| bridge_1d_step(s, order));
    write_trajectory(&cfg.out_dir.join("trajectory_bridge.csv"), meta, &demo)?;
    Ok(CheckResult {
        name: Check::Prop1,
        passed: report.passed(),
        details: json(&report.rows),
    })
}

fn zoo(cfg: &LabConfig, meta: &Meta) -> Result<CheckResult, CliError> {
    let (report, trajs) = run_zoo(&cfg.zoo);
    for (name, t) in [
        ("wgan", &trajs.wgan),
        ("reg_likelihood", &trajs.reg_likelihood),
        ("reg_entropy", &trajs.reg_entropy),
        ("anneal", &trajs.anneal),
    ] {
        write_trajectory(&cfg.out_dir.join(format!("trajectory_{name}.csv")), meta, t)?;
    }
    Ok(CheckResult {
        name: Check::Zoo,
        passed: report.as_expected(),
        details: json(&report),
    })
}

fn thm4(cfg: &LabConfig, meta: &Meta) -> Result<CheckResult, CliError> {
    let s = &cfg.thm4;
    if s.max_rank == 0 {
        return Err(CliError::Config("thm4.max_rank must be positive".into()));
    }
    let mut out = CsvOut::create(
        &cfg.out_dir.join("thm4.csv"),
        meta,
        &[
            "instance",
            "rank",
            "eta",
            "sigma_min",
            "sigma_max",
            "rate_min_max",
            "rate_max_min",
            "measured_rate",
            "measured_steps",
            "final_distance",
            "reduction_gap",
            "passed",
        ],
    )?;
    let mut passed = true;
    let mut details = Vec::new();
    for i in 0..s.instances {
        let rank = 1 + i % s.max_rank;
        let mut rng = RngStream::derive_from(cfg.seed, &format!("convlab/thm4/{i}"));
        let sys = BilinearSystem::random(rank, s.s_min, s.s_max, s.alpha, &mut rng)?.with_curvature(s.curvature);
        let start = BilinearState::random(rank, 2.0, &mut rng);
        let sigma_max = sys.svd()?.singular_values.iter().copied().fold(0.0, f64::max);
        let eta = s.eta_scale / sigma_max;
        let r = verify_thm4(&sys, &start, eta, s.steps)?;
        let gap = svd_reduction_gap(&sys, &start, eta, s.reduction_steps)?;
        let ok = r.passed() && gap < REDUCTION_TOL;
        passed &= ok;
        out.row([
            i.to_string(),
            rank.to_string(),
            fmt_f64(eta),
            fmt_f64(r.sigma_min),
            fmt_f64(r.sigma_max),
            fmt_f64(r.rate_min_max),
            fmt_f64(r.rate_max_min),
            fmt_f64(r.measured_rate),
            r.measured_steps.to_string(),
            fmt_f64(r.final_distance),
            fmt_f64(gap),
            ok.to_string(),
        ])?;
        details.push(serde_json::json!({ "rank": rank, "report": r, "reduction_gap": gap }));
    }
    out.finish()?;
    Ok(CheckResult {
        name: Check::Thm4,
        passed,
        details: serde_json::Value::Array(details),
    })
}

fn thm3(cfg: &LabConfig, meta: &Meta) -> Result<CheckResult, CliError> {
    let s = &cfg.thm3;
    let mut out = CsvOut::create(
        &cfg.out_dir.join("thm3.csv"),
        meta,
        &[
            "instance",
            "mu",
            "eta",
            "factor",
            "eta_in_range",
            "max_ratio",
            "first_violation",
            "final_distance",
            "passed",
        ],
    )?;
    let mut passed = true;
    let mut details = Vec::new();
    for i in 0..s.instances {
        let mut rng = RngStream::derive_from(cfg.seed, &format!("convlab/thm3/{i}"));
        let game = QuadGame::random(s.dim, s.mu, &mut rng)?;
        let start: Vec<f64> = (0..3 * s.dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let r = verify_thm3(&game, &start, s.iterations)?;
        passed &= r.passed();
        out.row([
            i.to_string(),
            fmt_f64(r.mu),
            fmt_f64(r.eta),
            fmt_f64(r.factor),
            r.eta_in_range.to_string(),
            fmt_f64(r.max_ratio),
            r.first_violation.map(|v| v.to_string()).unwrap_or_default(),
            fmt_f64(r.final_distance),
            r.passed().to_string(),
        ])?;
        if i == 0 {
            let traj = stein_bridge::convlab::projected_alt_sgd(&game, &start, s.iterations)?;
            write_trajectory(&cfg.out_dir.join("trajectory_thm3.csv"), meta, &traj)?;
        }
        details.push(json(&r));
    }
    out.finish()?;
    Ok(CheckResult {
        name: Check::Thm3,
        passed,
        details: serde_json::Value::Array(details),
    })
}

pub fn cmd_convlab(cfg: &LabConfig) -> Result<(), CliError> {
    let meta = Meta::new("convlab", config_hash(cfg), cfg.seed);
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut checks = Vec::new();
    for check in &cfg.checks {
        let r = match check {
            Check::Prop1 => prop1(cfg, &meta)?,
            Check::Zoo => zoo(cfg, &meta)?,
            Check::Thm4 => thm4(cfg, &meta)?,
            Check::Thm3 => thm3(cfg, &meta)?,
        };
        eprintln!("{:?}: {}", r.name, if r.passed { "pass" } else { "FAIL" });
        checks.push(r);
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| format!("{:?}", c.name)).collect();
    write_json(
        &dir.join(SUMMARY_FILE),
        &meta,
        &Summary {
            config: cfg,
            passed: failed.is_empty(),
            checks,
        },
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(failed.join(", ")))
    }
}
