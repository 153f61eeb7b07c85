//! Subcommands. Each writes its artifacts and returns a verdict with a
//! diagnostics object for the manifest.

use fbsvi::averaging::{estimate_kappa, fill_missing_averages, InferenceReport, KappaEstimate, KappaKind};
use fbsvi::bsvi::{self, BsviSolution};
use fbsvi::experiments::{self, HomogenizeTable, SweepResult, CERT_TEST_PAIRS};
use fbsvi::forward::{self, ForwardPathBatch};
use fbsvi::{euler_averaged, euler_multiscale, make_grid, sample_brownian, Scenario, Verdict};
use serde_json::{json, Value};

use crate::config::Resolved;
use crate::error::CliError;
use crate::output::{header, joined, num, opt_num, OutDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SimulateForward,
    SolveBsvi,
    AvgVerify,
    RateSweep,
    ConvergeBackward,
    Homogenize,
    Example71,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SimulateForward => "simulate-forward",
            Command::SolveBsvi => "solve-bsvi",
            Command::AvgVerify => "avg-verify",
            Command::RateSweep => "rate-sweep",
            Command::ConvergeBackward => "converge-backward",
            Command::Homogenize => "homogenize",
            Command::Example71 => "example71",
        }
    }
}

pub struct Outcome {
    pub verdict: Verdict,
    pub summary: String,
    pub diagnostics: Value,
}

pub fn run(command: Command, r: &Resolved, out: &mut OutDir) -> Result<Outcome, CliError> {
    match command {
        Command::SimulateForward => simulate_forward(r, out),
        Command::SolveBsvi => solve(r, out),
        Command::AvgVerify => avg_verify(r, out),
        Command::RateSweep => rate_sweep(r, out),
        Command::ConvergeBackward => converge(r, out),
        Command::Homogenize => homogenize(r, out),
        Command::Example71 => example71(r, out),
    }
}

/// Scenario with every missing averaged coefficient inferred.
fn with_averages(r: &Resolved) -> Result<(Scenario, InferenceReport), CliError> {
    let a = &r.config.averaging;
    Ok(fill_missing_averages(&r.scenario, &a.probe_settings(), &a.infer_schedule, a.infer_tol)?)
}

fn forward_batch(r: &Resolved, scenario: &Scenario) -> Result<(ForwardPathBatch, Option<ForwardPathBatch>), CliError> {
    let run = &r.config.run;
    let sweep = &r.sweep;
    let eps_for_budget = run.epsilon.unwrap_or(*sweep.epsilons.last().expect("validated"));
    let n = run
        .n_steps
        .unwrap_or_else(|| forward::required_steps(sweep.start_t, scenario.horizon, eps_for_budget, sweep.eta_osc));
    let grid = make_grid(sweep.start_t, scenario.horizon, n)?;
    let noise = sample_brownian(&grid, sweep.n_paths, scenario.dim_l, sweep.master_seed)?;
    let start = sweep.start();
    let averaged = if scenario.has_averaged_forward() {
        Some(euler_averaged(scenario, &start, &noise)?)
    } else {
        None
    };
    match run.epsilon {
        Some(eps) => Ok((euler_multiscale(scenario, eps, &start, &noise, sweep.eta_osc)?, averaged)),
        None => {
            let a = averaged.ok_or_else(|| CliError::config("averaged coefficients are unavailable", None))?;
            Ok((a, None))
        }
    }
}

fn simulate_forward(r: &Resolved, out: &mut OutDir) -> Result<Outcome, CliError> {
    let scenario = if r.config.run.epsilon.is_some() {
        r.scenario.clone()
    } else {
        with_averages(r)?.0
    };
    let (main, averaged) = forward_batch(r, &scenario)?;
    let mut batches = vec![&main];
    if let Some(a) = &averaged {
        batches.push(a);
    }
    let dump = r.config.run.dump_paths.min(main.n_paths());
    let m = scenario.dim_m;
    let mut rows = Vec::new();
    for b in &batches {
        let run_id = b.mode.label();
        for p in 0..dump {
            for k in 0..=b.grid().n_steps() {
                for (i, v) in b.state(p, k).iter().enumerate().take(m) {
                    rows.push(vec![
                        run_id.clone(),
                        p.to_string(),
                        k.to_string(),
                        num(b.grid().t(k)),
                        i.to_string(),
                        num(*v),
                    ]);
                }
            }
        }
    }
    out.csv("paths.csv", &header(&["run_id", "path", "step", "t", "coord", "value"]), rows)?;
    let moment = main.sup_moment(1.0);
    let distance = match (&averaged, main.mode) {
        (Some(a), forward::Mode::Oscillating(_)) => Some(forward::sup_distance_sq(&main, a, r.sweep.moment_p)?.estimate),
        _ => None,
    };
    let diagnostics = json!({
        "mode": main.mode.label(),
        "n_steps": main.grid().n_steps(),
        "n_paths": main.n_paths(),
        "sup_moment_p1": moment,
        "sup_distance_to_averaged": distance,
    });
    out.json("diagnostics.json", &diagnostics)?;
    Ok(Outcome {
        verdict: Verdict::Pass,
        summary: format!("{} paths, {} steps, {}", main.n_paths(), main.grid().n_steps(), main.mode.label()),
        diagnostics,
    })
}

fn solution_rows(sol: &BsviSolution, run_id: &str, dump: usize) -> Vec<Vec<String>> {
    let n = sol.grid.n_steps();
    let (d, w) = (sol.dim_d, sol.dim_d * sol.dim_l);
    let mut rows = Vec::new();
    for p in 0..dump.min(sol.n_paths) {
        for k in 0..=n {
            let mut row = vec![run_id.to_string(), p.to_string(), k.to_string(), num(sol.grid.t(k))];
            row.extend(sol.y_at(p, k).iter().map(|v| num(*v)));
            if k < n {
                row.extend(sol.z_at(p, k).iter().map(|v| num(*v)));
                row.extend(sol.dk_at(p, k).iter().map(|v| num(*v)));
            } else {
                row.extend(std::iter::repeat_n(String::new(), w + d));
            }
            rows.push(row);
        }
    }
    rows
}

fn solve(r: &Resolved, out: &mut OutDir) -> Result<Outcome, CliError> {
    let (scenario, inferred) = with_averages(r)?;
    let (fwd, _) = forward_batch(r, &scenario)?;
    let sol = bsvi::solve_bsvi(&fwd, &scenario, &r.sweep.bsvi_options())?;
    let (d, l) = (sol.dim_d, sol.dim_l);
    let mut names: Vec<String> = header(&["run_id", "path", "step", "t"]);
    names.extend((0..d).map(|i| format!("Y{i}")));
    names.extend((0..d * l).map(|i| format!("Z{i}")));
    names.extend((0..d).map(|i| format!("dK{i}")));
    out.csv("solution.csv", &names, solution_rows(&sol, &fwd.mode.label(), r.config.run.dump_paths))?;
    let cert = bsvi::certify(&sol, &scenario.phi, CERT_TEST_PAIRS)?;
    let bounds = bsvi::apriori_bounds(&sol);
    let point = bsvi::point_value(&sol).ok();
    let mut verdict = if cert.passed(&scenario.phi) { Verdict::Pass } else { Verdict::Fail };
    if !sol.warnings.is_empty() || point.as_ref().is_some_and(|p| p.warning.is_some()) {
        verdict = verdict.worst(Verdict::Warn);
    }
    let diagnostics = json!({
        "mode": fwd.mode.label(),
        "n_steps": sol.grid.n_steps(),
        "n_paths": sol.n_paths,
        "steps": sol.diagnostics,
        "warnings": sol.warnings,
        "certificate": cert,
        "apriori": bounds,
        "point_value": point,
        "inferred_averages": inferred,
    });
    out.json("diagnostics.json", &diagnostics)?;
    let summary = match &point {
        Some(p) => format!("Y0 = {} (se {})", joined(&p.value), joined(&p.std_error)),
        None => format!("{} paths solved", sol.n_paths),
    };
    Ok(Outcome {
        verdict,
        summary,
        diagnostics,
    })
}

fn kappa_rows(estimates: &[KappaEstimate]) -> Vec<Vec<String>> {
    estimates
        .iter()
        .flat_map(|k| {
            k.t_hats.iter().enumerate().map(move |(i, t)| {
                vec![
                    k.kind.as_str().to_string(),
                    num(*t),
                    num(k.kappa_hat[i]),
                    joined(&k.argmax_probe[i]),
                ]
            })
        })
        .collect()
}

const KAPPA_HEADER: [&str; 4] = ["kind", "T_hat", "kappa_hat", "argmax_probe"];

fn avg_verify(r: &Resolved, out: &mut OutDir) -> Result<Outcome, CliError> {
    let (scenario, inferred) = with_averages(r)?;
    let a = &r.config.averaging;
    let mut estimates = Vec::new();
    for kind in [KappaKind::Drift, KappaKind::Diffusion, KappaKind::Driver] {
        estimates.push(estimate_kappa(kind, &scenario, &a.t_hats, &a.probe_settings())?);
    }
    out.csv("kappa.csv", &header(&KAPPA_HEADER), kappa_rows(&estimates))?;
    let verdict = if estimates.iter().all(|k| k.nonincreasing) {
        Verdict::Pass
    } else {
        Verdict::Warn
    };
    let max_kappa = estimates
        .iter()
        .flat_map(|k| k.kappa_hat.iter().copied())
        .fold(0.0, f64::max);
    let diagnostics = json!({
        "kappa": estimates.iter().map(|k| json!({
            "kind": k.kind.as_str(),
            "t_hats": k.t_hats,
            "kappa_hat": k.kappa_hat,
            "nonincreasing": k.nonincreasing,
            "strictly_decreasing": k.strictly_decreasing,
        })).collect::<Vec<_>>(),
        "inferred_averages": inferred,
    });
    out.json("diagnostics.json", &diagnostics)?;
    Ok(Outcome {
        verdict,
        summary: format!("max kappa_hat {}", num(max_kappa)),
        diagnostics,
    })
}

fn sweep_rows(result: &SweepResult) -> Vec<Vec<String>> {
    result
        .rows
        .iter()
        .map(|row| {
            vec![
                num(row.epsilon),
                row.n_steps.to_string(),
                num(row.error.mean),
                num(row.error.std_error),
                num(row.error.ci_low),
                num(row.error.ci_high),
                opt_num(row.predicted.or(row.noise_floor)),
            ]
        })
        .collect()
}

fn write_rate(out: &mut OutDir, result: &SweepResult) -> Result<(), CliError> {
    let h = ["epsilon", "n_steps", "error", "std_error", "ci_low", "ci_high", "predicted"];
    out.csv("rate_forward.csv", &header(&h), sweep_rows(result))
}

fn write_backward(out: &mut OutDir, result: &SweepResult) -> Result<(), CliError> {
    let h = ["epsilon", "n_steps", "error", "std_error", "ci_low", "ci_high", "noise_floor"];
    out.csv("converge_backward.csv", &header(&h), sweep_rows(result))
}

fn write_homogenize(out: &mut OutDir, table: &HomogenizeTable, dim_m: usize) -> Result<(), CliError> {
    let mut h = header(&["point", "t"]);
    h.extend((0..dim_m).map(|i| format!("x{i}")));
    h.extend(header(&["epsilon", "n_steps", "u_eps", "u_eps_se", "u_bar", "u_bar_se", "gap", "gap_se"]));
    let rows = table.rows.iter().map(|row| {
        let mut v = vec![row.point.to_string(), num(row.t)];
        v.extend(row.x.iter().map(|x| num(*x)));
        v.extend([
            num(row.epsilon),
            row.n_steps.to_string(),
            num(row.u_eps),
            num(row.u_eps_se),
            num(row.u_bar),
            num(row.u_bar_se),
            num(row.gap.mean),
            num(row.gap.std_error),
        ]);
        v
    });
    out.csv("homogenize.csv", &h, rows)
}

fn sweep_summary(result: &SweepResult) -> String {
    match result.slope {
        Some(f) => format!("{} rows, slope {:.4}", result.rows.len(), f.slope),
        None => format!("{} rows, slope undefined", result.rows.len()),
    }
}

fn rate_sweep(r: &Resolved, out: &mut OutDir) -> Result<Outcome, CliError> {
    let (scenario, inferred) = with_averages(r)?;
    let result = experiments::rate_sweep_forward(&scenario, &r.sweep)?;
    write_rate(out, &result)?;
    let diagnostics = json!({ "sweep": result, "inferred_averages": inferred });
    out.json("diagnostics.json", &diagnostics)?;
    Ok(Outcome {
        verdict: result.verdict,
        summary: sweep_summary(&result),
        diagnostics,
    })
}

fn converge(r: &Resolved, out: &mut OutDir) -> Result<Outcome, CliError> {
    let (scenario, inferred) = with_averages(r)?;
    let result = experiments::converge_backward(&scenario, &r.sweep)?;
    write_backward(out, &result)?;
    let diagnostics = json!({ "sweep": result, "inferred_averages": inferred });
    out.json("diagnostics.json", &diagnostics)?;
    Ok(Outcome {
        verdict: result.verdict,
        summary: format!("{} rows", result.rows.len()),
        diagnostics,
    })
}

fn homogenize(r: &Resolved, out: &mut OutDir) -> Result<Outcome, CliError> {
    let (scenario, inferred) = with_averages(r)?;
    let table = experiments::homogenize_pde(&scenario, &r.points(), &r.sweep)?;
    write_homogenize(out, &table, scenario.dim_m)?;
    let diagnostics = json!({ "table": table, "inferred_averages": inferred });
    out.json("diagnostics.json", &diagnostics)?;
    Ok(Outcome {
        verdict: table.verdict,
        summary: format!("{} rows", table.rows.len()),
        diagnostics,
    })
}

fn example71(r: &Resolved, out: &mut OutDir) -> Result<Outcome, CliError> {
    let report = experiments::example71(&r.example71_config())?;
    out.csv("kappa.csv", &header(&KAPPA_HEADER), kappa_rows(&report.kappa))?;
    write_rate(out, &report.forward)?;
    write_backward(out, &report.backward)?;
    write_homogenize(out, &report.homogenize, 1)?;
    let diagnostics = json!({
        "checks": report.checks,
        "forward": report.forward,
        "backward": report.backward,
        "homogenize": report.homogenize,
    });
    out.json("diagnostics.json", &diagnostics)?;
    let failing = report.failing();
    let summary = if failing.is_empty() {
        format!("{} checks", report.checks.len())
    } else {
        format!("failing: {}", failing.join(", "))
    };
    Ok(Outcome {
        verdict: report.verdict,
        summary,
        diagnostics,
    })
}
