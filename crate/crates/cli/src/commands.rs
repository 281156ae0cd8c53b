//! One function per subcommand. Each returns the artifact file names it wrote.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use evprice::coupled::{impact_csv, Strategy};
use evprice::pricing::{profit_gradient, StopReason};
use evprice::verify::FdReport;
use evprice::{
    certify_ue, coupled_fixed_point, fd_check, gdgsa_with, grid_enumerate, impact_report, load_power, load_tntp,
    sensitivity, solve_ue, GridSpec, PowerNetwork, PricingProblem, Scenario,
};

use crate::config::Settings;
use crate::{Command, Failure};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::Numerical(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn scenario(s: &Settings) -> Result<Scenario, Failure> {
    let path = |p: &Option<std::path::PathBuf>| p.clone().expect("validated");
    let (net, demand) = load_tntp(path(&s.network), path(&s.trips), path(&s.fcs))?;
    Ok(Scenario::new(net, demand, s.params(), s.paths_per_od.expect("resolved"))?)
}

fn power(s: &Settings) -> Result<PowerNetwork, Failure> {
    Ok(load_power(s.power.as_ref().expect("validated"))?)
}

fn midpoint(prob: &PricingProblem) -> Vec<f64> {
    let (lo, hi) = prob.bounds();
    lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect()
}

fn rival_prices(prob: &PricingProblem) -> Vec<f64> {
    prob.owned.iter().map(|&m| prob.base_prices[m]).collect()
}

/// `lambda` from the settings, or `fallback` when unset.
fn lambda_or(s: &Settings, fallback: Vec<f64>) -> Vec<f64> {
    s.lambda.clone().filter(|l| !l.is_empty()).unwrap_or(fallback)
}

pub fn run(cmd: Command, s: &Settings, out: &Path) -> Result<Vec<String>, Failure> {
    let scn = scenario(s)?;
    let prob = PricingProblem::new(&scn);
    match cmd {
        Command::UeSolve => ue_solve(s, &prob, out),
        Command::Sensitivity => sensitivity_cmd(s, &prob, out),
        Command::PriceOptimize => price_optimize(s, &prob, out),
        Command::CoupledRun => coupled_run(s, &prob, out),
        Command::OracleGrid => oracle_grid(s, &prob, out),
        Command::FdCheck => fd_check_cmd(s, &prob, out),
        Command::ImpactReport => impact(s, &prob, out),
    }
}

fn ue_solve(s: &Settings, prob: &PricingProblem, out: &Path) -> Result<Vec<String>, Failure> {
    let lambda = lambda_or(s, rival_prices(prob));
    let prices = prob.full_prices(&lambda)?;
    let sol = solve_ue(prob.scn, &prices, &s.ue())?;
    let cert = certify_ue(prob.scn, &sol, s.flow_eps.expect("resolved"))?;
    println!(
        "equilibrium: {} iterations, relative gap {:.2e}, certificate {}",
        sol.iterations,
        sol.rel_gap,
        if cert.pass() { "PASS" } else { "FAIL" }
    );
    write_json(&out.join("ue.json"), &json!({ "solution": sol, "certificate": cert, "certified": cert.pass() }))?;
    Ok(vec!["ue.json".into()])
}

fn sensitivity_cmd(s: &Settings, prob: &PricingProblem, out: &Path) -> Result<Vec<String>, Failure> {
    let lambda = lambda_or(s, rival_prices(prob));
    let (sol, profit) = prob.evaluate(&lambda, None, &s.ue())?;
    let sens = sensitivity(prob.scn, &sol, &prob.owned, &s.sensitivity())?;
    let owned_rows = sens.station_rows(&prob.owned);
    let grad = profit_gradient(&lambda, &prob.owned_flows(&sol), &owned_rows, prob.scn.params.charge_energy, None);
    println!("profit {profit:.6}, profit gradient {grad:?}");
    write_json(
        &out.join("sensitivity.json"),
        &json!({ "lambda": lambda, "profit": profit, "profit_gradient": grad, "sensitivity": sens }),
    )?;
    Ok(vec!["sensitivity.json".into()])
}

#[derive(Serialize)]
struct StartSummary {
    start: usize,
    initial: Vec<f64>,
    prices: Vec<f64>,
    profit: f64,
    stop: StopReason,
    iterations: usize,
}

fn price_optimize(s: &Settings, prob: &PricingProblem, out: &Path) -> Result<Vec<String>, Failure> {
    let cfg = s.gdgsa();
    let (lo, hi) = prob.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.expect("resolved"));
    let mut starts = vec![lambda_or(s, midpoint(prob))];
    for _ in 1..s.starts.expect("resolved") {
        starts.push(lo.iter().zip(&hi).map(|(a, b)| if a < b { rng.random_range(*a..*b) } else { *a }).collect());
    }
    let mut artifacts = Vec::new();
    let mut summaries = Vec::new();
    for (i, start) in starts.into_iter().enumerate() {
        let name = format!("trajectory_{i}.jsonl");
        let path = out.join(&name);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?);
        let mut io_err = None;
        // streamed so long runs can be followed while they run
        let traj = gdgsa_with(prob, &start, &cfg, |it| {
            let line = serde_json::to_string(it).expect("iterate serializes");
            if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                io_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = io_err {
            return Err(e.into());
        }
        println!(
            "start {i}: profit {:.6} at {:?} after {} iterations ({:?})",
            traj.final_profit(),
            traj.final_prices(),
            traj.iterates.len() - 1,
            traj.stop
        );
        summaries.push(StartSummary {
            start: i,
            initial: start,
            prices: traj.final_prices().to_vec(),
            profit: traj.final_profit(),
            stop: traj.stop,
            iterations: traj.iterates.len() - 1,
        });
        artifacts.push(name);
    }
    // first start wins ties
    let best = summaries
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.profit > summaries[b].profit { i } else { b });
    write_json(
        &out.join("result.json"),
        &json!({ "best_start": best, "prices": summaries[best].prices, "profit": summaries[best].profit, "starts": summaries }),
    )?;
    artifacts.push("result.json".into());
    Ok(artifacts)
}

fn coupled_run(s: &Settings, prob: &PricingProblem, out: &Path) -> Result<Vec<String>, Failure> {
    let pnet = power(s)?;
    let start = lambda_or(s, midpoint(prob));
    let r = coupled_fixed_point(prob, &pnet, &start, &s.coupling())?;
    println!(
        "converged after {} cycles: profit {:.6} at {:?}, electricity cost {:?}",
        r.cycles.len(),
        r.profit,
        r.prices,
        r.lmps
    );
    write_json(&out.join("coupled.json"), &r)?;
    Ok(vec!["coupled.json".into()])
}

fn oracle_grid(s: &Settings, prob: &PricingProblem, out: &Path) -> Result<Vec<String>, Failure> {
    let (lo, hi) = prob.bounds();
    let cap = s.grid_cap.expect("resolved");
    let grid = match s.grid_step {
        Some(step) => GridSpec { step: vec![step; lo.len()], lower: lo, upper: hi, cap },
        None => GridSpec { cap, ..GridSpec::with_points(lo, hi, s.grid_points.expect("resolved")) },
    };
    let g = grid_enumerate(prob, &grid, &s.ue())?;
    let maxima: Vec<_> = g
        .local_maxima()
        .into_iter()
        .map(|i| json!({ "prices": g.landscape[i].0, "profit": g.landscape[i].1 }))
        .collect();
    println!(
        "{} points: best profit {:.6} at {:?}, {} local maxima",
        g.landscape.len(),
        g.best_profit,
        g.best_prices,
        maxima.len()
    );
    write_text(&out.join("landscape.csv"), &g.to_csv())?;
    write_json(
        &out.join("grid.json"),
        &json!({
            "dims": g.dims,
            "points": g.landscape.len(),
            "best_prices": g.best_prices,
            "best_profit": g.best_profit,
            "local_maxima": maxima,
        }),
    )?;
    Ok(vec!["landscape.csv".into(), "grid.json".into()])
}

fn fd_check_cmd(s: &Settings, prob: &PricingProblem, out: &Path) -> Result<Vec<String>, Failure> {
    let delta = s.fd_delta.expect("resolved");
    let (lo, hi) = prob.bounds();
    let mut points = vec![lambda_or(s, midpoint(prob))];
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.expect("resolved"));
    for _ in 0..s.fd_points.expect("resolved") {
        // keep λ ± δ inside the box
        points.push(
            lo.iter()
                .zip(&hi)
                .map(|(a, b)| if b - a > 2.0 * delta { rng.random_range(a + delta..b - delta) } else { 0.5 * (a + b) })
                .collect(),
        );
    }
    let reports: Vec<FdReport> = points
        .iter()
        .map(|l| fd_check(prob, l, delta, &s.sensitivity(), &s.ue()))
        .collect::<Result<_, _>>()?;
    let pass = reports.iter().all(|r| r.pass);
    let worst = reports.iter().map(|r| r.max_abs_err).fold(0.0, f64::max);
    println!(
        "{} points, max abs difference {worst:.3e}: {}",
        reports.len(),
        if pass { "all within tolerance" } else { "DISAGREEMENT" }
    );
    write_json(&out.join("fd_check.json"), &json!({ "pass": pass, "max_abs_err": worst, "points": reports }))?;
    if !pass {
        return Err(Failure::Numerical("analytic and finite-difference gradients disagree; see fd_check.json".into()));
    }
    Ok(vec!["fd_check.json".into()])
}

fn impact(s: &Settings, prob: &PricingProblem, out: &Path) -> Result<Vec<String>, Failure> {
    let pnet = power(s)?;
    let rows = impact_report(prob, &pnet, &Strategy::standard(prob), &s.coupling(), &s.ue())?;
    let csv = impact_csv(&rows);
    print!("{csv}");
    write_text(&out.join("impact.csv"), &csv)?;
    write_json(&out.join("impact.json"), &rows)?;
    Ok(vec!["impact.csv".into(), "impact.json".into()])
}
