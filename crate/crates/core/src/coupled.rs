//! Alternation between the provider's pricing problem and the power network
//! OPF, and the strategy comparison built on it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opf::{charging_load, solve_opf, OpfSolution, PowerNetwork};
use crate::pricing::{gdgsa, GdgsaConfig, PricingProblem, Trajectory};
use crate::scenario::Scenario;
use crate::ue::{UeOptions, UeSolution};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CouplingConfig {
    /// Multiplies `E x / t⁰` to get MW (unit conversion of the fixture).
    pub load_scale: f64,
    /// Multiplies bus LMPs to get the price unit of `λ`.
    pub lmp_scale: f64,
    /// Stop when the profit changes by at most this between cycles.
    pub eps: f64,
    pub max_cycles: usize,
    pub gdgsa: GdgsaConfig,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            load_scale: 1.0,
            lmp_scale: 1.0,
            eps: 1e-3,
            max_cycles: 20,
            gdgsa: GdgsaConfig::default(),
        }
    }
}

impl CouplingConfig {
    fn validate(&self) -> Result<()> {
        if !(self.load_scale > 0.0 && self.lmp_scale >= 0.0 && self.eps > 0.0 && self.max_cycles > 0) {
            return Err(Error::InvalidParams(
                "coupling needs load_scale > 0, lmp_scale >= 0, eps > 0 and max_cycles > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoupledCycle {
    pub cycle: usize,
    pub prices: Vec<f64>,
    /// Electricity cost of every owned station used in this cycle.
    pub lmps: Vec<f64>,
    pub profit: f64,
    pub delta: Option<f64>,
    pub opf_objective: f64,
    pub loss_mw: f64,
    pub gdgsa_iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoupledResult {
    pub prices: Vec<f64>,
    /// Electricity cost per owned station the final prices were optimized against.
    pub lmps: Vec<f64>,
    pub profit: f64,
    pub ue: UeSolution,
    pub opf: OpfSolution,
    pub cycles: Vec<CoupledCycle>,
}

/// MW drawn at each bus by the charging flows of `sol`.
pub fn bus_loads(scn: &Scenario, pnet: &PowerNetwork, sol: &UeSolution, cfg: &CouplingConfig) -> Result<Vec<f64>> {
    let load = charging_load(pnet, scn.net.stations(), &sol.charge_flows, scn.params.charge_energy)?;
    Ok(load.into_iter().map(|v| v * cfg.load_scale).collect())
}

/// OPF under the charging load of `sol`, and the resulting owned-station
/// electricity costs in price units.
pub fn electricity_costs(
    prob: &PricingProblem,
    pnet: &PowerNetwork,
    sol: &UeSolution,
    cfg: &CouplingConfig,
) -> Result<(OpfSolution, Vec<f64>)> {
    let opf = solve_opf(pnet, &bus_loads(prob.scn, pnet, sol, cfg)?)?;
    let all = opf.station_lmps(pnet, prob.scn.net.stations())?;
    let nu = prob.owned.iter().map(|&m| all[m] * cfg.lmp_scale).collect();
    Ok((opf, nu))
}

/// Repeats OPF → pricing → charging load until the profit settles. `prob`
/// supplies the owned stations and rival prices; its electricity cost is
/// replaced every cycle. Every pricing solve starts from `lambda0`, so a
/// cycle only differs from the previous one through the LMPs.
pub fn coupled_fixed_point(
    prob: &PricingProblem,
    pnet: &PowerNetwork,
    lambda0: &[f64],
    cfg: &CouplingConfig,
) -> Result<CoupledResult> {
    cfg.validate()?;
    let (mut sol, _) = prob.evaluate(lambda0, None, &cfg.gdgsa.ue)?;
    let mut cycles: Vec<CoupledCycle> = Vec::new();
    let mut start = lambda0.to_vec();
    for cycle in 1..=cfg.max_cycles {
        let (opf, nu) = electricity_costs(prob, pnet, &sol, cfg)?;
        let p = prob.clone().with_electricity_cost(Some(nu.clone()));
        // warm start: restarting lets the discrete stepsizes jump between ridge points
        let traj: Trajectory = gdgsa(&p, &start, &cfg.gdgsa)?;
        let profit = traj.final_profit();
        let delta = cycles.last().map(|c| profit - c.profit);
        let lambda = traj.final_prices().to_vec();
        cycles.push(CoupledCycle {
            cycle,
            prices: lambda.clone(),
            lmps: nu.clone(),
            profit,
            delta,
            opf_objective: opf.objective,
            loss_mw: opf.loss_mw,
            gdgsa_iterations: traj.iterates.len() - 1,
        });
        start.clone_from(&lambda);
        sol = traj.solution;
        if delta.is_some_and(|d| d.abs() <= cfg.eps) {
            return Ok(CoupledResult {
                prices: lambda,
                lmps: nu,
                profit,
                ue: sol,
                opf,
                cycles,
            });
        }
    }
    let tail = &cycles[cycles.len().saturating_sub(2)..];
    Err(Error::CoupledCycleCap {
        cycles: cfg.max_cycles,
        last_delta: cycles.last().and_then(|c| c.delta).unwrap_or(f64::NAN),
        last_prices: tail.iter().map(|c| c.prices.clone()).collect(),
        last_lmps: tail.iter().map(|c| c.lmps.clone()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    /// Prices from the coupled fixed point.
    Optimal,
    Fixed { name: String, prices: Vec<f64> },
}

impl Strategy {
    pub fn name(&self) -> &str {
        match self {
            Strategy::Optimal => "Optimal",
            Strategy::Fixed { name, .. } => name,
        }
    }

    /// Optimal plus the lower-bound, mean and upper-bound fixed prices.
    pub fn standard(prob: &PricingProblem) -> Vec<Strategy> {
        let (lo, hi) = prob.bounds();
        let mean = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        vec![
            Strategy::Optimal,
            Strategy::Fixed { name: "Lower bound".into(), prices: lo },
            Strategy::Fixed { name: "Mean".into(), prices: mean },
            Strategy::Fixed { name: "Upper bound".into(), prices: hi },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImpactRow {
    pub strategy: String,
    pub prices: Vec<f64>,
    /// `E (λ − ν)ᵀx̃` at the strategy's own equilibrium and LMPs.
    pub profit: f64,
    pub pn_loss_mw: f64,
    /// Travel plus charging time of all vehicles, times `ω`.
    pub tn_cost: f64,
}

/// `ω (Σ_a t_a x_a + Σ_m t_m x_m)`.
pub fn transport_cost(scn: &Scenario, sol: &UeSolution) -> f64 {
    let model = scn.net.latency();
    let road: f64 = scn
        .net
        .arcs()
        .iter()
        .zip(&sol.arc_flows)
        .map(|(a, &x)| a.time(model, x) * x)
        .sum();
    let charge: f64 = scn
        .net
        .stations()
        .iter()
        .zip(&sol.charge_flows)
        .map(|(m, &x)| m.time(model, x) * x)
        .sum();
    scn.params.time_value * (road + charge)
}

fn row(
    prob: &PricingProblem,
    pnet: &PowerNetwork,
    name: &str,
    prices: &[f64],
    sol: &UeSolution,
    cfg: &CouplingConfig,
) -> Result<ImpactRow> {
    let (opf, nu) = electricity_costs(prob, pnet, sol, cfg)?;
    let profit = prob.clone().with_electricity_cost(Some(nu)).profit_at(prices, sol)?;
    Ok(ImpactRow {
        strategy: name.to_string(),
        prices: prices.to_vec(),
        profit,
        pn_loss_mw: opf.loss_mw,
        tn_cost: transport_cost(prob.scn, sol),
    })
}

/// One row per strategy. Fixed strategies are evaluated concurrently; the
/// optimal one runs the coupled loop from the midpoint of the price box.
pub fn impact_report(
    prob: &PricingProblem,
    pnet: &PowerNetwork,
    strategies: &[Strategy],
    cfg: &CouplingConfig,
    ue: &UeOptions,
) -> Result<Vec<ImpactRow>> {
    cfg.validate()?;
    strategies
        .par_iter()
        .map(|s| match s {
            Strategy::Optimal => {
                let (lo, hi) = prob.bounds();
                let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
                let r = coupled_fixed_point(prob, pnet, &mid, cfg)?;
                row(prob, pnet, s.name(), &r.prices, &r.ue, cfg)
            }
            Strategy::Fixed { name, prices } => {
                let (sol, _) = prob.evaluate(prices, None, ue)?;
                row(prob, pnet, name, prices, &sol, cfg)
            }
        })
        .collect()
}

/// CSV with columns `strategy,profit,pn_loss_mw,tn_cost`.
pub fn impact_csv(rows: &[ImpactRow]) -> String {
    let mut out = String::from("strategy,profit,pn_loss_mw,tn_cost\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.strategy, r.profit, r.pn_loss_mw, r.tn_cost));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::opf::parse_power;

    /// Feeder whose LMP is the slack price everywhere.
    fn flat_grid(price: f64) -> PowerNetwork {
        let src = format!(
            "bus 1 0 0 1 1\nbus 2 0 0 0.5 1.5\nline 1 2 1e-7 1e-7 0 1000\nslack 1 {price}\nfcsmap 2 2\nfcsmap 3 2\n"
        );
        parse_power(&src, "flat").unwrap()
    }

    #[test]
    fn constant_lmp_decouples() {
        let s = fixtures::illustrative();
        let prob = PricingProblem::new(&s);
        let pnet = flat_grid(0.5);
        let cfg = CouplingConfig::default();
        let r = coupled_fixed_point(&prob, &pnet, &[4.125], &cfg).unwrap();
        assert_eq!(r.cycles.len(), 2);
        assert!((r.lmps[0] - 0.5).abs() < 1e-4);
        // cycle 1 is the standalone run; the warm-started cycle 2 only refines it within eps
        let alone = gdgsa(&prob.clone().with_electricity_cost(Some(r.lmps.clone())), &[4.125], &cfg.gdgsa).unwrap();
        assert!((alone.final_prices()[0] - r.cycles[0].prices[0]).abs() < 1e-6);
        assert!(r.profit >= alone.final_profit() - 1e-9);
        assert!(r.profit - alone.final_profit() <= cfg.eps);
    }

    #[test]
    fn impact_rows_and_loss_identity() {
        let s = fixtures::illustrative();
        let prob = PricingProblem::new(&s);
        let src = "bus 1 0 0 1 1\nbus 2 0.5 0.1 0.5 1.5\nline 1 2 0.02 0.04 0 100\nslack 1 2\nfcsmap 2 2\nfcsmap 3 2\n";
        let pnet = parse_power(src, "p").unwrap();
        let cfg = CouplingConfig::default();
        let same = Strategy::Fixed { name: "a".into(), prices: vec![3.0] };
        let rows = impact_report(&prob, &pnet, &[same.clone(), same], &cfg, &UeOptions::default()).unwrap();
        assert_eq!(rows[0].profit, rows[1].profit);
        assert_eq!(rows[0].pn_loss_mw, rows[1].pn_loss_mw);
        let csv = impact_csv(&rows);
        assert!(csv.starts_with("strategy,profit,pn_loss_mw,tn_cost\n"));
        assert_eq!(csv.lines().count(), 3);

        let (sol, _) = prob.evaluate(&[3.0], None, &UeOptions::default()).unwrap();
        let (opf, _) = electricity_costs(&prob, &pnet, &sol, &cfg).unwrap();
        let line = &pnet.lines[0];
        assert!((opf.loss_mw - line.r * opf.i[0] * pnet.base_mva).abs() < 1e-6);
    }

    #[test]
    fn zero_demand_converges_at_zero_profit() {
        let base = fixtures::illustrative();
        let mut pairs = base.demand.pairs.clone();
        // no EV demand at all: every trip is a gasoline trip
        for p in &mut pairs {
            p.class = crate::network::VehicleClass::Gv;
        }
        let demand = crate::network::OdDemand::new(pairs).unwrap();
        let s = Scenario::new(base.net, demand, base.params, 2).unwrap();
        let prob = PricingProblem::new(&s);
        let r = coupled_fixed_point(&prob, &flat_grid(0.5), &[1.0], &CouplingConfig::default()).unwrap();
        assert_eq!(r.cycles.len(), 2);
        assert_eq!(r.profit, 0.0);
    }

    #[test]
    fn transport_cost_of_illustrative() {
        // f = [0.75, 0.75, 1, 1] at unit prices; every arc costs 1 + x
        let s = fixtures::illustrative();
        let prob = PricingProblem::new(&s);
        let (sol, _) = prob.evaluate(&[1.0], None, &UeOptions::with_tol(1e-12)).unwrap();
        let expect: f64 = sol
            .arc_flows
            .iter()
            .chain(&sol.charge_flows)
            .map(|x| (1.0 + x) * x)
            .sum();
        assert!((transport_cost(&s, &sol) - expect).abs() < 1e-9);
    }
}
