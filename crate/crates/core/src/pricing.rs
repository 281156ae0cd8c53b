//! Provider profit, its gradient, the trial-and-error stepsize and the
//! gradient ascent loop over owned station prices.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp::feasible_direction;
use crate::scenario::Scenario;
use crate::sensitivity::{sensitivity, SensitivityOptions};
use crate::ue::{solve_ue, solve_ue_from, UeOptions, UeSolution};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GdgsaConfig {
    pub gamma: f64,
    /// Direction metric; `None` is the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    pub alpha0: f64,
    pub k_max: usize,
    pub eps: f64,
    pub max_iters: usize,
    pub ue: UeOptions,
    #[serde(skip)]
    pub sensitivity: SensitivityOptions,
    /// Evaluate stepsize trials concurrently. The accepted step is the same
    /// as with the sequential scan.
    pub parallel_trials: bool,
    /// Record wall-clock timings in the trajectory.
    pub timings: bool,
}

impl Default for GdgsaConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            q: None,
            alpha0: 1.0,
            k_max: 50,
            eps: 1e-3,
            max_iters: 200,
            // tight enough that equilibrium noise stays below the tie threshold
            ue: UeOptions::with_tol(1e-10),
            sensitivity: SensitivityOptions::default(),
            parallel_trials: true,
            timings: false,
        }
    }
}

impl GdgsaConfig {
    pub fn validate(&self, n: usize) -> Result<DMatrix<f64>> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParams("gamma must be positive".into()));
        }
        if !(self.alpha0 > 0.0) || self.k_max == 0 {
            return Err(Error::InvalidParams("need alpha0 > 0 and k_max >= 1".into()));
        }
        let q = match &self.q {
            None => DMatrix::identity(n, n),
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch(format!("Q must be {n}x{n}")));
                }
                DMatrix::from_fn(n, n, |i, j| rows[i][j])
            }
        };
        if (&q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) || q.clone().cholesky().is_none() {
            return Err(Error::InvalidParams("Q must be symmetric positive definite".into()));
        }
        Ok(q)
    }
}

/// The provider's view of a scenario: which stations it prices and what the
/// rest of the market charges.
#[derive(Clone, Debug)]
pub struct PricingProblem<'a> {
    pub scn: &'a Scenario,
    pub owned: Vec<usize>,
    /// Full station price vector; entries of `owned` are overwritten.
    pub base_prices: Vec<f64>,
    /// Electricity cost per owned station, in price units.
    pub electricity_cost: Option<Vec<f64>>,
}

impl<'a> PricingProblem<'a> {
    /// Owned stations from the network flags, rival prices from the station file.
    pub fn new(scn: &'a Scenario) -> Self {
        Self {
            scn,
            owned: scn.net.owned_stations(),
            base_prices: scn.net.base_prices(),
            electricity_cost: None,
        }
    }

    pub fn with_electricity_cost(mut self, nu: Option<Vec<f64>>) -> Self {
        self.electricity_cost = nu;
        self
    }

    pub fn full_prices(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        if lambda.len() != self.owned.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} prices for {} owned stations",
                lambda.len(),
                self.owned.len()
            )));
        }
        let mut p = self.base_prices.clone();
        for (&m, &l) in self.owned.iter().zip(lambda) {
            p[m] = l;
        }
        Ok(p)
    }

    pub fn owned_flows(&self, sol: &UeSolution) -> Vec<f64> {
        self.owned.iter().map(|&m| sol.charge_flows[m]).collect()
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.owned.len();
        (
            vec![self.scn.params.price_lower; n],
            vec![self.scn.params.price_upper; n],
        )
    }

    pub fn profit_at(&self, lambda: &[f64], sol: &UeSolution) -> Result<f64> {
        profit(
            lambda,
            &self.owned_flows(sol),
            self.scn.params.charge_energy,
            self.electricity_cost.as_deref(),
        )
    }

    /// Equilibrium and profit at owned prices `lambda`.
    pub fn evaluate(
        &self,
        lambda: &[f64],
        warm: Option<&UeSolution>,
        opts: &UeOptions,
    ) -> Result<(UeSolution, f64)> {
        let prices = self.full_prices(lambda)?;
        let sol = match warm {
            Some(w) => solve_ue_from(self.scn, &prices, w.path_flows.clone(), opts)?,
            None => solve_ue(self.scn, &prices, opts)?,
        };
        let f = self.profit_at(lambda, &sol)?;
        Ok((sol, f))
    }
}

/// `E λᵀx̃`, or `E (λ − ν)ᵀx̃` with electricity cost.
pub fn profit(lambda: &[f64], x: &[f64], energy: f64, nu: Option<&[f64]>) -> Result<f64> {
    if lambda.len() != x.len() || nu.is_some_and(|n| n.len() != x.len()) {
        return Err(Error::DimensionMismatch(format!(
            "profit with {} prices, {} flows, {:?} electricity costs",
            lambda.len(),
            x.len(),
            nu.map(|n| n.len())
        )));
    }
    Ok(energy
        * lambda
            .iter()
            .zip(x)
            .enumerate()
            .map(|(i, (l, xi))| (l - nu.map_or(0.0, |n| n[i])) * xi)
            .sum::<f64>())
}

/// `E [(∂x̃/∂λ)ᵀ(λ − ν) + x̃]` where `grad` is the owned-rows slice.
pub fn profit_gradient(
    lambda: &[f64],
    x: &[f64],
    grad: &DMatrix<f64>,
    energy: f64,
    nu: Option<&[f64]>,
) -> Vec<f64> {
    let n = lambda.len();
    (0..n)
        .map(|k| {
            let dot: f64 = (0..n)
                .map(|m| grad[(m, k)] * (lambda[m] - nu.map_or(0.0, |v| v[m])))
                .sum();
            energy * (dot + x[k])
        })
        .collect()
}

#[derive(Clone, Debug)]
pub enum StepOutcome {
    Accepted {
        alpha: f64,
        k: usize,
        prices: Vec<f64>,
        solution: UeSolution,
        profit: f64,
    },
    Rejected,
}

fn trial_prices(lambda: &[f64], h: &[f64], alpha: f64, lo: &[f64], up: &[f64]) -> Option<Vec<f64>> {
    lambda
        .iter()
        .zip(h)
        .enumerate()
        .map(|(i, (l, d))| {
            let t = l + alpha * d;
            let tol = 1e-12 * (up[i] - lo[i]).abs().max(1.0);
            (t >= lo[i] - tol && t <= up[i] + tol).then(|| t.clamp(lo[i], up[i]))
        })
        .collect()
}

/// Strict improvement. Gains within `1e-9` relative are treated as ties,
/// which keeps equilibrium round-off from passing as progress.
pub fn improves(candidate: f64, current: f64) -> bool {
    candidate - current > 1e-9 * current.abs().max(1.0)
}

/// Trial-and-error stepsize: the largest `k α⁰` (k = 1..k̄) such that every
/// trial up to it stays within bounds and strictly beats `current_profit`.
pub fn stepsize_search(
    prob: &PricingProblem,
    lambda: &[f64],
    current: &UeSolution,
    current_profit: f64,
    h: &[f64],
    alpha0: f64,
    k_max: usize,
    opts: &UeOptions,
    parallel: bool,
) -> Result<StepOutcome> {
    let (lo, up) = prob.bounds();
    let trial = |k: usize| -> Result<Option<(Vec<f64>, UeSolution, f64)>> {
        let alpha = k as f64 * alpha0;
        let Some(p) = trial_prices(lambda, h, alpha, &lo, &up) else {
            return Ok(None);
        };
        let (sol, f) = prob.evaluate(&p, Some(current), opts)?;
        Ok(improves(f, current_profit).then_some((p, sol, f)))
    };
    let batch = if parallel {
        rayon::current_num_threads().max(1)
    } else {
        1
    };
    let mut best: Option<(usize, Vec<f64>, UeSolution, f64)> = None;
    let mut k = 1;
    'scan: while k <= k_max {
        let ks: Vec<usize> = (k..=(k + batch - 1).min(k_max)).collect();
        let results: Vec<Result<Option<(Vec<f64>, UeSolution, f64)>>> = if batch > 1 {
            ks.par_iter().map(|&k| trial(k)).collect()
        } else {
            ks.iter().map(|&k| trial(k)).collect()
        };
        for (&kk, r) in ks.iter().zip(results) {
            match r? {
                Some((p, s, f)) => best = Some((kk, p, s, f)),
                None => break 'scan,
            }
        }
        k += ks.len();
    }
    Ok(match best {
        Some((k, prices, solution, profit)) => StepOutcome::Accepted {
            alpha: k as f64 * alpha0,
            k,
            prices,
            solution,
            profit,
        },
        None => StepOutcome::Rejected,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Profit gain of the last accepted step was at most `eps`.
    Converged,
    /// No improving step, even after halving the base stepsize.
    LocalOptimum,
    /// The direction problem returned `h = 0`.
    Stationary,
    IterationCap,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriceIterate {
    pub iteration: usize,
    pub prices: Vec<f64>,
    pub profit: f64,
    /// Step taken to reach this iterate (absent for the start point).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub direction_norm: f64,
    pub gradient: Vec<f64>,
    pub ep: usize,
    pub nep: usize,
    pub eli: usize,
    pub ue_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub iterates: Vec<PriceIterate>,
    pub stop: StopReason,
    pub solution: UeSolution,
}

impl Trajectory {
    pub fn final_prices(&self) -> &[f64] {
        &self.iterates.last().expect("trajectory has a start point").prices
    }

    pub fn final_profit(&self) -> f64 {
        self.iterates.last().expect("trajectory has a start point").profit
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        self.iterates
            .iter()
            .map(|it| serde_json::to_string(it).expect("iterate serializes") + "\n")
            .collect()
    }
}

/// Gradient ascent on the provider profit from `lambda0`. `on_iterate` sees
/// every iterate as soon as it is accepted.
pub fn gdgsa_with(
    prob: &PricingProblem,
    lambda0: &[f64],
    cfg: &GdgsaConfig,
    mut on_iterate: impl FnMut(&PriceIterate),
) -> Result<Trajectory> {
    let n = prob.owned.len();
    let q = cfg.validate(n)?;
    let (lo, up) = prob.bounds();
    if lambda0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} initial prices for {n} owned stations",
            lambda0.len()
        )));
    }
    if lambda0.iter().zip(&lo).zip(&up).any(|((l, a), b)| l < a || l > b) {
        return Err(Error::InvalidParams(format!(
            "initial prices {lambda0:?} outside [{}, {}]",
            lo.first().copied().unwrap_or(f64::NAN),
            up.first().copied().unwrap_or(f64::NAN)
        )));
    }
    let clock = Instant::now();
    let seconds = |on: bool| on.then(|| clock.elapsed().as_secs_f64());
    let energy = prob.scn.params.charge_energy;

    let mut lambda = lambda0.to_vec();
    let (mut sol, mut f) = prob.evaluate(&lambda, None, &cfg.ue).map_err(|e| e.at_iteration(0))?;
    let mut iterates: Vec<PriceIterate> = Vec::new();
    let mut pending = PriceIterate {
        iteration: 0,
        prices: lambda.clone(),
        profit: f,
        alpha: None,
        direction_norm: 0.0,
        gradient: vec![],
        ep: 0,
        nep: 0,
        eli: 0,
        ue_iterations: sol.iterations,
        seconds: None,
    };

    let mut stop = StopReason::IterationCap;
    for iter in 1..=cfg.max_iters {
        let sens = sensitivity(prob.scn, &sol, &prob.owned, &cfg.sensitivity)
            .map_err(|e| e.at_iteration(iter))?;
        let owned_grad = sens.station_rows(&prob.owned);
        let x = prob.owned_flows(&sol);
        let g = profit_gradient(&lambda, &x, &owned_grad, energy, prob.electricity_cost.as_deref());
        let dir = feasible_direction(&lambda, &g, &lo, &up, cfg.gamma, &q)
            .map_err(|e| e.at_iteration(iter))?;
        let hnorm = dir.h.iter().map(|v| v * v).sum::<f64>().sqrt();

        // the previous iterate is complete once its gradient is known
        pending.gradient = g.clone();
        pending.ep = sens.sets.ep.len();
        pending.nep = sens.sets.nep.len();
        pending.eli = sens.sets.eli.len();
        pending.seconds = seconds(cfg.timings);
        on_iterate(&pending);
        iterates.push(pending.clone());

        if hnorm <= 1e-12 * (1.0 + lambda.iter().fold(0.0_f64, |a, l| a.max(l.abs()))) {
            stop = StopReason::Stationary;
            break;
        }
        let mut outcome = StepOutcome::Rejected;
        for alpha0 in [cfg.alpha0, 0.5 * cfg.alpha0] {
            outcome = stepsize_search(
                prob,
                &lambda,
                &sol,
                f,
                &dir.h,
                alpha0,
                cfg.k_max,
                &cfg.ue,
                cfg.parallel_trials,
            )
            .map_err(|e| e.at_iteration(iter))?;
            if matches!(outcome, StepOutcome::Accepted { .. }) {
                break;
            }
        }
        let StepOutcome::Accepted {
            alpha,
            prices,
            solution,
            profit: f_new,
            ..
        } = outcome
        else {
            stop = StopReason::LocalOptimum;
            break;
        };
        debug_assert!(f_new > f);
        let gain = f_new - f;
        lambda = prices;
        sol = solution;
        f = f_new;
        pending = PriceIterate {
            iteration: iter,
            prices: lambda.clone(),
            profit: f,
            alpha: Some(alpha),
            direction_norm: hnorm,
            gradient: vec![],
            ep: 0,
            nep: 0,
            eli: 0,
            ue_iterations: sol.iterations,
            seconds: None,
        };
        if gain <= cfg.eps {
            stop = StopReason::Converged;
            break;
        }
        if iter == cfg.max_iters {
            stop = StopReason::IterationCap;
        }
    }
    if iterates.last().map(|l| l.iteration) != Some(pending.iteration) {
        pending.seconds = seconds(cfg.timings);
        on_iterate(&pending);
        iterates.push(pending);
    }
    Ok(Trajectory {
        iterates,
        stop,
        solution: sol,
    })
}

pub fn gdgsa(prob: &PricingProblem, lambda0: &[f64], cfg: &GdgsaConfig) -> Result<Trajectory> {
    gdgsa_with(prob, lambda0, cfg, |_| {})
}

#[derive(Clone, Debug, Serialize)]
pub struct CompetitionResult {
    /// Final prices per provider.
    pub prices: Vec<Vec<f64>>,
    pub profits: Vec<f64>,
    pub cycles: usize,
    /// Every provider's trajectory, cycle by cycle.
    pub trajectories: Vec<Vec<Trajectory>>,
}

/// Cyclic best responses: each provider in turn runs [`gdgsa`] with the
/// others' prices fixed, until no price moves by more than `tol` in a cycle.
/// Convergence is not guaranteed.
pub fn gauss_seidel_competition(
    scn: &Scenario,
    providers: &[Vec<usize>],
    initial: &[Vec<f64>],
    cfg: &GdgsaConfig,
    tol: f64,
    max_cycles: usize,
) -> Result<CompetitionResult> {
    let mut seen = vec![false; scn.net.num_stations()];
    for set in providers {
        for &m in set {
            if m >= seen.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::InvalidParams(
                    "providers must own disjoint, existing stations".into(),
                ));
            }
        }
    }
    if initial.len() != providers.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} initial price vectors for {} providers",
            initial.len(),
            providers.len()
        )));
    }
    let mut prices: Vec<Vec<f64>> = initial.to_vec();
    let mut trajectories = vec![Vec::new(); providers.len()];
    let mut profits = vec![0.0; providers.len()];
    let mut change = f64::INFINITY;
    for cycle in 1..=max_cycles {
        change = 0.0;
        for (i, owned) in providers.iter().enumerate() {
            let mut base = scn.net.base_prices();
            for (set, p) in providers.iter().zip(&prices) {
                for (&m, &v) in set.iter().zip(p) {
                    base[m] = v;
                }
            }
            let prob = PricingProblem {
                scn,
                owned: owned.clone(),
                base_prices: base,
                electricity_cost: None,
            };
            let t = gdgsa(&prob, &prices[i], cfg)?;
            for (a, b) in t.final_prices().iter().zip(&prices[i]) {
                change = change.max((a - b).abs());
            }
            prices[i] = t.final_prices().to_vec();
            profits[i] = t.final_profit();
            trajectories[i].push(t);
        }
        if change <= tol {
            return Ok(CompetitionResult {
                prices,
                profits,
                cycles: cycle,
                trajectories,
            });
        }
    }
    Err(Error::CompetitionCycleCap {
        cycles: max_cycles,
        last_change: change,
        last_prices: prices.concat(),
    })
}
