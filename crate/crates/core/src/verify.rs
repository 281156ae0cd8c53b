//! Brute-force oracles: price-grid enumeration, finite-difference gradients
//! and an equilibrium certificate.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opf::{branch_flow_sweep, PowerNetwork};
use crate::pricing::PricingProblem;
use crate::scenario::Scenario;
use crate::sensitivity::{sensitivity, SensitivityOptions};
use crate::ue::{generalized_costs, UeOptions, UeSolution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub step: Vec<f64>,
    /// Refuse grids with more points than this.
    pub cap: usize,
}

impl GridSpec {
    pub const DEFAULT_CAP: usize = 1_000_000;

    /// `points` evenly spaced values per dimension, endpoints included.
    pub fn with_points(lower: Vec<f64>, upper: Vec<f64>, points: usize) -> Self {
        let step = lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| if points > 1 { (u - l) / (points - 1) as f64 } else { 1.0 })
            .collect();
        Self {
            lower,
            upper,
            step,
            cap: Self::DEFAULT_CAP,
        }
    }

    /// Points per dimension.
    pub fn dims(&self) -> Vec<usize> {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(&self.step)
            .map(|((l, u), s)| ((u - l) / s + 1e-9).floor() as usize + 1)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        let n = self.lower.len();
        if self.upper.len() != n || self.step.len() != n {
            return Err(Error::DimensionMismatch("grid bounds and steps differ in length".into()));
        }
        for i in 0..n {
            if !(self.step[i] > 0.0) || !(self.lower[i] <= self.upper[i]) {
                return Err(Error::InvalidParams(format!(
                    "grid dimension {i}: need step > 0 and lower <= upper"
                )));
            }
        }
        let points = self
            .dims()
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .unwrap_or(usize::MAX);
        if points > self.cap {
            return Err(Error::GridTooLarge {
                points,
                cap: self.cap,
            });
        }
        Ok(())
    }

    /// Multi-index of point `i`, last dimension fastest.
    fn unravel(&self, dims: &[usize], mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; dims.len()];
        for d in (0..dims.len()).rev() {
            idx[d] = i % dims[d];
            i /= dims[d];
        }
        idx
    }

    fn point(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(d, &k)| (self.lower[d] + k as f64 * self.step[d]).min(self.upper[d]))
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GridResult {
    pub best_prices: Vec<f64>,
    pub best_profit: f64,
    pub dims: Vec<usize>,
    /// `(prices, profit)` in lexicographic grid order.
    pub landscape: Vec<(Vec<f64>, f64)>,
}

impl GridResult {
    /// Header `lambda_1,…,lambda_n,profit`, one row per grid point.
    pub fn to_csv(&self) -> String {
        let n = self.dims.len();
        let mut out: String = (1..=n).map(|i| format!("lambda_{i},")).collect();
        out.push_str("profit\n");
        for (p, f) in &self.landscape {
            for v in p {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{f}\n"));
        }
        out
    }

    /// Distinct end points of steepest-ascent walks over the grid (Moore
    /// neighbourhood, strict improvement) started from every point.
    pub fn local_maxima(&self) -> Vec<usize> {
        let dims = &self.dims;
        let n = dims.len();
        let profit = |i: usize| self.landscape[i].1;
        let ravel = |idx: &[usize]| idx.iter().zip(dims).fold(0, |acc, (&k, &d)| acc * d + k);
        let neighbours = |i: usize| -> Vec<usize> {
            let mut idx = vec![0; n];
            let mut r = i;
            for d in (0..n).rev() {
                idx[d] = r % dims[d];
                r /= dims[d];
            }
            let mut out = Vec::new();
            for code in 0..3usize.pow(n as u32) {
                let mut c = code;
                let mut nb = idx.clone();
                let mut ok = true;
                let mut moved = false;
                for d in 0..n {
                    let off = (c % 3) as isize - 1;
                    c /= 3;
                    let v = nb[d] as isize + off;
                    if v < 0 || v >= dims[d] as isize {
                        ok = false;
                        break;
                    }
                    moved |= off != 0;
                    nb[d] = v as usize;
                }
                if ok && moved {
                    out.push(ravel(&nb));
                }
            }
            out
        };
        let mut ends: Vec<usize> = (0..self.landscape.len())
            .into_par_iter()
            .map(|mut i| loop {
                let best = neighbours(i)
                    .into_iter()
                    .max_by(|&a, &b| profit(a).total_cmp(&profit(b)).then(b.cmp(&a)));
                match best {
                    Some(j) if profit(j) > profit(i) => i = j,
                    _ => break i,
                }
            })
            .collect();
        ends.sort_unstable();
        ends.dedup();
        ends
    }
}

/// Solves the equilibrium at every grid point and keeps the most profitable;
/// ties go to the lexicographically smallest price vector.
pub fn grid_enumerate(prob: &PricingProblem, grid: &GridSpec, opts: &UeOptions) -> Result<GridResult> {
    grid.validate()?;
    if grid.lower.len() != prob.owned.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}-dimensional grid for {} owned stations",
            grid.lower.len(),
            prob.owned.len()
        )));
    }
    let dims = grid.dims();
    let total: usize = dims.iter().product();
    let landscape: Vec<(Vec<f64>, f64)> = (0..total)
        .into_par_iter()
        .map(|i| {
            let p = grid.point(&grid.unravel(&dims, i));
            let (_, f) = prob.evaluate(&p, None, opts)?;
            Ok((p, f))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, (_, f)) in landscape.iter().enumerate() {
        if *f > landscape[best].1 {
            best = i;
        }
    }
    Ok(GridResult {
        best_prices: landscape[best].0.clone(),
        best_profit: landscape[best].1,
        dims,
        landscape,
    })
}

/// Central differences of all charging flows with respect to the owned
/// prices: one row per station, one column per owned price.
pub fn fd_gradient(prob: &PricingProblem, lambda: &[f64], delta: f64, opts: &UeOptions) -> Result<DMatrix<f64>> {
    let n = prob.owned.len();
    if lambda.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} prices for {n} owned stations",
            lambda.len()
        )));
    }
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut up = lambda.to_vec();
            up[k] += delta;
            let mut dn = lambda.to_vec();
            dn[k] -= delta;
            let (a, _) = prob.evaluate(&up, None, opts)?;
            let (b, _) = prob.evaluate(&dn, None, opts)?;
            Ok(a.charge_flows
                .iter()
                .zip(&b.charge_flows)
                .map(|(x, y)| (x - y) / (2.0 * delta))
                .collect())
        })
        .collect::<Result<_>>()?;
    let m = prob.scn.net.num_stations();
    Ok(DMatrix::from_fn(m, n, |i, k| cols[k][i]))
}

/// Agreement rule between analytic and finite-difference derivatives:
/// `|a − b| ≤ max(2e-3, 1% of the larger magnitude)`.
pub fn fd_agrees(a: f64, b: f64) -> bool {
    (a - b).abs() <= (0.01 * a.abs().max(b.abs())).max(2e-3)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdEntry {
    pub station: usize,
    /// Column index into the owned prices.
    pub owned: usize,
    pub analytic: f64,
    pub fd: f64,
    pub pass: bool,
}

/// Entry-wise comparison of the analytic gradient with central differences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdReport {
    pub lambda: Vec<f64>,
    pub delta: f64,
    /// Whether the Richardson estimate from `delta` and `delta / 10` was used.
    pub richardson: bool,
    pub entries: Vec<FdEntry>,
    pub max_abs_err: f64,
    pub pass: bool,
}

fn fd_entries(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> Vec<FdEntry> {
    let mut out = Vec::with_capacity(analytic.len());
    for i in 0..analytic.nrows() {
        for k in 0..analytic.ncols() {
            let (a, b) = (analytic[(i, k)], fd[(i, k)]);
            out.push(FdEntry { station: i, owned: k, analytic: a, fd: b, pass: fd_agrees(a, b) });
        }
    }
    out
}

/// Compares `sensitivity` with `fd_gradient` at `lambda`. When an entry
/// disagrees at `delta`, the differences are repeated at `delta / 10` and
/// the Richardson combination of the two is used instead.
pub fn fd_check(
    prob: &PricingProblem,
    lambda: &[f64],
    delta: f64,
    sens: &SensitivityOptions,
    opts: &UeOptions,
) -> Result<FdReport> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParams(format!("fd step must be positive, got {delta}")));
    }
    let (sol, _) = prob.evaluate(lambda, None, opts)?;
    let analytic = sensitivity(prob.scn, &sol, &prob.owned, sens)?.grad;
    let coarse = fd_gradient(prob, lambda, delta, opts)?;
    let mut entries = fd_entries(&analytic, &coarse);
    let mut richardson = false;
    if entries.iter().any(|e| !e.pass) {
        // central differences err as δ², so (100 D(δ/10) − D(δ)) / 99 cancels it
        let fine = fd_gradient(prob, lambda, 0.1 * delta, opts)?;
        let extrapolated = (fine * 100.0 - coarse) / 99.0;
        entries = fd_entries(&analytic, &extrapolated);
        richardson = true;
    }
    let max_abs_err = entries.iter().map(|e| (e.analytic - e.fd).abs()).fold(0.0, f64::max);
    Ok(FdReport {
        lambda: lambda.to_vec(),
        delta,
        richardson,
        pass: entries.iter().all(|e| e.pass),
        entries,
        max_abs_err,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(value: f64, limit: f64) -> Self {
        Self {
            value,
            limit,
            pass: value <= limit,
        }
    }
}

/// Equilibrium conditions checked on a solution, each with its residual.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificate {
    /// `‖Δᵀc(x) − π − Λᵀμ‖∞` with `π = c − Λᵀμ` and `c` as reported.
    pub stationarity: Check,
    /// `max(0, −min π)`.
    pub dual_feasibility: Check,
    /// `|πᵀf| / (‖c‖‖f‖)`.
    pub complementarity: Check,
    /// `max(‖Λf − D‖∞, max(0, −min f))`.
    pub feasibility: Check,
    /// Largest `(c_p − μ_w)/μ_w` over paths with flow above `flow_eps`.
    pub wardrop: Check,
}

impl Certificate {
    pub fn pass(&self) -> bool {
        self.stationarity.pass
            && self.dual_feasibility.pass
            && self.complementarity.pass
            && self.feasibility.pass
            && self.wardrop.pass
    }
}

pub fn certify_ue(scn: &Scenario, sol: &UeSolution, flow_eps: f64) -> Result<Certificate> {
    let ps = &scn.paths;
    let f = &sol.path_flows;
    if f.len() != ps.len() || sol.path_costs.len() != ps.len() {
        return Err(Error::DimensionMismatch("solution does not match the path set".into()));
    }
    let x = ps.generalized_flows(f);
    let c_true = ps.path_costs(&generalized_costs(scn, &x, &sol.prices)?.stacked());
    let mu = &sol.od_min_costs;
    let pi: Vec<f64> = ps
        .paths()
        .iter()
        .enumerate()
        .map(|(p, path)| sol.path_costs[p] - mu[path.od])
        .collect();
    let scale = sol.path_costs.iter().fold(1.0_f64, |a, c| a.max(c.abs()));
    let stationarity = c_true
        .iter()
        .zip(&pi)
        .zip(ps.paths())
        .map(|((ct, p), path)| (ct - p - mu[path.od]).abs())
        .fold(0.0, f64::max);
    let min_pi = pi.iter().cloned().fold(f64::INFINITY, f64::min);
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = (norm(&sol.path_costs) * norm(f)).max(f64::MIN_POSITIVE);
    let comp = pi.iter().zip(f).map(|(a, b)| a * b).sum::<f64>().abs() / denom;
    let totals = ps.od_totals(f);
    let demand_resid = totals
        .iter()
        .zip(&scn.demand.pairs)
        .map(|(t, p)| (t - p.demand).abs())
        .fold(0.0, f64::max);
    let negativity = f.iter().fold(0.0_f64, |a, &v| a.max(-v));
    let wardrop = ps
        .paths()
        .iter()
        .enumerate()
        .filter(|(p, _)| f[*p] > flow_eps)
        .map(|(p, path)| (sol.path_costs[p] - mu[path.od]) / mu[path.od].abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(Certificate {
        stationarity: Check::at_most(stationarity, 1e-8 * scale),
        dual_feasibility: Check::at_most((-min_pi).max(0.0), 1e-6),
        complementarity: Check::at_most(comp, 1e-6),
        feasibility: Check::at_most(demand_resid.max(negativity), 1e-8),
        wardrop: Check::at_most(wardrop, 1e-4),
    })
}

/// Cheapest dispatch found by the OPF brute force.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BruteDispatch {
    pub objective: f64,
    pub pg: f64,
    pub qg: f64,
}

/// Cost of dispatch `(pg, qg)` from the exact branch-flow solution, or
/// infinity when a voltage or current bound is violated.
fn dispatch_cost(pnet: &PowerNetwork, extra: &[f64], pg: f64, qg: f64) -> f64 {
    let gen = &pnet.gens[0];
    let gb = pnet.bus_index(gen.bus).expect("validated generator bus");
    let mut inj_p: Vec<f64> = pnet.buses.iter().zip(extra).map(|(b, e)| -(b.pd + e)).collect();
    let mut inj_q: Vec<f64> = pnet.buses.iter().map(|b| -b.qd).collect();
    inj_p[gb] += pg;
    inj_q[gb] += qg;
    let bf = branch_flow_sweep(pnet, &inj_p, &inj_q);
    let u_ok = pnet.buses.iter().zip(&bf.u).all(|(b, &v)| v >= b.umin - 1e-9 && v <= b.umax + 1e-9);
    let i_ok = pnet.lines.iter().zip(&bf.i).all(|(l, &v)| v >= l.imin - 1e-9 && v <= l.imax + 1e-9);
    if !(u_ok && i_ok) || !bf.p_slack.is_finite() {
        return f64::INFINITY;
    }
    gen.c2 * pg * pg + gen.c1 * pg + pnet.slack_cost * bf.p_slack
}

/// OPF oracle for feeders with one generator: a 21×21 grid over
/// `(pg, qg)` shrunk around the incumbent 40 times, each point costed by the
/// exact branch-flow sweep. `extra` is the charging load per bus in MW.
pub fn opf_brute_force(pnet: &PowerNetwork, extra: &[f64]) -> Result<BruteDispatch> {
    if pnet.gens.len() != 1 {
        return Err(Error::InvalidParams(format!(
            "brute-force dispatch needs exactly one generator, found {}",
            pnet.gens.len()
        )));
    }
    if extra.len() != pnet.buses.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} loads for {} buses",
            extra.len(),
            pnet.buses.len()
        )));
    }
    let gen = &pnet.gens[0];
    let (pmin, pmax) = (gen.pmin.unwrap_or(0.0), gen.pmax.unwrap_or(500.0));
    let (mut plo, mut phi) = (pmin, pmax);
    let (mut qlo, mut qhi) = (-300.0, 300.0);
    let mut best = BruteDispatch { objective: f64::INFINITY, pg: 0.0, qg: 0.0 };
    for _ in 0..40 {
        for a in 0..=20 {
            for b in 0..=20 {
                let pg = plo + (phi - plo) * a as f64 / 20.0;
                let qg = qlo + (qhi - qlo) * b as f64 / 20.0;
                let f = dispatch_cost(pnet, extra, pg, qg);
                if f < best.objective {
                    best = BruteDispatch { objective: f, pg, qg };
                }
            }
        }
        let (dp, dq) = ((phi - plo) / 5.0, (qhi - qlo) / 5.0);
        plo = (best.pg - dp).max(pmin);
        phi = (best.pg + dp).min(pmax);
        qlo = best.qg - dq;
        qhi = best.qg + dq;
    }
    if best.objective.is_infinite() {
        return Err(Error::InfeasibleOpf("no grid dispatch satisfies the bounds".into()));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::ue::solve_ue;

    #[test]
    fn one_dimensional_grid_counts() {
        let s = fixtures::illustrative();
        let prob = PricingProblem::new(&s);
        let grid = GridSpec {
            lower: vec![0.0],
            upper: vec![2.0],
            step: vec![0.5],
            cap: 100,
        };
        let r = grid_enumerate(&prob, &grid, &UeOptions::default()).unwrap();
        assert_eq!(r.landscape.len(), 5);
        let prices: Vec<f64> = r.landscape.iter().map(|(p, _)| p[0]).collect();
        assert_eq!(prices, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        // profit increases on [0, 2] since the optimum is near 4.9
        assert_eq!(r.best_prices, vec![2.0]);
        assert_eq!(r.to_csv().lines().count(), 6);
    }

    #[test]
    fn single_point_grid() {
        let s = fixtures::illustrative();
        let prob = PricingProblem::new(&s);
        let grid = GridSpec {
            lower: vec![3.0],
            upper: vec![3.0],
            step: vec![1.0],
            cap: 10,
        };
        let r = grid_enumerate(&prob, &grid, &UeOptions::default()).unwrap();
        assert_eq!(r.best_prices, vec![3.0]);
        assert_eq!(r.local_maxima(), vec![0]);
    }

    #[test]
    fn grid_cap() {
        let s = fixtures::nguyen_dupuis();
        let prob = PricingProblem::new(&s);
        let mut grid = GridSpec::with_points(vec![200.0; 2], vec![230.0; 2], 2000);
        grid.cap = 1000;
        assert!(matches!(
            grid_enumerate(&prob, &grid, &UeOptions::default()),
            Err(Error::GridTooLarge { points: 4_000_000, .. })
        ));
    }

    #[test]
    fn hill_climb_census() {
        let r = GridResult {
            best_prices: vec![],
            best_profit: 0.0,
            dims: vec![7],
            landscape: [0.0, 1.0, 2.0, 1.0, 3.0, 4.0, 0.5]
                .iter()
                .enumerate()
                .map(|(i, &f)| (vec![i as f64], f))
                .collect(),
        };
        assert_eq!(r.local_maxima(), vec![2, 5]);
    }

    #[test]
    fn illustrative_fd_gradient() {
        let s = fixtures::illustrative();
        let prob = PricingProblem::new(&s);
        let g = fd_gradient(&prob, &[1.0], 1e-4, &UeOptions::with_tol(1e-12)).unwrap();
        assert!((g[(0, 0)] + 0.2).abs() < 1e-4);
        assert!((g[(1, 0)] - 0.2).abs() < 1e-4);
    }

    #[test]
    fn fd_check_on_nguyen_dupuis() {
        let s = fixtures::nguyen_dupuis();
        let prob = PricingProblem::new(&s);
        let r = fd_check(&prob, &[210.0, 215.0], 1e-3, &Default::default(), &UeOptions::with_tol(1e-10)).unwrap();
        assert_eq!(r.entries.len(), 8);
        assert!(r.pass, "{r:?}");
        assert!(fd_check(&prob, &[210.0, 215.0], 0.0, &Default::default(), &UeOptions::default()).is_err());
    }

    #[test]
    fn fd_columns_sum_to_zero() {
        let s = fixtures::random_layered(5, 3, 2);
        let prob = PricingProblem::new(&s);
        let g = fd_gradient(&prob, &[4.0, 6.0], 1e-3, &UeOptions::with_tol(1e-12)).unwrap();
        for c in g.column_iter() {
            assert!(c.sum().abs() < 1e-6, "{}", c.sum());
        }
    }

    #[test]
    fn certificate_passes_and_fails() {
        let s = fixtures::illustrative();
        let sol = solve_ue(&s, &s.net.base_prices(), &UeOptions::default()).unwrap();
        let cert = certify_ue(&s, &sol, 1e-6).unwrap();
        assert!(cert.pass(), "{cert:?}");

        let mut bad = sol.clone();
        bad.path_flows[0] += 0.1;
        let cert = certify_ue(&s, &bad, 1e-6).unwrap();
        assert!(!cert.feasibility.pass || !cert.complementarity.pass);

        let mut bad = sol.clone();
        bad.od_min_costs[0] = bad.path_costs[0] + 1.0;
        let cert = certify_ue(&s, &bad, 1e-6).unwrap();
        assert!(!cert.dual_feasibility.pass);
    }
}
