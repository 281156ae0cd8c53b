//! Path-based user-equilibrium solver.
//!
//! Minimizes the Beckmann potential over the fixed path set by per-OD
//! gradient projection. Each iteration takes a Newton-like step scaled by the
//! diagonal of the path Hessian, projects it back onto the OD's demand
//! simplex, and backtracks (Armijo) until the potential decreases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::PathStructure;
use crate::scenario::Scenario;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UeOptions {
    /// Target relative duality gap.
    pub tol: f64,
    pub max_iters: usize,
    /// Flows below this are treated as unused paths.
    pub flow_eps: f64,
    /// Keep the Beckmann value of every iterate.
    pub record_trace: bool,
}

impl Default for UeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 50_000,
            flow_eps: 1e-6,
            record_trace: false,
        }
    }
}

impl UeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UeSolution {
    pub path_flows: Vec<f64>,
    pub arc_flows: Vec<f64>,
    pub charge_flows: Vec<f64>,
    pub path_costs: Vec<f64>,
    pub od_min_costs: Vec<f64>,
    pub beckmann_value: f64,
    pub rel_gap: f64,
    pub iterations: usize,
    /// Station prices the equilibrium was computed at.
    pub prices: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_trace: Option<Vec<f64>>,
}

impl UeSolution {
    /// Generalized arc flows `[x^arc; x^fcs]`.
    pub fn generalized_flows(&self) -> Vec<f64> {
        let mut x = self.arc_flows.clone();
        x.extend_from_slice(&self.charge_flows);
        x
    }
}

/// Generalized-arc costs: `ω t_a` on roads, `ω t_m + E λ_m` on hyper-arcs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedCost {
    pub arc_costs: Vec<f64>,
    pub fcs_costs: Vec<f64>,
}

impl GeneralizedCost {
    pub fn stacked(&self) -> Vec<f64> {
        let mut c = self.arc_costs.clone();
        c.extend_from_slice(&self.fcs_costs);
        c
    }

    pub fn path_costs(&self, ps: &PathStructure) -> Vec<f64> {
        ps.path_costs(&self.stacked())
    }
}

/// Evaluates costs, derivatives and potentials of generalized arcs for a
/// fixed price vector.
pub(crate) struct CostModel<'a> {
    scn: &'a Scenario,
    prices: &'a [f64],
}

impl<'a> CostModel<'a> {
    pub(crate) fn new(scn: &'a Scenario, prices: &'a [f64]) -> Result<Self> {
        if prices.len() != scn.net.num_stations() {
            return Err(Error::DimensionMismatch(format!(
                "{} station prices for {} stations",
                prices.len(),
                scn.net.num_stations()
            )));
        }
        Ok(Self { scn, prices })
    }

    fn num_arcs(&self) -> usize {
        self.scn.net.num_arcs()
    }

    pub(crate) fn cost(&self, g: usize, x: f64) -> f64 {
        let (net, p) = (&self.scn.net, &self.scn.params);
        let model = net.latency();
        if g < self.num_arcs() {
            p.time_value * net.arcs()[g].time(model, x)
        } else {
            let m = g - self.num_arcs();
            p.time_value * net.stations()[m].time(model, x) + p.charge_energy * self.prices[m]
        }
    }

    pub(crate) fn derivative(&self, g: usize, x: f64) -> f64 {
        let (net, p) = (&self.scn.net, &self.scn.params);
        let model = net.latency();
        if g < self.num_arcs() {
            p.time_value * net.arcs()[g].time_derivative(model, x)
        } else {
            p.time_value * net.stations()[g - self.num_arcs()].time_derivative(model, x)
        }
    }

    pub(crate) fn potential(&self, g: usize, x: f64) -> f64 {
        let (net, p) = (&self.scn.net, &self.scn.params);
        let model = net.latency();
        if g < self.num_arcs() {
            p.time_value * net.arcs()[g].time_integral(model, x)
        } else {
            let m = g - self.num_arcs();
            p.time_value * net.stations()[m].time_integral(model, x)
                + p.charge_energy * self.prices[m] * x
        }
    }

    /// `∫_from^{from+delta} c_g`, exact for polynomial costs up to degree 5.
    fn potential_change(&self, g: usize, from: f64, delta: f64) -> f64 {
        const NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
        const WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let half = 0.5 * delta;
        let mid = from + half;
        half * NODES
            .iter()
            .zip(WEIGHTS)
            .map(|(&n, w)| w * self.cost(g, mid + half * n))
            .sum::<f64>()
    }

    pub(crate) fn costs(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(g, &v)| self.cost(g, v)).collect()
    }

    fn beckmann(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(g, &v)| self.potential(g, v)).sum()
    }
}

/// Generalized costs at generalized-arc flows `x`.
pub fn generalized_costs(scn: &Scenario, x: &[f64], prices: &[f64]) -> Result<GeneralizedCost> {
    let model = CostModel::new(scn, prices)?;
    let c = model.costs(x);
    let a = scn.net.num_arcs();
    Ok(GeneralizedCost {
        arc_costs: c[..a].to_vec(),
        fcs_costs: c[a..].to_vec(),
    })
}

/// Beckmann potential of path flows `f` via closed-form antiderivatives.
pub fn beckmann_objective(scn: &Scenario, f: &[f64], prices: &[f64]) -> Result<f64> {
    let model = CostModel::new(scn, prices)?;
    Ok(model.beckmann(&scn.paths.generalized_flows(f)))
}

/// Per OD, all demand on the path with the lowest zero-flow cost; ties go to
/// the lowest path index.
pub fn initial_flows(scn: &Scenario, prices: &[f64]) -> Result<Vec<f64>> {
    let model = CostModel::new(scn, prices)?;
    let zero = vec![0.0; scn.paths.num_generalized()];
    let costs = scn.paths.path_costs(&model.costs(&zero));
    let mut f = vec![0.0; scn.paths.len()];
    for (w, group) in scn.paths.paths_by_od().iter().enumerate() {
        let best = group
            .iter()
            .copied()
            .min_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
        if let Some(p) = best {
            f[p] = scn.demand.pairs[w].demand;
        }
    }
    Ok(f)
}

pub fn solve_ue(scn: &Scenario, prices: &[f64], opts: &UeOptions) -> Result<UeSolution> {
    let f0 = initial_flows(scn, prices)?;
    solve_ue_from(scn, prices, f0, opts)
}

struct Evaluation {
    x: Vec<f64>,
    path_costs: Vec<f64>,
    od_min: Vec<f64>,
    gap: f64,
}

fn evaluate(scn: &Scenario, model: &CostModel, f: &[f64], groups: &[Vec<usize>]) -> Evaluation {
    let x = scn.paths.generalized_flows(f);
    let garc_costs = model.costs(&x);
    let path_costs = scn.paths.path_costs(&garc_costs);
    let od_min: Vec<f64> = groups
        .iter()
        .map(|g| {
            g.iter()
                .map(|&p| path_costs[p])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let total: f64 = f.iter().zip(&path_costs).map(|(a, b)| a * b).sum();
    let lower: f64 = scn
        .demand
        .pairs
        .iter()
        .zip(&od_min)
        .map(|(p, m)| p.demand * m)
        .sum();
    let gap = if total > 0.0 {
        ((total - lower) / total).max(0.0)
    } else {
        0.0
    };
    Evaluation {
        x,
        path_costs,
        od_min,
        gap,
    }
}

/// Projection of `f - (c - τ)/h` onto `{y ≥ 0, Σy = d}` in the metric `diag(h)`.
fn scaled_simplex_projection(f: &[f64], c: &[f64], h: &[f64], d: f64) -> Vec<f64> {
    // y_i(τ) = max(0, f_i - (c_i - τ)/h_i) is nondecreasing in τ; breakpoints
    // are τ_i = c_i - h_i f_i.
    let n = f.len();
    let mut bps: Vec<usize> = (0..n).collect();
    let bp = |i: usize| c[i] - h[i] * f[i];
    bps.sort_by(|&a, &b| bp(a).total_cmp(&bp(b)));
    // Between consecutive breakpoints Σy is affine in τ: Σ_{active} (f_i - c_i/h_i) + τ Σ 1/h_i.
    let mut a = 0.0;
    let mut b = 0.0;
    let mut tau = bp(bps[0]);
    for k in 0..n {
        let i = bps[k];
        a += f[i] - c[i] / h[i];
        b += 1.0 / h[i];
        let cand = (d - a) / b;
        let next = if k + 1 < n { bp(bps[k + 1]) } else { f64::INFINITY };
        if cand <= next {
            tau = cand;
            break;
        }
    }
    let mut y: Vec<f64> = (0..n)
        .map(|i| (f[i] - (c[i] - tau) / h[i]).max(0.0))
        .collect();
    // absorb rounding so the demand constraint holds to machine precision
    let s: f64 = y.iter().sum();
    if s > 0.0 {
        let scale = d / s;
        y.iter_mut().for_each(|v| *v *= scale);
    }
    y
}

pub fn solve_ue_from(
    scn: &Scenario,
    prices: &[f64],
    mut f: Vec<f64>,
    opts: &UeOptions,
) -> Result<UeSolution> {
    let model = CostModel::new(scn, prices)?;
    let ps = &scn.paths;
    if f.len() != ps.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} initial flows for {} paths",
            f.len(),
            ps.len()
        )));
    }
    let groups = ps.paths_by_od();
    let mut trace = opts.record_trace.then(Vec::new);
    let mut eval = evaluate(scn, &model, &f, &groups);
    let mut value = model.beckmann(&eval.x);
    if let Some(t) = trace.as_mut() {
        t.push(value);
    }
    let mut iterations = 0;
    let mut stalled = false;

    while eval.gap > opts.tol {
        if iterations >= opts.max_iters || stalled {
            let best = finish(scn, &model, f, eval, iterations, prices, trace);
            return Err(Error::MaxIterations {
                iterations,
                gap: best.rel_gap,
                best: Box::new(best),
            });
        }
        iterations += 1;

        let gderiv: Vec<f64> = eval
            .x
            .iter()
            .enumerate()
            .map(|(g, &v)| model.derivative(g, v))
            .collect();
        let mut direction = vec![0.0; ps.len()];
        let mut slope = 0.0;
        for (w, group) in groups.iter().enumerate() {
            if group.len() < 2 {
                continue;
            }
            let fw: Vec<f64> = group.iter().map(|&p| f[p]).collect();
            let cw: Vec<f64> = group.iter().map(|&p| eval.path_costs[p]).collect();
            let raw: Vec<f64> = group
                .iter()
                .map(|&p| ps.generalized_rows(p).map(|g| gderiv[g]).sum::<f64>())
                .collect();
            let hmax = raw.iter().cloned().fold(0.0, f64::max);
            let floor = (hmax * 1e-3).max(1e-12 * eval.od_min[w].abs().max(1.0));
            let hw: Vec<f64> = raw.iter().map(|&h| h.max(floor)).collect();
            let y = scaled_simplex_projection(&fw, &cw, &hw, scn.demand.pairs[w].demand);
            // Re-balance on the largest component so the direction sums to
            // zero at the scale of the step rather than of the flows.
            let mut dw: Vec<f64> = group.iter().enumerate().map(|(k, &p)| y[k] - f[p]).collect();
            let excess: f64 = dw.iter().sum();
            let top = (0..dw.len()).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
            dw[top] -= excess;
            for (k, &p) in group.iter().enumerate() {
                direction[p] = dw[k];
                slope += dw[k] * (eval.path_costs[p] - eval.od_min[w]);
            }
        }
        if slope >= 0.0 {
            stalled = true;
            continue;
        }
        let dx = ps.generalized_flows(&direction);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let change: f64 = dx
                .iter()
                .enumerate()
                .filter(|(_, &d)| d != 0.0)
                .map(|(g, &d)| model.potential_change(g, eval.x[g], step * d))
                .sum();
            if change <= 1e-4 * step * slope {
                accepted = Some(change);
                break;
            }
            step *= 0.5;
        }
        let Some(change) = accepted else {
            stalled = true;
            continue;
        };
        debug_assert!(change <= 0.0);
        for (fp, d) in f.iter_mut().zip(&direction) {
            *fp = (*fp + step * d).max(0.0);
        }
        eval = evaluate(scn, &model, &f, &groups);
        value += change;
        if let Some(t) = trace.as_mut() {
            t.push(value);
        }
    }
    Ok(finish(scn, &model, f, eval, iterations, prices, trace))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    scn: &Scenario,
    model: &CostModel,
    f: Vec<f64>,
    eval: Evaluation,
    iterations: usize,
    prices: &[f64],
    trace: Option<Vec<f64>>,
) -> UeSolution {
    let a = scn.net.num_arcs();
    UeSolution {
        beckmann_value: model.beckmann(&eval.x),
        arc_flows: eval.x[..a].to_vec(),
        charge_flows: eval.x[a..].to_vec(),
        path_flows: f,
        path_costs: eval.path_costs,
        od_min_costs: eval.od_min,
        rel_gap: eval.gap,
        iterations,
        prices: prices.to_vec(),
        objective_trace: trace,
    }
}

/// `(max_p {c_p - μ_w : f_p > flow_eps}, max_w |Λf - D|_w)`.
pub fn wardrop_residual(scn: &Scenario, sol: &UeSolution, flow_eps: f64) -> (f64, f64) {
    let ps = &scn.paths;
    let over = ps
        .paths()
        .iter()
        .enumerate()
        .filter(|(p, _)| sol.path_flows[*p] > flow_eps)
        .map(|(p, path)| sol.path_costs[p] - sol.od_min_costs[path.od])
        .fold(0.0, f64::max);
    let totals = ps.od_totals(&sol.path_flows);
    let viol = totals
        .iter()
        .zip(&scn.demand.pairs)
        .map(|(t, od)| (t - od.demand).abs())
        .fold(0.0, f64::max);
    (over, viol)
}
