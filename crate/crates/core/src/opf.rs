//! Radial DistFlow optimal power flow with the second-order-cone relaxation
//! of the branch power equation, and LMP extraction.
//!
//! Power file records (one per line, `#`/`~` comments):
//!
//! ```text
//! base_mva 100
//! bus <id> pd qd umin umax          loads in MW / MVAr, U = |V|² in p.u.
//! line <from> <to> r x imin imax    impedance in p.u., I = |current|² in p.u.
//! gen <bus> c2 c1 [pmin pmax]       cost c2·P² + c1·P, P in MW
//! slack <bus> c0                    root of the feeder, injection cost per MWh
//! fcsmap <fcs node> <bus>
//! ```
//!
//! Balance at bus `j` with parent line `ij`:
//! `P_ij − r_ij I_ij + p^G_j = Σ_k P_jk + p^d_j + p^fcs_j` (same for Q with x).
//! LMPs are the negated multipliers of the active balance rows, in money/MWh.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NodeId, Station};
use crate::socp::{solve_cone, ConeDims, ConeOptions, ConeProgram};
use crate::tntp::{read, records, Ctx};

pub type BusId = u64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub pd: f64,
    pub qd: f64,
    pub umin: f64,
    pub umax: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    pub imin: f64,
    pub imax: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: BusId,
    pub c2: f64,
    pub c1: f64,
    pub pmin: Option<f64>,
    pub pmax: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PowerNetwork {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub gens: Vec<Generator>,
    pub slack_bus: BusId,
    pub slack_cost: f64,
    /// Station node to bus.
    pub fcs_map: BTreeMap<NodeId, BusId>,
    // derived: per line (parent index, child index), lines oriented away from the slack
    #[serde(skip)]
    oriented: Vec<(usize, usize)>,
}

impl PowerNetwork {
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        gens: Vec<Generator>,
        slack_bus: BusId,
        slack_cost: f64,
        fcs_map: BTreeMap<NodeId, BusId>,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidNetwork(m));
        if !(base_mva > 0.0) {
            return bad(format!("base_mva must be positive, got {base_mva}"));
        }
        let mut index = BTreeMap::new();
        for (k, b) in buses.iter().enumerate() {
            if index.insert(b.id, k).is_some() {
                return bad(format!("bus {} listed twice", b.id));
            }
            if !(0.0 < b.umin && b.umin <= b.umax) {
                return bad(format!("bus {}: need 0 < umin <= umax", b.id));
            }
        }
        let idx = |id: BusId, what: &str| {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::InvalidNetwork(format!("{what} refers to unknown bus {id}")))
        };
        let root = idx(slack_bus, "slack")?;
        if lines.len() + 1 != buses.len() {
            return bad(format!(
                "{} lines for {} buses; a radial feeder has one line fewer than buses",
                lines.len(),
                buses.len()
            ));
        }
        let mut adj = vec![Vec::new(); buses.len()];
        for (l, line) in lines.iter().enumerate() {
            if !(line.r > 0.0 && line.x > 0.0) {
                return bad(format!("line {}-{}: impedance must be positive", line.from, line.to));
            }
            if !(line.imin <= line.imax && line.imax > 0.0) {
                return bad(format!("line {}-{}: need imin <= imax, imax > 0", line.from, line.to));
            }
            let (a, b) = (idx(line.from, "line")?, idx(line.to, "line")?);
            adj[a].push((l, b));
            adj[b].push((l, a));
        }
        let mut oriented = vec![(usize::MAX, usize::MAX); lines.len()];
        let mut seen = vec![false; buses.len()];
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(l, v) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    oriented[l] = (u, v);
                    queue.push_back(v);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("line graph is not a tree rooted at the slack bus".into());
        }
        for g in &gens {
            idx(g.bus, "gen")?;
            if g.c2 < 0.0 {
                return bad(format!("gen at bus {}: c2 must be nonnegative", g.bus));
            }
            if let (Some(lo), Some(hi)) = (g.pmin, g.pmax) {
                if lo > hi {
                    return bad(format!("gen at bus {}: pmin > pmax", g.bus));
                }
            }
        }
        for (&node, &bus) in &fcs_map {
            idx(bus, &format!("fcsmap for node {node}"))?;
        }
        Ok(Self {
            base_mva,
            buses,
            lines,
            gens,
            slack_bus,
            slack_cost,
            fcs_map,
            oriented,
        })
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    fn root(&self) -> usize {
        self.bus_index(self.slack_bus).expect("validated")
    }
}

pub fn parse_power(src: &str, name: &str) -> Result<PowerNetwork> {
    let ctx = Ctx { file: name };
    let mut base = 100.0;
    let (mut buses, mut lines, mut gens) = (Vec::new(), Vec::new(), Vec::new());
    let mut slack = None;
    let mut fcs_map = BTreeMap::new();
    for rec in records(src) {
        let n = |i, what| ctx.num(&rec, i, what);
        match rec.fields[0] {
            "base_mva" => {
                ctx.arity(&rec, 2, "base_mva value")?;
                base = n(1, "base_mva")?;
            }
            "bus" => {
                ctx.arity(&rec, 6, "bus id pd qd umin umax")?;
                buses.push(Bus {
                    id: ctx.node(&rec, 1)?,
                    pd: n(2, "pd")?,
                    qd: n(3, "qd")?,
                    umin: n(4, "umin")?,
                    umax: n(5, "umax")?,
                });
            }
            "line" => {
                ctx.arity(&rec, 7, "line from to r x imin imax")?;
                lines.push(Line {
                    from: ctx.node(&rec, 1)?,
                    to: ctx.node(&rec, 2)?,
                    r: n(3, "r")?,
                    x: n(4, "x")?,
                    imin: n(5, "imin")?,
                    imax: n(6, "imax")?,
                });
            }
            "gen" => {
                if rec.fields.len() != 4 && rec.fields.len() != 6 {
                    return Err(ctx.err(rec.line, "expected `gen bus c2 c1 [pmin pmax]`"));
                }
                let bounds = rec.fields.len() == 6;
                gens.push(Generator {
                    bus: ctx.node(&rec, 1)?,
                    c2: n(2, "c2")?,
                    c1: n(3, "c1")?,
                    pmin: if bounds { Some(n(4, "pmin")?) } else { None },
                    pmax: if bounds { Some(n(5, "pmax")?) } else { None },
                });
            }
            "slack" => {
                ctx.arity(&rec, 3, "slack bus c0")?;
                if slack.is_some() {
                    return Err(ctx.err(rec.line, "second slack record"));
                }
                slack = Some((ctx.node(&rec, 1)?, n(2, "c0")?));
            }
            "fcsmap" => {
                ctx.arity(&rec, 3, "fcsmap fcsnode bus")?;
                fcs_map.insert(ctx.node(&rec, 1)?, ctx.node(&rec, 2)?);
            }
            other => return Err(ctx.err(rec.line, format!("unknown record `{other}`"))),
        }
    }
    let (slack_bus, c0) = slack.ok_or_else(|| ctx.err(0, "missing slack record"))?;
    PowerNetwork::new(base, buses, lines, gens, slack_bus, c0, fcs_map)
}

pub fn load_power(path: impl AsRef<Path>) -> Result<PowerNetwork> {
    let p = path.as_ref();
    parse_power(&read(p)?, &p.display().to_string())
}

/// Charging power `E x / t⁰` per bus (co-located stations add up).
pub fn charging_load(pnet: &PowerNetwork, stations: &[Station], x: &[f64], energy: f64) -> Result<Vec<f64>> {
    if stations.len() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} charging flows for {} stations",
            x.len(),
            stations.len()
        )));
    }
    let mut load = vec![0.0; pnet.buses.len()];
    for (st, &xi) in stations.iter().zip(x) {
        let bus = pnet.fcs_map.get(&st.node).ok_or(Error::UnmappedFcs(st.node))?;
        let k = pnet.bus_index(*bus).expect("validated");
        load[k] += energy * xi / st.free_charge_time;
    }
    Ok(load)
}

#[derive(Clone, Debug, Serialize)]
pub struct OpfSolution {
    /// Generator dispatch in MW / MVAr, in file order.
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub p_slack: f64,
    pub q_slack: f64,
    /// Sending-end line flows in MW / MVAr, in file order, oriented away from the slack.
    pub p_line: Vec<f64>,
    pub q_line: Vec<f64>,
    pub u: Vec<f64>,
    pub i: Vec<f64>,
    pub objective: f64,
    /// Locational marginal prices per bus, money/MWh.
    pub lmp: Vec<f64>,
    /// Largest `U_i I_ij − P² − Q²` over lines (p.u.).
    pub cone_slack: f64,
    /// `Σ r I` in MW.
    pub loss_mw: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl OpfSolution {
    /// LMP seen by each station.
    pub fn station_lmps(&self, pnet: &PowerNetwork, stations: &[Station]) -> Result<Vec<f64>> {
        stations
            .iter()
            .map(|st| {
                let bus = pnet.fcs_map.get(&st.node).ok_or(Error::UnmappedFcs(st.node))?;
                Ok(self.lmp[pnet.bus_index(*bus).expect("validated")])
            })
            .collect()
    }
}

/// Cone slack above which the relaxation is reported as not tight.
pub const TIGHTNESS_WARN: f64 = 1e-4;

struct Layout {
    nl: usize,
    nb: usize,
    ng: usize,
    /// Epigraph variable per generator with a quadratic cost.
    epi: Vec<Option<usize>>,
    n: usize,
}

impl Layout {
    fn new(pnet: &PowerNetwork) -> Self {
        let (nl, nb, ng) = (pnet.lines.len(), pnet.buses.len(), pnet.gens.len());
        let mut n = 3 * nl + nb + 2 * ng + 2;
        let epi = pnet
            .gens
            .iter()
            .map(|g| {
                (g.c2 > 0.0).then(|| {
                    n += 1;
                    n - 1
                })
            })
            .collect();
        Self { nl, nb, ng, epi, n }
    }
    fn p(&self, l: usize) -> usize {
        l
    }
    fn q(&self, l: usize) -> usize {
        self.nl + l
    }
    fn i(&self, l: usize) -> usize {
        2 * self.nl + l
    }
    fn u(&self, b: usize) -> usize {
        3 * self.nl + b
    }
    fn pg(&self, g: usize) -> usize {
        3 * self.nl + self.nb + g
    }
    fn qg(&self, g: usize) -> usize {
        3 * self.nl + self.nb + self.ng + g
    }
    fn p0(&self) -> usize {
        3 * self.nl + self.nb + 2 * self.ng
    }
    fn q0(&self) -> usize {
        self.p0() + 1
    }
}

fn build(pnet: &PowerNetwork, p_fcs: &[f64], with_bounds: bool) -> (ConeProgram, Layout) {
    let lay = Layout::new(pnet);
    let base = pnet.base_mva;
    let root = pnet.root();
    let mut c = DVector::zeros(lay.n);
    let mut eq: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    // active then reactive balance, one row per bus
    for react in [false, true] {
        for (b, bus) in pnet.buses.iter().enumerate() {
            let mut row = Vec::new();
            for (l, (&(par, ch), line)) in pnet.oriented.iter().zip(&pnet.lines).enumerate() {
                let z = if react { line.x } else { line.r };
                let flow = if react { lay.q(l) } else { lay.p(l) };
                if ch == b {
                    row.push((flow, 1.0));
                    row.push((lay.i(l), -z));
                }
                if par == b {
                    row.push((flow, -1.0));
                }
            }
            for (g, gen) in pnet.gens.iter().enumerate() {
                if pnet.bus_index(gen.bus) == Some(b) {
                    row.push((if react { lay.qg(g) } else { lay.pg(g) }, 1.0));
                }
            }
            if b == root {
                row.push((if react { lay.q0() } else { lay.p0() }, 1.0));
            }
            let rhs = if react { bus.qd } else { bus.pd + p_fcs[b] };
            eq.push((row, rhs / base));
        }
    }
    for (l, (&(par, ch), line)) in pnet.oriented.iter().zip(&pnet.lines).enumerate() {
        eq.push((
            vec![
                (lay.u(ch), 1.0),
                (lay.u(par), -1.0),
                (lay.p(l), 2.0 * line.r),
                (lay.q(l), 2.0 * line.x),
                (lay.i(l), -(line.r * line.r + line.x * line.x)),
            ],
            0.0,
        ));
    }
    // nonnegative rows (a, h) meaning aᵀx ≤ h
    let mut lin: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut bound = |v: usize, lo: Option<f64>, hi: Option<f64>, eq: &mut Vec<(Vec<(usize, f64)>, f64)>| match (lo, hi) {
        (Some(a), Some(b)) if a == b => eq.push((vec![(v, 1.0)], a)),
        _ => {
            if let Some(a) = lo {
                lin.push((vec![(v, -1.0)], -a));
            }
            if let Some(b) = hi {
                lin.push((vec![(v, 1.0)], b));
            }
        }
    };
    for (b, bus) in pnet.buses.iter().enumerate() {
        if with_bounds || bus.umin == bus.umax {
            bound(lay.u(b), Some(bus.umin), Some(bus.umax), &mut eq);
        }
    }
    for (l, line) in pnet.lines.iter().enumerate() {
        if with_bounds || line.imin == line.imax {
            bound(lay.i(l), (line.imin > 0.0).then_some(line.imin), Some(line.imax), &mut eq);
        }
    }
    for (g, gen) in pnet.gens.iter().enumerate() {
        if with_bounds || gen.pmin.is_some() && gen.pmin == gen.pmax {
            bound(lay.pg(g), gen.pmin.map(|v| v / base), gen.pmax.map(|v| v / base), &mut eq);
        }
    }
    // objective divided by base so that multipliers come out per MWh
    for (g, gen) in pnet.gens.iter().enumerate() {
        c[lay.pg(g)] = gen.c1;
        if let Some(t) = lay.epi[g] {
            c[t] = 1.0;
        }
    }
    c[lay.p0()] = pnet.slack_cost;

    // cones: rows of s = h − Gx
    let mut soc_rows: Vec<Vec<(Vec<(usize, f64)>, f64)>> = Vec::new();
    for (l, &(par, _)) in pnet.oriented.iter().enumerate() {
        soc_rows.push(vec![
            (vec![(lay.u(par), -1.0), (lay.i(l), -1.0)], 0.0),
            (vec![(lay.p(l), -2.0)], 0.0),
            (vec![(lay.q(l), -2.0)], 0.0),
            (vec![(lay.u(par), -1.0), (lay.i(l), 1.0)], 0.0),
        ]);
    }
    for (g, gen) in pnet.gens.iter().enumerate() {
        if let Some(t) = lay.epi[g] {
            // t ≥ c₂·base·pg²  ⇔  ‖(2√(c₂ base) pg, t − 1)‖ ≤ t + 1
            let k = (gen.c2 * base).sqrt();
            soc_rows.push(vec![
                (vec![(t, -1.0)], 1.0),
                (vec![(lay.pg(g), -2.0 * k)], 0.0),
                (vec![(t, -1.0)], -1.0),
            ]);
        }
    }
    let dims = ConeDims {
        nonneg: lin.len(),
        soc: soc_rows.iter().map(|b| b.len()).collect(),
    };
    let rows: Vec<&(Vec<(usize, f64)>, f64)> = lin.iter().chain(soc_rows.iter().flatten()).collect();
    let mut g = DMatrix::zeros(rows.len(), lay.n);
    let mut h = DVector::zeros(rows.len());
    for (k, (coef, rhs)) in rows.iter().enumerate() {
        for &(v, a) in coef {
            g[(k, v)] += a;
        }
        h[k] = *rhs;
    }
    let mut a = DMatrix::zeros(eq.len(), lay.n);
    let mut bvec = DVector::zeros(eq.len());
    for (k, (coef, rhs)) in eq.iter().enumerate() {
        for &(v, val) in coef {
            a[(k, v)] += val;
        }
        bvec[k] = *rhs;
    }
    (ConeProgram { c, a, b: bvec, g, h, dims }, lay)
}

/// Solves the relaxed OPF for the given charging load (MW per bus).
pub fn solve_opf(pnet: &PowerNetwork, p_fcs: &[f64]) -> Result<OpfSolution> {
    if p_fcs.len() != pnet.buses.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} charging loads for {} buses",
            p_fcs.len(),
            pnet.buses.len()
        )));
    }
    let opts = ConeOptions {
        tol: 1e-10,
        max_iter: 150,
    };
    let (prog, lay) = build(pnet, p_fcs, true);
    let sol = match solve_cone(&prog, &opts) {
        Ok(s) => s,
        Err(e) => return Err(diagnose(pnet, p_fcs, &opts, e)),
    };
    let base = pnet.base_mva;
    let x = &sol.x;
    let mut warnings = Vec::new();
    let mut cone_slack: f64 = 0.0;
    for (l, &(par, _)) in pnet.oriented.iter().enumerate() {
        let gap = x[lay.u(par)] * x[lay.i(l)] - x[lay.p(l)].powi(2) - x[lay.q(l)].powi(2);
        cone_slack = cone_slack.max(gap);
        if gap > TIGHTNESS_WARN {
            let line = &pnet.lines[l];
            warnings.push(format!(
                "relaxation not tight on line {}-{}: cone slack {gap:.2e}",
                line.from, line.to
            ));
        }
    }
    let objective = base
        * (pnet
            .gens
            .iter()
            .enumerate()
            .map(|(g, gen)| gen.c2 * base * x[lay.pg(g)].powi(2) + gen.c1 * x[lay.pg(g)])
            .sum::<f64>()
            + pnet.slack_cost * x[lay.p0()]);
    Ok(OpfSolution {
        pg: (0..lay.ng).map(|g| x[lay.pg(g)] * base).collect(),
        qg: (0..lay.ng).map(|g| x[lay.qg(g)] * base).collect(),
        p_slack: x[lay.p0()] * base,
        q_slack: x[lay.q0()] * base,
        p_line: (0..lay.nl).map(|l| x[lay.p(l)] * base).collect(),
        q_line: (0..lay.nl).map(|l| x[lay.q(l)] * base).collect(),
        u: (0..lay.nb).map(|b| x[lay.u(b)]).collect(),
        i: (0..lay.nl).map(|l| x[lay.i(l)]).collect(),
        objective,
        lmp: (0..lay.nb).map(|b| -sol.y[b]).collect(),
        cone_slack,
        loss_mw: pnet.lines.iter().enumerate().map(|(l, line)| line.r * x[lay.i(l)]).sum::<f64>() * base,
        primal_res: sol.primal_res,
        dual_res: sol.dual_res,
        iterations: sol.iterations,
        warnings,
    })
}

/// Re-solves without voltage, current and dispatch bounds and lists the
/// bounds that solution violates.
fn diagnose(pnet: &PowerNetwork, p_fcs: &[f64], opts: &ConeOptions, cause: Error) -> Error {
    let (prog, lay) = build(pnet, p_fcs, false);
    let Ok(sol) = solve_cone(&prog, opts) else {
        return Error::InfeasibleOpf(format!("{cause}; the unbounded relaxation fails as well"));
    };
    let x = &sol.x;
    let mut v = Vec::new();
    for (b, bus) in pnet.buses.iter().enumerate() {
        let u = x[lay.u(b)];
        if u < bus.umin - 1e-6 || u > bus.umax + 1e-6 {
            v.push(format!("bus {} U={u:.4} outside [{}, {}]", bus.id, bus.umin, bus.umax));
        }
    }
    for (l, line) in pnet.lines.iter().enumerate() {
        let i = x[lay.i(l)];
        if i < line.imin - 1e-6 || i > line.imax + 1e-6 {
            v.push(format!("line {}-{} I={i:.4} outside [{}, {}]", line.from, line.to, line.imin, line.imax));
        }
    }
    for (g, gen) in pnet.gens.iter().enumerate() {
        let p = x[lay.pg(g)] * pnet.base_mva;
        if gen.pmin.is_some_and(|lo| p < lo - 1e-6) || gen.pmax.is_some_and(|hi| p > hi + 1e-6) {
            v.push(format!("gen at bus {} P={p:.3} MW outside its limits", gen.bus));
        }
    }
    if v.is_empty() {
        Error::InfeasibleOpf(cause.to_string())
    } else {
        Error::InfeasibleOpf(format!("violated bounds: {}", v.join("; ")))
    }
}

/// Power flow of a radial feeder with fixed injections, solved exactly by
/// backward/forward sweeps of the branch-flow equations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchFlows {
    /// Sending-end flows in MW / MVAr, in file order.
    pub p_line: Vec<f64>,
    pub q_line: Vec<f64>,
    /// Squared voltage magnitude per bus, p.u.; the slack sits at its `umin`.
    pub u: Vec<f64>,
    /// Squared current per line, p.u.
    pub i: Vec<f64>,
    pub p_slack: f64,
    pub q_slack: f64,
}

/// `inj_p`, `inj_q` are net injections per bus in MW / MVAr (generation
/// minus load); the slack bus absorbs the balance.
pub fn branch_flow_sweep(pnet: &PowerNetwork, inj_p: &[f64], inj_q: &[f64]) -> BranchFlows {
    let base = pnet.base_mva;
    let nb = pnet.buses.len();
    let nl = pnet.lines.len();
    let root = pnet.root();
    let (mut p, mut q, mut i) = (vec![0.0; nl], vec![0.0; nl], vec![0.0; nl]);
    let mut u = vec![pnet.buses[root].umin; nb];
    // order lines by depth so children are processed before parents
    let mut depth = vec![0usize; nb];
    for _ in 0..nb {
        for &(par, ch) in &pnet.oriented {
            depth[ch] = depth[par] + 1;
        }
    }
    let mut order: Vec<usize> = (0..nl).collect();
    order.sort_by_key(|&l| std::cmp::Reverse(depth[pnet.oriented[l].1]));
    for _ in 0..200 {
        let before = i.clone();
        let mut net_p: Vec<f64> = (0..nb).map(|b| -inj_p[b] / base).collect();
        let mut net_q: Vec<f64> = (0..nb).map(|b| -inj_q[b] / base).collect();
        for &l in &order {
            let (par, ch) = pnet.oriented[l];
            let line = &pnet.lines[l];
            p[l] = net_p[ch] + line.r * i[l];
            q[l] = net_q[ch] + line.x * i[l];
            net_p[par] += p[l];
            net_q[par] += q[l];
        }
        for &l in order.iter().rev() {
            let (par, ch) = pnet.oriented[l];
            let line = &pnet.lines[l];
            u[ch] = u[par] - 2.0 * (line.r * p[l] + line.x * q[l]) + (line.r.powi(2) + line.x.powi(2)) * i[l];
            i[l] = (p[l] * p[l] + q[l] * q[l]) / u[par];
        }
        if i.iter().zip(&before).all(|(a, b)| (a - b).abs() <= 1e-15 * a.abs().max(1.0)) {
            break;
        }
    }
    let from_root = |v: &[f64]| (0..nl).filter(|&l| pnet.oriented[l].0 == root).map(|l| v[l]).sum::<f64>();
    BranchFlows {
        p_slack: from_root(&p) * base - inj_p[root],
        q_slack: from_root(&q) * base - inj_q[root],
        p_line: p.iter().map(|v| v * base).collect(),
        q_line: q.iter().map(|v| v * base).collect(),
        u,
        i,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::verify::opf_brute_force;

    fn four_bus() -> PowerNetwork {
        parse_power(fixtures::POWER_4BUS, "four_bus.pn").unwrap()
    }

    fn two_bus(r: f64, c1: f64, load: f64) -> PowerNetwork {
        let src = format!(
            "bus 1 0 0 1 1\nbus 2 {load} 0 0.8 1.2\nline 1 2 {r} {r} 0 100\nslack 1 {c1}\n"
        );
        parse_power(&src, "two").unwrap()
    }

    #[test]
    fn parses_fixture() {
        let p = four_bus();
        assert_eq!(p.buses.len(), 4);
        assert_eq!(p.lines.len(), 3);
        assert_eq!(p.gens.len(), 1);
        assert_eq!(p.fcs_map.len(), 4);
    }

    #[test]
    fn rejects_mesh_and_unknown_bus() {
        let mesh = "bus 1 0 0 1 1\nbus 2 1 0 0.9 1.1\nbus 3 1 0 0.9 1.1\nline 1 2 0.1 0.1 0 9\nline 2 3 0.1 0.1 0 9\nline 1 3 0.1 0.1 0 9\nslack 1 10\n";
        assert!(matches!(parse_power(mesh, "m"), Err(Error::InvalidNetwork(_))));
        let unknown = "bus 1 0 0 1 1\nbus 2 1 0 0.9 1.1\nline 1 7 0.1 0.1 0 9\nslack 1 10\n";
        assert!(matches!(parse_power(unknown, "u"), Err(Error::InvalidNetwork(_))));
        let bad = "bus 1 0 0 1 1\nwire 1 2\n";
        assert!(matches!(parse_power(bad, "b"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn charging_load_arithmetic() {
        let pnet = two_bus(0.01, 10.0, 1.0);
        let mut pnet = pnet;
        pnet.fcs_map.insert(7, 2);
        let st = Station {
            node: 7,
            free_charge_time: 0.5,
            wait_coeff: 1.0,
            capacity: 1.0,
            owned: true,
            rival_price: 0.0,
        };
        assert_eq!(charging_load(&pnet, std::slice::from_ref(&st), &[2.0], 50.0).unwrap(), vec![0.0, 200.0]);
        assert_eq!(charging_load(&pnet, std::slice::from_ref(&st), &[0.0], 50.0).unwrap(), vec![0.0, 0.0]);
        let other = Station { node: 8, ..st };
        assert!(matches!(charging_load(&pnet, &[other], &[1.0], 50.0), Err(Error::UnmappedFcs(8))));
    }

    #[test]
    fn illustrative_charging_load() {
        let s = fixtures::illustrative();
        let mut pnet = two_bus(0.01, 10.0, 1.0);
        pnet.fcs_map.insert(2, 1);
        pnet.fcs_map.insert(3, 2);
        let load = charging_load(&pnet, s.net.stations(), &[1.75, 1.75], 1.0).unwrap();
        assert_eq!(load, vec![1.75, 1.75]);
    }

    #[test]
    fn lossless_limit_lmp() {
        let pnet = two_bus(1e-6, 25.0, 40.0);
        let sol = solve_opf(&pnet, &[0.0, 0.0]).unwrap();
        assert!((sol.lmp[1] - 25.0).abs() < 1e-3, "{:?}", sol.lmp);
        assert!((sol.p_slack - 40.0).abs() < 1e-3);
    }

    #[test]
    fn zero_charging_is_noop() {
        let pnet = four_bus();
        let a = solve_opf(&pnet, &[0.0; 4]).unwrap();
        let b = solve_opf(&pnet, &[0.0; 4]).unwrap();
        assert_eq!(a.pg, b.pg);
        assert!(a.warnings.is_empty());
    }

    #[test]
    fn four_bus_matches_brute_force() {
        let pnet = four_bus();
        for extra in [[0.0; 4], [0.0, 60.0, 90.0, 70.0]] {
            let sol = solve_opf(&pnet, &extra).unwrap();
            let bf = opf_brute_force(&pnet, &extra).unwrap();
            let (obj, pg) = (bf.objective, bf.pg);
            assert!((sol.objective - obj).abs() <= 1e-3 * obj.abs(), "{} vs {obj}", sol.objective);
            assert!((sol.pg[0] - pg).abs() < 1e-2 * pg.abs().max(1.0), "{:?} vs {pg}", sol.pg);
            assert!(sol.cone_slack <= 1e-6, "{}", sol.cone_slack);
            // LMPs are the sensitivity of the optimal cost to bus load
            for b in 0..4 {
                let d = 0.5;
                let mut up = extra;
                up[b] += d;
                let mut dn = extra;
                dn[b] -= d;
                let fd = (opf_brute_force(&pnet, &up).unwrap().objective
                    - opf_brute_force(&pnet, &dn).unwrap().objective)
                    / (2.0 * d);
                assert!((sol.lmp[b] - fd).abs() <= 1e-3 * fd.abs(), "bus {b}: {} vs {fd}", sol.lmp[b]);
            }
        }
    }

    #[test]
    fn tree_recursion_reproduces_flows() {
        let pnet = four_bus();
        let extra = [0.0, 30.0, 50.0, 20.0];
        let sol = solve_opf(&pnet, &extra).unwrap();
        let gb = pnet.bus_index(pnet.gens[0].bus).unwrap();
        let mut inj_p: Vec<f64> = pnet.buses.iter().zip(&extra).map(|(b, e)| -(b.pd + e)).collect();
        let mut inj_q: Vec<f64> = pnet.buses.iter().map(|b| -b.qd).collect();
        inj_p[gb] += sol.pg[0];
        inj_q[gb] += sol.qg[0];
        let bf = branch_flow_sweep(&pnet, &inj_p, &inj_q);
        for l in 0..3 {
            assert!((bf.p_line[l] - sol.p_line[l]).abs() < 1e-4, "{l}");
            assert!((bf.q_line[l] - sol.q_line[l]).abs() < 1e-4, "{l}");
        }
        assert!((bf.p_slack - sol.p_slack).abs() < 1e-4);
    }

    #[test]
    fn loss_identity() {
        let pnet = four_bus();
        let extra = [0.0, 40.0, 10.0, 35.0];
        let sol = solve_opf(&pnet, &extra).unwrap();
        let load: f64 = pnet.buses.iter().map(|b| b.pd).sum::<f64>() + extra.iter().sum::<f64>();
        let supplied = sol.pg.iter().sum::<f64>() + sol.p_slack;
        assert!((supplied - load - sol.loss_mw).abs() < 1e-6, "{supplied} {load} {}", sol.loss_mw);
    }

    #[test]
    fn objective_monotone_in_load() {
        let pnet = four_bus();
        let mut last = f64::NEG_INFINITY;
        for k in 0..6 {
            let sol = solve_opf(&pnet, &[0.0, 0.0, 20.0 * k as f64, 0.0]).unwrap();
            assert!(sol.objective >= last - 1e-9);
            last = sol.objective;
        }
    }

    #[test]
    fn lmps_between_marginal_costs() {
        // one generator with linear cost below the slack price: LMPs stay
        // within the marginal costs up to loss factors
        let pnet = four_bus();
        let sol = solve_opf(&pnet, &[0.0; 4]).unwrap();
        let g = &pnet.gens[0];
        let mc = g.c1 + 2.0 * g.c2 * sol.pg[0];
        let lo = mc.min(pnet.slack_cost) * 0.9;
        let hi = mc.max(pnet.slack_cost) * 1.1;
        assert!(sol.lmp.iter().all(|&v| v >= lo && v <= hi), "{:?} in [{lo}, {hi}]", sol.lmp);
    }

    #[test]
    fn infeasible_reports_bound() {
        let src = "bus 1 0 0 1 1\nbus 2 50 0 0.95 1.05\nline 1 2 0.05 0.05 0 0.1\nslack 1 10\n";
        let pnet = parse_power(src, "tight").unwrap();
        match solve_opf(&pnet, &[0.0, 0.0]) {
            Err(Error::InfeasibleOpf(m)) => assert!(m.contains("line 1-2"), "{m}"),
            other => panic!("{other:?}"),
        }
    }
}
