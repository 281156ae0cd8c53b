//! Path enumeration and the incidence matrices built from it.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NodeId, OdDemand, TransportNetwork, VehicleClass};

/// One route: a road walk plus at most one charging stop.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub od: usize,
    pub arcs: Vec<usize>,
    /// Station index (row of the charge-path matrix); `None` for GV paths.
    pub station: Option<usize>,
}

/// Enumerated path set with the arc-path, charge-path and OD-path incidences.
///
/// Incidences are stored as index lists; the dense matrices are materialized
/// on request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathStructure {
    paths: Vec<Path>,
    num_arcs: usize,
    num_stations: usize,
    num_ods: usize,
    classes: Vec<VehicleClass>,
}

/// Row label of the generalized (hyper-arc) incidence matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneralizedArc {
    Road(usize),
    Charge(usize),
}

#[derive(Clone, Debug)]
pub struct GeneralizedIncidence {
    /// `[Δ^arc; Δ^fcs]`, roads first, then one hyper-arc per station.
    pub matrix: DMatrix<f64>,
    pub rows: Vec<GeneralizedArc>,
}

impl GeneralizedIncidence {
    pub fn is_hyper_arc(&self, row: usize) -> bool {
        matches!(self.rows[row], GeneralizedArc::Charge(_))
    }
}

impl PathStructure {
    /// Builds a path structure from explicit paths, checking every invariant.
    pub fn from_paths(net: &TransportNetwork, demand: &OdDemand, paths: Vec<Path>) -> Result<Self> {
        let ps = Self {
            paths,
            num_arcs: net.num_arcs(),
            num_stations: net.num_stations(),
            num_ods: demand.len(),
            classes: demand.pairs.iter().map(|p| p.class).collect(),
        };
        ps.validate(net, demand)?;
        Ok(ps)
    }

    pub fn validate(&self, net: &TransportNetwork, demand: &OdDemand) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidNetwork(msg));
        if self.num_arcs != net.num_arcs()
            || self.num_stations != net.num_stations()
            || self.num_ods != demand.len()
        {
            return bad("path structure dimensions do not match network and demand".into());
        }
        let mut covered = vec![false; self.num_ods];
        for (p, path) in self.paths.iter().enumerate() {
            let Some(od) = demand.pairs.get(path.od) else {
                return bad(format!("path {p} refers to unknown OD {}", path.od));
            };
            covered[path.od] = true;
            let nodes = walk_nodes(net, &path.arcs).ok_or_else(|| {
                Error::InvalidNetwork(format!("path {p} is not a connected walk"))
            })?;
            if nodes.first() != Some(&od.origin) || nodes.last() != Some(&od.dest) {
                return bad(format!("path {p} does not join its OD endpoints"));
            }
            match (od.class, path.station) {
                (VehicleClass::Ev, Some(m)) => {
                    let Some(st) = net.stations().get(m) else {
                        return bad(format!("path {p} charges at unknown station {m}"));
                    };
                    if !nodes.contains(&st.node) {
                        return bad(format!("path {p} charges off its walk"));
                    }
                }
                (VehicleClass::Ev, None) => return bad(format!("EV path {p} has no charging stop")),
                (VehicleClass::Gv, Some(_)) => return bad(format!("GV path {p} has a charging stop")),
                (VehicleClass::Gv, None) => {}
            }
        }
        if let Some(w) = covered.iter().position(|c| !c) {
            let od = &demand.pairs[w];
            return Err(Error::DisconnectedOd {
                origin: od.origin,
                dest: od.dest,
            });
        }
        Ok(())
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn num_arcs(&self) -> usize {
        self.num_arcs
    }

    pub fn num_stations(&self) -> usize {
        self.num_stations
    }

    pub fn num_ods(&self) -> usize {
        self.num_ods
    }

    pub fn num_generalized(&self) -> usize {
        self.num_arcs + self.num_stations
    }

    pub fn od_class(&self, od: usize) -> VehicleClass {
        self.classes[od]
    }

    /// Generalized-arc rows used by a path: its road arcs, then its hyper-arc.
    pub fn generalized_rows(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        let path = &self.paths[p];
        path.arcs
            .iter()
            .copied()
            .chain(path.station.map(|m| self.num_arcs + m))
    }

    /// Path indices grouped per OD, in path order.
    pub fn paths_by_od(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_ods];
        for (p, path) in self.paths.iter().enumerate() {
            groups[path.od].push(p);
        }
        groups
    }

    pub fn arc_path(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.num_arcs, self.paths.len());
        for (p, path) in self.paths.iter().enumerate() {
            for &a in &path.arcs {
                m[(a, p)] += 1.0;
            }
        }
        m
    }

    pub fn charge_path(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.num_stations, self.paths.len());
        for (p, path) in self.paths.iter().enumerate() {
            if let Some(s) = path.station {
                m[(s, p)] = 1.0;
            }
        }
        m
    }

    pub fn od_path(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.num_ods, self.paths.len());
        for (p, path) in self.paths.iter().enumerate() {
            m[(path.od, p)] = 1.0;
        }
        m
    }

    /// `Δ f` over generalized arcs (roads then stations).
    pub fn generalized_flows(&self, f: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.num_generalized()];
        for (p, &fp) in f.iter().enumerate() {
            for g in self.generalized_rows(p) {
                x[g] += fp;
            }
        }
        x
    }

    /// `Δᵀ c` for generalized-arc costs `c`.
    pub fn path_costs(&self, garc_costs: &[f64]) -> Vec<f64> {
        (0..self.paths.len())
            .map(|p| self.generalized_rows(p).map(|g| garc_costs[g]).sum())
            .collect()
    }

    /// `Λ f`.
    pub fn od_totals(&self, f: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.num_ods];
        for (path, &fp) in self.paths.iter().zip(f) {
            d[path.od] += fp;
        }
        d
    }
}

/// Stacks the arc-path and charge-path incidences so that a charging stop is
/// just one more arc on the path.
pub fn hyper_arc_transform(ps: &PathStructure) -> GeneralizedIncidence {
    let arc = ps.arc_path();
    let charge = ps.charge_path();
    let rows_total = ps.num_generalized();
    let mut matrix = DMatrix::zeros(rows_total, ps.len());
    matrix.rows_mut(0, ps.num_arcs()).copy_from(&arc);
    matrix.rows_mut(ps.num_arcs(), ps.num_stations()).copy_from(&charge);
    let rows = (0..ps.num_arcs())
        .map(GeneralizedArc::Road)
        .chain((0..ps.num_stations()).map(GeneralizedArc::Charge))
        .collect();
    GeneralizedIncidence { matrix, rows }
}

/// Node sequence of an arc walk, or `None` if consecutive arcs do not connect.
fn walk_nodes(net: &TransportNetwork, arcs: &[usize]) -> Option<Vec<NodeId>> {
    let first = net.arcs().get(*arcs.first()?)?;
    let mut nodes = vec![first.tail];
    for &a in arcs {
        let arc = net.arcs().get(a)?;
        if arc.tail != *nodes.last()? {
            return None;
        }
        nodes.push(arc.head);
    }
    Some(nodes)
}

/// Generates the path set: up to `k` loopless road paths per OD by free-flow
/// time; EV pairs get one copy of each road path per station on its walk.
///
/// Ordering is by OD, then free-flow time, then arc sequence, then station.
pub fn generate_paths(net: &TransportNetwork, demand: &OdDemand, k: usize) -> Result<PathStructure> {
    if k == 0 {
        return Err(Error::InvalidParams("path count k must be at least 1".into()));
    }
    demand.check_nodes(net)?;
    let graph = RoadGraph::new(net);
    let mut paths = Vec::new();
    for (w, od) in demand.pairs.iter().enumerate() {
        let src = net.node_index(od.origin).expect("checked");
        let dst = net.node_index(od.dest).expect("checked");
        let roads = graph.k_shortest(src, dst, k);
        if roads.is_empty() {
            return Err(Error::DisconnectedOd {
                origin: od.origin,
                dest: od.dest,
            });
        }
        match od.class {
            VehicleClass::Gv => paths.extend(roads.into_iter().map(|r| Path {
                od: w,
                arcs: r.arcs,
                station: None,
            })),
            VehicleClass::Ev => {
                let before = paths.len();
                for r in roads {
                    let on_walk: BTreeSet<usize> = r.nodes.iter().copied().collect();
                    for (m, st) in net.stations().iter().enumerate() {
                        let idx = net.node_index(st.node).expect("validated");
                        if on_walk.contains(&idx) {
                            paths.push(Path {
                                od: w,
                                arcs: r.arcs.clone(),
                                station: Some(m),
                            });
                        }
                    }
                }
                if paths.len() == before {
                    return Err(Error::NoFeasibleEvPath {
                        origin: od.origin,
                        dest: od.dest,
                    });
                }
            }
        }
    }
    Ok(PathStructure {
        paths,
        num_arcs: net.num_arcs(),
        num_stations: net.num_stations(),
        num_ods: demand.len(),
        classes: demand.pairs.iter().map(|p| p.class).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
struct RoadPath {
    cost: f64,
    arcs: Vec<usize>,
    nodes: Vec<usize>,
}

impl RoadPath {
    fn order(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then_with(|| self.arcs.cmp(&other.arcs))
    }
}

struct RoadGraph {
    adj: Vec<Vec<(usize, usize)>>,
    weight: Vec<f64>,
    tails: Vec<usize>,
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl RoadGraph {
    fn new(net: &TransportNetwork) -> Self {
        Self {
            adj: net.adjacency(),
            weight: net.arcs().iter().map(|a| a.free_time).collect(),
            tails: net
                .arcs()
                .iter()
                .map(|a| net.node_index(a.tail).expect("validated"))
                .collect(),
        }
    }

    fn cost(&self, arcs: &[usize]) -> f64 {
        arcs.iter().map(|&a| self.weight[a]).sum()
    }

    fn dijkstra(
        &self,
        src: usize,
        dst: usize,
        banned_arcs: &BTreeSet<usize>,
        banned_nodes: &[bool],
    ) -> Option<Vec<usize>> {
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred: Vec<Option<usize>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(HeapItem(0.0, src));
        while let Some(HeapItem(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            if u == dst {
                break;
            }
            for &(a, v) in &self.adj[u] {
                if banned_arcs.contains(&a) || banned_nodes[v] {
                    continue;
                }
                let nd = d + self.weight[a];
                if nd < dist[v] {
                    dist[v] = nd;
                    pred[v] = Some(a);
                    heap.push(HeapItem(nd, v));
                }
            }
        }
        if !dist[dst].is_finite() {
            return None;
        }
        let mut arcs = Vec::new();
        let mut v = dst;
        while v != src {
            let a = pred[v]?;
            arcs.push(a);
            v = self.tails[a];
        }
        arcs.reverse();
        Some(arcs)
    }

    fn make_path(&self, src: usize, arcs: Vec<usize>) -> RoadPath {
        let mut nodes = vec![src];
        for &a in &arcs {
            let head = self.adj[self.tails[a]]
                .iter()
                .find(|&&(b, _)| b == a)
                .map(|&(_, h)| h)
                .expect("arc in adjacency");
            nodes.push(head);
        }
        RoadPath {
            cost: self.cost(&arcs),
            arcs,
            nodes,
        }
    }

    /// Yen's algorithm for loopless k-shortest paths.
    fn k_shortest(&self, src: usize, dst: usize, k: usize) -> Vec<RoadPath> {
        let n = self.adj.len();
        let Some(first) = self.dijkstra(src, dst, &BTreeSet::new(), &vec![false; n]) else {
            return Vec::new();
        };
        let mut accepted = vec![self.make_path(src, first)];
        let mut candidates: Vec<RoadPath> = Vec::new();

        while accepted.len() < k {
            let last = accepted.last().expect("non-empty").clone();
            for i in 0..last.arcs.len() {
                let spur = last.nodes[i];
                let root = &last.arcs[..i];
                let mut banned_arcs = BTreeSet::new();
                for p in &accepted {
                    if p.arcs.len() > i && p.arcs[..i] == *root {
                        banned_arcs.insert(p.arcs[i]);
                    }
                }
                let mut banned_nodes = vec![false; n];
                for &v in &last.nodes[..i] {
                    banned_nodes[v] = true;
                }
                if let Some(spur_arcs) = self.dijkstra(spur, dst, &banned_arcs, &banned_nodes) {
                    let mut arcs = root.to_vec();
                    arcs.extend(spur_arcs);
                    let cand = self.make_path(src, arcs);
                    if !accepted.iter().any(|p| p.arcs == cand.arcs)
                        && !candidates.iter().any(|p| p.arcs == cand.arcs)
                    {
                        candidates.push(cand);
                    }
                }
            }
            if candidates.is_empty() {
                break;
            }
            let best = candidates
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.order(b.1))
                .map(|(i, _)| i)
                .expect("non-empty");
            accepted.push(candidates.swap_remove(best));
        }
        accepted.sort_by(|a, b| a.order(b));
        accepted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::network::{LatencyModel, OdPair, RoadArc};

    fn arc(t: NodeId, h: NodeId, time: f64) -> RoadArc {
        RoadArc {
            tail: t,
            head: h,
            free_time: time,
            capacity: 1.0,
        }
    }

    fn gv(o: NodeId, d: NodeId) -> OdDemand {
        OdDemand::new(vec![OdPair {
            origin: o,
            dest: d,
            demand: 1.0,
            class: VehicleClass::Gv,
        }])
        .unwrap()
    }

    #[test]
    fn illustrative_case_matrices() {
        let s = fixtures::illustrative();
        let arc = DMatrix::from_row_slice(
            6,
            4,
            &[
                1., 0., 1., 0., //
                1., 0., 0., 0., //
                0., 1., 0., 1., //
                0., 0., 0., 1., //
                0., 0., 1., 0., //
                0., 1., 0., 0.,
            ],
        );
        let charge = DMatrix::from_row_slice(2, 4, &[1., 0., 1., 0., 0., 1., 0., 1.]);
        let od = DMatrix::from_row_slice(2, 4, &[1., 1., 0., 0., 0., 0., 1., 1.]);
        assert_eq!(s.paths.arc_path(), arc);
        assert_eq!(s.paths.charge_path(), charge);
        assert_eq!(s.paths.od_path(), od);

        let g = hyper_arc_transform(&s.paths);
        assert_eq!(g.matrix.nrows(), 8);
        assert_eq!(g.matrix.rows(0, 6), arc);
        assert_eq!(g.matrix.rows(6, 2), charge);
        assert!(!g.is_hyper_arc(5) && g.is_hyper_arc(6) && g.is_hyper_arc(7));
    }

    #[test]
    fn single_arc_gv() {
        let net = TransportNetwork::new([1, 2], vec![arc(1, 2, 1.0)], vec![], LatencyModel::Standard)
            .unwrap();
        let ps = generate_paths(&net, &gv(1, 2), 1).unwrap();
        assert_eq!(ps.arc_path(), DMatrix::from_element(1, 1, 1.0));
        assert_eq!(ps.od_path(), DMatrix::from_element(1, 1, 1.0));
        assert_eq!(ps.charge_path().shape(), (0, 1));
        let g = hyper_arc_transform(&ps);
        assert_eq!(g.matrix, ps.arc_path());
    }

    #[test]
    fn parallel_arcs_give_identity() {
        let net = TransportNetwork::new(
            [1, 2],
            vec![arc(1, 2, 1.0), arc(1, 2, 1.0)],
            vec![],
            LatencyModel::Standard,
        )
        .unwrap();
        let ps = generate_paths(&net, &gv(1, 2), 2).unwrap();
        assert_eq!(ps.arc_path(), DMatrix::identity(2, 2));
    }

    #[test]
    fn yen_orders_by_cost_and_is_loopless() {
        // 1 -> 2 -> 4, 1 -> 3 -> 4, 1 -> 4, plus 2 <-> 3 shortcuts
        let net = TransportNetwork::new(
            [1, 2, 3, 4],
            vec![
                arc(1, 2, 1.0),
                arc(2, 4, 1.0),
                arc(1, 3, 1.5),
                arc(3, 4, 1.0),
                arc(1, 4, 3.0),
                arc(2, 3, 0.2),
                arc(3, 2, 0.2),
            ],
            vec![],
            LatencyModel::Standard,
        )
        .unwrap();
        let ps = generate_paths(&net, &gv(1, 4), 10).unwrap();
        let costs: Vec<f64> = ps
            .paths()
            .iter()
            .map(|p| p.arcs.iter().map(|&a| net.arcs()[a].free_time).sum())
            .collect();
        assert!(costs.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(ps.paths()[0].arcs, vec![0, 1]);
        // all simple paths: 1-2-4, 1-2-3-4, 1-3-4, 1-3-2-4, 1-4
        assert_eq!(ps.len(), 5);
        for p in ps.paths() {
            let nodes = walk_nodes(&net, &p.arcs).unwrap();
            let set: BTreeSet<_> = nodes.iter().collect();
            assert_eq!(set.len(), nodes.len());
        }
    }

    #[test]
    fn disconnected_and_no_station_errors() {
        let net = TransportNetwork::new([1, 2, 3], vec![arc(1, 2, 1.0)], vec![], LatencyModel::Standard)
            .unwrap();
        assert!(matches!(
            generate_paths(&net, &gv(1, 3), 1),
            Err(Error::DisconnectedOd { .. })
        ));
        let ev = OdDemand::new(vec![OdPair {
            origin: 1,
            dest: 2,
            demand: 1.0,
            class: VehicleClass::Ev,
        }])
        .unwrap();
        assert!(matches!(
            generate_paths(&net, &ev, 1),
            Err(Error::NoFeasibleEvPath { .. })
        ));
    }

    #[test]
    fn column_sums() {
        let s = fixtures::illustrative();
        let od = s.paths.od_path();
        let charge = s.paths.charge_path();
        for p in 0..s.paths.len() {
            assert_eq!(od.column(p).sum(), 1.0);
            assert_eq!(charge.column(p).sum(), 1.0);
        }
    }

    #[test]
    fn deterministic() {
        let a = fixtures::nguyen_dupuis();
        let b = fixtures::nguyen_dupuis();
        assert_eq!(a.paths, b.paths);
    }

    #[test]
    fn from_paths_rejects_off_walk_station() {
        let s = fixtures::illustrative();
        let mut paths = s.paths.paths().to_vec();
        paths[0].station = Some(1);
        assert!(PathStructure::from_paths(&s.net, &s.demand, paths).is_err());
    }
}
