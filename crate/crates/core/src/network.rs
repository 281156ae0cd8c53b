//! Transportation-side data model: road graph, charging stations, OD demand
//! and the scalar model parameters shared by every pipeline.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = u64;

/// Latency family used for road arcs and charging stations.
///
/// `Standard` is the BPR function for roads and a cubic queueing delay for
/// stations. `Linear` replaces both by `t0 * (1 + x/u)` and `t0 + tbar * x/u`,
/// which is handy for hand-checkable fixtures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyModel {
    #[default]
    Standard,
    Linear,
}

impl std::str::FromStr for LatencyModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" | "bpr" => Ok(LatencyModel::Standard),
            "linear" => Ok(LatencyModel::Linear),
            other => Err(Error::InvalidParams(format!("unknown latency model `{other}`"))),
        }
    }
}

/// BPR travel time `t0 (1 + 0.15 (x/u)^4)`.
pub fn latency_arc(x: f64, free_time: f64, capacity: f64) -> f64 {
    let r = x / capacity;
    free_time * (1.0 + 0.15 * r * r * r * r)
}

/// Charging time `t0 + tbar (x/u)^3`.
pub fn latency_fcs(x: f64, free_charge_time: f64, wait_coeff: f64, capacity: f64) -> f64 {
    let r = x / capacity;
    free_charge_time + wait_coeff * r * r * r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadArc {
    pub tail: NodeId,
    pub head: NodeId,
    /// Free-flow travel time in hours.
    pub free_time: f64,
    /// Vehicles per period.
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub node: NodeId,
    pub free_charge_time: f64,
    pub wait_coeff: f64,
    pub capacity: f64,
    /// Belongs to the provider whose prices are optimized.
    pub owned: bool,
    /// Price used whenever the station is not a decision variable.
    pub rival_price: f64,
}

impl RoadArc {
    pub fn time(&self, model: LatencyModel, x: f64) -> f64 {
        match model {
            LatencyModel::Standard => latency_arc(x, self.free_time, self.capacity),
            LatencyModel::Linear => self.free_time * (1.0 + x / self.capacity),
        }
    }

    pub fn time_derivative(&self, model: LatencyModel, x: f64) -> f64 {
        match model {
            LatencyModel::Standard => {
                let u4 = self.capacity.powi(4);
                self.free_time * 0.6 * x * x * x / u4
            }
            LatencyModel::Linear => self.free_time / self.capacity,
        }
    }

    /// `∫_0^x t(θ) dθ`.
    pub fn time_integral(&self, model: LatencyModel, x: f64) -> f64 {
        match model {
            LatencyModel::Standard => {
                let u4 = self.capacity.powi(4);
                self.free_time * (x + 0.03 * x.powi(5) / u4)
            }
            LatencyModel::Linear => self.free_time * (x + 0.5 * x * x / self.capacity),
        }
    }
}

impl Station {
    pub fn time(&self, model: LatencyModel, x: f64) -> f64 {
        match model {
            LatencyModel::Standard => {
                latency_fcs(x, self.free_charge_time, self.wait_coeff, self.capacity)
            }
            LatencyModel::Linear => self.free_charge_time + self.wait_coeff * x / self.capacity,
        }
    }

    pub fn time_derivative(&self, model: LatencyModel, x: f64) -> f64 {
        match model {
            LatencyModel::Standard => 3.0 * self.wait_coeff * x * x / self.capacity.powi(3),
            LatencyModel::Linear => self.wait_coeff / self.capacity,
        }
    }

    pub fn time_integral(&self, model: LatencyModel, x: f64) -> f64 {
        match model {
            LatencyModel::Standard => {
                self.free_charge_time * x
                    + self.wait_coeff * x.powi(4) / (4.0 * self.capacity.powi(3))
            }
            LatencyModel::Linear => {
                self.free_charge_time * x + 0.5 * self.wait_coeff * x * x / self.capacity
            }
        }
    }
}

/// Directed road graph with charging stations.
///
/// Stations are kept sorted by node id; that order defines the rows of the
/// charge-path matrix and the order of the full price vector.
#[derive(Clone, Debug, Serialize)]
pub struct TransportNetwork {
    nodes: Vec<NodeId>,
    arcs: Vec<RoadArc>,
    stations: Vec<Station>,
    latency: LatencyModel,
    #[serde(skip)]
    index: HashMap<NodeId, usize>,
}

impl TransportNetwork {
    pub fn new(
        nodes: impl IntoIterator<Item = NodeId>,
        arcs: Vec<RoadArc>,
        mut stations: Vec<Station>,
        latency: LatencyModel,
    ) -> Result<Self> {
        let mut nodes: Vec<NodeId> = nodes.into_iter().collect();
        nodes.sort_unstable();
        nodes.dedup();
        let index: HashMap<NodeId, usize> =
            nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();

        for (i, a) in arcs.iter().enumerate() {
            for n in [a.tail, a.head] {
                if !index.contains_key(&n) {
                    return Err(Error::UnknownNode {
                        node: n,
                        context: format!("endpoint of arc {}", i + 1),
                    });
                }
            }
            if a.tail == a.head {
                return Err(Error::InvalidNetwork(format!("arc {} is a self-loop", i + 1)));
            }
            if !(a.free_time > 0.0 && a.capacity > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "arc {} needs positive free time and capacity",
                    i + 1
                )));
            }
        }

        stations.sort_by_key(|s| s.node);
        for w in stations.windows(2) {
            if w[0].node == w[1].node {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate charging station at node {}",
                    w[0].node
                )));
            }
        }
        for s in &stations {
            if !index.contains_key(&s.node) {
                return Err(Error::UnknownNode {
                    node: s.node,
                    context: "charging station".into(),
                });
            }
            if !(s.free_charge_time > 0.0 && s.capacity > 0.0 && s.wait_coeff >= 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "station at node {} needs positive free charge time and capacity",
                    s.node
                )));
            }
        }

        Ok(Self {
            nodes,
            arcs,
            stations,
            latency,
            index,
        })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn arcs(&self) -> &[RoadArc] {
        &self.arcs
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn latency(&self) -> LatencyModel {
        self.latency
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn num_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn node_index(&self, node: NodeId) -> Option<usize> {
        self.index.get(&node).copied()
    }

    pub fn station_index(&self, node: NodeId) -> Option<usize> {
        self.stations.binary_search_by_key(&node, |s| s.node).ok()
    }

    /// Station indices owned by the optimized provider, in station order.
    pub fn owned_stations(&self) -> Vec<usize> {
        (0..self.stations.len())
            .filter(|&m| self.stations[m].owned)
            .collect()
    }

    /// Rival prices for every station; owned entries are overwritten by callers.
    pub fn base_prices(&self) -> Vec<f64> {
        self.stations.iter().map(|s| s.rival_price).collect()
    }

    /// Marks exactly the given stations as owned.
    pub fn with_owned(mut self, owned: &[usize]) -> Self {
        for (m, s) in self.stations.iter_mut().enumerate() {
            s.owned = owned.contains(&m);
        }
        self
    }

    pub fn with_latency(mut self, latency: LatencyModel) -> Self {
        self.latency = latency;
        self
    }

    /// Outgoing adjacency as `(arc index, head index)` lists, arcs in file order.
    pub(crate) fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (a, arc) in self.arcs.iter().enumerate() {
            adj[self.index[&arc.tail]].push((a, self.index[&arc.head]));
        }
        adj
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleClass {
    #[serde(rename = "EV")]
    Ev,
    #[serde(rename = "GV")]
    Gv,
}

impl std::str::FromStr for VehicleClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "EV" | "ev" => Ok(VehicleClass::Ev),
            "GV" | "gv" => Ok(VehicleClass::Gv),
            other => Err(format!("unknown vehicle class `{other}` (expected EV or GV)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: NodeId,
    pub dest: NodeId,
    pub demand: f64,
    pub class: VehicleClass,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OdDemand {
    pub pairs: Vec<OdPair>,
}

impl OdDemand {
    pub fn new(pairs: Vec<OdPair>) -> Result<Self> {
        for p in &pairs {
            if p.origin == p.dest {
                return Err(Error::InvalidNetwork(format!(
                    "OD pair {} -> {} has identical origin and destination",
                    p.origin, p.dest
                )));
            }
            if !(p.demand > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "OD pair {} -> {} needs positive demand",
                    p.origin, p.dest
                )));
            }
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn demands(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.demand).collect()
    }

    pub fn check_nodes(&self, net: &TransportNetwork) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            for n in [p.origin, p.dest] {
                if net.node_index(n).is_none() {
                    return Err(Error::UnknownNode {
                        node: n,
                        context: format!("OD pair {}", i + 1),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Energy delivered per charging session (kWh).
    pub charge_energy: f64,
    /// Value of time (money per hour).
    pub time_value: f64,
    pub price_lower: f64,
    pub price_upper: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            charge_energy: 50.0,
            time_value: 2.0,
            price_lower: 200.0,
            price_upper: 230.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.charge_energy > 0.0 && self.time_value > 0.0) {
            return Err(Error::InvalidParams(
                "charge energy and time value must be positive".into(),
            ));
        }
        if !(self.price_lower < self.price_upper) {
            return Err(Error::InvalidParams(format!(
                "price bounds must satisfy lower < upper (got {} and {})",
                self.price_lower, self.price_upper
            )));
        }
        Ok(())
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.price_lower + self.price_upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arc(t: NodeId, h: NodeId) -> RoadArc {
        RoadArc {
            tail: t,
            head: h,
            free_time: 1.0,
            capacity: 1.0,
        }
    }

    #[test]
    fn latency_examples() {
        assert_eq!(latency_arc(0.0, 3.0, 7.0), 3.0);
        assert!((latency_arc(5.0, 1.0, 5.0) - 1.15).abs() < 1e-15);
        assert!((latency_fcs(4.0, 1.0, 1.0, 2.0) - 9.0).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let a = RoadArc {
            tail: 1,
            head: 2,
            free_time: 0.7,
            capacity: 3.0,
        };
        let s = Station {
            node: 1,
            free_charge_time: 0.5,
            wait_coeff: 0.8,
            capacity: 2.5,
            owned: true,
            rival_price: 1.0,
        };
        for model in [LatencyModel::Standard, LatencyModel::Linear] {
            for &x in &[0.3, 1.7, 4.2] {
                let h = 1e-5;
                let fd = (a.time(model, x + h) - a.time(model, x - h)) / (2.0 * h);
                assert!((fd - a.time_derivative(model, x)).abs() <= 1e-6 * fd.abs().max(1.0));
                let fd = (s.time(model, x + h) - s.time(model, x - h)) / (2.0 * h);
                assert!((fd - s.time_derivative(model, x)).abs() <= 1e-6 * fd.abs().max(1.0));
                let fd = (a.time_integral(model, x + h) - a.time_integral(model, x - h)) / (2.0 * h);
                assert!((fd - a.time(model, x)).abs() <= 1e-6 * fd.abs().max(1.0));
                let fd = (s.time_integral(model, x + h) - s.time_integral(model, x - h)) / (2.0 * h);
                assert!((fd - s.time(model, x)).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rejects_dangling_arc() {
        let err = TransportNetwork::new([1, 2], vec![arc(1, 3)], vec![], LatencyModel::Standard)
            .unwrap_err();
        assert!(matches!(err, Error::UnknownNode { node: 3, .. }));
    }

    #[test]
    fn rejects_nonpositive_capacity() {
        let mut a = arc(1, 2);
        a.capacity = 0.0;
        assert!(TransportNetwork::new([1, 2], vec![a], vec![], LatencyModel::Standard).is_err());
    }

    #[test]
    fn stations_sorted_by_node() {
        let st = |n| Station {
            node: n,
            free_charge_time: 1.0,
            wait_coeff: 1.0,
            capacity: 1.0,
            owned: n == 3,
            rival_price: 1.0,
        };
        let net = TransportNetwork::new(
            [1, 2, 3],
            vec![arc(1, 2), arc(2, 3)],
            vec![st(3), st(2)],
            LatencyModel::Standard,
        )
        .unwrap();
        assert_eq!(net.stations()[0].node, 2);
        assert_eq!(net.owned_stations(), vec![1]);
        assert_eq!(net.station_index(3), Some(1));
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::default().validate().is_ok());
        let bad = ModelParams {
            price_lower: 5.0,
            price_upper: 5.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn demand_validation() {
        let p = |o, d, q| OdPair {
            origin: o,
            dest: d,
            demand: q,
            class: VehicleClass::Ev,
        };
        assert!(OdDemand::new(vec![p(1, 1, 1.0)]).is_err());
        assert!(OdDemand::new(vec![p(1, 2, 0.0)]).is_err());
        assert!(OdDemand::new(vec![p(1, 2, 1.0)]).is_ok());
    }
}
