//! Small networks shipped with the crate. Used by the tests, the CLI
//! defaults and the Python smoke test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::{
    LatencyModel, ModelParams, NodeId, OdDemand, OdPair, RoadArc, Station, TransportNetwork,
    VehicleClass,
};
use crate::coupled::CouplingConfig;
use crate::opf::{parse_power, PowerNetwork};
use crate::scenario::Scenario;
use crate::tntp::parse_tntp;

pub const ILLUSTRATIVE_NET: &str = include_str!("../fixtures/illustrative.net");
pub const ILLUSTRATIVE_TRIPS: &str = include_str!("../fixtures/illustrative.trips");
pub const ILLUSTRATIVE_FCS: &str = include_str!("../fixtures/illustrative.fcs");
pub const ND_NET: &str = include_str!("../fixtures/nguyen_dupuis.net");
pub const ND_TRIPS: &str = include_str!("../fixtures/nguyen_dupuis.trips");
pub const ND_FCS: &str = include_str!("../fixtures/nguyen_dupuis.fcs");
pub const POWER_4BUS: &str = include_str!("../fixtures/four_bus.pn");

/// Paths enumerated per OD pair on the Nguyen-Dupuis fixture.
pub const ND_K: usize = 8;

/// Charging load conversion for the Nguyen-Dupuis fixture: flows are in
/// thousands of vehicles, energy in kWh and charging time in minutes, so
/// `E x / t⁰` is in thousands of kWh per minute, i.e. 60 MW.
pub const ND_LOAD_SCALE: f64 = 60.0;

/// Parameters of the five-node toy: unit energy and time value, prices in [0, 10].
pub fn illustrative_params() -> ModelParams {
    ModelParams {
        charge_energy: 1.0,
        time_value: 1.0,
        price_lower: 0.0,
        price_upper: 10.0,
    }
}

/// Parameters used with the Nguyen-Dupuis fixture.
pub fn nguyen_dupuis_params() -> ModelParams {
    ModelParams {
        charge_energy: 50.0,
        time_value: 300.0,
        price_lower: 200.0,
        price_upper: 230.0,
    }
}

/// Five-node toy where every generalized arc costs `1 + x`. Station 2 is
/// owned, station 3 is the rival; both start at price 1.
pub fn illustrative() -> Scenario {
    let (net, demand) = parse_tntp(
        (ILLUSTRATIVE_NET, "illustrative.net"),
        (ILLUSTRATIVE_TRIPS, "illustrative.trips"),
        (ILLUSTRATIVE_FCS, "illustrative.fcs"),
    )
    .expect("illustrative fixture parses");
    Scenario::new(net, demand, illustrative_params(), 2).expect("illustrative fixture is valid")
}

/// 13-node Nguyen-Dupuis network with four stations. The provider owns the
/// stations at nodes 9 and 13, each with its own price, so the price space
/// is two-dimensional.
pub fn nguyen_dupuis() -> Scenario {
    let (net, demand) = parse_tntp(
        (ND_NET, "nguyen_dupuis.net"),
        (ND_TRIPS, "nguyen_dupuis.trips"),
        (ND_FCS, "nguyen_dupuis.fcs"),
    )
    .expect("Nguyen-Dupuis fixture parses");
    Scenario::new(net, demand, nguyen_dupuis_params(), ND_K).expect("Nguyen-Dupuis fixture is valid")
}

fn arc(tail: NodeId, head: NodeId, free_time: f64, capacity: f64) -> RoadArc {
    RoadArc {
        tail,
        head,
        free_time,
        capacity,
    }
}

fn station(node: NodeId, owned: bool, rival_price: f64) -> Station {
    Station {
        node,
        free_charge_time: 1.0,
        wait_coeff: 1.0,
        capacity: 1.0,
        owned,
        rival_price,
    }
}

fn od(origin: NodeId, dest: NodeId, demand: f64, class: VehicleClass) -> OdPair {
    OdPair {
        origin,
        dest,
        demand,
        class,
    }
}

/// Two identical BPR arcs from 1 to 2 carrying gasoline demand `d`.
pub fn parallel_arcs(d: f64) -> Scenario {
    let net = TransportNetwork::new(
        [1, 2],
        vec![arc(1, 2, 1.0, 1.0), arc(1, 2, 1.0, 1.0)],
        vec![],
        LatencyModel::Standard,
    )
    .unwrap();
    let demand = OdDemand::new(vec![od(1, 2, d, VehicleClass::Gv)]).unwrap();
    Scenario::new(net, demand, illustrative_params(), 2).unwrap()
}

/// One arc with cost `1 + x` and gasoline demand `d`.
pub fn single_linear_arc(d: f64) -> Scenario {
    let net = TransportNetwork::new([1, 2], vec![arc(1, 2, 1.0, 1.0)], vec![], LatencyModel::Linear)
        .unwrap();
    let demand = OdDemand::new(vec![od(1, 2, d, VehicleClass::Gv)]).unwrap();
    Scenario::new(net, demand, illustrative_params(), 1).unwrap()
}

/// EV network whose equilibrated columns are linearly dependent: two
/// parallel arc pairs in series around owned station 2 give four paths with
/// `ac + bd = ad + bc`. A rival route through station 4 keeps the price
/// response non-trivial.
pub fn eli_dependent() -> Scenario {
    let net = TransportNetwork::new(
        [1, 2, 3, 4],
        vec![
            arc(1, 2, 1.0, 1.0),
            arc(1, 2, 1.0, 1.0),
            arc(2, 3, 1.0, 1.0),
            arc(2, 3, 1.0, 1.0),
            arc(1, 4, 1.0, 1.0),
            arc(4, 3, 1.0, 1.0),
        ],
        vec![station(2, true, 1.0), station(4, false, 1.0)],
        LatencyModel::Standard,
    )
    .unwrap();
    let demand = OdDemand::new(vec![od(1, 3, 3.0, VehicleClass::Ev)]).unwrap();
    Scenario::new(net, demand, illustrative_params(), 5).unwrap()
}

/// The five-node toy with a gasoline OD sharing its road arcs.
pub fn mixed_toy() -> Scenario {
    let base = illustrative();
    let mut pairs = base.demand.pairs.clone();
    pairs.push(od(1, 4, 1.0, VehicleClass::Gv));
    pairs.push(od(1, 5, 0.5, VehicleClass::Gv));
    let demand = OdDemand::new(pairs).unwrap();
    Scenario::new(base.net, demand, illustrative_params(), 2).unwrap()
}

/// The five-node toy plus a separate gasoline corridor 6 -> 7 that shares
/// no arc with any EV path.
pub fn mixed_disjoint() -> Scenario {
    let base = illustrative();
    let mut arcs = base.net.arcs().to_vec();
    arcs.push(arc(6, 7, 1.0, 1.0));
    arcs.push(arc(6, 7, 2.0, 1.0));
    let net = TransportNetwork::new(
        1..=7,
        arcs,
        base.net.stations().to_vec(),
        LatencyModel::Linear,
    )
    .unwrap();
    let mut pairs = base.demand.pairs.clone();
    pairs.push(od(6, 7, 2.0, VehicleClass::Gv));
    let demand = OdDemand::new(pairs).unwrap();
    Scenario::new(net, demand, illustrative_params(), 2).unwrap()
}

/// Random layered EV network: origin 1, two middle layers of `width`
/// nodes, destination `2 * width + 2`. Every middle node of the first layer
/// hosts a station, and the first `owned` of them belong to the provider.
pub fn random_layered(seed: u64, width: usize, owned: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = width as NodeId;
    let dest = 2 * w + 2;
    let mut arcs = Vec::new();
    for i in 0..w {
        arcs.push(arc(1, 2 + i, rng.random_range(1.0..3.0), rng.random_range(1.0..3.0)));
    }
    for i in 0..w {
        for j in 0..w {
            if i == j || rng.random_bool(0.5) {
                arcs.push(arc(2 + i, 2 + w + j, rng.random_range(1.0..3.0), rng.random_range(1.0..3.0)));
            }
        }
    }
    for j in 0..w {
        arcs.push(arc(2 + w + j, dest, rng.random_range(1.0..3.0), rng.random_range(1.0..3.0)));
    }
    let stations = (0..w)
        .map(|i| Station {
            node: 2 + i,
            free_charge_time: rng.random_range(0.5..1.5),
            wait_coeff: rng.random_range(0.5..2.0),
            capacity: rng.random_range(1.0..3.0),
            owned: (i as usize) < owned,
            rival_price: 5.0,
        })
        .collect();
    let net = TransportNetwork::new(1..=dest, arcs, stations, LatencyModel::Standard).unwrap();
    let mut pairs = vec![od(1, dest, rng.random_range(1.0..4.0), VehicleClass::Ev)];
    if rng.random_bool(0.5) {
        pairs.push(od(1, 2 + w, rng.random_range(0.5..2.0), VehicleClass::Ev));
    }
    let demand = OdDemand::new(pairs).unwrap();
    Scenario::new(net, demand, illustrative_params(), 6).unwrap()
}

/// The four-bus feeder paired with the Nguyen-Dupuis stations.
pub fn four_bus() -> PowerNetwork {
    parse_power(POWER_4BUS, "four_bus.pn").expect("four-bus fixture parses")
}

/// Coupling settings for Nguyen-Dupuis with the four-bus feeder.
pub fn nd_coupling() -> CouplingConfig {
    CouplingConfig {
        load_scale: ND_LOAD_SCALE,
        ..CouplingConfig::default()
    }
}
