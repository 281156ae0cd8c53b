//! Profit-maximizing EV charging prices by gradient descent on generalized
//! sensitivity analysis of the user equilibrium.
//!
//! The pipeline: [`ue::solve_ue`] computes the path-based equilibrium at given
//! station prices, [`sensitivity::sensitivity`] differentiates the charging
//! flows with respect to the owned prices, and [`pricing::gdgsa`] climbs the
//! provider's profit. [`opf`] closes the loop with the power network and
//! [`verify`] holds the brute-force oracles.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupled;
pub mod error;
pub mod fixtures;
pub mod network;
pub mod opf;
pub mod paths;
pub mod pricing;
pub mod qp;
pub mod scenario;
pub mod sensitivity;
pub mod socp;
pub mod tntp;
pub mod ue;
pub mod verify;

pub use error::{Error, Result};
pub use network::{
    LatencyModel, ModelParams, NodeId, OdDemand, OdPair, RoadArc, Station, TransportNetwork,
    VehicleClass,
};
pub use paths::{generate_paths, hyper_arc_transform, GeneralizedIncidence, Path, PathStructure};
pub use scenario::Scenario;
pub use tntp::{load_tntp, parse_tntp};
pub use ue::{solve_ue, solve_ue_from, UeOptions, UeSolution};
pub use coupled::{coupled_fixed_point, impact_report, CouplingConfig, Strategy};
pub use opf::{load_power, parse_power, solve_opf, PowerNetwork};
pub use pricing::{gdgsa, gdgsa_with, GdgsaConfig, PricingProblem, Trajectory};
pub use sensitivity::{sensitivity, SensitivityOptions, SensitivityResult};
pub use verify::{certify_ue, fd_check, fd_gradient, grid_enumerate, GridSpec};

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
