use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{ModelParams, OdDemand, TransportNetwork};
use crate::paths::{generate_paths, PathStructure};

/// Everything a traffic-assignment solve reads: network, demand, parameters
/// and the fixed path set. Shared read-only across concurrent solves.
#[derive(Clone, Debug, Serialize)]
pub struct Scenario {
    pub net: TransportNetwork,
    pub demand: OdDemand,
    pub params: ModelParams,
    pub paths: PathStructure,
}

impl Scenario {
    /// Builds the scenario and enumerates `k` road paths per OD pair.
    pub fn new(net: TransportNetwork, demand: OdDemand, params: ModelParams, k: usize) -> Result<Self> {
        params.validate()?;
        let paths = generate_paths(&net, &demand, k)?;
        Ok(Self {
            net,
            demand,
            params,
            paths,
        })
    }

    pub fn with_paths(
        net: TransportNetwork,
        demand: OdDemand,
        params: ModelParams,
        paths: PathStructure,
    ) -> Result<Self> {
        params.validate()?;
        paths.validate(&net, &demand)?;
        Ok(Self {
            net,
            demand,
            params,
            paths,
        })
    }

    /// Full station price vector: rival prices everywhere except `owned`,
    /// which take `prices` in order.
    pub fn full_prices(&self, owned: &[usize], prices: &[f64]) -> Result<Vec<f64>> {
        if owned.len() != prices.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} owned stations but {} prices",
                owned.len(),
                prices.len()
            )));
        }
        let mut full = self.net.base_prices();
        for (&m, &p) in owned.iter().zip(prices) {
            *full
                .get_mut(m)
                .ok_or_else(|| Error::DimensionMismatch(format!("station index {m} out of range")))? = p;
        }
        Ok(full)
    }
}
