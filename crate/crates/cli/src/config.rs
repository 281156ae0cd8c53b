//! Run configuration: a flat TOML file whose keys can all be overridden by
//! command-line flags of the same name.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use evprice::coupled::CouplingConfig;
use evprice::{GdgsaConfig, ModelParams, SensitivityOptions, UeOptions};

use crate::Failure;

macro_rules! settings {
    ($( $(#[$meta:meta])* $name:ident : $ty:ty ),* $(,)?) => {
        /// Every key is optional; unset keys fall back to the defaults in
        /// [`Settings::resolved`].
        #[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct Settings {
            $( $(#[$meta])* #[serde(skip_serializing_if = "Option::is_none")] pub $name: Option<$ty>, )*
        }

        impl Settings {
            /// Keys set in `over` win.
            pub fn merged(self, over: Settings) -> Settings {
                Settings { $( $name: over.$name.or(self.$name), )* }
            }
        }
    };
}

settings! {
    /// Network file (TNTP-style arcs).
    #[arg(long, global = true)]
    network: PathBuf,
    /// Trip table.
    #[arg(long, global = true)]
    trips: PathBuf,
    /// Charging station file.
    #[arg(long, global = true)]
    fcs: PathBuf,
    /// Radial power network, needed by coupled-run and impact-report.
    #[arg(long, global = true)]
    power: PathBuf,
    /// Directory for artifacts [default: evprice-out].
    #[arg(long, global = true)]
    output_dir: PathBuf,
    /// Energy per charging session [default: 50].
    #[arg(long, global = true)]
    energy: f64,
    /// Value of time [default: 2].
    #[arg(long, global = true)]
    time_value: f64,
    /// Lower price bound [default: 200].
    #[arg(long, global = true)]
    price_lower: f64,
    /// Upper price bound [default: 230].
    #[arg(long, global = true)]
    price_upper: f64,
    /// Paths generated per OD pair [default: 8].
    #[arg(long, global = true)]
    paths_per_od: usize,
    /// Owned-station prices, comma separated. Evaluation point for ue-solve,
    /// sensitivity and fd-check; start point for price-optimize and
    /// coupled-run [default: rival prices for ue-solve and sensitivity, box
    /// midpoint otherwise].
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    lambda: Vec<f64>,
    /// Relative duality gap of the equilibrium solver [default: 1e-10].
    #[arg(long, global = true)]
    ue_tol: f64,
    /// Iteration cap of the equilibrium solver [default: 50000].
    #[arg(long, global = true)]
    ue_max_iters: usize,
    /// Relative cost margin for non-equilibrated paths [default: 1e-4].
    #[arg(long, global = true)]
    cost_eps: f64,
    /// Flow below which a path counts as unused [default: 1e-6].
    #[arg(long, global = true)]
    flow_eps: f64,
    /// Direction scaling gamma [default: 2].
    #[arg(long, global = true)]
    gamma: f64,
    /// Base stepsize [default: 1].
    #[arg(long, global = true)]
    alpha0: f64,
    /// Largest stepsize multiple tried [default: 50].
    #[arg(long, global = true)]
    k_max: usize,
    /// Profit gain at which the price search stops [default: 1e-3].
    #[arg(long, global = true)]
    eps: f64,
    /// Iteration cap of the price search [default: 200].
    #[arg(long, global = true)]
    max_iters: usize,
    /// Number of price-optimize starts; extra starts are drawn from `seed` [default: 1].
    #[arg(long, global = true)]
    starts: usize,
    /// Random seed for extra starts and fd-check points [default: 0].
    #[arg(long, global = true)]
    seed: u64,
    /// Grid points per price coordinate [default: 160].
    #[arg(long, global = true)]
    grid_points: usize,
    /// Grid step; replaces grid_points when set.
    #[arg(long, global = true)]
    grid_step: f64,
    /// Largest grid allowed [default: 1000000].
    #[arg(long, global = true)]
    grid_cap: usize,
    /// Finite-difference step [default: 1e-3].
    #[arg(long, global = true)]
    fd_delta: f64,
    /// Random interior points checked by fd-check besides `lambda` [default: 0].
    #[arg(long, global = true)]
    fd_points: usize,
    /// Charging load multiplier to MW [default: 1].
    #[arg(long, global = true)]
    load_scale: f64,
    /// LMP multiplier to price units [default: 1].
    #[arg(long, global = true)]
    lmp_scale: f64,
    /// Profit change at which the coupled loop stops [default: 1e-3].
    #[arg(long, global = true)]
    coupled_eps: f64,
    /// Cycle cap of the coupled loop [default: 20].
    #[arg(long, global = true)]
    max_cycles: usize,
    /// Worker threads [default: available cores].
    #[arg(long, global = true)]
    threads: usize,
    /// Record wall-clock timings in trajectories.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    timings: bool,
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

impl Settings {
    /// Relative input paths in the file are taken relative to the file's
    /// directory; `output_dir` stays relative to the working directory.
    pub fn from_file(path: &Path) -> Result<Settings, Failure> {
        let src = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut s: Settings = toml::from_str(&src).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut s.network, &mut s.trips, &mut s.fcs, &mut s.power].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(s)
    }

    /// Fills every unset key with its default, except file paths, `lambda`,
    /// `grid_step` and `threads`, which have no fixed default.
    pub fn resolved(self) -> Settings {
        let ue = UeOptions::with_tol(1e-10);
        let sens = SensitivityOptions::default();
        let g = GdgsaConfig::default();
        let c = CouplingConfig::default();
        let p = ModelParams::default();
        Settings {
            output_dir: self.output_dir.or(Some(PathBuf::from("evprice-out"))),
            energy: self.energy.or(Some(p.charge_energy)),
            time_value: self.time_value.or(Some(p.time_value)),
            price_lower: self.price_lower.or(Some(p.price_lower)),
            price_upper: self.price_upper.or(Some(p.price_upper)),
            paths_per_od: self.paths_per_od.or(Some(8)),
            ue_tol: self.ue_tol.or(Some(ue.tol)),
            ue_max_iters: self.ue_max_iters.or(Some(ue.max_iters)),
            cost_eps: self.cost_eps.or(Some(sens.cost_eps)),
            flow_eps: self.flow_eps.or(Some(sens.flow_eps)),
            gamma: self.gamma.or(Some(g.gamma)),
            alpha0: self.alpha0.or(Some(g.alpha0)),
            k_max: self.k_max.or(Some(g.k_max)),
            eps: self.eps.or(Some(g.eps)),
            max_iters: self.max_iters.or(Some(g.max_iters)),
            starts: self.starts.or(Some(1)),
            seed: self.seed.or(Some(0)),
            grid_points: self.grid_points.or(Some(160)),
            grid_cap: self.grid_cap.or(Some(evprice::GridSpec::DEFAULT_CAP)),
            fd_delta: self.fd_delta.or(Some(1e-3)),
            fd_points: self.fd_points.or(Some(0)),
            load_scale: self.load_scale.or(Some(c.load_scale)),
            lmp_scale: self.lmp_scale.or(Some(c.lmp_scale)),
            coupled_eps: self.coupled_eps.or(Some(c.eps)),
            max_cycles: self.max_cycles.or(Some(c.max_cycles)),
            timings: self.timings.or(Some(false)),
            ..self
        }
    }

    /// Checks the resolved settings; `power` is required only when asked for.
    pub fn validate(&self, needs_power: bool) -> Result<(), Failure> {
        for (key, v) in [("network", &self.network), ("trips", &self.trips), ("fcs", &self.fcs)] {
            if v.is_none() {
                return Err(invalid(format!("missing setting '{key}'")));
            }
        }
        if needs_power && self.power.is_none() {
            return Err(invalid("missing setting 'power'"));
        }
        let (tol, cost_eps) = (self.ue_tol.unwrap_or(0.0), self.cost_eps.unwrap_or(0.0));
        if !(tol > 0.0 && tol < cost_eps) {
            return Err(invalid(format!("ue_tol ({tol:e}) must be positive and below cost_eps ({cost_eps:e})")));
        }
        if self.starts == Some(0) {
            return Err(invalid("starts must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads must be at least 1"));
        }
        Ok(())
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            charge_energy: self.energy.unwrap_or_default(),
            time_value: self.time_value.unwrap_or_default(),
            price_lower: self.price_lower.unwrap_or_default(),
            price_upper: self.price_upper.unwrap_or_default(),
        }
    }

    pub fn ue(&self) -> UeOptions {
        UeOptions {
            tol: self.ue_tol.unwrap_or_default(),
            max_iters: self.ue_max_iters.unwrap_or_default(),
            flow_eps: self.flow_eps.unwrap_or_default(),
            record_trace: false,
        }
    }

    pub fn sensitivity(&self) -> SensitivityOptions {
        SensitivityOptions {
            cost_eps: self.cost_eps.unwrap_or_default(),
            flow_eps: self.flow_eps.unwrap_or_default(),
            ..SensitivityOptions::default()
        }
    }

    pub fn gdgsa(&self) -> GdgsaConfig {
        GdgsaConfig {
            gamma: self.gamma.unwrap_or_default(),
            alpha0: self.alpha0.unwrap_or_default(),
            k_max: self.k_max.unwrap_or_default(),
            eps: self.eps.unwrap_or_default(),
            max_iters: self.max_iters.unwrap_or_default(),
            ue: self.ue(),
            sensitivity: self.sensitivity(),
            timings: self.timings.unwrap_or_default(),
            ..GdgsaConfig::default()
        }
    }

    pub fn coupling(&self) -> CouplingConfig {
        CouplingConfig {
            load_scale: self.load_scale.unwrap_or_default(),
            lmp_scale: self.lmp_scale.unwrap_or_default(),
            eps: self.coupled_eps.unwrap_or_default(),
            max_cycles: self.max_cycles.unwrap_or_default(),
            gdgsa: self.gdgsa(),
        }
    }
}
