//! Run configuration: one TOML document covering the busbar, NRT
//! publication, pricing, simulation timing, disturbance source, agent
//! parameter distributions and the ensemble grid. Every section has
//! defaults, so an empty file is a valid configuration.

use crate::busbar::BusbarParams;
use crate::nrt::{NrtKind, NrtScenario};
use crate::pricing::{default_curve_knots, MarginalCurve, PriceModel, PricingError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Pricing(#[from] PricingError),
}

/// Sign convention for the demand signal seen by the agents.
///
/// Under the default demand convention a positive value means the system is
/// short (positive FRR needed) and positive smart balancing reduces it; the
/// lookahead subtracts the planned reactions and a candidate plan enters the
/// price argument with a negative sign. The surplus convention flips both,
/// for sensitivity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    #[default]
    Demand,
    Surplus,
}

/// What the agents' privileged lookahead contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LookaheadMode {
    /// Disturbance plus every BRP's committed plans.
    #[default]
    Full,
    /// Disturbance only: BRPs cannot see the competition.
    NoCompetition,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Simulated span [s].
    pub horizon_s: f64,
    /// NRT discretization and decision period [s].
    pub t_nrt_s: f64,
    /// TSO sampling period for the minute averages [s].
    pub t_tso_s: f64,
    /// Imbalance settlement period [s].
    pub isp_s: f64,
    pub n_agents: usize,
    pub sign_convention: SignConvention,
    pub lookahead_mode: LookaheadMode,
    /// Iterate the simultaneous decisions to a fixed point (at most 5
    /// passes) instead of using the previous step's plans.
    pub same_step_fixed_point: bool,
    /// Use the literal RMSE normalization (one shared denominator) instead
    /// of per-step normalized errors.
    pub rmse_literal: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon_s: 7200.0,
            t_nrt_s: 60.0,
            t_tso_s: 4.0,
            isp_s: 900.0,
            n_agents: 100,
            sign_convention: SignConvention::default(),
            lookahead_mode: LookaheadMode::default(),
            same_step_fixed_point: false,
            rmse_literal: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PricingConfig {
    /// Knots of the marginal aFRR price curve as (demand MW, price EUR/MWh).
    pub curve_knots: Vec<(f64, f64)>,
    /// Fallback intraday index when the disturbance dataset has none.
    pub intraday_index_eur_mwh: f64,
    pub dimensioned_volume_mw: f64,
    pub scarcity_threshold_frac: f64,
    /// Synthetic default, no measured basis.
    pub scarcity_surcharge: f64,
}

impl Default for PricingConfig {
    fn default() -> Self {
        Self {
            curve_knots: default_curve_knots(),
            intraday_index_eur_mwh: 60.0,
            dimensioned_volume_mw: 1870.0,
            scarcity_threshold_frac: 0.8,
            scarcity_surcharge: 0.5,
        }
    }
}

impl PricingConfig {
    pub fn build(&self, intraday_index: Option<f64>) -> Result<PriceModel, PricingError> {
        let model = PriceModel {
            curve: MarginalCurve::new(self.curve_knots.clone())?,
            intraday_index_eur_mwh: intraday_index.unwrap_or(self.intraday_index_eur_mwh),
            dimensioned_volume_mw: self.dimensioned_volume_mw,
            scarcity_threshold_frac: self.scarcity_threshold_frac,
            scarcity_surcharge: self.scarcity_surcharge,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Synthetic disturbance presets; amplitudes and reversion times are
/// stand-ins for the historical archetypes, not measured values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    /// Small amplitude variations.
    Small,
    /// Slowly varying with a sign reversal at mid horizon.
    Reversal,
    /// Quickly varying large amplitude variations.
    FastLarge,
    /// Slowly varying large amplitude variations.
    SlowLarge,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::Small,
        Archetype::Reversal,
        Archetype::FastLarge,
        Archetype::SlowLarge,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Archetype::Small => "small",
            Archetype::Reversal => "reversal",
            Archetype::FastLarge => "fast_large",
            Archetype::SlowLarge => "slow_large",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DisturbanceSource {
    Synthetic { archetype: Archetype },
    Csv { path: PathBuf },
}

impl Default for DisturbanceSource {
    fn default() -> Self {
        DisturbanceSource::Synthetic {
            archetype: Archetype::Small,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DisturbanceConfig {
    #[serde(flatten)]
    pub source: DisturbanceSource,
    /// Intraday market index matching this dataset [EUR/MWh].
    pub intraday_index_eur_mwh: Option<f64>,
}

/// Shape parameters of a beta distribution.
pub type BetaShape = (f64, f64);

/// Per-parameter distributions from which one run's agent population is
/// sampled. Ranges default to the reference study; shapes are the run axes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentDistConfig {
    pub theta_g_shape: BetaShape,
    pub theta_g_range_mw: (f64, f64),
    /// Discrete choices for the activation time constant [min].
    pub theta_t_choices_min: Vec<f64>,
    pub theta_sigma2_shape: BetaShape,
    /// Variance range as fractions of var(P_d).
    pub theta_sigma2_frac_range: (f64, f64),
    pub theta_d_shape: BetaShape,
    pub theta_d_range: (f64, f64),
    pub theta_w_shape: BetaShape,
    pub theta_w_range: (f64, f64),
    pub theta_z_shape: BetaShape,
    pub theta_z_range: (f64, f64),
    pub theta_c_eur_mwh: f64,
}

impl Default for AgentDistConfig {
    fn default() -> Self {
        Self {
            theta_g_shape: (1.0, 10.0),
            theta_g_range_mw: (10.0, 100.0),
            theta_t_choices_min: vec![2.0, 5.0, 10.0],
            theta_sigma2_shape: (10.0, 10.0),
            theta_sigma2_frac_range: (0.3, 1.0),
            theta_d_shape: (1.0, 1.0),
            theta_d_range: (0.8, 2.0),
            theta_w_shape: (1.0, 1.0),
            theta_w_range: (0.7, 0.9),
            theta_z_shape: (10.0, 1.0),
            theta_z_range: (0.3, 3.3),
            theta_c_eur_mwh: 0.0,
        }
    }
}

/// One NRT axis entry of the ensemble grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NrtAxis {
    pub kind: NrtKind,
    pub delay_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub disturbances: Vec<DisturbanceConfig>,
    pub nrt: Vec<NrtAxis>,
    pub theta_g_shapes: Vec<BetaShape>,
    pub theta_sigma2_shapes: Vec<BetaShape>,
    pub theta_z_shapes: Vec<BetaShape>,
    /// Extra repetitions of the whole grid with fresh seeds.
    pub repeats: usize,
    /// Drop the aggressive (theta_G (10,1), theta_z (1,10)) combination from
    /// the statistics while keeping its raw results.
    pub exclusion_rule: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        let disturbances = Archetype::ALL
            .iter()
            .map(|a| DisturbanceConfig {
                source: DisturbanceSource::Synthetic { archetype: *a },
                intraday_index_eur_mwh: None,
            })
            .collect();
        let mut nrt = Vec::new();
        for kind in [
            NrtKind::Exact,
            NrtKind::ExactWithCentralInterval,
            NrtKind::UniformIntervals,
            NrtKind::ExactWithLargeCentralInterval,
            NrtKind::IntervalsWithLargeCentral,
        ] {
            for delay_s in [60.0, 120.0] {
                nrt.push(NrtAxis { kind, delay_s });
            }
        }
        Self {
            disturbances,
            nrt,
            theta_g_shapes: vec![(1.0, 10.0), (10.0, 1.0)],
            theta_sigma2_shapes: vec![(1.0, 10.0), (10.0, 10.0), (10.0, 1.0)],
            theta_z_shapes: vec![(1.0, 10.0), (10.0, 1.0)],
            repeats: 1,
            exclusion_rule: true,
        }
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub busbar: BusbarParams,
    pub nrt: NrtScenario,
    pub pricing: PricingConfig,
    pub sim: SimConfig,
    pub disturbance: DisturbanceConfig,
    pub agents: AgentDistConfig,
    pub ensemble: EnsembleConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(source),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.busbar
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.nrt
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.pricing.build(None)?;
        let s = &self.sim;
        let checks = [
            (s.horizon_s, s.isp_s, "horizon_s must be a multiple of isp_s"),
            (s.isp_s, s.t_nrt_s, "isp_s must be a multiple of t_nrt_s"),
            (s.t_nrt_s, s.t_tso_s, "t_nrt_s must be a multiple of t_tso_s"),
            (
                s.t_tso_s,
                self.busbar.dt_s,
                "t_tso_s must be a multiple of busbar.dt_s",
            ),
        ];
        for (whole, part, msg) in checks {
            if part <= 0.0 || ((whole / part) - (whole / part).round()).abs() > 1e-9 {
                return Err(ConfigError::Invalid(format!("{msg} ({whole} vs {part})")));
            }
        }
        if s.horizon_s <= 0.0 {
            return Err(ConfigError::Invalid("horizon_s must be positive".into()));
        }
        Ok(())
    }
}
