//! Monte-Carlo simulation of smart balancing in a frequency-controlled
//! power system.
//!
//! Balance responsible parties (BRPs) watch near-real-time (NRT) imbalance
//! data published by the system operator and may intentionally deviate from
//! their schedule to counteract the area imbalance, collecting the imbalance
//! settlement remuneration. This crate models that feedback loop end to end:
//!
//! - [`busbar`] — single busbar model of the control block: inertia,
//!   self-regulating load, saturated FCR and PI-controlled aFRR with their
//!   activation dynamics, advanced at a fixed step.
//! - [`nrt`] — per-minute averaging, publication delay and the binning
//!   scenarios (exact, small/large central interval, uniform bins).
//! - [`gauss`] — multivariate normal machinery behind the agents' demand
//!   estimation: exponential-decay priors, estimate blending, conditioning
//!   on exact data, truncated sampling and diagonal moment approximations.
//! - [`agent`] — one BRP: the estimation pipeline, the robust five-way
//!   smart-balancing decision and first-order activation dynamics.
//! - [`pricing`] — the three-component imbalance price (marginal curve,
//!   intraday clamp, scarcity surcharge).
//! - [`sim`] / [`montecarlo`] — single runs with matched references and
//!   seeded, parallel ensembles over scenario grids.
//! - [`metrics`] — per-BRP and run-level evaluation, box-plot aggregation.
//! - [`io`] — disturbance ingestion and synthesis, result export.
//!
//! Runs are deterministic: one master seed plus the run and agent indices
//! fully determine every random draw, independent of worker count.

pub mod agent;
pub mod busbar;
pub mod config;
pub mod gauss;
pub mod io;
pub mod lti;
pub mod metrics;
pub mod montecarlo;
pub mod nrt;
pub mod pricing;
pub mod sim;
