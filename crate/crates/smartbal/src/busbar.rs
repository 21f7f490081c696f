//! Single busbar model of the control block.
//!
//! The control block is modelled pointwise: system inertia with the
//! self-regulating load effect, saturated FCR with second-order activation
//! dynamics, and a PI-controlled aFRR with a first-order activation lag.
//! Because there is no exchange with other areas and the FCR share and
//! self-regulation are known exactly, the aFRR controller input is the exact
//! residual demand rather than a K-factor ACE.
//!
//! Sign convention: `p_d > 0` is a generation deficit (system short),
//! `p_smart > 0` is extra injection by smart balancing, and
//! `p_demand = p_d - p_smart` is the positive-FRR need.
//!
//! Each LTI block is discretized exactly (zero-order hold) at the fixed
//! integration step, which keeps the loop unconditionally stable and
//! bit-reproducible. The FCR command is saturated before its activation
//! filter and the delivered FCR power is limited to the same band.

use crate::lti::{discretize_lti, DiscreteSs, LtiError};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BusbarError {
    #[error("{field} must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("dt = {dt} s must divide the TSO sampling time (4 s) and the NRT period (60 s)")]
    BadStep { dt: f64 },
    #[error("activation dynamics must be strictly proper: {which}")]
    BiproperActivation { which: &'static str },
    #[error(transparent)]
    Lti(#[from] LtiError),
}

/// Parameters of the single busbar model. Defaults are the reference
/// control-block values (300 GW system load, 12 s inertia constant, aFRR PI
/// with gain 0.1 and 250 s integrator time constant, 1.75 %/% self-regulation
/// of an 80 GW block load, FCR limited symmetrically at 1 GW with full
/// activation at 200 mHz).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BusbarParams {
    /// Reference frequency [Hz].
    pub f0_hz: f64,
    /// Reference system load [MW].
    pub p0_mw: f64,
    /// Grid inertia time constant [s].
    pub tg_s: f64,
    /// FCR static gain [MW/Hz].
    pub fcr_gain_mw_per_hz: f64,
    /// Symmetric FCR saturation [MW].
    pub fcr_limit_mw: f64,
    /// aFRR proportional gain [-].
    pub k_afrr: f64,
    /// aFRR integrator time constant [s].
    pub t_afrr_s: f64,
    /// Self-regulating load gain [MW/Hz].
    pub k_load_mw_per_hz: f64,
    /// Integration step [s].
    pub dt_s: f64,
    /// aFRR integrator anti-windup clamp [MW].
    pub afrr_windup_limit_mw: f64,
    /// Secondary control enabled (disable for static FCR studies).
    pub afrr_enabled: bool,
    /// FCR activation dynamics, numerator in descending powers of s.
    pub g_fcr_num: Vec<f64>,
    /// FCR activation dynamics, denominator in descending powers of s.
    pub g_fcr_den: Vec<f64>,
    /// aFRR activation dynamics, numerator.
    pub g_afrr_num: Vec<f64>,
    /// aFRR activation dynamics, denominator.
    pub g_afrr_den: Vec<f64>,
}

impl Default for BusbarParams {
    fn default() -> Self {
        Self {
            f0_hz: 50.0,
            p0_mw: 300_000.0,
            tg_s: 12.0,
            fcr_gain_mw_per_hz: 5_000.0,
            fcr_limit_mw: 1_000.0,
            k_afrr: 0.1,
            t_afrr_s: 250.0,
            k_load_mw_per_hz: 2_800.0,
            dt_s: 1.0,
            afrr_windup_limit_mw: 1_870.0,
            afrr_enabled: true,
            // (9s + 1) / (7.5s + 1)^2
            g_fcr_num: vec![9.0, 1.0],
            g_fcr_den: vec![56.25, 15.0, 1.0],
            // 1 / (20s + 1)
            g_afrr_num: vec![1.0],
            g_afrr_den: vec![20.0, 1.0],
        }
    }
}

impl BusbarParams {
    pub fn validate(&self) -> Result<(), BusbarError> {
        let positive = [
            ("f0_hz", self.f0_hz),
            ("p0_mw", self.p0_mw),
            ("tg_s", self.tg_s),
            ("fcr_limit_mw", self.fcr_limit_mw),
            ("t_afrr_s", self.t_afrr_s),
            ("dt_s", self.dt_s),
            ("afrr_windup_limit_mw", self.afrr_windup_limit_mw),
        ];
        for (field, value) in positive {
            if !value.is_finite() || value <= 0.0 {
                return Err(BusbarError::NonPositive { field, value });
            }
        }
        if !divides(self.dt_s, 4.0) || !divides(self.dt_s, 60.0) {
            return Err(BusbarError::BadStep { dt: self.dt_s });
        }
        Ok(())
    }
}

fn divides(dt: f64, period: f64) -> bool {
    let n = period / dt;
    (n - n.round()).abs() < 1e-9 && n >= 1.0 - 1e-9
}

/// Continuous-time state of the busbar, advanced at the fixed step.
/// Plain data; a zero state with zero inputs is exactly invariant.
#[derive(Debug, Clone)]
pub struct GridState {
    /// Frequency deviation from f0 [Hz].
    pub freq_dev: f64,
    /// Internal states of the FCR activation filter.
    pub fcr_states: DVector<f64>,
    /// aFRR integrator state [MW].
    pub afrr_integrator: f64,
    /// States of the aFRR activation lag.
    pub afrr_act_state: DVector<f64>,
}

impl GridState {
    pub fn is_finite(&self) -> bool {
        self.freq_dev.is_finite()
            && self.afrr_integrator.is_finite()
            && self.fcr_states.iter().all(|x| x.is_finite())
            && self.afrr_act_state.iter().all(|x| x.is_finite())
    }
}

/// Power flows and frequency deviation at one instant.
#[derive(Debug, Clone, Copy)]
pub struct GridOutputs {
    pub freq_dev_hz: f64,
    pub p_fcr_mw: f64,
    pub p_afrr_mw: f64,
    /// Positive-FRR need `p_d - p_smart` [MW].
    pub p_demand_mw: f64,
}

/// The discretized busbar model. Construct once per run; stepping is cheap.
#[derive(Debug, Clone)]
pub struct Busbar {
    params: BusbarParams,
    fcr_ss: DiscreteSs,
    afrr_ss: DiscreteSs,
    /// Exact discretization of d(df)/dt = a*df + b*u with the self-regulating
    /// load folded into `a`.
    inertia_ad: f64,
    inertia_bd: f64,
}

impl Busbar {
    pub fn new(params: &BusbarParams) -> Result<Self, BusbarError> {
        params.validate()?;
        let fcr_ss = discretize_lti(&params.g_fcr_num, &params.g_fcr_den, params.dt_s)?;
        let afrr_ss = discretize_lti(&params.g_afrr_num, &params.g_afrr_den, params.dt_s)?;
        // A direct feedthrough would create an algebraic loop with the
        // controller error and the frequency.
        if !fcr_ss.is_strictly_proper() {
            return Err(BusbarError::BiproperActivation { which: "G_FCR" });
        }
        if !afrr_ss.is_strictly_proper() {
            return Err(BusbarError::BiproperActivation { which: "G_aFRR" });
        }
        let b = params.f0_hz / (params.tg_s * params.p0_mw);
        let a = -b * params.k_load_mw_per_hz;
        let (inertia_ad, inertia_bd) = if a != 0.0 {
            let ad = (a * params.dt_s).exp();
            (ad, (ad - 1.0) / a * b)
        } else {
            (1.0, b * params.dt_s)
        };
        Ok(Self {
            params: params.clone(),
            fcr_ss,
            afrr_ss,
            inertia_ad,
            inertia_bd,
        })
    }

    pub fn params(&self) -> &BusbarParams {
        &self.params
    }

    pub fn zero_state(&self) -> GridState {
        GridState {
            freq_dev: 0.0,
            fcr_states: self.fcr_ss.zero_state(),
            afrr_integrator: 0.0,
            afrr_act_state: self.afrr_ss.zero_state(),
        }
    }

    /// Outputs at the current instant, without advancing the state.
    pub fn outputs(&self, state: &GridState, p_d_mw: f64, p_smart_mw: f64) -> GridOutputs {
        let p = &self.params;
        let fcr_cmd = (-p.fcr_gain_mw_per_hz * state.freq_dev).clamp(-p.fcr_limit_mw, p.fcr_limit_mw);
        let p_fcr = self
            .fcr_ss
            .output(&state.fcr_states, fcr_cmd)
            .clamp(-p.fcr_limit_mw, p.fcr_limit_mw);
        let p_afrr = if p.afrr_enabled {
            self.afrr_ss.output(&state.afrr_act_state, 0.0)
        } else {
            0.0
        };
        GridOutputs {
            freq_dev_hz: state.freq_dev,
            p_fcr_mw: p_fcr,
            p_afrr_mw: p_afrr,
            p_demand_mw: p_d_mw - p_smart_mw,
        }
    }

    /// Advance one step with inputs held constant over it. Returns the
    /// outputs at the end of the step.
    pub fn step(&self, state: &mut GridState, p_d_mw: f64, p_smart_mw: f64) -> GridOutputs {
        let p = &self.params;
        let now = self.outputs(state, p_d_mw, p_smart_mw);

        let fcr_cmd = (-p.fcr_gain_mw_per_hz * now.freq_dev_hz).clamp(-p.fcr_limit_mw, p.fcr_limit_mw);
        self.fcr_ss.step(&mut state.fcr_states, fcr_cmd);

        if p.afrr_enabled {
            let err = now.p_demand_mw - now.p_afrr_mw;
            let afrr_cmd = p.k_afrr * err + state.afrr_integrator;
            state.afrr_integrator = (state.afrr_integrator + err * p.dt_s / p.t_afrr_s)
                .clamp(-p.afrr_windup_limit_mw, p.afrr_windup_limit_mw);
            self.afrr_ss.step(&mut state.afrr_act_state, afrr_cmd);
        }

        let accel = (p_smart_mw - p_d_mw) + now.p_fcr_mw + now.p_afrr_mw;
        state.freq_dev = self.inertia_ad * now.freq_dev_hz + self.inertia_bd * accel;

        self.outputs(state, p_d_mw, p_smart_mw)
    }
}

/// Arithmetic mean of the TSO samples in one completed NRT window.
pub fn average_demand(samples: &[f64]) -> f64 {
    debug_assert!(!samples.is_empty(), "window must be fully elapsed");
    samples.iter().sum::<f64>() / samples.len() as f64
}
