//! Single-run simulation engine.
//!
//! One run advances the busbar at the integration step, samples the demand
//! at the TSO period, and at every NRT period publishes the bulletin,
//! assembles the common lookahead, lets all agents estimate and decide
//! simultaneously, and commits their plans. A matched reference run with
//! the same disturbance and no agents provides the baseline for the
//! relative KPIs.
//!
//! Agents act on the lookahead built from the plans committed at the
//! previous step; the optional fixed-point mode re-iterates the
//! simultaneous decision against the freshly committed plans (at most five
//! passes).

use crate::agent::{
    activated_power, decide, estimate, AgentDiagnostics, AgentParams, AgentState, DemandEstimate,
};
use crate::busbar::{Busbar, BusbarError, BusbarParams};
use crate::config::{BetaShape, LookaheadMode, SignConvention, SimConfig};
use crate::gauss::GaussError;
use crate::io::DisturbanceSeries;
use crate::metrics::{
    classify_risk, estimation_metrics_mode, frequency_kpis, relative_kpis, smart_metrics,
    BrpMetrics, RelKpis, RmseNormalization, RunKpis,
};
use crate::nrt::{publish, NrtKind, NrtScenario};
use crate::pricing::PriceModel;
use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("grid state diverged (non-finite) at t = {t_s} s")]
    Diverged { t_s: f64 },
    #[error("disturbance has {got} samples, run needs {need}")]
    DisturbanceLength { got: usize, need: usize },
    #[error(transparent)]
    Busbar(#[from] BusbarError),
    #[error("estimation failed: {0}")]
    Gauss(#[from] GaussError),
}

/// Everything one run needs, fully materialized.
pub struct RunInputs {
    pub busbar: BusbarParams,
    pub nrt: NrtScenario,
    pub price: PriceModel,
    pub sim: SimConfig,
    pub disturbance: DisturbanceSeries,
    pub agents: Vec<AgentParams>,
    pub agent_rngs: Vec<ChaCha8Rng>,
}

/// Scenario coordinates of a run inside an ensemble.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub run_index: u64,
    pub base_seed: u64,
    pub disturbance_id: String,
    pub nrt_kind: NrtKind,
    pub delay_s: f64,
    pub theta_g_shape: BetaShape,
    pub theta_sigma2_shape: BetaShape,
    pub theta_z_shape: BetaShape,
    pub repeat: usize,
    pub n_agents: usize,
    pub horizon_s: f64,
}

/// Numeric health counters accumulated over a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunDiagnostics {
    pub degenerate_bins: usize,
    pub variance_clamps: usize,
}

/// Full result of one run paired with its reference KPIs.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub meta: RunMeta,
    pub dt_s: f64,
    pub t_nrt_s: f64,
    pub isp_s: f64,
    pub freq_dev_hz: Vec<f64>,
    pub p_demand_mw: Vec<f64>,
    pub p_fcr_mw: Vec<f64>,
    pub p_afrr_mw: Vec<f64>,
    pub p_smart_mw: Vec<f64>,
    /// Realized per-minute demand averages from the TSO sampling.
    pub minute_avg_demand_mw: Vec<f64>,
    pub agent_params: Vec<AgentParams>,
    /// Final committed plans.
    pub agent_u: Vec<Vec<i8>>,
    /// Per-minute mean delivered power per agent.
    pub agent_y_minute_mw: Vec<Vec<f64>>,
    pub brp_metrics: Vec<BrpMetrics>,
    pub kpis: RunKpis,
    pub ref_kpis: RunKpis,
    pub rel: RelKpis,
    pub diagnostics: RunDiagnostics,
    pub excluded: bool,
    pub failed: Option<String>,
}

struct AgentRuntime {
    params: AgentParams,
    state: AgentState,
    /// Continuous activation state [MW].
    y_act: f64,
    y_minute_mw: Vec<f64>,
    est_energy_mwh: Vec<f64>,
    est_upper_mwh: Vec<f64>,
    est_lower_mwh: Vec<f64>,
    active_steps: usize,
}

struct SimOutput {
    freq_dev_hz: Vec<f64>,
    p_demand_mw: Vec<f64>,
    p_fcr_mw: Vec<f64>,
    p_afrr_mw: Vec<f64>,
    p_smart_mw: Vec<f64>,
    minute_avg_demand_mw: Vec<f64>,
    agents: Vec<AgentRuntime>,
}

/// Agent state captured before a decision pass (fixed-point mode restores
/// it between passes).
type AgentSnapshot = (Option<DVector<f64>>, Vec<i8>, ChaCha8Rng, AgentDiagnostics);

/// Run the simulation and its matched reference, and evaluate both.
pub fn run_simulation(inputs: &RunInputs, meta: RunMeta) -> Result<RunResult, SimError> {
    let with_agents = simulate(inputs, true)?;
    let reference = simulate(inputs, false)?;

    let kpis = evaluate_kpis(&with_agents, inputs);
    let ref_kpis = evaluate_kpis(&reference, inputs);
    let rel = relative_kpis(&kpis, &ref_kpis);

    let n_min = with_agents.minute_avg_demand_mw.len();
    let isp_len = (inputs.sim.isp_s / inputs.sim.t_nrt_s).round() as usize;
    let n_isp = n_min / isp_len;
    let realized_isp_mwh: Vec<f64> = (0..n_isp)
        .map(|i| crate::metrics::isp_energy_mwh(&with_agents.minute_avg_demand_mw, i, isp_len))
        .collect();

    let mut brp_metrics = Vec::with_capacity(with_agents.agents.len());
    let mut diagnostics = RunDiagnostics::default();
    let mut agent_u = Vec::with_capacity(with_agents.agents.len());
    let mut agent_y = Vec::with_capacity(with_agents.agents.len());
    let mut agent_params = Vec::with_capacity(with_agents.agents.len());
    let rmse_mode = if inputs.sim.rmse_literal {
        RmseNormalization::Literal
    } else {
        RmseNormalization::PerStep
    };
    for a in &with_agents.agents {
        // Realized energy of the ISP active at each decision step.
        let realized_at_step: Vec<f64> = (0..a.est_energy_mwh.len())
            .map(|k| realized_isp_mwh[k / isp_len])
            .collect();
        let (e_rmse, e_half) = estimation_metrics_mode(
            &a.est_energy_mwh,
            &a.est_upper_mwh,
            &a.est_lower_mwh,
            &realized_at_step,
            rmse_mode,
        );
        let delivered_isp_mwh: Vec<f64> = (0..n_isp)
            .map(|i| crate::metrics::isp_energy_mwh(&a.y_minute_mw, i, isp_len))
            .collect();
        let (tau_active, e_eff) = smart_metrics(
            a.active_steps,
            a.est_energy_mwh.len(),
            &delivered_isp_mwh,
            &realized_isp_mwh,
        );
        brp_metrics.push(BrpMetrics {
            e_rmse,
            e_half,
            tau_active,
            e_eff,
            risk_class: classify_risk(e_rmse, e_half),
        });
        diagnostics.degenerate_bins += a.state.diagnostics.degenerate_bins;
        diagnostics.variance_clamps += a.state.diagnostics.variance_clamps;
        agent_u.push(a.state.u.clone());
        agent_y.push(a.y_minute_mw.clone());
        agent_params.push(a.params.clone());
    }

    Ok(RunResult {
        meta,
        dt_s: inputs.busbar.dt_s,
        t_nrt_s: inputs.sim.t_nrt_s,
        isp_s: inputs.sim.isp_s,
        freq_dev_hz: with_agents.freq_dev_hz,
        p_demand_mw: with_agents.p_demand_mw,
        p_fcr_mw: with_agents.p_fcr_mw,
        p_afrr_mw: with_agents.p_afrr_mw,
        p_smart_mw: with_agents.p_smart_mw,
        minute_avg_demand_mw: with_agents.minute_avg_demand_mw,
        agent_params,
        agent_u,
        agent_y_minute_mw: agent_y,
        brp_metrics,
        kpis,
        ref_kpis,
        rel,
        diagnostics,
        excluded: false,
        failed: None,
    })
}

fn simulate(inputs: &RunInputs, enable_agents: bool) -> Result<SimOutput, SimError> {
    let sim = &inputs.sim;
    let dt = inputs.busbar.dt_s;
    let n_steps = (sim.horizon_s / dt).round() as usize;
    let steps_per_nrt = (sim.t_nrt_s / dt).round() as usize;
    let steps_per_tso = (sim.t_tso_s / dt).round() as usize;
    let n_min = (sim.horizon_s / sim.t_nrt_s).round() as usize;
    let isp_len = (sim.isp_s / sim.t_nrt_s).round() as usize;
    let samples_per_minute = (sim.t_nrt_s / sim.t_tso_s).round() as usize;

    if inputs.disturbance.samples.len() != n_steps {
        return Err(SimError::DisturbanceLength {
            got: inputs.disturbance.samples.len(),
            need: n_steps,
        });
    }
    let p_d = &inputs.disturbance.samples;

    // Privileged minute discretization of the disturbance for the lookahead.
    let p_d_minutes = DVector::from_fn(n_min, |m, _| {
        p_d[m * steps_per_nrt..(m + 1) * steps_per_nrt]
            .iter()
            .sum::<f64>()
            / steps_per_nrt as f64
    });

    let busbar = Busbar::new(&inputs.busbar)?;
    let mut grid = busbar.zero_state();

    let mut agents: Vec<AgentRuntime> = if enable_agents {
        inputs
            .agents
            .iter()
            .zip(inputs.agent_rngs.iter())
            .map(|(params, rng)| AgentRuntime {
                state: AgentState::new(params, n_min, sim.t_nrt_s, rng.clone()),
                params: params.clone(),
                y_act: 0.0,
                y_minute_mw: Vec::with_capacity(n_min),
                est_energy_mwh: Vec::with_capacity(n_min),
                est_upper_mwh: Vec::with_capacity(n_min),
                est_lower_mwh: Vec::with_capacity(n_min),
                active_steps: 0,
            })
            .collect()
    } else {
        Vec::new()
    };
    let act_alpha: Vec<f64> = agents
        .iter()
        .map(|a| (-dt / (a.params.theta_t_min * 60.0)).exp())
        .collect();

    let mut out = SimOutput {
        freq_dev_hz: Vec::with_capacity(n_steps),
        p_demand_mw: Vec::with_capacity(n_steps),
        p_fcr_mw: Vec::with_capacity(n_steps),
        p_afrr_mw: Vec::with_capacity(n_steps),
        p_smart_mw: Vec::with_capacity(n_steps),
        minute_avg_demand_mw: Vec::with_capacity(n_min),
        agents: Vec::new(),
    };

    let mut tso_window: Vec<f64> = Vec::with_capacity(samples_per_minute);
    let mut y_minute_acc: Vec<f64> = vec![0.0; agents.len()];

    for (step, &p_d_now) in p_d.iter().enumerate() {
        let t = step as f64 * dt;

        // Decision instant: publish, build the common lookahead, let all
        // agents estimate and decide against it, commit.
        if step % steps_per_nrt == 0 && !agents.is_empty() {
            let k = step / steps_per_nrt;
            let bulletin = publish(
                &out.minute_avg_demand_mw,
                n_min,
                t,
                sim.t_nrt_s,
                &inputs.nrt,
            );

            let max_passes = if sim.same_step_fixed_point { 5 } else { 1 };
            let snapshot: Option<Vec<AgentSnapshot>> =
                if max_passes > 1 {
                    Some(
                        agents
                            .iter()
                            .map(|a| {
                                (
                                    a.state.x_prev.clone(),
                                    a.state.u.clone(),
                                    a.state.rng.clone(),
                                    a.state.diagnostics,
                                )
                            })
                            .collect(),
                    )
                } else {
                    None
                };

            let mut basis_u: Vec<Vec<i8>> = agents.iter().map(|a| a.state.u.clone()).collect();
            let mut estimates: Vec<DemandEstimate> = Vec::new();
            for pass in 0..max_passes {
                if pass > 0 {
                    let snaps = snapshot.as_ref().unwrap();
                    for (a, snap) in agents.iter_mut().zip(snaps) {
                        a.state.x_prev = snap.0.clone();
                        a.state.u = snap.1.clone();
                        a.state.rng = snap.2.clone();
                        a.state.diagnostics = snap.3;
                    }
                }
                let lookahead =
                    assemble_lookahead(&p_d_minutes, &basis_u, &agents, sim.lookahead_mode, sim.sign_convention);
                estimates.clear();
                for a in agents.iter_mut() {
                    let est = estimate(&mut a.state, &lookahead, &bulletin, &a.params)?;
                    decide(
                        &est,
                        &mut a.state,
                        &a.params,
                        &inputs.price,
                        isp_len,
                        k,
                        sim.t_nrt_s,
                        sim.sign_convention,
                    );
                    estimates.push(est);
                }
                let new_u: Vec<Vec<i8>> = agents.iter().map(|a| a.state.u.clone()).collect();
                if new_u == basis_u {
                    break;
                }
                basis_u = new_u;
            }

            for (a, est) in agents.iter_mut().zip(&estimates) {
                let isp = k / isp_len;
                let start = isp * isp_len;
                let sum = |v: &DVector<f64>| {
                    v.as_slice()[start..start + isp_len].iter().sum::<f64>() / 60.0
                };
                a.est_energy_mwh.push(sum(&est.x_hat));
                a.est_upper_mwh.push(sum(&est.upper));
                a.est_lower_mwh.push(sum(&est.lower));
                if a.state.u[k] != 0 {
                    a.active_steps += 1;
                }
            }
        }

        let k = step / steps_per_nrt;
        let p_smart: f64 = agents.iter().map(|a| a.y_act).sum();

        // TSO sampling of the instantaneous demand.
        if step % steps_per_tso == 0 {
            tso_window.push(p_d_now - p_smart);
            if tso_window.len() == samples_per_minute {
                out.minute_avg_demand_mw
                    .push(crate::busbar::average_demand(&tso_window));
                tso_window.clear();
            }
        }

        // Record the instant, then advance grid and activations.
        let now = busbar.outputs(&grid, p_d_now, p_smart);
        out.freq_dev_hz.push(now.freq_dev_hz);
        out.p_demand_mw.push(now.p_demand_mw);
        out.p_fcr_mw.push(now.p_fcr_mw);
        out.p_afrr_mw.push(now.p_afrr_mw);
        out.p_smart_mw.push(p_smart);

        busbar.step(&mut grid, p_d_now, p_smart);
        if !grid.is_finite() {
            return Err(SimError::Diverged { t_s: t });
        }
        for (a, alpha) in agents.iter_mut().zip(&act_alpha) {
            let target = a.params.theta_g_mw * f64::from(a.state.u[k]);
            a.y_act = alpha * a.y_act + (1.0 - alpha) * target;
        }

        // Per-minute mean of the delivered power.
        for (acc, a) in y_minute_acc.iter_mut().zip(&agents) {
            *acc += a.y_act;
        }
        if (step + 1) % steps_per_nrt == 0 {
            for (acc, a) in y_minute_acc.iter_mut().zip(agents.iter_mut()) {
                a.y_minute_mw.push(*acc / steps_per_nrt as f64);
                *acc = 0.0;
            }
        }
    }

    out.agents = agents;
    Ok(out)
}

/// Common lookahead for one decision step: the minute-discretized
/// disturbance corrected by every BRP's planned reactions (none in the
/// no-competition mode).
fn assemble_lookahead(
    p_d_minutes: &DVector<f64>,
    basis_u: &[Vec<i8>],
    agents: &[AgentRuntime],
    mode: LookaheadMode,
    sign: SignConvention,
) -> DVector<f64> {
    let mut l = p_d_minutes.clone();
    if mode == LookaheadMode::NoCompetition {
        return l;
    }
    for (u, a) in basis_u.iter().zip(agents) {
        let y = activated_power(u, &a.state.h);
        for (li, yi) in l.iter_mut().zip(&y) {
            match sign {
                SignConvention::Demand => *li -= yi,
                SignConvention::Surplus => *li += yi,
            }
        }
    }
    l
}

fn evaluate_kpis(simout: &SimOutput, inputs: &RunInputs) -> RunKpis {
    let dt = inputs.busbar.dt_s;
    let mut kpis = frequency_kpis(
        &simout.freq_dev_hz,
        dt,
        inputs.sim.isp_s,
        inputs.sim.t_nrt_s,
    );
    let dt_h = dt / 3600.0;
    for (fcr, afrr) in simout.p_fcr_mw.iter().zip(&simout.p_afrr_mw) {
        let frr = fcr + afrr;
        if frr > 0.0 {
            kpis.e_frr_pos_mwh += frr * dt_h;
        } else {
            kpis.e_frr_neg_mwh += -frr * dt_h;
        }
        kpis.afrr_cost_eur += afrr * inputs.price.curve.price(*afrr) * dt_h;
    }
    kpis
}

#[cfg(test)]
mod tests {
    use crate::config::{AgentDistConfig, RunConfig};
    use crate::montecarlo;

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.sim.horizon_s = 1800.0;
        cfg.sim.n_agents = 5;
        cfg
    }

    #[test]
    fn no_agents_run_matches_reference_bit_for_bit() {
        let mut cfg = small_config();
        cfg.sim.n_agents = 0;
        let result = montecarlo::run_single(&cfg, 11).unwrap();
        assert_eq!(result.kpis.e_frr_pos_mwh, result.ref_kpis.e_frr_pos_mwh);
        assert_eq!(result.kpis.df_std_1min_hz, result.ref_kpis.df_std_1min_hz);
        assert_eq!(result.kpis.df_max_hz, result.ref_kpis.df_max_hz);
        assert_eq!(result.rel.e_frr_pos.value, Some(0.0));
        assert!(result.p_smart_mw.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fixed_seed_reproduces_trajectories() {
        let cfg = small_config();
        let a = montecarlo::run_single(&cfg, 42).unwrap();
        let b = montecarlo::run_single(&cfg, 42).unwrap();
        assert_eq!(a.freq_dev_hz, b.freq_dev_hz);
        assert_eq!(a.p_smart_mw, b.p_smart_mw);
        assert_eq!(a.agent_u, b.agent_u);
    }

    #[test]
    fn huge_robustness_interval_keeps_agents_idle() {
        let mut cfg = small_config();
        cfg.sim.n_agents = 1;
        cfg.agents = AgentDistConfig {
            theta_z_range: (1e6, 1e6 + 1.0),
            ..AgentDistConfig::default()
        };
        let result = montecarlo::run_single(&cfg, 3).unwrap();
        assert!(result.agent_u[0].iter().all(|v| *v == 0));
        // Trajectories identical to the reference.
        assert_eq!(result.kpis.e_frr_pos_mwh, result.ref_kpis.e_frr_pos_mwh);
        assert_eq!(result.kpis.df_max_hz, result.ref_kpis.df_max_hz);
        assert_eq!(result.brp_metrics[0].tau_active, 0.0);
        assert!(result.brp_metrics[0].e_eff.is_none());
    }

    #[test]
    fn trajectory_lengths_match_grids() {
        let cfg = small_config();
        let r = montecarlo::run_single(&cfg, 5).unwrap();
        assert_eq!(r.freq_dev_hz.len(), 1800);
        assert_eq!(r.minute_avg_demand_mw.len(), 30);
        assert_eq!(r.agent_u[0].len(), 30);
        assert_eq!(r.agent_y_minute_mw[0].len(), 30);
        assert_eq!(r.brp_metrics.len(), 5);
    }

    #[test]
    fn fixed_point_mode_runs() {
        let mut cfg = small_config();
        cfg.sim.same_step_fixed_point = true;
        cfg.sim.n_agents = 3;
        let r = montecarlo::run_single(&cfg, 9).unwrap();
        assert!(r.failed.is_none());
        assert_eq!(r.freq_dev_hz.len(), 1800);
    }

    #[test]
    fn no_competition_mode_changes_behaviour() {
        let mut cfg = small_config();
        cfg.disturbance.source = crate::config::DisturbanceSource::Synthetic {
            archetype: crate::config::Archetype::FastLarge,
        };
        cfg.sim.n_agents = 20;
        let full = montecarlo::run_single(&cfg, 13).unwrap();
        cfg.sim.lookahead_mode = crate::config::LookaheadMode::NoCompetition;
        let blind = montecarlo::run_single(&cfg, 13).unwrap();
        assert!(blind.failed.is_none());
        // Without seeing the competition the agents pile on harder.
        let mean_tau = |r: &crate::sim::RunResult| {
            r.brp_metrics.iter().map(|m| m.tau_active).sum::<f64>() / r.brp_metrics.len() as f64
        };
        assert!(
            mean_tau(&blind) >= mean_tau(&full),
            "blind {} vs full {}",
            mean_tau(&blind),
            mean_tau(&full)
        );
    }
}
