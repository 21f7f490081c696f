//! Ensemble orchestration.
//!
//! Expands the scenario grid (disturbances x NRT scenarios x parameter
//! distributions x repeats), samples each run's agent population from the
//! configured beta distributions, executes the runs on a worker pool and
//! applies the exclusion rule. Every random draw is determined by the
//! master seed plus the run and agent indices via separate ChaCha streams,
//! so results are independent of worker count and scheduling order.

use crate::config::{
    AgentDistConfig, BetaShape, DisturbanceConfig, DisturbanceSource, NrtAxis, RunConfig,
};
use crate::agent::AgentParams;
use crate::io::{load_disturbance, synthesize_disturbance, DisturbanceSeries, IoError};
use crate::nrt::NrtScenario;
use crate::sim::{run_simulation, RunInputs, RunMeta, RunResult, SimError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid beta shape ({0}, {1})")]
    BadShape(f64, f64),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Stream spacing per run: stream 0 is the run stream (disturbance and
/// parameter sampling), streams 1.. are the agents' private streams.
const STREAMS_PER_RUN: u64 = 1 << 16;

pub fn run_stream(base_seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(run_index.wrapping_mul(STREAMS_PER_RUN));
    rng
}

pub fn agent_stream(base_seed: u64, run_index: u64, agent_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(
        run_index
            .wrapping_mul(STREAMS_PER_RUN)
            .wrapping_add(1 + agent_index as u64),
    );
    rng
}

/// One cell of the ensemble grid.
#[derive(Debug, Clone)]
pub struct RunAxes {
    pub disturbance: DisturbanceConfig,
    pub nrt: NrtAxis,
    pub theta_g_shape: BetaShape,
    pub theta_sigma2_shape: BetaShape,
    pub theta_z_shape: BetaShape,
    pub repeat: usize,
}

/// Cartesian product of the configured axes, repeats outermost. The order
/// is deterministic and defines the run indices.
pub fn expand_grid(cfg: &RunConfig) -> Vec<RunAxes> {
    let e = &cfg.ensemble;
    let mut grid = Vec::new();
    for repeat in 0..e.repeats.max(1) {
        for disturbance in &e.disturbances {
            for nrt in &e.nrt {
                for &theta_g_shape in &e.theta_g_shapes {
                    for &theta_sigma2_shape in &e.theta_sigma2_shapes {
                        for &theta_z_shape in &e.theta_z_shapes {
                            grid.push(RunAxes {
                                disturbance: disturbance.clone(),
                                nrt: *nrt,
                                theta_g_shape,
                                theta_sigma2_shape,
                                theta_z_shape,
                                repeat,
                            });
                        }
                    }
                }
            }
        }
    }
    grid
}

fn beta_draw<R: Rng + ?Sized>(shape: BetaShape, rng: &mut R) -> Result<f64, EnsembleError> {
    let beta = Beta::new(shape.0, shape.1).map_err(|_| EnsembleError::BadShape(shape.0, shape.1))?;
    Ok(beta.sample(rng))
}

fn affine(range: (f64, f64), x: f64) -> f64 {
    range.0 + (range.1 - range.0) * x
}

/// Draw one agent's parameters: beta draws mapped affinely onto the ranges,
/// a discrete uniform time constant, and the variance scaled by var(P_d).
pub fn sample_params<R: Rng + ?Sized>(
    dists: &AgentDistConfig,
    var_pd_mw2: f64,
    rng: &mut R,
) -> Result<AgentParams, EnsembleError> {
    let theta_g_mw = affine(dists.theta_g_range_mw, beta_draw(dists.theta_g_shape, rng)?);
    let theta_t_min = dists.theta_t_choices_min[rng.random_range(0..dists.theta_t_choices_min.len())];
    let frac = affine(
        dists.theta_sigma2_frac_range,
        beta_draw(dists.theta_sigma2_shape, rng)?,
    );
    let theta_sigma2_mw2 = frac * var_pd_mw2;
    let theta_d = affine(dists.theta_d_range, beta_draw(dists.theta_d_shape, rng)?);
    let theta_w = affine(dists.theta_w_range, beta_draw(dists.theta_w_shape, rng)?);
    let theta_z = affine(dists.theta_z_range, beta_draw(dists.theta_z_shape, rng)?);
    Ok(AgentParams {
        theta_g_mw,
        theta_t_min,
        theta_sigma2_mw2,
        theta_d,
        theta_w,
        theta_z,
        theta_c_eur_mwh: dists.theta_c_eur_mwh,
    })
}

fn make_disturbance(
    cfg: &RunConfig,
    dist_cfg: &DisturbanceConfig,
    rng: &mut ChaCha8Rng,
) -> Result<DisturbanceSeries, EnsembleError> {
    let intraday = dist_cfg
        .intraday_index_eur_mwh
        .unwrap_or(cfg.pricing.intraday_index_eur_mwh);
    match &dist_cfg.source {
        DisturbanceSource::Synthetic { archetype } => Ok(synthesize_disturbance(
            *archetype,
            rng,
            cfg.sim.horizon_s,
            cfg.busbar.dt_s,
            intraday,
        )),
        DisturbanceSource::Csv { path } => {
            Ok(load_disturbance(path, cfg.sim.horizon_s, cfg.busbar.dt_s, intraday)?)
        }
    }
}

/// Materialize the inputs of one grid cell.
pub fn build_run(
    cfg: &RunConfig,
    axes: &RunAxes,
    run_index: u64,
    base_seed: u64,
) -> Result<(RunInputs, RunMeta), EnsembleError> {
    let mut rng = run_stream(base_seed, run_index);
    let disturbance = make_disturbance(cfg, &axes.disturbance, &mut rng)?;
    let var_pd = disturbance.variance();

    let dists = AgentDistConfig {
        theta_g_shape: axes.theta_g_shape,
        theta_sigma2_shape: axes.theta_sigma2_shape,
        theta_z_shape: axes.theta_z_shape,
        ..cfg.agents.clone()
    };
    let mut agents = Vec::with_capacity(cfg.sim.n_agents);
    let mut agent_rngs = Vec::with_capacity(cfg.sim.n_agents);
    for i in 0..cfg.sim.n_agents {
        agents.push(sample_params(&dists, var_pd, &mut rng)?);
        agent_rngs.push(agent_stream(base_seed, run_index, i));
    }

    let nrt = NrtScenario {
        kind: axes.nrt.kind,
        delay_s: axes.nrt.delay_s,
        ..cfg.nrt.clone()
    };
    let price = cfg
        .pricing
        .build(Some(disturbance.intraday_index_eur_mwh))
        .expect("validated at config load");

    let meta = RunMeta {
        run_index,
        base_seed,
        disturbance_id: disturbance.id.clone(),
        nrt_kind: nrt.kind,
        delay_s: nrt.delay_s,
        theta_g_shape: axes.theta_g_shape,
        theta_sigma2_shape: axes.theta_sigma2_shape,
        theta_z_shape: axes.theta_z_shape,
        repeat: axes.repeat,
        n_agents: cfg.sim.n_agents,
        horizon_s: cfg.sim.horizon_s,
    };
    let inputs = RunInputs {
        busbar: cfg.busbar.clone(),
        nrt,
        price,
        sim: cfg.sim.clone(),
        disturbance,
        agents,
        agent_rngs,
    };
    Ok((inputs, meta))
}

/// Combination dropped from the statistics: mostly-large gains paired with
/// mostly-narrow robustness intervals react so aggressively that the runs
/// distort every aggregate.
pub fn is_excluded_combo(axes: &RunAxes) -> bool {
    axes.theta_g_shape == (10.0, 1.0) && axes.theta_z_shape == (1.0, 10.0)
}

/// Execute one grid cell; failures become a marked result instead of
/// aborting the ensemble.
pub fn execute_run(cfg: &RunConfig, axes: &RunAxes, run_index: u64, base_seed: u64) -> RunResult {
    let excluded = cfg.ensemble.exclusion_rule && is_excluded_combo(axes);
    match build_run(cfg, axes, run_index, base_seed).and_then(|(inputs, meta)| {
        run_simulation(&inputs, meta).map_err(EnsembleError::from)
    }) {
        Ok(mut result) => {
            result.excluded = excluded;
            result
        }
        Err(err) => failed_result(cfg, axes, run_index, base_seed, err.to_string()),
    }
}

fn failed_result(
    cfg: &RunConfig,
    axes: &RunAxes,
    run_index: u64,
    base_seed: u64,
    message: String,
) -> RunResult {
    let disturbance_id = match &axes.disturbance.source {
        DisturbanceSource::Synthetic { archetype } => archetype.id().to_string(),
        DisturbanceSource::Csv { path } => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "csv".into()),
    };
    RunResult {
        meta: RunMeta {
            run_index,
            base_seed,
            disturbance_id,
            nrt_kind: axes.nrt.kind,
            delay_s: axes.nrt.delay_s,
            theta_g_shape: axes.theta_g_shape,
            theta_sigma2_shape: axes.theta_sigma2_shape,
            theta_z_shape: axes.theta_z_shape,
            repeat: axes.repeat,
            n_agents: cfg.sim.n_agents,
            horizon_s: cfg.sim.horizon_s,
        },
        dt_s: cfg.busbar.dt_s,
        t_nrt_s: cfg.sim.t_nrt_s,
        isp_s: cfg.sim.isp_s,
        freq_dev_hz: Vec::new(),
        p_demand_mw: Vec::new(),
        p_fcr_mw: Vec::new(),
        p_afrr_mw: Vec::new(),
        p_smart_mw: Vec::new(),
        minute_avg_demand_mw: Vec::new(),
        agent_params: Vec::new(),
        agent_u: Vec::new(),
        agent_y_minute_mw: Vec::new(),
        brp_metrics: Vec::new(),
        kpis: Default::default(),
        ref_kpis: Default::default(),
        rel: Default::default(),
        diagnostics: Default::default(),
        excluded: true,
        failed: Some(message),
    }
}

/// Run the whole grid on `workers` threads. Results come back ordered by
/// run index regardless of scheduling.
pub fn run_ensemble(
    cfg: &RunConfig,
    base_seed: u64,
    workers: usize,
) -> Result<Vec<RunResult>, EnsembleError> {
    let grid = expand_grid(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| EnsembleError::Pool(e.to_string()))?;
    let results = pool.install(|| {
        grid.par_iter()
            .enumerate()
            .map(|(i, axes)| execute_run(cfg, axes, i as u64, base_seed))
            .collect()
    });
    Ok(results)
}

/// One run straight from the top-level config (no grid expansion).
pub fn run_single(cfg: &RunConfig, base_seed: u64) -> Result<RunResult, EnsembleError> {
    let axes = RunAxes {
        disturbance: cfg.disturbance.clone(),
        nrt: NrtAxis {
            kind: cfg.nrt.kind,
            delay_s: cfg.nrt.delay_s,
        },
        theta_g_shape: cfg.agents.theta_g_shape,
        theta_sigma2_shape: cfg.agents.theta_sigma2_shape,
        theta_z_shape: cfg.agents.theta_z_shape,
        repeat: 0,
    };
    let (inputs, meta) = build_run(cfg, &axes, 0, base_seed)?;
    Ok(run_simulation(&inputs, meta)?)
}
