//! One balance responsible party.
//!
//! Each BRP estimates the discretized FRR demand over the whole horizon
//! from its privileged lookahead, the published NRT bounds and its own
//! previous estimate, then picks one of five plan adjustments: do nothing,
//! or switch to positive/negative smart balancing until the end of the
//! current or the next ISP. An adjustment is only admissible when it is
//! profitable across the whole robustness interval of the estimate; among
//! the admissible ones the expected-revenue maximizer wins.
//!
//! Decisions are on/off with the full capacity; the delivered power follows
//! a first-order lag with gain `theta_G` and time constant `theta_T`.

use crate::config::SignConvention;
use crate::gauss::{
    blend, condition_exact, residual_std_future, sample_tmvn, truncated_std_interval,
    GaussError, GaussianBelief, TruncationBox,
};
use crate::nrt::NrtBulletin;
use crate::pricing::{imbalance_price_series, PriceModel};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

/// The seven parameters of one BRP.
#[derive(Debug, Clone)]
pub struct AgentParams {
    /// Smart balancing capacity [MW].
    pub theta_g_mw: f64,
    /// Activation time constant [min].
    pub theta_t_min: f64,
    /// Prior variance of the demand estimate [MW^2].
    pub theta_sigma2_mw2: f64,
    /// Temporal correlation decay of the prior [-].
    pub theta_d: f64,
    /// Weight of the previous estimate in the blend [0, 1].
    pub theta_w: f64,
    /// Robustness interval width in standard deviations [-].
    pub theta_z: f64,
    /// Activation cost parameter [EUR/MWh].
    pub theta_c_eur_mwh: f64,
}

/// Counters surfaced in the run diagnostics.
#[derive(Debug, Clone, Copy, Default)]
pub struct AgentDiagnostics {
    /// Interval bins whose probability mass underflowed.
    pub degenerate_bins: usize,
    /// Negative diagonal entries clamped in the residual variance.
    pub variance_clamps: usize,
}

/// Mutable per-BRP state: the previous estimate, the committed plan, the
/// private RNG stream and the cached activation kernel and prior.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub x_prev: Option<DVector<f64>>,
    /// Committed decision per horizon index, entries in {-1, 0, +1}.
    pub u: Vec<i8>,
    pub rng: ChaCha8Rng,
    /// Discrete activation impulse response [MW per unit decision].
    pub h: Vec<f64>,
    prior: DMatrix<f64>,
    pub diagnostics: AgentDiagnostics,
}

impl AgentState {
    pub fn new(params: &AgentParams, n: usize, t_nrt_s: f64, rng: ChaCha8Rng) -> Self {
        Self {
            x_prev: None,
            u: vec![0; n],
            rng,
            h: impulse_response(params.theta_g_mw, params.theta_t_min, n, t_nrt_s),
            prior: crate::gauss::prior_cov(params.theta_sigma2_mw2, params.theta_d, n),
            diagnostics: AgentDiagnostics::default(),
        }
    }
}

/// Demand estimate with robustness bounds over the full horizon.
#[derive(Debug, Clone)]
pub struct DemandEstimate {
    pub x_hat: DVector<f64>,
    pub upper: DVector<f64>,
    pub lower: DVector<f64>,
    pub sigma_hat: DVector<f64>,
}

/// Discrete activation kernel: convolving it with a unit step reproduces
/// the sampled step response `theta_G (1 - exp(-t/theta_T))` at `t = k T_NRT`.
pub fn impulse_response(theta_g_mw: f64, theta_t_min: f64, n: usize, t_nrt_s: f64) -> Vec<f64> {
    assert!(theta_t_min > 0.0, "activation time constant must be positive");
    let a = (-t_nrt_s / (theta_t_min * 60.0)).exp();
    let mut h = Vec::with_capacity(n);
    if n > 0 {
        h.push(0.0);
    }
    let mut prev = 1.0;
    for _ in 1..n {
        let next = prev * a;
        h.push(theta_g_mw * (prev - next));
        prev = next;
    }
    h
}

/// Delivered power sequence `y = h * u`, truncated to the horizon.
pub fn activated_power(u: &[i8], h: &[f64]) -> Vec<f64> {
    let n = u.len();
    let mut y = vec![0.0; n];
    for (m, &hm) in h.iter().enumerate().take(n) {
        if hm == 0.0 {
            continue;
        }
        for i in m..n {
            let ui = u[i - m];
            if ui != 0 {
                y[i] += hm * f64::from(ui);
            }
        }
    }
    y
}

/// The five candidate adjustments at step `k`, indexed by `j + 2` for
/// `j in {-2, -1, 0, +1, +2}`.
///
/// `j = 0` leaves the plan untouched; `j = +-1` forces the plan to `+-1`
/// from `k` through the end of the current ISP; `j = +-2` does the same
/// through the end of the next ISP. Indices before `k` are never modified.
pub fn adjustments(k: usize, isp_len: usize, n: usize, u: &[i8]) -> [Vec<i8>; 5] {
    let isp_end = (((k / isp_len) + 1) * isp_len).min(n);
    let next_end = (isp_end + isp_len).min(n);
    let mut out: [Vec<i8>; 5] = std::array::from_fn(|_| vec![0; n]);
    for i in k..next_end {
        let within_current = i < isp_end;
        for (slot, j) in [(0usize, -2i8), (1, -1), (3, 1), (4, 2)] {
            if within_current || slot == 0 || slot == 4 {
                out[slot][i] = j.signum() - u[i];
            }
        }
    }
    out
}

/// Revenue of the candidate plan `u + delta` if the demand were `x`.
///
/// The price argument replaces the plan contribution already embedded in
/// `x` with the candidate contribution; which way the correction points
/// depends on the sign convention.
#[allow(clippy::too_many_arguments)]
pub fn revenue(
    x: &DVector<f64>,
    u: &[i8],
    delta: &[i8],
    h: &[f64],
    model: &PriceModel,
    isp_len: usize,
    t_nrt_s: f64,
    theta_c_eur_mwh: f64,
    sign: SignConvention,
) -> f64 {
    let n = u.len();
    let combined: Vec<i8> = u.iter().zip(delta).map(|(a, b)| a + b).collect();
    let y_new = activated_power(&combined, h);
    let y_old = activated_power(u, h);
    let arg: Vec<f64> = (0..n)
        .map(|i| match sign {
            SignConvention::Demand => x[i] + y_old[i] - y_new[i],
            SignConvention::Surplus => x[i] - y_old[i] + y_new[i],
        })
        .collect();
    let prices = imbalance_price_series(&arg, model, isp_len)
        .expect("horizon is a whole number of ISPs");
    let t_nrt_h = t_nrt_s / 3600.0;
    let settlement: f64 = y_new.iter().zip(&prices).map(|(y, p)| y * p).sum();
    let activation_cost: f64 = y_new.iter().map(|y| y.abs()).sum::<f64>() * theta_c_eur_mwh;
    t_nrt_h * (settlement - activation_cost)
}

/// Outcome of one decision step.
#[derive(Debug, Clone, Copy)]
pub struct Decision {
    /// Chosen adjustment index in {-2, ..., +2}.
    pub j_star: i8,
    /// Expected revenue of the chosen adjustment at the point estimate.
    pub expected_revenue_eur: f64,
}

/// Robust decision: pick the adjustment with the highest expected revenue
/// among those profitable on the whole robustness interval, commit it into
/// the plan. Ties break toward smaller |j|, then toward positive j.
#[allow(clippy::too_many_arguments)]
pub fn decide(
    est: &DemandEstimate,
    state: &mut AgentState,
    params: &AgentParams,
    model: &PriceModel,
    isp_len: usize,
    k: usize,
    t_nrt_s: f64,
    sign: SignConvention,
) -> Decision {
    let n = state.u.len();
    let deltas = adjustments(k, isp_len, n, &state.u);
    let mut best: Option<(i8, f64)> = None;
    for j in [0i8, 1, -1, 2, -2] {
        let delta = &deltas[(j + 2) as usize];
        let c_hat = revenue(
            &est.x_hat,
            &state.u,
            delta,
            &state.h,
            model,
            isp_len,
            t_nrt_s,
            params.theta_c_eur_mwh,
            sign,
        );
        if c_hat <= 0.0 {
            continue;
        }
        let robust = [&est.upper, &est.lower].iter().all(|x| {
            revenue(
                x,
                &state.u,
                delta,
                &state.h,
                model,
                isp_len,
                t_nrt_s,
                params.theta_c_eur_mwh,
                sign,
            ) > 0.0
        });
        if robust && best.is_none_or(|(_, c)| c_hat > c) {
            best = Some((j, c_hat));
        }
    }
    let (j_star, expected) = best.unwrap_or((0, 0.0));
    let delta = &deltas[(j_star + 2) as usize];
    for (ui, di) in state.u.iter_mut().zip(delta) {
        *ui += di;
        debug_assert!((-1..=1).contains(ui));
    }
    Decision {
        j_star,
        expected_revenue_eur: expected,
    }
}

/// Demand estimation pipeline for one decision step.
///
/// The blended prior is conditioned on the exactly published indices and
/// sampled truncated to the published intervals; the robustness band is
/// assembled from the diagonal moment approximations (zero on exact
/// indices). The first call initializes the previous estimate with an
/// unconditioned draw from the prior around the lookahead.
pub fn estimate(
    state: &mut AgentState,
    lookahead: &DVector<f64>,
    bulletin: &NrtBulletin,
    params: &AgentParams,
) -> Result<DemandEstimate, GaussError> {
    let n = lookahead.len();
    if state.x_prev.is_none() {
        let init = sample_tmvn(
            &GaussianBelief {
                mean: lookahead.clone(),
                cov: state.prior.clone(),
            },
            &TruncationBox::unbounded(n),
            &mut state.rng,
        )?;
        state.x_prev = Some(init);
    }
    let x_prev = state.x_prev.as_ref().unwrap();
    let blended = blend(lookahead, &state.prior, x_prev, params.theta_w)?;

    let exact_idx = bulletin.exact_indices();
    let exact_vals: Vec<f64> = exact_idx.iter().map(|&i| bulletin.upper[i]).collect();
    let cond = condition_exact(&blended, &exact_idx, &exact_vals)?;

    let mut is_exact = vec![false; n];
    for &i in &exact_idx {
        is_exact[i] = true;
    }
    let comp: Vec<usize> = (0..n).filter(|i| !is_exact[*i]).collect();

    let mut x_hat = DVector::zeros(n);
    let mut sigma = DVector::zeros(n);
    for (a, &i) in exact_idx.iter().enumerate() {
        x_hat[i] = exact_vals[a];
    }

    if !comp.is_empty() {
        let bx = TruncationBox {
            lower: DVector::from_fn(comp.len(), |a, _| bulletin.lower[comp[a]]),
            upper: DVector::from_fn(comp.len(), |a, _| bulletin.upper[comp[a]]),
        };
        let draw = sample_tmvn(&cond, &bx, &mut state.rng)?;
        for (a, &i) in comp.iter().enumerate() {
            x_hat[i] = draw[a];
        }

        // Positions of the interval and future blocks inside the complement.
        let ivl: Vec<usize> = (0..comp.len())
            .filter(|&a| bx.lower[a].is_finite() || bx.upper[a].is_finite())
            .collect();
        let fut: Vec<usize> = (0..comp.len())
            .filter(|&a| !(bx.lower[a].is_finite() || bx.upper[a].is_finite()))
            .collect();

        let ivl_lower: Vec<f64> = ivl.iter().map(|&a| bx.lower[a]).collect();
        let ivl_upper: Vec<f64> = ivl.iter().map(|&a| bx.upper[a]).collect();
        let trunc = truncated_std_interval(&cond, &ivl, &ivl_lower, &ivl_upper)?;
        state.diagnostics.degenerate_bins += trunc.degenerate_bins;
        for (a, &ci) in ivl.iter().enumerate() {
            sigma[comp[ci]] = trunc.sigma[a];
        }

        if !fut.is_empty() {
            let sig_ff = DMatrix::from_fn(fut.len(), fut.len(), |a, b| cond.cov[(fut[a], fut[b])]);
            let sig_fi = DMatrix::from_fn(fut.len(), ivl.len(), |a, b| cond.cov[(fut[a], ivl[b])]);
            let sig_ii = DMatrix::from_fn(ivl.len(), ivl.len(), |a, b| cond.cov[(ivl[a], ivl[b])]);
            let resid = residual_std_future(&sig_ff, &sig_fi, &sig_ii, &trunc.sigma)?;
            state.diagnostics.variance_clamps += resid.clamped;
            for (a, &ci) in fut.iter().enumerate() {
                sigma[comp[ci]] = resid.sigma[a];
            }
        }
    }

    state.x_prev = Some(x_hat.clone());
    let upper = &x_hat + &sigma * params.theta_z;
    let lower = &x_hat - &sigma * params.theta_z;
    Ok(DemandEstimate {
        x_hat,
        upper,
        lower,
        sigma_hat: sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nrt::{publish, NrtKind, NrtScenario};
    use crate::pricing::MarginalCurve;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn test_params() -> AgentParams {
        AgentParams {
            theta_g_mw: 50.0,
            theta_t_min: 5.0,
            theta_sigma2_mw2: 10_000.0,
            theta_d: 1.2,
            theta_w: 0.8,
            theta_z: 1.0,
            theta_c_eur_mwh: 0.0,
        }
    }

    /// Odd curve through the origin, so injection during a long ISP loses.
    fn odd_model() -> PriceModel {
        PriceModel {
            curve: MarginalCurve::new(vec![(-3000.0, -300.0), (3000.0, 300.0)]).unwrap(),
            intraday_index_eur_mwh: 0.0,
            dimensioned_volume_mw: 1870.0,
            scarcity_threshold_frac: 0.8,
            scarcity_surcharge: 0.0,
        }
    }

    fn state_with(params: &AgentParams, n: usize, seed: u64) -> AgentState {
        AgentState::new(params, n, 60.0, ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn impulse_response_step_values() {
        let h = impulse_response(100.0, 2.0, 10, 60.0);
        // After one sample: theta_G (1 - e^{-0.5}).
        assert_relative_eq!(h[0] + h[1], 100.0 * (1.0 - (-0.5f64).exp()), max_relative = 1e-12);
        let total: f64 = impulse_response(100.0, 2.0, 400, 60.0).iter().sum();
        assert_relative_eq!(total, 100.0, epsilon = 1e-6);
        // Response at t = theta_T is theta_G (1 - 1/e).
        let h = impulse_response(80.0, 10.0, 60, 60.0);
        let cum: f64 = h[..=10].iter().sum();
        assert_relative_eq!(cum, 80.0 * (1.0 - (-1.0f64).exp()), max_relative = 1e-12);
    }

    #[test]
    fn activated_power_step_and_reversal() {
        let h = impulse_response(100.0, 10.0, 60, 60.0);
        let step = vec![1i8; 60];
        let y = activated_power(&step, &h);
        assert_eq!(y[0], 0.0);
        for i in 1..60 {
            assert!(y[i] > y[i - 1]);
        }
        assert!(y[59] < 100.0 && y[59] > 99.0 * (1.0 - (-59.0f64 / 10.0).exp()));

        let mut rev = vec![1i8; 10];
        rev.extend(vec![-1i8; 50]);
        let y = activated_power(&rev, &h);
        assert!(y[10] > 0.0);
        assert!(y[59] < 0.0, "reversal crosses zero, got {}", y[59]);

        assert!(activated_power(&[0i8; 30], &h).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn adjustments_extents() {
        let n = 30;
        let u = vec![0i8; n];
        // Clean ISP start.
        let d = adjustments(0, 15, n, &u);
        assert!(d[2].iter().all(|v| *v == 0));
        assert_eq!(d[3][..15], vec![1i8; 15][..]);
        assert!(d[3][15..].iter().all(|v| *v == 0));
        assert_eq!(d[4][..30], vec![1i8; 30][..]);

        // Mid-ISP with an active positive plan: delta_-1 flips by -2.
        let mut u = vec![0i8; n];
        u[5..15].fill(1);
        let d = adjustments(5, 15, n, &u);
        assert!(d[1][5..15].iter().all(|v| *v == -2));
        assert!(d[1][15..].iter().all(|v| *v == 0));
        assert!(d[1][..5].iter().all(|v| *v == 0));

        // Last step of the horizon: +-1 and +-2 coincide.
        let u = vec![0i8; n];
        let d = adjustments(29, 15, n, &u);
        assert_eq!(d[3], d[4]);
        assert_eq!(d[0], d[1]);

        // All five leave u + delta in {-1, 0, 1} and never touch i < k.
        let mut u = vec![0i8; n];
        u[10..20].fill(-1);
        let d = adjustments(12, 15, n, &u);
        for delta in &d {
            for i in 0..n {
                let v = u[i] + delta[i];
                assert!((-1..=1).contains(&v));
                if i < 12 {
                    assert_eq!(delta[i], 0);
                }
            }
        }
    }

    #[test]
    fn revenue_signs() {
        let n = 15;
        let params = test_params();
        let model = odd_model();
        let h = impulse_response(50.0, 5.0, n, 60.0);
        let u = vec![0i8; n];
        let deltas = adjustments(0, 15, n, &u);

        let zero = revenue(
            &DVector::from_element(n, 500.0),
            &u,
            &deltas[2],
            &h,
            &model,
            15,
            60.0,
            params.theta_c_eur_mwh,
            SignConvention::Demand,
        );
        assert_eq!(zero, 0.0);

        let short = DVector::from_element(n, 500.0);
        let long = DVector::from_element(n, -500.0);
        let pos = |x: &DVector<f64>| {
            revenue(x, &u, &deltas[3], &h, &model, 15, 60.0, 0.0, SignConvention::Demand)
        };
        let neg = |x: &DVector<f64>| {
            revenue(x, &u, &deltas[1], &h, &model, 15, 60.0, 0.0, SignConvention::Demand)
        };
        assert!(pos(&short) > 0.0);
        assert!(pos(&long) < 0.0);
        assert!(neg(&long) > 0.0);
        assert!(neg(&short) < 0.0);

        // Hand-computed value: y = h * delta_+1, price of the single ISP is
        // evaluated at mean(x - y) under the demand convention.
        let y = activated_power(&deltas[3].clone(), &h);
        let adj: Vec<f64> = (0..n).map(|i| 500.0 - y[i]).collect();
        let price = model.isp_price(adj.iter().sum::<f64>() / n as f64);
        let by_hand = 60.0 / 3600.0 * y.iter().sum::<f64>() * price;
        assert_relative_eq!(pos(&short), by_hand, max_relative = 1e-12);

        // Surplus convention: the candidate enters the price argument with
        // the opposite sign.
        let surplus = revenue(
            &short,
            &u,
            &deltas[3],
            &h,
            &model,
            15,
            60.0,
            0.0,
            SignConvention::Surplus,
        );
        let adj_s: Vec<f64> = (0..n).map(|i| 500.0 + y[i]).collect();
        let price_s = model.isp_price(adj_s.iter().sum::<f64>() / n as f64);
        let by_hand_s = 60.0 / 3600.0 * y.iter().sum::<f64>() * price_s;
        assert_relative_eq!(surplus, by_hand_s, max_relative = 1e-12);
    }

    #[test]
    fn decide_empty_robust_set_keeps_plan() {
        let n = 30;
        let params = test_params();
        let model = odd_model();
        let mut state = state_with(&params, n, 3);
        // Bounds straddle zero: no direction is profitable on both bounds.
        let est = DemandEstimate {
            x_hat: DVector::from_element(n, 0.0),
            upper: DVector::from_element(n, 400.0),
            lower: DVector::from_element(n, -400.0),
            sigma_hat: DVector::from_element(n, 400.0),
        };
        let d = decide(&est, &mut state, &params, &model, 15, 0, 60.0, SignConvention::Demand);
        assert_eq!(d.j_star, 0);
        assert!(state.u.iter().all(|v| *v == 0));
    }

    #[test]
    fn decide_prefers_longer_delivery_under_flat_price() {
        let n = 30;
        let params = test_params();
        // Flat positive price regardless of demand.
        let model = PriceModel {
            curve: MarginalCurve::new(vec![(0.0, 100.0)]).unwrap(),
            intraday_index_eur_mwh: 100.0,
            dimensioned_volume_mw: 1870.0,
            scarcity_threshold_frac: 0.8,
            scarcity_surcharge: 0.0,
        };
        let mut state = state_with(&params, n, 4);
        let x = DVector::from_element(n, 500.0);
        let est = DemandEstimate {
            x_hat: x.clone(),
            upper: x.clone(),
            lower: x.clone(),
            sigma_hat: DVector::zeros(n),
        };
        let d = decide(&est, &mut state, &params, &model, 15, 0, 60.0, SignConvention::Demand);
        assert_eq!(d.j_star, 2);
        assert!(state.u[..30].iter().all(|v| *v == 1));
    }

    #[test]
    fn decide_causality_and_commit() {
        let n = 30;
        let params = test_params();
        let model = odd_model();
        let mut state = state_with(&params, n, 5);
        let x = DVector::from_element(n, 800.0);
        let est = DemandEstimate {
            x_hat: x.clone(),
            upper: x.clone(),
            lower: x.clone(),
            sigma_hat: DVector::zeros(n),
        };
        let d = decide(&est, &mut state, &params, &model, 15, 20, 60.0, SignConvention::Demand);
        assert!(d.j_star > 0);
        assert!(state.u[..20].iter().all(|v| *v == 0), "indices before k untouched");
    }

    #[test]
    fn estimate_fully_observed_horizon() {
        let n = 12;
        let params = test_params();
        let mut state = state_with(&params, n, 6);
        let avgs: Vec<f64> = (0..n).map(|i| 100.0 + i as f64).collect();
        let sc = NrtScenario {
            kind: NrtKind::Exact,
            delay_s: 0.0,
            ..NrtScenario::default()
        };
        let bulletin = publish(&avgs, n, n as f64 * 60.0, 60.0, &sc);
        assert_eq!(bulletin.exact_indices().len(), n);
        let lookahead = DVector::from_element(n, 0.0);
        let est = estimate(&mut state, &lookahead, &bulletin, &params).unwrap();
        for (i, &avg) in avgs.iter().enumerate() {
            assert_eq!(est.x_hat[i], avg);
            assert_eq!(est.sigma_hat[i], 0.0);
            assert_eq!(est.upper[i], est.x_hat[i]);
            assert_eq!(est.lower[i], est.x_hat[i]);
        }
    }

    #[test]
    fn estimate_degenerate_prior_tracks_lookahead() {
        let n = 10;
        let params = AgentParams {
            theta_w: 0.0,
            theta_sigma2_mw2: 1e-12,
            ..test_params()
        };
        let mut state = state_with(&params, n, 7);
        let sc = NrtScenario::default();
        let bulletin = publish(&[], n, 0.0, 60.0, &sc);
        let lookahead = DVector::from_fn(n, |i, _| 300.0 - 10.0 * i as f64);
        let est = estimate(&mut state, &lookahead, &bulletin, &params).unwrap();
        for i in 0..n {
            assert!((est.x_hat[i] - lookahead[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn estimate_bounds_ordered_and_contained() {
        let n = 20;
        let params = test_params();
        let mut state = state_with(&params, n, 8);
        let avgs: Vec<f64> = (0..10).map(|i| 130.0 * (i as f64 - 4.0)).collect();
        let sc = NrtScenario {
            kind: NrtKind::UniformIntervals,
            delay_s: 60.0,
            ..NrtScenario::default()
        };
        let lookahead = DVector::from_element(n, 50.0);
        for step in 0..10 {
            let now = (step + 1) as f64 * 60.0;
            let bulletin = publish(&avgs[..=step], n, now, 60.0, &sc);
            let est = estimate(&mut state, &lookahead, &bulletin, &params).unwrap();
            for i in 0..n {
                assert!(est.lower[i] <= est.x_hat[i] && est.x_hat[i] <= est.upper[i]);
                if bulletin.classes[i] != crate::nrt::IndexClass::Future {
                    assert!(
                        est.x_hat[i] >= bulletin.lower[i] - 1e-9
                            && est.x_hat[i] <= bulletin.upper[i] + 1e-9,
                        "estimate outside published bounds at {i}"
                    );
                }
            }
        }
    }

    #[test]
    fn robust_set_shrinks_with_theta_z() {
        let n = 15;
        let model = odd_model();
        let base = test_params();
        let h = impulse_response(50.0, 5.0, n, 60.0);
        let x = DVector::from_element(n, 300.0);
        let sigma = DVector::from_element(n, 120.0);
        let mut active_at: Vec<f64> = Vec::new();
        for &tz in &[0.5, 1.0, 2.0, 3.0] {
            let params = AgentParams { theta_z: tz, ..base.clone() };
            let mut state = AgentState::new(&params, n, 60.0, ChaCha8Rng::seed_from_u64(9));
            state.h = h.clone();
            let est = DemandEstimate {
                x_hat: x.clone(),
                upper: &x + &sigma * tz,
                lower: &x - &sigma * tz,
                sigma_hat: sigma.clone(),
            };
            let d = decide(&est, &mut state, &params, &model, 15, 0, 60.0, SignConvention::Demand);
            if d.j_star != 0 {
                active_at.push(tz);
            }
        }
        // Activity at a larger theta_z implies activity at every smaller one.
        for w in active_at.windows(2) {
            assert!(w[1] > w[0]);
        }
        if let Some(&max_active) = active_at.last() {
            for &tz in &[0.5, 1.0, 2.0, 3.0] {
                if tz < max_active {
                    assert!(active_at.contains(&tz));
                }
            }
        }
    }
}
