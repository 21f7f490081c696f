//! Small-horizon oracle for the full estimation pipeline: the empirical
//! mean of the sampled estimates must match the conditioned-and-truncated
//! mean obtained by rejection sampling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smartbal::agent::{estimate, AgentParams, AgentState};
use smartbal::gauss::prior_cov;
use smartbal::nrt::{IndexClass, NrtBulletin};

#[test]
fn toy_horizon_mean_matches_rejection_oracle() {
    let n = 6;
    let params = AgentParams {
        theta_g_mw: 50.0,
        theta_t_min: 5.0,
        theta_sigma2_mw2: 10_000.0,
        theta_d: 1.0,
        theta_w: 0.8,
        theta_z: 1.0,
        theta_c_eur_mwh: 0.0,
    };
    let lookahead = DVector::from_column_slice(&[50.0, 60.0, 70.0, 80.0, 90.0, 100.0]);
    let x_prev = DVector::from_column_slice(&[40.0, 55.0, 65.0, 90.0, 95.0, 110.0]);

    // Two exact, two interval, two future indices.
    let bulletin = NrtBulletin {
        lower: vec![55.0, 58.0, 0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
        upper: vec![55.0, 58.0, 240.0, 240.0, f64::INFINITY, f64::INFINITY],
        classes: vec![
            IndexClass::Exact,
            IndexClass::Exact,
            IndexClass::Interval,
            IndexClass::Interval,
            IndexClass::Future,
            IndexClass::Future,
        ],
    };

    // Empirical mean over repeated calls with a pinned previous estimate.
    let mut state = AgentState::new(&params, n, 60.0, ChaCha8Rng::seed_from_u64(17));
    let calls = 10_000;
    let mut mean = DVector::zeros(n);
    for _ in 0..calls {
        state.x_prev = Some(x_prev.clone());
        let est = estimate(&mut state, &lookahead, &bulletin, &params).unwrap();
        mean += est.x_hat;
    }
    mean /= calls as f64;

    // Oracle: blend and condition by dense arithmetic, then take the
    // truncated mean by rejection sampling over the complement block.
    let blended_mean = &lookahead * (1.0 - params.theta_w) + &x_prev * params.theta_w;
    let blended_cov =
        prior_cov(params.theta_sigma2_mw2, params.theta_d, n) * (1.0 - params.theta_w.powi(2));
    let e_idx = [0usize, 1];
    let c_idx = [2usize, 3, 4, 5];
    let sig_ee = DMatrix::from_fn(2, 2, |a, b| blended_cov[(e_idx[a], e_idx[b])]);
    let sig_ce = DMatrix::from_fn(4, 2, |a, b| blended_cov[(c_idx[a], e_idx[b])]);
    let sig_cc = DMatrix::from_fn(4, 4, |a, b| blended_cov[(c_idx[a], c_idx[b])]);
    let inv = sig_ee.try_inverse().unwrap();
    let innov = DVector::from_column_slice(&[
        55.0 - blended_mean[0],
        58.0 - blended_mean[1],
    ]);
    let mu_c = DVector::from_fn(4, |a, _| blended_mean[c_idx[a]]) + &sig_ce * &inv * innov;
    let cov_c = sig_cc - &sig_ce * inv * sig_ce.transpose();

    let chol = cov_c.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut kept = 0usize;
    let mut sum = DVector::zeros(4);
    let lower = [0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY];
    let upper = [240.0, 240.0, f64::INFINITY, f64::INFINITY];
    while kept < 200_000 {
        let z = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let x = &mu_c + &chol * z;
        if (0..4).all(|i| x[i] >= lower[i] && x[i] <= upper[i]) {
            sum += x;
            kept += 1;
        }
    }
    let oracle_c = sum / kept as f64;
    let oracle = DVector::from_column_slice(&[
        55.0,
        58.0,
        oracle_c[0],
        oracle_c[1],
        oracle_c[2],
        oracle_c[3],
    ]);

    for i in 0..n {
        let sd = if i < 2 { 0.0 } else { cov_c[(i - 2, i - 2)].sqrt() };
        let scale = oracle[i].abs().max(sd).max(1.0);
        let err = (mean[i] - oracle[i]).abs();
        assert!(
            err <= 0.02 * scale,
            "coordinate {i}: empirical {} vs oracle {} (err {err:.3}, scale {scale:.1})",
            mean[i],
            oracle[i]
        );
    }
}
