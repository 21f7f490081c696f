//! Multivariate normal machinery for the demand estimation pipeline.
//!
//! Provides the exponential-decay prior covariance, blending of a fresh
//! belief with the previous estimate, conditioning on exactly observed
//! coordinates (Schur complement), sampling from box-truncated multivariate
//! normals, and the diagonal approximations of the truncated moments used
//! for the robustness intervals.
//!
//! The truncated sampler runs a coordinate-wise Gibbs sweep over the
//! whitened parameterization `x = mu + L z` (L the Cholesky factor), with a
//! fixed number of burn-in sweeps and one retained draw per call. In the
//! whitened coordinates an unconstrained problem mixes in a single sweep,
//! so the autocorrelation is governed by the box geometry alone.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::{erfc, erfc_inv};
use thiserror::Error;

/// Burn-in sweeps of the whitened Gibbs sampler per retained draw.
const GIBBS_BURN_IN_SWEEPS: usize = 100;
/// Standardized distance beyond which a box is treated as unreachable.
const MAX_STANDARDIZED_DISTANCE: f64 = 12.0;

#[derive(Debug, Error)]
pub enum GaussError {
    #[error("dimension mismatch: {context}")]
    Dimension { context: &'static str },
    #[error("weighting parameter must lie in [0, 1], got {0}")]
    BadWeight(f64),
    #[error("covariance block is singular beyond jitter repair")]
    SingularCovariance,
    #[error("truncation box is inconsistent at coordinate {index}: [{lower}, {upper}]")]
    BadBox { index: usize, lower: f64, upper: f64 },
    #[error("truncation box has no reachable mass at coordinate {index} (more than 12 sigma from the mean)")]
    UnreachableBox { index: usize },
}

/// Mean and covariance of a multivariate normal belief.
#[derive(Debug, Clone)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Elementwise truncation bounds; entries may be infinite.
#[derive(Debug, Clone)]
pub struct TruncationBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl TruncationBox {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(|x| *x == f64::NEG_INFINITY)
            && self.upper.iter().all(|x| *x == f64::INFINITY)
    }

    fn validate(&self) -> Result<(), GaussError> {
        if self.lower.len() != self.upper.len() {
            return Err(GaussError::Dimension {
                context: "box lower/upper lengths differ",
            });
        }
        for i in 0..self.lower.len() {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(GaussError::BadBox {
                    index: i,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Standard normal helpers
// ---------------------------------------------------------------------------

const FRAC_1_SQRT_2PI: f64 = 0.3989422804014327;

pub fn norm_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Complementary CDF, accurate in the right tail.
pub fn norm_cdf_c(x: f64) -> f64 {
    0.5 * erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

pub fn norm_ppf(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

// ---------------------------------------------------------------------------
// Prior construction and blending
// ---------------------------------------------------------------------------

/// Exponential-decay covariance: `S[i,j] = sigma2 * exp(-decay * |i-j| / n)`.
pub fn prior_cov(theta_sigma2: f64, theta_d: f64, n: usize) -> DMatrix<f64> {
    let rho = (-theta_d / n as f64).exp();
    DMatrix::from_fn(n, n, |i, j| {
        theta_sigma2 * rho.powi((i as i64 - j as i64).unsigned_abs() as i32)
    })
}

/// Convex combination of a fresh mean with the previous estimate.
///
/// The previous estimate is assumed to share the prior covariance with
/// cross-covariance `theta_w * cov`, which gives the weighted mean and the
/// covariance shrunk by `1 - theta_w^2`.
pub fn blend(
    mu: &DVector<f64>,
    cov: &DMatrix<f64>,
    x_prev: &DVector<f64>,
    theta_w: f64,
) -> Result<GaussianBelief, GaussError> {
    if !(0.0..=1.0).contains(&theta_w) {
        return Err(GaussError::BadWeight(theta_w));
    }
    if mu.len() != x_prev.len() || cov.nrows() != mu.len() || cov.ncols() != mu.len() {
        return Err(GaussError::Dimension {
            context: "blend inputs",
        });
    }
    Ok(GaussianBelief {
        mean: mu * (1.0 - theta_w) + x_prev * theta_w,
        cov: cov * (1.0 - theta_w * theta_w),
    })
}

// ---------------------------------------------------------------------------
// Conditioning on exact observations
// ---------------------------------------------------------------------------

/// Condition the belief on exact values at `exact_idx`, returning the
/// conditional belief over the complement indices in ascending order.
pub fn condition_exact(
    belief: &GaussianBelief,
    exact_idx: &[usize],
    exact_vals: &[f64],
) -> Result<GaussianBelief, GaussError> {
    if exact_idx.len() != exact_vals.len() {
        return Err(GaussError::Dimension {
            context: "exact indices vs values",
        });
    }
    if exact_idx.is_empty() {
        return Ok(belief.clone());
    }
    let n = belief.dim();
    let in_e = {
        let mut mask = vec![false; n];
        for &i in exact_idx {
            if i >= n {
                return Err(GaussError::Dimension {
                    context: "exact index out of range",
                });
            }
            mask[i] = true;
        }
        mask
    };
    let comp: Vec<usize> = (0..n).filter(|i| !in_e[*i]).collect();

    let ne = exact_idx.len();
    let nc = comp.len();
    let sig_ee = DMatrix::from_fn(ne, ne, |a, b| belief.cov[(exact_idx[a], exact_idx[b])]);
    let sig_ec = DMatrix::from_fn(ne, nc, |a, b| belief.cov[(exact_idx[a], comp[b])]);
    let sig_cc = DMatrix::from_fn(nc, nc, |a, b| belief.cov[(comp[a], comp[b])]);
    let mu_e = DVector::from_fn(ne, |a, _| belief.mean[exact_idx[a]]);
    let mu_c = DVector::from_fn(nc, |a, _| belief.mean[comp[a]]);
    let innov = DVector::from_fn(ne, |a, _| exact_vals[a]) - mu_e;

    let chol = chol_with_jitter(&sig_ee)?;
    // W = Sigma_EE^{-1} Sigma_EC, so mean += W' innov and cov -= Sigma_CE W.
    let w = chol.solve(&sig_ec);
    let mean = mu_c + w.transpose() * innov;
    let mut cov = sig_cc - sig_ec.transpose() * w;
    symmetrize(&mut cov);
    Ok(GaussianBelief { mean, cov })
}

// ---------------------------------------------------------------------------
// Truncated sampling
// ---------------------------------------------------------------------------

/// One draw from the belief restricted to the box.
///
/// With a fully unbounded box this reduces to an ordinary multivariate
/// normal draw. The returned vector always lies inside the box.
pub fn sample_tmvn<R: Rng + ?Sized>(
    belief: &GaussianBelief,
    bx: &TruncationBox,
    rng: &mut R,
) -> Result<DVector<f64>, GaussError> {
    let n = belief.dim();
    if bx.lower.len() != n {
        return Err(GaussError::Dimension {
            context: "box vs belief dimension",
        });
    }
    bx.validate()?;
    if n == 0 {
        return Ok(DVector::zeros(0));
    }

    // Reject boxes whose mass is beyond numeric reach.
    for i in 0..n {
        let sd = belief.cov[(i, i)].max(0.0).sqrt();
        if sd > 0.0 {
            if (bx.lower[i] - belief.mean[i]) / sd > MAX_STANDARDIZED_DISTANCE
                || (belief.mean[i] - bx.upper[i]) / sd > MAX_STANDARDIZED_DISTANCE
            {
                return Err(GaussError::UnreachableBox { index: i });
            }
        } else {
            let tol = 1e-9 * (1.0 + belief.mean[i].abs());
            if belief.mean[i] < bx.lower[i] - tol || belief.mean[i] > bx.upper[i] + tol {
                return Err(GaussError::UnreachableBox { index: i });
            }
        }
    }

    let chol = chol_with_jitter(&belief.cov)?;
    let l = chol.l();

    if bx.is_unbounded() {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        return Ok(&belief.mean + &l * z);
    }

    // Start from the box-projected mean: z0 = L^{-1} (x0 - mu).
    let x0 = DVector::from_fn(n, |i, _| belief.mean[i].clamp(bx.lower[i], bx.upper[i]));
    let mut z = x0.clone() - &belief.mean;
    l.solve_lower_triangular_mut(&mut z);
    // Running residual r = L z, kept incrementally during the sweeps.
    let mut r = &l * &z;

    let constrained: Vec<usize> = (0..n)
        .filter(|&j| bx.lower[j].is_finite() || bx.upper[j].is_finite())
        .collect();

    for _ in 0..GIBBS_BURN_IN_SWEEPS {
        for i in 0..n {
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for &j in constrained.iter().filter(|&&j| j >= i) {
                let lji = l[(j, i)];
                if lji == 0.0 {
                    continue;
                }
                // base is the row value with z_i removed.
                let base = belief.mean[j] + r[j] - lji * z[i];
                let b_lo = (bx.lower[j] - base) / lji;
                let b_hi = (bx.upper[j] - base) / lji;
                if lji > 0.0 {
                    lo = lo.max(b_lo);
                    hi = hi.min(b_hi);
                } else {
                    lo = lo.max(b_hi);
                    hi = hi.min(b_lo);
                }
            }
            if lo > hi {
                // Numerical corner: keep the current coordinate.
                continue;
            }
            let z_new = sample_std_trunc(lo, hi, rng);
            let delta = z_new - z[i];
            if delta != 0.0 {
                for j in i..n {
                    r[j] += l[(j, i)] * delta;
                }
                z[i] = z_new;
            }
        }
    }

    // Recompute the residual once to shed the incremental rounding, then
    // fold the draw back into the box.
    let mut x = &belief.mean + &l * z;
    for i in 0..n {
        x[i] = x[i].clamp(bx.lower[i], bx.upper[i]);
    }
    Ok(x)
}

/// Draw from the standard normal restricted to `[lo, hi]` by inversion,
/// mirrored into the right tail where the complementary CDF is accurate.
fn sample_std_trunc<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
        return rng.sample(StandardNormal);
    }
    if hi <= 0.0 {
        return -sample_right_tail(-hi, -lo, rng);
    }
    if lo >= 0.0 {
        return sample_right_tail(lo, hi, rng);
    }
    let pa = norm_cdf(lo);
    let pb = norm_cdf(hi);
    if pb <= pa {
        return 0.5 * (lo.max(-MAX_STANDARDIZED_DISTANCE) + hi.min(MAX_STANDARDIZED_DISTANCE));
    }
    let u: f64 = rng.random();
    norm_ppf(pa + u * (pb - pa)).clamp(lo, hi)
}

/// Inversion in the right tail, `0 <= lo < hi`.
fn sample_right_tail<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    let qa = norm_cdf_c(lo);
    let qb = if hi == f64::INFINITY { 0.0 } else { norm_cdf_c(hi) };
    if qa <= qb || qa == 0.0 {
        return lo;
    }
    let u: f64 = rng.random();
    let q = qb + (qa - qb) * u;
    // Phi_c(z) = q  =>  z = sqrt(2) erfc_inv(2q).
    let z = std::f64::consts::SQRT_2 * erfc_inv(2.0 * q);
    z.clamp(lo, hi)
}

// ---------------------------------------------------------------------------
// Diagonal moment approximations
// ---------------------------------------------------------------------------

/// Elementwise truncated standard deviations and the count of degenerate
/// bins (interval mass below numeric resolution).
#[derive(Debug, Clone)]
pub struct TruncatedStd {
    pub sigma: DVector<f64>,
    pub degenerate_bins: usize,
}

/// One-dimensional truncated-normal standard deviation per interval
/// coordinate, neglecting all cross-correlation.
///
/// `positions` selects the interval coordinates inside `belief`; `lower` and
/// `upper` are the matching truncation bounds.
pub fn truncated_std_interval(
    belief: &GaussianBelief,
    positions: &[usize],
    lower: &[f64],
    upper: &[f64],
) -> Result<TruncatedStd, GaussError> {
    if positions.len() != lower.len() || positions.len() != upper.len() {
        return Err(GaussError::Dimension {
            context: "interval positions vs bounds",
        });
    }
    let mut sigma = DVector::zeros(positions.len());
    let mut degenerate = 0usize;
    for (out, (&p, (&lo, &hi))) in positions.iter().zip(lower.iter().zip(upper.iter())).enumerate()
    {
        let var = belief.cov[(p, p)];
        if var.is_nan() || var <= 0.0 {
            degenerate += 1;
            continue;
        }
        let s = var.sqrt();
        let a = (lo - belief.mean[p]) / s;
        let b = (hi - belief.mean[p]) / s;
        match truncated_std_ratio(a, b) {
            Some(ratio) => sigma[out] = s * ratio,
            None => degenerate += 1,
        }
    }
    Ok(TruncatedStd {
        sigma,
        degenerate_bins: degenerate,
    })
}

/// `std(trunc) / std(untruncated)` for standardized bounds `[a, b]`.
/// Returns `None` when the interval mass underflows.
fn truncated_std_ratio(a: f64, b: f64) -> Option<f64> {
    // Balanced evaluation of Phi(b) - Phi(a).
    let mass = if a > 0.0 {
        norm_cdf_c(a) - norm_cdf_c(b)
    } else {
        norm_cdf(b) - norm_cdf(a)
    };
    if mass < 1e-300 {
        return None;
    }
    let g = |t: f64| if t.is_infinite() { 0.0 } else { t * norm_pdf(t) };
    let t1 = (g(a) - g(b)) / mass;
    let t2 = (norm_pdf(a) - norm_pdf(b)) / mass;
    let ratio2 = 1.0 + t1 - t2 * t2;
    Some(ratio2.max(0.0).sqrt())
}

/// Result of the residual-variance approximation for unobserved coordinates.
#[derive(Debug, Clone)]
pub struct ResidualStd {
    pub sigma: DVector<f64>,
    /// Diagonal entries clamped to zero (the approximation can go slightly
    /// negative).
    pub clamped: usize,
}

/// Approximate standard deviation of the future block given the truncated
/// interval block:
/// `V = S_FF - S_FI (S_II^{-1} - S_II^{-1} diag(sigma_I) S_II^{-1}) S_IF`.
pub fn residual_std_future(
    sig_ff: &DMatrix<f64>,
    sig_fi: &DMatrix<f64>,
    sig_ii: &DMatrix<f64>,
    sigma_i: &DVector<f64>,
) -> Result<ResidualStd, GaussError> {
    let nf = sig_ff.nrows();
    let ni = sig_ii.nrows();
    if sig_fi.nrows() != nf || sig_fi.ncols() != ni || sigma_i.len() != ni {
        return Err(GaussError::Dimension {
            context: "residual covariance blocks",
        });
    }
    let mut clamped = 0usize;
    let v = if ni == 0 {
        sig_ff.clone()
    } else {
        let inv = chol_with_jitter(sig_ii)?.inverse();
        let m = &inv - &inv * DMatrix::from_diagonal(sigma_i) * &inv;
        sig_ff - sig_fi * m * sig_fi.transpose()
    };
    let sigma = DVector::from_fn(nf, |i, _| {
        let d = v[(i, i)];
        if d < 0.0 {
            clamped += 1;
            0.0
        } else {
            d.sqrt()
        }
    });
    Ok(ResidualStd { sigma, clamped })
}

// ---------------------------------------------------------------------------
// Shared numerics
// ---------------------------------------------------------------------------

/// Cholesky factorization with the jitter policy: retry with `1e-8` and then
/// `1e-6` of the mean diagonal added to the diagonal.
pub(crate) fn chol_with_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, GaussError> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let n = m.nrows();
    let mean_diag = m.diagonal().iter().map(|x| x.abs()).sum::<f64>() / n.max(1) as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    for jitter in [1e-8 * scale, 1e-6 * scale] {
        let mut repaired = m.clone();
        for i in 0..n {
            repaired[(i, i)] += jitter;
        }
        if let Some(c) = repaired.cholesky() {
            return Ok(c);
        }
    }
    Err(GaussError::SingularCovariance)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}
