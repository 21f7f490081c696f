//! Zero-order-hold discretization of SISO transfer functions.
//!
//! A continuous system `G(s) = num(s)/den(s)` (coefficients in descending
//! powers of `s`) is realized in controllable canonical form and discretized
//! via the augmented matrix exponential, which is exact for inputs held
//! constant over each step and preserves the DC gain.

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LtiError {
    #[error("transfer function is not proper (numerator degree {num_deg} > denominator degree {den_deg})")]
    NotProper { num_deg: usize, den_deg: usize },
    #[error("denominator polynomial is zero")]
    ZeroDenominator,
    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),
}

/// Discrete state-space system `x[k+1] = A x[k] + B u[k]`, `y[k] = C x[k] + D u[k]`.
#[derive(Debug, Clone)]
pub struct DiscreteSs {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: RowDVector<f64>,
    d: f64,
}

impl DiscreteSs {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// `true` when the feedthrough term is zero.
    pub fn is_strictly_proper(&self) -> bool {
        self.d == 0.0
    }

    pub fn zero_state(&self) -> DVector<f64> {
        DVector::zeros(self.order())
    }

    /// Output at the current instant.
    pub fn output(&self, state: &DVector<f64>, input: f64) -> f64 {
        if self.order() == 0 {
            return self.d * input;
        }
        (&self.c * state)[0] + self.d * input
    }

    /// Advance the state one step with the input held constant.
    pub fn step(&self, state: &mut DVector<f64>, input: f64) {
        if self.order() == 0 {
            return;
        }
        *state = &self.a * &*state + &self.b * input;
    }

    /// Steady-state gain for a constant input.
    pub fn dc_gain(&self) -> f64 {
        let n = self.order();
        if n == 0 {
            return self.d;
        }
        let m = DMatrix::identity(n, n) - &self.a;
        let x = m
            .lu()
            .solve(&self.b)
            .expect("discrete system has a pole at z = 1");
        (&self.c * x)[0] + self.d
    }
}

/// Zero-order-hold discretization of `num(s)/den(s)` at step `dt`.
///
/// Coefficients are in descending powers of `s`, e.g. `1/(20s+1)` is
/// `num = [1.0]`, `den = [20.0, 1.0]`. The transfer function must be proper
/// (denominator degree >= numerator degree).
pub fn discretize_lti(num: &[f64], den: &[f64], dt: f64) -> Result<DiscreteSs, LtiError> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(LtiError::NonPositiveStep(dt));
    }
    let num = trim_leading_zeros(num);
    let den = trim_leading_zeros(den);
    if den.is_empty() {
        return Err(LtiError::ZeroDenominator);
    }
    if num.len() > den.len() {
        return Err(LtiError::NotProper {
            num_deg: num.len() - 1,
            den_deg: den.len() - 1,
        });
    }

    let n = den.len() - 1;
    let lead = den[0];
    // Monic denominator s^n + alpha[0] s^(n-1) + ... + alpha[n-1].
    let alpha: Vec<f64> = den[1..].iter().map(|&x| x / lead).collect();
    // Numerator padded to the denominator length, scaled by the same factor.
    let mut nb = vec![0.0; den.len() - num.len()];
    nb.extend(num.iter().map(|&x| x / lead));
    let d = nb[0];
    // Strictly proper remainder: (num - d * den) has degree < n.
    let rem: Vec<f64> = (1..=n).map(|i| nb[i] - d * alpha[i - 1]).collect();

    if n == 0 {
        return Ok(DiscreteSs {
            a: DMatrix::zeros(0, 0),
            b: DVector::zeros(0),
            c: RowDVector::zeros(0),
            d,
        });
    }

    // Controllable canonical form.
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -alpha[n - 1 - j];
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let mut c = RowDVector::zeros(n);
    for j in 0..n {
        c[j] = rem[n - 1 - j];
    }

    // exp([[A, B], [0, 0]] * dt) = [[Ad, Bd], [0, I]].
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&a * dt));
    aug.view_mut((0, n), (n, 1)).copy_from(&(&b * dt));
    let e = expm(&aug);
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = DVector::from_fn(n, |i, _| e[(i, n)]);

    Ok(DiscreteSs { a: ad, b: bd, c, d })
}

/// Dense matrix exponential by scaling-and-squaring with a Taylor series.
fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = one_norm(m);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let a = m / 2f64.powi(s as i32);

    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=24 {
        term = &term * &a / k as f64;
        result += &term;
        if one_norm(&term) < 1e-32 {
            break;
        }
    }
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn trim_leading_zeros(coeffs: &[f64]) -> &[f64] {
    let first = coeffs.iter().position(|&c| c != 0.0);
    match first {
        Some(i) => &coeffs[i..],
        None => &[],
    }
}
