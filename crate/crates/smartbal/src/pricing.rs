//! Imbalance price model.
//!
//! One price per 15-minute settlement period, built from three components:
//! a base component interpolated from the marginal aFRR price curve at the
//! ISP's mean demand, an incentivising component that clamps the price
//! toward the intraday index (a floor when the system is short, a cap when
//! it is long), and a scarcity surcharge once the mean demand exceeds a
//! fraction of the dimensioned FRR volume.
//!
//! The shipped default curve is a configuration placeholder, not measured
//! data; every analysis that touches prices must treat it as an input.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PricingError {
    #[error("marginal price curve needs at least one knot")]
    EmptyCurve,
    #[error("marginal price curve knots must have strictly increasing demand (knot {0})")]
    UnsortedKnots(usize),
    #[error("marginal price curve must be monotone nondecreasing (knot {0})")]
    DecreasingPrice(usize),
    #[error("dimensioned volume must be positive, got {0}")]
    BadVolume(f64),
    #[error("horizon of {len} steps is not a whole number of ISPs of {isp_len} steps")]
    PartialIsp { len: usize, isp_len: usize },
}

/// Piecewise-linear map from aFRR demand [MW] to marginal price [EUR/MWh].
/// Monotone nondecreasing; extrapolation is clamped at the end values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalCurve {
    knots: Vec<(f64, f64)>,
}

impl MarginalCurve {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, PricingError> {
        if knots.is_empty() {
            return Err(PricingError::EmptyCurve);
        }
        for i in 1..knots.len() {
            if knots[i].0 <= knots[i - 1].0 {
                return Err(PricingError::UnsortedKnots(i));
            }
            if knots[i].1 < knots[i - 1].1 {
                return Err(PricingError::DecreasingPrice(i));
            }
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Marginal price at the given demand.
    pub fn price(&self, demand_mw: f64) -> f64 {
        let k = &self.knots;
        if demand_mw <= k[0].0 {
            return k[0].1;
        }
        if demand_mw >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let hi = k.partition_point(|(d, _)| *d <= demand_mw);
        let (d0, p0) = k[hi - 1];
        let (d1, p1) = k[hi];
        p0 + (p1 - p0) * (demand_mw - d0) / (d1 - d0)
    }
}

/// Default curve knots: configuration placeholder values. The near-jump
/// between -1 and 0 MW is the single-pricing regime flip at the imbalance
/// sign change: energy aligned with a long system must earn a negative
/// price, otherwise permanent injection becomes a profitable equilibrium.
pub fn default_curve_knots() -> Vec<(f64, f64)> {
    vec![(-3000.0, -90.0), (-1.0, 0.0), (0.0, 40.0), (3000.0, 650.0)]
}

/// The full three-component price model.
#[derive(Debug, Clone)]
pub struct PriceModel {
    pub curve: MarginalCurve,
    /// Intraday market index coupled into the incentivising component [EUR/MWh].
    pub intraday_index_eur_mwh: f64,
    /// Dimensioned (procured) FRR volume [MW].
    pub dimensioned_volume_mw: f64,
    /// Fraction of the dimensioned volume above which scarcity pricing starts.
    pub scarcity_threshold_frac: f64,
    /// Surcharge per MW of mean demand above the threshold [EUR/MWh per MW].
    pub scarcity_surcharge: f64,
}

impl PriceModel {
    pub fn validate(&self) -> Result<(), PricingError> {
        if !self.dimensioned_volume_mw.is_finite() || self.dimensioned_volume_mw <= 0.0 {
            return Err(PricingError::BadVolume(self.dimensioned_volume_mw));
        }
        Ok(())
    }

    /// The imbalance price of the ISP with mean demand `e_mean` [EUR/MWh].
    pub fn isp_price(&self, e_mean_mw: f64) -> f64 {
        let base = self.curve.price(e_mean_mw);
        let mut price = if e_mean_mw > 0.0 {
            base.max(self.intraday_index_eur_mwh)
        } else if e_mean_mw < 0.0 {
            base.min(self.intraday_index_eur_mwh)
        } else {
            base
        };
        let threshold = self.scarcity_threshold_frac * self.dimensioned_volume_mw;
        if e_mean_mw.abs() > threshold {
            price += e_mean_mw.signum() * self.scarcity_surcharge * (e_mean_mw.abs() - threshold);
        }
        price
    }
}

/// Marginal price lookup, clamped extrapolation.
pub fn marginal_price(demand_mw: f64, curve: &MarginalCurve) -> f64 {
    curve.price(demand_mw)
}

/// Per-index price sequence for a demand trajectory: each ISP is priced at
/// its mean demand and the price is broadcast to all indices of the ISP.
pub fn imbalance_price_series(
    demand: &[f64],
    model: &PriceModel,
    isp_len: usize,
) -> Result<Vec<f64>, PricingError> {
    if isp_len == 0 || !demand.len().is_multiple_of(isp_len) {
        return Err(PricingError::PartialIsp {
            len: demand.len(),
            isp_len,
        });
    }
    let mut prices = Vec::with_capacity(demand.len());
    for isp in demand.chunks_exact(isp_len) {
        let e_mean = isp.iter().sum::<f64>() / isp_len as f64;
        let p = model.isp_price(e_mean);
        prices.extend(std::iter::repeat_n(p, isp_len));
    }
    Ok(prices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_model() -> PriceModel {
        PriceModel {
            curve: MarginalCurve::new(default_curve_knots()).unwrap(),
            intraday_index_eur_mwh: 60.0,
            dimensioned_volume_mw: 1870.0,
            scarcity_threshold_frac: 0.8,
            scarcity_surcharge: 0.5,
        }
    }

    #[test]
    fn interpolation_on_default_curve() {
        let curve = MarginalCurve::new(default_curve_knots()).unwrap();
        assert_relative_eq!(curve.price(0.0), 40.0);
        assert_relative_eq!(curve.price(1500.0), 345.0);
        // Clamped extrapolation.
        assert_relative_eq!(curve.price(10_000.0), 650.0);
        assert_relative_eq!(curve.price(-10_000.0), -90.0);
        // Long side is negatively priced beyond the regime flip.
        assert!(curve.price(-100.0) < 0.0);
    }

    #[test]
    fn rejects_bad_curves() {
        assert!(matches!(
            MarginalCurve::new(vec![]),
            Err(PricingError::EmptyCurve)
        ));
        assert!(matches!(
            MarginalCurve::new(vec![(0.0, 1.0), (0.0, 2.0)]),
            Err(PricingError::UnsortedKnots(1))
        ));
        assert!(matches!(
            MarginalCurve::new(vec![(0.0, 5.0), (1.0, 2.0)]),
            Err(PricingError::DecreasingPrice(1))
        ));
    }

    #[test]
    fn zero_demand_prices_at_curve_anchor() {
        let model = default_model();
        let prices = imbalance_price_series(&[0.0; 30], &model, 15).unwrap();
        assert!(prices.iter().all(|p| *p == 40.0));
    }

    #[test]
    fn scarcity_surcharge_arithmetic() {
        let model = default_model();
        let x = vec![2000.0; 15];
        let prices = imbalance_price_series(&x, &model, 15).unwrap();
        // Threshold 0.8 * 1870 = 1496 MW; 504 MW over.
        let base = model.curve.price(2000.0).max(60.0);
        assert_relative_eq!(prices[0], base + 0.5 * 504.0, max_relative = 1e-12);
    }

    #[test]
    fn short_isp_priced_above_long_isp() {
        let model = default_model();
        let mut x = vec![500.0; 15];
        x.extend(vec![-500.0; 15]);
        let prices = imbalance_price_series(&x, &model, 15).unwrap();
        assert!(prices[0] > prices[15]);
        // Constant within each ISP.
        assert!(prices[..15].iter().all(|p| *p == prices[0]));
        assert!(prices[15..].iter().all(|p| *p == prices[15]));
    }

    #[test]
    fn incentivising_clamp() {
        let model = default_model();
        // Short with base(50) = 50.17 below the index: floored at 60.
        assert_relative_eq!(model.isp_price(50.0), 60.0);
        // Short with base(100) = 60.33 above the index: base wins.
        assert_relative_eq!(model.isp_price(100.0), 40.0 + 100.0 * 610.0 / 3000.0);
        // Long: capped at min(base, index); the negative base wins.
        assert_relative_eq!(model.isp_price(-500.0), -499.0 * 90.0 / 2999.0);
    }

    #[test]
    fn price_monotone_in_mean_demand() {
        let model = default_model();
        let mut last = f64::NEG_INFINITY;
        for i in -40..=40 {
            let p = model.isp_price(i as f64 * 100.0);
            assert!(p >= last - 1e-12);
            last = p;
        }
    }

    #[test]
    fn partial_isp_rejected() {
        let model = default_model();
        assert!(matches!(
            imbalance_price_series(&[0.0; 20], &model, 15),
            Err(PricingError::PartialIsp { .. })
        ));
    }
}
