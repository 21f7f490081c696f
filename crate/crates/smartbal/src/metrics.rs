//! Per-BRP and run-level evaluation.
//!
//! ISP energies are Riemann sums of the per-minute demand; estimation
//! quality is summarized by a normalized RMSE and the mean relative half
//! width of the robustness interval (their ratio classifies the BRP's risk
//! affinity); participation and effectiveness count how often a BRP acts
//! and whether the delivered energy opposes the residual system imbalance.
//! Run-level KPIs cover FRR energies and cost plus frequency statistics,
//! reported relative to the matched no-smart-balancing reference.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Normalization floor for relative ISP-energy errors [MWh].
pub const ENERGY_FLOOR_MWH: f64 = 5.0;
/// Reference floors below which relative changes are outlier-prone.
pub const REL_FLOOR_ENERGY_MWH: f64 = 1.0;
pub const REL_FLOOR_FREQ_HZ: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("boxplot needs at least one value")]
    EmptyInput,
}

/// Riemann ISP energy from per-minute demand [MWh].
pub fn isp_energy_mwh(minute_demand_mw: &[f64], isp_idx: usize, isp_len: usize) -> f64 {
    let start = isp_idx * isp_len;
    minute_demand_mw[start..start + isp_len].iter().sum::<f64>() / 60.0
}

/// How the relative RMSE is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RmseNormalization {
    /// Per-step: each error is divided by that step's realized energy
    /// (floored), then the RMS is taken.
    #[default]
    PerStep,
    /// Literal: the RMS of the raw errors divided by the mean absolute
    /// realized energy (floored).
    Literal,
}

/// Relative RMSE and mean relative half width of per-step ISP-energy
/// estimates.
pub fn estimation_metrics(
    estimated_mwh: &[f64],
    upper_mwh: &[f64],
    lower_mwh: &[f64],
    realized_mwh: &[f64],
) -> (f64, f64) {
    estimation_metrics_mode(
        estimated_mwh,
        upper_mwh,
        lower_mwh,
        realized_mwh,
        RmseNormalization::PerStep,
    )
}

pub fn estimation_metrics_mode(
    estimated_mwh: &[f64],
    upper_mwh: &[f64],
    lower_mwh: &[f64],
    realized_mwh: &[f64],
    mode: RmseNormalization,
) -> (f64, f64) {
    assert!(!realized_mwh.is_empty(), "at least one decision step");
    let n = realized_mwh.len() as f64;
    let mut half = 0.0;
    for k in 0..realized_mwh.len() {
        let denom = realized_mwh[k].abs().max(ENERGY_FLOOR_MWH);
        half += (upper_mwh[k] - lower_mwh[k]) / (2.0 * denom);
    }
    let half = half / n;
    let e_rmse = match mode {
        RmseNormalization::PerStep => {
            let mut sq = 0.0;
            for k in 0..realized_mwh.len() {
                let denom = realized_mwh[k].abs().max(ENERGY_FLOOR_MWH);
                let err = (estimated_mwh[k] - realized_mwh[k]) / denom;
                sq += err * err;
            }
            (sq / n).sqrt()
        }
        RmseNormalization::Literal => {
            let sq: f64 = estimated_mwh
                .iter()
                .zip(realized_mwh)
                .map(|(e, r)| (e - r) * (e - r))
                .sum();
            let mean_abs = realized_mwh.iter().map(|r| r.abs()).sum::<f64>() / n;
            (sq / n).sqrt() / mean_abs.max(ENERGY_FLOOR_MWH)
        }
    };
    (e_rmse, half)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskClass {
    RiskAverse,
    SelfAware,
    RiskAffine,
}

impl std::fmt::Display for RiskClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RiskClass::RiskAverse => "risk_averse",
            RiskClass::SelfAware => "self_aware",
            RiskClass::RiskAffine => "risk_affine",
        };
        write!(f, "{s}")
    }
}

/// Classify by the ratio e_rmse / e_half. The bands are visualization aids:
/// a BRP whose interval width matches its error is self-aware; a too-small
/// interval marks a risk-affine BRP.
pub fn classify_risk(e_rmse: f64, e_half: f64) -> RiskClass {
    if e_half <= 0.0 {
        return if e_rmse <= 0.0 {
            RiskClass::SelfAware
        } else {
            RiskClass::RiskAffine
        };
    }
    let r = e_rmse / e_half;
    if r < 0.8 {
        RiskClass::RiskAverse
    } else if r <= 1.25 {
        RiskClass::SelfAware
    } else {
        RiskClass::RiskAffine
    }
}

/// Per-BRP evaluation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BrpMetrics {
    pub e_rmse: f64,
    pub e_half: f64,
    /// Fraction of decision steps with a nonzero plan in force.
    pub tau_active: f64,
    /// Fraction of delivered energy that opposed the residual imbalance;
    /// absent when the BRP never delivered.
    pub e_eff: Option<f64>,
    pub risk_class: RiskClass,
}

/// Participation fraction and effectiveness from per-ISP delivered energy.
///
/// `delivered_mwh[i]` is the BRP's energy in ISP `i`, `demand_mwh[i]` the
/// realized system ISP energy. The residual used for the sign test removes
/// the BRP's own contribution, so an agent cannot look supportive merely by
/// overturning the sign itself: under the demand convention the residual is
/// `demand + delivered`, and delivered energy is supportive when it has the
/// same sign as that residual.
pub fn smart_metrics(
    active_steps: usize,
    total_steps: usize,
    delivered_mwh: &[f64],
    demand_mwh: &[f64],
) -> (f64, Option<f64>) {
    let tau = if total_steps == 0 {
        0.0
    } else {
        active_steps as f64 / total_steps as f64
    };
    let mut supportive = 0.0;
    let mut total = 0.0;
    for (e_y, e_d) in delivered_mwh.iter().zip(demand_mwh) {
        let residual = e_d + e_y;
        total += e_y.abs();
        if e_y * residual > 0.0 {
            supportive += e_y.abs();
        }
    }
    let e_eff = if total > 0.0 { Some(supportive / total) } else { None };
    (tau, e_eff)
}

/// Run-level key performance indicators.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunKpis {
    /// Activated positive FRR energy (FCR + aFRR) [MWh].
    pub e_frr_pos_mwh: f64,
    /// Activated negative FRR energy, magnitude [MWh].
    pub e_frr_neg_mwh: f64,
    /// aFRR activation cost [EUR].
    pub afrr_cost_eur: f64,
    pub df_mean_hz: f64,
    pub df_max_hz: f64,
    pub df_min_hz: f64,
    /// Mean over ISP windows of the within-window standard deviation [Hz].
    pub df_std_15min_hz: f64,
    /// Mean over 60 s windows of the within-window standard deviation [Hz].
    pub df_std_1min_hz: f64,
}

/// Frequency statistics of one trajectory sampled at `dt`.
pub fn frequency_kpis(df_hz: &[f64], dt_s: f64, isp_s: f64, t_nrt_s: f64) -> RunKpis {
    let n = df_hz.len().max(1) as f64;
    let mean = df_hz.iter().sum::<f64>() / n;
    let max = df_hz.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = df_hz.iter().copied().fold(f64::INFINITY, f64::min);
    RunKpis {
        df_mean_hz: mean,
        df_max_hz: max,
        df_min_hz: min,
        df_std_15min_hz: mean_window_std(df_hz, (isp_s / dt_s) as usize),
        df_std_1min_hz: mean_window_std(df_hz, (t_nrt_s / dt_s) as usize),
        ..RunKpis::default()
    }
}

/// Mean over whole windows of the within-window population std.
fn mean_window_std(values: &[f64], window: usize) -> f64 {
    if window == 0 || values.len() < window {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in values.chunks_exact(window) {
        let m = chunk.iter().sum::<f64>() / window as f64;
        let var = chunk.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / window as f64;
        sum += var.sqrt();
        count += 1;
    }
    sum / count as f64
}

/// Relative change against a reference, with an outlier-prone flag when the
/// reference is below the given floor. Undefined (absent) for a zero
/// reference.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RelValue {
    pub value: Option<f64>,
    pub outlier_prone: bool,
}

pub fn relative_change(value: f64, reference: f64, floor: f64) -> RelValue {
    if reference == 0.0 {
        return RelValue {
            value: None,
            outlier_prone: true,
        };
    }
    RelValue {
        value: Some((value - reference) / reference.abs()),
        outlier_prone: reference.abs() < floor,
    }
}

/// Relative counterparts of the run KPIs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RelKpis {
    pub e_frr_pos: RelValue,
    pub e_frr_neg: RelValue,
    pub afrr_cost: RelValue,
    pub df_mean: RelValue,
    pub df_max: RelValue,
    pub df_min: RelValue,
    pub df_std_15min: RelValue,
    pub df_std_1min: RelValue,
}

pub fn relative_kpis(run: &RunKpis, reference: &RunKpis) -> RelKpis {
    let e = REL_FLOOR_ENERGY_MWH;
    let f = REL_FLOOR_FREQ_HZ;
    RelKpis {
        e_frr_pos: relative_change(run.e_frr_pos_mwh, reference.e_frr_pos_mwh, e),
        e_frr_neg: relative_change(run.e_frr_neg_mwh, reference.e_frr_neg_mwh, e),
        afrr_cost: relative_change(run.afrr_cost_eur, reference.afrr_cost_eur, e),
        df_mean: relative_change(run.df_mean_hz, reference.df_mean_hz, f),
        df_max: relative_change(run.df_max_hz, reference.df_max_hz, f),
        df_min: relative_change(run.df_min_hz, reference.df_min_hz, f),
        df_std_15min: relative_change(run.df_std_15min_hz, reference.df_std_15min_hz, f),
        df_std_1min: relative_change(run.df_std_1min_hz, reference.df_std_1min_hz, f),
    }
}

/// Box-and-whisker summary with IQR-rule outliers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Quartiles by linear interpolation; whiskers at the most extreme points
/// within 1.5 IQR of the quartiles, everything beyond listed as outliers.
pub fn boxplot(values: &[f64]) -> Result<BoxplotStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q1 = quantile_linear(&sorted, 0.25);
    let median = quantile_linear(&sorted, 0.5);
    let q3 = quantile_linear(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let inside: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|v| *v >= lo_fence && *v <= hi_fence)
        .collect();
    let outliers: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|v| *v < lo_fence || *v > hi_fence)
        .collect();
    Ok(BoxplotStats {
        n: sorted.len(),
        median,
        q1,
        q3,
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        outliers,
    })
}

fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
