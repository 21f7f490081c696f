//! Near-real-time publication of the imbalance data.
//!
//! The TSO publishes the per-minute averaged FRR demand, delayed by a fixed
//! time. Depending on the scenario the values are published exactly, hidden
//! inside a central interval, or binned into uniform intervals. Indices
//! without published data yet carry the unbounded interval. Every published
//! index therefore falls into one of three classes: exact (lower = upper),
//! interval (finite bounds), or future (unbounded).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NrtError {
    #[error("interval bounds must be ordered: [{0}, {1}]")]
    UnorderedInterval(f64, f64),
    #[error("bin width must be positive, got {0}")]
    BadWidth(f64),
}

/// Publication scenario for the NRT imbalance data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NrtKind {
    /// Values published exactly.
    #[serde(rename = "E")]
    Exact,
    /// Exact, except inside the small central interval.
    #[serde(rename = "Es")]
    ExactWithCentralInterval,
    /// Uniform bins everywhere.
    #[serde(rename = "Is")]
    UniformIntervals,
    /// Exact, except inside the large central interval.
    #[serde(rename = "El")]
    ExactWithLargeCentralInterval,
    /// Uniform bins outside the large central interval.
    #[serde(rename = "Il")]
    IntervalsWithLargeCentral,
}

impl std::fmt::Display for NrtKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let code = match self {
            NrtKind::Exact => "E",
            NrtKind::ExactWithCentralInterval => "Es",
            NrtKind::UniformIntervals => "Is",
            NrtKind::ExactWithLargeCentralInterval => "El",
            NrtKind::IntervalsWithLargeCentral => "Il",
        };
        write!(f, "{code}")
    }
}

/// Where the uniform bin grid is anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinAnchor {
    /// Bin edges at multiples of the width: ... [-240, 0), [0, 240) ...
    #[default]
    Zero,
    /// Bins centered on multiples of the width: ... [-120, 120) ...
    Centered,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NrtScenario {
    pub kind: NrtKind,
    /// Publication delay [s].
    pub delay_s: f64,
    /// Small central interval [MW].
    pub small_interval_mw: (f64, f64),
    /// Large central interval [MW]; asymmetric on purpose.
    pub large_interval_mw: (f64, f64),
    /// Width of the uniform bins [MW].
    pub uniform_width_mw: f64,
    pub bin_anchor: BinAnchor,
}

impl Default for NrtScenario {
    fn default() -> Self {
        Self {
            kind: NrtKind::Exact,
            delay_s: 60.0,
            small_interval_mw: (-120.0, 120.0),
            large_interval_mw: (-900.0, 970.0),
            uniform_width_mw: 240.0,
            bin_anchor: BinAnchor::default(),
        }
    }
}

impl NrtScenario {
    pub fn validate(&self) -> Result<(), NrtError> {
        if self.small_interval_mw.0 > self.small_interval_mw.1 {
            return Err(NrtError::UnorderedInterval(
                self.small_interval_mw.0,
                self.small_interval_mw.1,
            ));
        }
        if self.large_interval_mw.0 > self.large_interval_mw.1 {
            return Err(NrtError::UnorderedInterval(
                self.large_interval_mw.0,
                self.large_interval_mw.1,
            ));
        }
        if !self.uniform_width_mw.is_finite() || self.uniform_width_mw <= 0.0 {
            return Err(NrtError::BadWidth(self.uniform_width_mw));
        }
        Ok(())
    }
}

/// Classification of one horizon index in a bulletin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexClass {
    Exact,
    Interval,
    Future,
}

/// Published lower/upper bounds for every index of the horizon plus the
/// exact/interval/future partition.
#[derive(Debug, Clone)]
pub struct NrtBulletin {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub classes: Vec<IndexClass>,
}

impl NrtBulletin {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn exact_indices(&self) -> Vec<usize> {
        self.indices_of(IndexClass::Exact)
    }

    pub fn interval_indices(&self) -> Vec<usize> {
        self.indices_of(IndexClass::Interval)
    }

    pub fn future_indices(&self) -> Vec<usize> {
        self.indices_of(IndexClass::Future)
    }

    fn indices_of(&self, class: IndexClass) -> Vec<usize> {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == class)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Bounds published for one minute average under the given scenario.
pub fn bin_value(avg_mw: f64, scenario: &NrtScenario) -> (f64, f64) {
    let (slo, shi) = scenario.small_interval_mw;
    let (llo, lhi) = scenario.large_interval_mw;
    match scenario.kind {
        NrtKind::Exact => (avg_mw, avg_mw),
        NrtKind::ExactWithCentralInterval => {
            if avg_mw < slo || avg_mw > shi {
                (avg_mw, avg_mw)
            } else {
                (slo, shi)
            }
        }
        NrtKind::UniformIntervals => uniform_bin(avg_mw, scenario),
        NrtKind::ExactWithLargeCentralInterval => {
            if avg_mw < llo || avg_mw > lhi {
                (avg_mw, avg_mw)
            } else {
                (llo, lhi)
            }
        }
        NrtKind::IntervalsWithLargeCentral => {
            if avg_mw < llo || avg_mw > lhi {
                uniform_bin(avg_mw, scenario)
            } else {
                (llo, lhi)
            }
        }
    }
}

fn uniform_bin(avg_mw: f64, scenario: &NrtScenario) -> (f64, f64) {
    let w = scenario.uniform_width_mw;
    let shift = match scenario.bin_anchor {
        BinAnchor::Zero => 0.0,
        BinAnchor::Centered => w / 2.0,
    };
    let k = ((avg_mw + shift) / w).floor();
    (k * w - shift, k * w - shift + w)
}

/// Assemble the bulletin visible at time `now_s`.
///
/// Minute `i` (1-based, covering `[(i-1) T_NRT, i T_NRT)`) is available once
/// `i * T_NRT <= now - delay`. `minute_averages` holds all completed minutes
/// up to `now`; later horizon indices are published as unbounded.
pub fn publish(
    minute_averages: &[f64],
    n_total: usize,
    now_s: f64,
    t_nrt_s: f64,
    scenario: &NrtScenario,
) -> NrtBulletin {
    let available = ((now_s - scenario.delay_s) / t_nrt_s).floor();
    let available = if available.is_sign_negative() {
        0
    } else {
        (available as usize).min(n_total).min(minute_averages.len())
    };

    let mut lower = Vec::with_capacity(n_total);
    let mut upper = Vec::with_capacity(n_total);
    let mut classes = Vec::with_capacity(n_total);
    for &avg in &minute_averages[..available] {
        let (lo, hi) = bin_value(avg, scenario);
        classes.push(if lo == hi {
            IndexClass::Exact
        } else {
            IndexClass::Interval
        });
        lower.push(lo);
        upper.push(hi);
    }
    for _ in available..n_total {
        lower.push(f64::NEG_INFINITY);
        upper.push(f64::INFINITY);
        classes.push(IndexClass::Future);
    }
    NrtBulletin { lower, upper, classes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scenario(kind: NrtKind, delay_s: f64) -> NrtScenario {
        NrtScenario {
            kind,
            delay_s,
            ..NrtScenario::default()
        }
    }

    #[test]
    fn bin_value_examples() {
        let es = scenario(NrtKind::ExactWithCentralInterval, 60.0);
        assert_eq!(bin_value(500.0, &es), (500.0, 500.0));
        assert_eq!(bin_value(50.0, &es), (-120.0, 120.0));

        let is = scenario(NrtKind::UniformIntervals, 60.0);
        assert_eq!(bin_value(50.0, &is), (0.0, 240.0));

        let il = scenario(NrtKind::IntervalsWithLargeCentral, 60.0);
        assert_eq!(bin_value(-950.0, &il), (-960.0, -720.0));
        assert_eq!(bin_value(0.0, &il), (-900.0, 970.0));

        let e = scenario(NrtKind::Exact, 60.0);
        assert_eq!(bin_value(0.0, &e), (0.0, 0.0));

        let el = scenario(NrtKind::ExactWithLargeCentralInterval, 60.0);
        assert_eq!(bin_value(1200.0, &el), (1200.0, 1200.0));
        assert_eq!(bin_value(970.0, &el), (-900.0, 970.0));
    }

    #[test]
    fn centered_anchor_shifts_grid() {
        let mut is = scenario(NrtKind::UniformIntervals, 60.0);
        is.bin_anchor = BinAnchor::Centered;
        assert_eq!(bin_value(50.0, &is), (-120.0, 120.0));
        assert_eq!(bin_value(130.0, &is), (120.0, 360.0));
    }

    #[test]
    fn publish_nothing_before_delay() {
        let b = publish(&[], 10, 0.0, 60.0, &scenario(NrtKind::Exact, 60.0));
        assert!(b.classes.iter().all(|c| *c == IndexClass::Future));
        assert_eq!(b.future_indices().len(), 10);
    }

    #[test]
    fn publish_availability_inequality() {
        // now = 180 s, delay = 60 s: minutes 1 and 2 available.
        let avgs = [10.0, 20.0, 30.0];
        let b = publish(&avgs, 5, 180.0, 60.0, &scenario(NrtKind::Exact, 60.0));
        assert_eq!(b.exact_indices(), vec![0, 1]);
        assert_eq!(b.future_indices(), vec![2, 3, 4]);
        assert_eq!(b.lower[0], 10.0);
        assert_eq!(b.upper[1], 20.0);
    }

    #[test]
    fn publish_mixes_exact_and_interval() {
        let avgs = [50.0, 500.0];
        let b = publish(
            &avgs,
            4,
            180.0,
            60.0,
            &scenario(NrtKind::ExactWithCentralInterval, 60.0),
        );
        assert_eq!(b.classes[0], IndexClass::Interval);
        assert_eq!((b.lower[0], b.upper[0]), (-120.0, 120.0));
        assert_eq!(b.classes[1], IndexClass::Exact);
        assert_eq!((b.lower[1], b.upper[1]), (500.0, 500.0));
        assert_eq!(b.classes[2], IndexClass::Future);
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let avgs: Vec<f64> = (0..20).map(|i| (i as f64 - 10.0) * 97.0).collect();
        for kind in [
            NrtKind::Exact,
            NrtKind::ExactWithCentralInterval,
            NrtKind::UniformIntervals,
            NrtKind::ExactWithLargeCentralInterval,
            NrtKind::IntervalsWithLargeCentral,
        ] {
            let b = publish(&avgs, 20, 600.0, 60.0, &scenario(kind, 60.0));
            let total = b.exact_indices().len() + b.interval_indices().len() + b.future_indices().len();
            assert_eq!(total, 20);
            for i in 0..20 {
                assert!(b.lower[i] <= b.upper[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn truth_containment(avg in -2000.0f64..2000.0) {
            for kind in [
                NrtKind::Exact,
                NrtKind::ExactWithCentralInterval,
                NrtKind::UniformIntervals,
                NrtKind::ExactWithLargeCentralInterval,
                NrtKind::IntervalsWithLargeCentral,
            ] {
                let (lo, hi) = bin_value(avg, &scenario(kind, 60.0));
                prop_assert!(lo <= avg && avg <= hi, "{kind}: {avg} not in [{lo}, {hi}]");
            }
        }

        #[test]
        fn monotone_information(
            avgs in proptest::collection::vec(-1500.0f64..1500.0, 12),
            delay in prop_oneof![Just(60.0f64), Just(120.0f64)],
        ) {
            let sc = scenario(NrtKind::UniformIntervals, delay);
            let mut prev_future = usize::MAX;
            let mut frozen: Vec<Option<(f64, f64)>> = vec![None; 12];
            for step in 0..=12 {
                let now = step as f64 * 60.0;
                let avail = &avgs[..((now / 60.0) as usize).min(12)];
                let b = publish(avail, 12, now, 60.0, &sc);
                let nf = b.future_indices().len();
                prop_assert!(nf <= prev_future);
                prev_future = nf;
                for (i, slot) in frozen.iter_mut().enumerate() {
                    if b.classes[i] != IndexClass::Future {
                        let bounds = (b.lower[i], b.upper[i]);
                        if let Some(prev) = *slot {
                            prop_assert_eq!(prev, bounds);
                        }
                        *slot = Some(bounds);
                    }
                }
            }
        }

        #[test]
        fn es_agrees_with_e_above_small_interval(avg in -3000.0f64..3000.0) {
            prop_assume!(avg.abs() > 120.0);
            let e = bin_value(avg, &scenario(NrtKind::Exact, 60.0));
            let es = bin_value(avg, &scenario(NrtKind::ExactWithCentralInterval, 60.0));
            prop_assert_eq!(e, es);
        }
    }
}
