//! Paired parcel-level bootstrap for two strategies scored on the same parcels.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{metrics, percentile_sorted, ConfusionMatrix, Metric, MetricSet, StatsError};
use crate::decision::OccupancyLabel;

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const MIN_PARCELS: usize = 10;

/// Ground truth and both strategies' predictions for one parcel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairedLabel {
    pub gt: OccupancyLabel,
    pub one: OccupancyLabel,
    pub two: OccupancyLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_resamples: usize,
    /// Resamples where the metric was undefined and therefore dropped.
    pub dropped: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaResult {
    pub point: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBootstrap {
    pub one_stage: BootstrapResult,
    pub two_stage: BootstrapResult,
    /// two-stage minus one-stage.
    pub delta: DeltaResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub n_parcels: usize,
    pub n_resamples: usize,
    pub seed: u64,
    pub metrics: BTreeMap<Metric, MetricBootstrap>,
}

fn metric_pair(pairs: &[PairedLabel], idx: impl Iterator<Item = usize>) -> (MetricSet, MetricSet) {
    let (mut a, mut b) = (ConfusionMatrix::default(), ConfusionMatrix::default());
    for i in idx {
        let p = pairs[i];
        a.add(p.one, p.gt);
        b.add(p.two, p.gt);
    }
    (metrics(&a), metrics(&b))
}

fn interval(mut v: Vec<f64>) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    v.sort_by(f64::total_cmp);
    (Some(percentile_sorted(&v, 0.025)), Some(percentile_sorted(&v, 0.975)))
}

/// Resamples parcels with replacement `n_resamples` times. Resample `i`
/// draws from its own ChaCha8 stream `i` under `seed`, so results do not
/// depend on the thread count.
pub fn paired_bootstrap(pairs: &[PairedLabel], n_resamples: usize, seed: u64) -> Result<BootstrapReport, StatsError> {
    if pairs.len() < MIN_PARCELS {
        return Err(StatsError::TooFew { need: MIN_PARCELS, got: pairs.len() });
    }
    if n_resamples == 0 {
        return Err(StatsError::InvalidParameter("n_resamples must be positive".into()));
    }
    if let Some(i) = pairs.iter().position(|p| !(p.gt.is_confident() && p.one.is_confident() && p.two.is_confident())) {
        return Err(StatsError::UncertainLabel(i));
    }
    let n = pairs.len();
    let (point_one, point_two) = metric_pair(pairs, 0..n);
    let draws: Vec<(MetricSet, MetricSet)> = (0..n_resamples)
        .into_par_iter()
        .map(|task| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(task as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            metric_pair(pairs, idx.into_iter())
        })
        .collect();

    let mut out = BTreeMap::new();
    for m in Metric::ALL {
        let one: Vec<f64> = draws.iter().filter_map(|(a, _)| a.get(m)).collect();
        let two: Vec<f64> = draws.iter().filter_map(|(_, b)| b.get(m)).collect();
        let delta: Vec<f64> = draws.iter().filter_map(|(a, b)| Some(b.get(m)? - a.get(m)?)).collect();
        let dropped_delta = n_resamples - delta.len();
        if dropped_delta as f64 > 0.01 * n_resamples as f64 {
            log::warn!(
                "bootstrap: {} of {} resamples dropped for {} (metric undefined)",
                dropped_delta,
                n_resamples,
                m.as_str()
            );
        }
        let p_value = (!delta.is_empty()).then(|| {
            let k = delta.len() as f64;
            let le = delta.iter().filter(|d| **d <= 0.0).count() as f64 / k;
            let ge = delta.iter().filter(|d| **d >= 0.0).count() as f64 / k;
            (2.0 * le.min(ge)).clamp(0.0, 1.0)
        });
        let result = |point: Option<f64>, v: Vec<f64>| {
            let dropped = n_resamples - v.len();
            let (ci_low, ci_high) = interval(v);
            BootstrapResult { point, ci_low, ci_high, n_resamples, dropped, seed }
        };
        let delta_point = match (point_one.get(m), point_two.get(m)) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        };
        let (dl, dh) = interval(delta);
        out.insert(
            m,
            MetricBootstrap {
                one_stage: result(point_one.get(m), one),
                two_stage: result(point_two.get(m), two),
                delta: DeltaResult { point: delta_point, ci_low: dl, ci_high: dh, p_value, dropped: dropped_delta },
            },
        );
    }
    Ok(BootstrapReport { n_parcels: n, n_resamples, seed, metrics: out })
}
