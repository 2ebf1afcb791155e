//! Classification metrics, paired tests and spatial autocorrelation.

pub mod bootstrap;
pub mod spatial;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};
use thiserror::Error;

use crate::decision::OccupancyLabel;

pub use bootstrap::{paired_bootstrap, BootstrapReport, BootstrapResult, DeltaResult, MetricBootstrap, PairedLabel};
pub use spatial::{knn_weights, morans_i, morans_i_analytic, MoranMethod, MoranResult, SpatialWeights};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} predictions vs {1} ground-truth labels")]
    LengthMismatch(usize, usize),
    #[error("item {0} carries an Uncertain label")]
    UncertainLabel(usize),
    #[error("need at least {need} items, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("values have zero variance")]
    ZeroVariance,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Binary confusion counts with NotOccupied as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, pred: OccupancyLabel, gt: OccupancyLabel) {
        let pos = |l| l == OccupancyLabel::NotOccupied;
        match (pos(pred), pos(gt)) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

pub fn confusion(preds: &[OccupancyLabel], gts: &[OccupancyLabel]) -> Result<ConfusionMatrix, StatsError> {
    if preds.len() != gts.len() {
        return Err(StatsError::LengthMismatch(preds.len(), gts.len()));
    }
    let mut cm = ConfusionMatrix::default();
    for (i, (&p, &g)) in preds.iter().zip(gts).enumerate() {
        if !p.is_confident() || !g.is_confident() {
            return Err(StatsError::UncertainLabel(i));
        }
        cm.add(p, g);
    }
    Ok(cm)
}

/// Metrics with undefined ratios left as `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub kappa: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Precision,
    Recall,
    F1,
    Kappa,
    Accuracy,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Precision, Metric::Recall, Metric::F1, Metric::Kappa, Metric::Accuracy];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::Kappa => "kappa",
            Metric::Accuracy => "accuracy",
        }
    }
}

impl MetricSet {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
            Metric::Kappa => self.kappa,
            Metric::Accuracy => self.accuracy,
        }
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

pub fn metrics(cm: &ConfusionMatrix) -> MetricSet {
    let (tp, fp, fn_, tn) = (cm.tp as f64, cm.fp as f64, cm.fn_ as f64, cm.tn as f64);
    let n = tp + fp + fn_ + tn;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn_);
    let accuracy = ratio(tp + tn, n);
    let kappa = accuracy.and_then(|po| {
        let pe = ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (n * n);
        ratio(po - pe, 1.0 - pe)
    });
    MetricSet { precision, recall, f1, kappa, accuracy }
}

/// Discordant counts: `b` = first right, second wrong; `c` = first wrong, second right.
pub fn discordant_counts(
    gts: &[OccupancyLabel],
    first: &[OccupancyLabel],
    second: &[OccupancyLabel],
) -> Result<(u64, u64), StatsError> {
    if first.len() != gts.len() || second.len() != gts.len() {
        return Err(StatsError::LengthMismatch(first.len().max(second.len()), gts.len()));
    }
    let (mut b, mut c) = (0, 0);
    for ((g, x), y) in gts.iter().zip(first).zip(second) {
        match (x == g, y == g) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok((b, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarMethod {
    ChiSquaredCorrected,
    ExactBinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    pub b: u64,
    pub c: u64,
    pub statistic: f64,
    pub p_value: f64,
    pub method: McNemarMethod,
}

/// Continuity-corrected McNemar chi-squared test with 1 df.
pub fn mcnemar(b: u64, c: u64) -> McNemarResult {
    let method = McNemarMethod::ChiSquaredCorrected;
    if b == c {
        return McNemarResult { b, c, statistic: 0.0, p_value: 1.0, method };
    }
    let d = (b as f64 - c as f64).abs() - 1.0;
    let statistic = d * d / (b + c) as f64;
    let chi2 = ChiSquared::new(1.0).expect("1 df");
    McNemarResult { b, c, statistic, p_value: chi2.sf(statistic), method }
}

/// Two-sided exact binomial McNemar test; `statistic` is min(b, c).
pub fn mcnemar_exact(b: u64, c: u64) -> McNemarResult {
    let n = b + c;
    let k = b.min(c);
    let p_value = if n == 0 {
        1.0
    } else {
        let bin = Binomial::new(0.5, n).expect("valid binomial");
        (2.0 * bin.cdf(k)).min(1.0)
    };
    McNemarResult { b, c, statistic: k as f64, p_value, method: McNemarMethod::ExactBinomial }
}

/// Exact test when `b + c < 25` and `prefer_exact` is set, corrected chi-squared otherwise.
pub fn mcnemar_auto(b: u64, c: u64, prefer_exact: bool) -> McNemarResult {
    if prefer_exact && b + c < 25 {
        mcnemar_exact(b, c)
    } else {
        mcnemar(b, c)
    }
}

/// Percentile of sorted data with linear interpolation between order statistics.
pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
