//! k-nearest-neighbour weights and global Moran's I.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rstar::primitives::GeomWithData;
use rstar::RTree;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::StatsError;
use crate::geodesy::PlanePoint;

pub const DEFAULT_K: usize = 8;
pub const DEFAULT_PERMUTATIONS: usize = 999;
pub const MIN_VALUES: usize = 10;

/// Sparse row-standardized weights. Rows hold `(neighbor, weight)` sorted by neighbor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialWeights {
    rows: Vec<Vec<(usize, f64)>>,
    description: String,
}

impl SpatialWeights {
    /// Builds row-standardized weights from neighbor lists. Self-links and
    /// duplicates are removed.
    pub fn from_neighbors(neighbors: Vec<Vec<usize>>, description: impl Into<String>) -> Result<Self, StatsError> {
        let n = neighbors.len();
        let mut rows = Vec::with_capacity(n);
        for (i, mut list) in neighbors.into_iter().enumerate() {
            list.retain(|&j| j != i);
            list.sort_unstable();
            list.dedup();
            if let Some(&bad) = list.iter().find(|&&j| j >= n) {
                return Err(StatsError::InvalidParameter(format!("neighbor index {bad} out of range")));
            }
            let w = 1.0 / list.len().max(1) as f64;
            rows.push(list.into_iter().map(|j| (j, w)).collect());
        }
        Ok(Self { rows, description: description.into() })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.rows[i].iter().map(|(j, _)| *j).collect()
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Sum of all weights.
    pub fn s0(&self) -> f64 {
        self.rows.iter().flatten().map(|(_, w)| w).sum()
    }

    fn lag_product(&self, z: &[f64]) -> f64 {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| z[i] * row.iter().map(|(j, w)| w * z[*j]).sum::<f64>())
            .sum()
    }
}

/// k nearest neighbours by plane distance (ties broken by lower index),
/// symmetrized by union, row-standardized.
pub fn knn_weights(points: &[PlanePoint], k: usize) -> Result<SpatialWeights, StatsError> {
    let n = points.len();
    if k == 0 || n <= k {
        return Err(StatsError::TooFew { need: k + 1, got: n });
    }
    let tree = RTree::bulk_load(points.iter().enumerate().map(|(i, p)| GeomWithData::new([p.x, p.y], i)).collect());
    let knn: Vec<Vec<usize>> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut found: Vec<(f64, usize)> = Vec::with_capacity(k + 4);
            let mut kth = f64::INFINITY;
            for (item, d2) in tree.nearest_neighbor_iter_with_distance_2(&[p.x, p.y]) {
                if item.data == i {
                    continue;
                }
                if found.len() >= k && d2 > kth {
                    break;
                }
                found.push((d2, item.data));
                if found.len() == k {
                    kth = d2;
                }
            }
            found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            found.truncate(k);
            found.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    let mut union = knn.clone();
    for (i, list) in knn.iter().enumerate() {
        for &j in list {
            union[j].push(i);
        }
    }
    SpatialWeights::from_neighbors(union, format!("knn k={k}, symmetrized by union, row-standardized"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoranMethod {
    Permutation,
    AnalyticRandomization,
}

impl MoranMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            MoranMethod::Permutation => "permutation",
            MoranMethod::AnalyticRandomization => "analytic_randomization",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    pub i: f64,
    pub expected_i: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: MoranMethod,
    /// Standardized statistic (analytic method only).
    pub z: Option<f64>,
    /// Permutation count (permutation method only).
    pub permutations: Option<usize>,
}

fn deviations(values: &[f64], w: &SpatialWeights) -> Result<(Vec<f64>, f64), StatsError> {
    let n = values.len();
    if n != w.n() {
        return Err(StatsError::LengthMismatch(n, w.n()));
    }
    if n < MIN_VALUES {
        return Err(StatsError::TooFew { need: MIN_VALUES, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let m2: f64 = z.iter().map(|x| x * x).sum();
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if m2 <= (1e-12 * scale).powi(2) * n as f64 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((z, m2))
}

fn statistic(z: &[f64], m2: f64, w: &SpatialWeights, s0: f64) -> f64 {
    z.len() as f64 / s0 * w.lag_product(z) / m2
}

pub fn expected_i(n: usize) -> f64 {
    -1.0 / (n as f64 - 1.0)
}

/// Global Moran's I with a one-sided (clustering) permutation p-value.
/// Permutation `p` shuffles with ChaCha8 stream `p` under `seed`.
pub fn morans_i(values: &[f64], w: &SpatialWeights, permutations: usize, seed: u64) -> Result<MoranResult, StatsError> {
    let (z, m2) = deviations(values, w)?;
    let s0 = w.s0();
    let observed = statistic(&z, m2, w, s0);
    let at_least = (0..permutations)
        .into_par_iter()
        .filter(|&p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut zp = z.clone();
            zp.shuffle(&mut rng);
            statistic(&zp, m2, w, s0) >= observed - 1e-12
        })
        .count();
    Ok(MoranResult {
        i: observed,
        expected_i: expected_i(z.len()),
        p_value: (at_least + 1) as f64 / (permutations + 1) as f64,
        n: z.len(),
        method: MoranMethod::Permutation,
        z: None,
        permutations: Some(permutations),
    })
}

/// Moran's I with the randomization-assumption variance and a one-sided
/// normal p-value.
pub fn morans_i_analytic(values: &[f64], w: &SpatialWeights) -> Result<MoranResult, StatsError> {
    let (z, m2) = deviations(values, w)?;
    let n = z.len() as f64;
    let s0 = w.s0();
    let observed = statistic(&z, m2, w, s0);
    let (s1, s2) = moment_sums(w);
    let m4: f64 = z.iter().map(|x| x.powi(4)).sum();
    let b2 = n * m4 / (m2 * m2);
    let e = expected_i(z.len());
    let e2 = (n * ((n * n - 3.0 * n + 3.0) * s1 - n * s2 + 3.0 * s0 * s0)
        - b2 * ((n * n - n) * s1 - 2.0 * n * s2 + 6.0 * s0 * s0))
        / ((n - 1.0) * (n - 2.0) * (n - 3.0) * s0 * s0);
    let var = e2 - e * e;
    let zscore = (observed - e) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(MoranResult {
        i: observed,
        expected_i: e,
        p_value: normal.sf(zscore),
        n: z.len(),
        method: MoranMethod::AnalyticRandomization,
        z: Some(zscore),
        permutations: None,
    })
}

/// S1 = 1/2 sum (w_ij + w_ji)^2, S2 = sum_i (w_i. + w_.i)^2.
fn moment_sums(w: &SpatialWeights) -> (f64, f64) {
    let n = w.n();
    let mut dense_t: Vec<std::collections::HashMap<usize, f64>> = vec![Default::default(); n];
    for i in 0..n {
        for &(j, wij) in w.row(i) {
            dense_t[j].insert(i, wij);
        }
    }
    let mut s1 = 0.0;
    let mut seen = std::collections::HashSet::new();
    for i in 0..n {
        for &(j, wij) in w.row(i) {
            let wji = dense_t[i].get(&j).copied().unwrap_or(0.0);
            if seen.insert((i.min(j), i.max(j))) {
                let both = wij + wji;
                // The double sum visits each unordered pair twice, cancelling the 1/2.
                s1 += both * both;
            }
        }
    }
    let s2 = (0..n)
        .map(|i| {
            let out: f64 = w.row(i).iter().map(|(_, x)| x).sum();
            let inc: f64 = dense_t[i].values().sum();
            (out + inc).powi(2)
        })
        .sum();
    (s1, s2)
}
