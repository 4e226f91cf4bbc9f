//! Diagnostics over finished runs: a diagonal Gaussian mixture fitted by EM,
//! consensus matrices over repeated clusterings, shaped-reward histograms and
//! multi-seed best-score curves.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::rng::{derive_seed, seeded, RunRng};
use crate::scalar::Scalar;
use crate::training::RunRecord;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const LL_TOLERANCE: f64 = 1e-8;
/// Allowed decrease of the log-likelihood between EM iterations.
pub const LL_SLACK: f64 = 1e-9;
pub const DEFAULT_CONSENSUS_RUNS: usize = 100;
/// EM iteration cap used by [`consensus`].
pub const CONSENSUS_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Log-likelihood after each EM iteration.
    pub log_likelihood: Vec<f64>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    fn log_joint(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let w = self.weights[j];
            if w <= 0.0 {
                *o = f64::NEG_INFINITY;
                continue;
            }
            let mut lp = w.ln();
            for ((&xi, &m), &v) in x.iter().zip(&self.means[j]).zip(&self.variances[j]) {
                let d = xi - m;
                lp -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + d * d / v);
            }
            *o = lp;
        }
    }

    /// Component with the largest responsibility, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut lj = vec![0.0; self.k()];
        self.log_joint(x, &mut lj);
        crate::scalar::argmax(&lj)
    }

    pub fn total_log_likelihood(&self, points: &[Vec<f64>]) -> f64 {
        let mut lj = vec![0.0; self.k()];
        points
            .iter()
            .map(|x| {
                self.log_joint(x, &mut lj);
                log_sum_exp(&lj)
            })
            .sum()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first center uniform, the rest drawn with probability
/// proportional to squared distance from the nearest chosen center.
fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut RunRng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// Fits a `k`-component diagonal GMM by EM.
///
/// The log-likelihood is checked after every iteration and a decrease beyond
/// [`LL_SLACK`] is reported as a numeric error.
pub fn gmm_fit(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<GmmModel> {
    if k == 0 {
        return arg_err("GMM needs at least one component");
    }
    if points.len() < k {
        return arg_err(format!("GMM with K = {k} needs at least {k} points, got {}", points.len()));
    }
    let d = points[0].len();
    if d == 0 {
        return arg_err("GMM points must be nonempty vectors");
    }
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::Dimension { expected: d, got: p.len() });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("GMM points must be finite".into()));
    }
    let n = points.len();
    let nf = n as f64;
    let mut rng = seeded(seed, 0);
    let mean: Vec<f64> = (0..d).map(|c| points.iter().map(|p| p[c]).sum::<f64>() / nf).collect();
    let var: Vec<f64> = (0..d)
        .map(|c| (points.iter().map(|p| (p[c] - mean[c]).powi(2)).sum::<f64>() / nf).max(VARIANCE_FLOOR))
        .collect();
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: kmeans_pp(points, k, &mut rng),
        variances: vec![var; k],
        log_likelihood: Vec::new(),
    };

    let mut resp = vec![0.0; n * k];
    let mut lj = vec![0.0; k];
    for _ in 0..max_iter.max(1) {
        // E step
        for (i, x) in points.iter().enumerate() {
            model.log_joint(x, &mut lj);
            let lse = log_sum_exp(&lj);
            for j in 0..k {
                resp[i * k + j] = (lj[j] - lse).exp();
            }
        }
        // M step
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            model.weights[j] = nk / nf;
            if nk <= 0.0 {
                continue;
            }
            for c in 0..d {
                let m = (0..n).map(|i| resp[i * k + j] * points[i][c]).sum::<f64>() / nk;
                let v = (0..n).map(|i| resp[i * k + j] * (points[i][c] - m).powi(2)).sum::<f64>() / nk;
                model.means[j][c] = m;
                model.variances[j][c] = v.max(VARIANCE_FLOOR);
            }
        }
        let ll = model.total_log_likelihood(points);
        if let Some(&prev) = model.log_likelihood.last() {
            if ll < prev - LL_SLACK {
                return Err(Error::Numeric(format!("EM log-likelihood decreased from {prev} to {ll}")));
            }
            model.log_likelihood.push(ll);
            if (ll - prev).abs() < LL_TOLERANCE {
                break;
            }
        } else {
            model.log_likelihood.push(ll);
        }
    }
    Ok(model)
}

/// Co-assignment frequencies over repeated clusterings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusMatrix {
    pub size: usize,
    pub runs: usize,
    /// Row-major `size × size`.
    pub values: Vec<f64>,
}

impl ConsensusMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    fn from_labelings(size: usize, labelings: &[Vec<usize>]) -> Self {
        let mut counts = vec![0usize; size * size];
        for labels in labelings {
            for i in 0..size {
                for j in 0..size {
                    if labels[i] == labels[j] {
                        counts[i * size + j] += 1;
                    }
                }
            }
        }
        let runs = labelings.len();
        Self { size, runs, values: counts.into_iter().map(|c| c as f64 / runs as f64).collect() }
    }
}

fn check_runs(runs: usize) -> Result<()> {
    if runs == 0 {
        return arg_err("consensus needs at least one run");
    }
    Ok(())
}

/// Consensus over points: each run fits a GMM with seed `derive_seed(seed, r)`.
pub fn consensus(features: &[Vec<f64>], k: usize, runs: usize, seed: u64) -> Result<ConsensusMatrix> {
    check_runs(runs)?;
    let labelings = (0..runs)
        .map(|r| {
            let model = gmm_fit(features, k, derive_seed(seed, r as u64), CONSENSUS_MAX_ITER)?;
            Ok(features.iter().map(|x| model.predict(x)).collect())
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    Ok(ConsensusMatrix::from_labelings(features.len(), &labelings))
}

/// Consensus over trajectories given as lists of per-transition features.
/// Transitions are clustered jointly; each trajectory takes the component
/// that most of its transitions fall in (lowest index on ties).
pub fn trajectory_consensus(trajectories: &[Vec<Vec<f64>>], k: usize, runs: usize, seed: u64) -> Result<ConsensusMatrix> {
    check_runs(runs)?;
    if let Some(i) = trajectories.iter().position(|t| t.is_empty()) {
        return arg_err(format!("trajectory {i} has no transitions"));
    }
    let points: Vec<Vec<f64>> = trajectories.iter().flatten().cloned().collect();
    let labelings = (0..runs)
        .map(|r| {
            let model = gmm_fit(&points, k, derive_seed(seed, r as u64), CONSENSUS_MAX_ITER)?;
            Ok(trajectories
                .iter()
                .map(|t| {
                    let mut votes = vec![0usize; k];
                    for x in t {
                        votes[model.predict(x)] += 1;
                    }
                    let top = *votes.iter().max().expect("k >= 1");
                    votes.iter().position(|&v| v == top).expect("max is present")
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    Ok(ConsensusMatrix::from_labelings(trajectories.len(), &labelings))
}

/// Per-transition clustering feature: `state ++ action ++ [stored reward]`.
pub fn transition_feature<S: Scalar>(t: &crate::trajectory::Transition<S>) -> Vec<f64> {
    t.state.iter().chain(&t.action).chain(std::iter::once(&t.reward)).map(|v| v.to_f64_lossy()).collect()
}

/// `sign(r) · ln(1 + |r|)`.
pub fn signed_log(r: f64) -> f64 {
    r.signum() * r.abs().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub epoch: usize,
    pub bin_left: f64,
    pub bin_right: f64,
    pub probability: f64,
}

/// Normalised histograms of signed-log rewards, one block of rows per
/// snapshot. Bin edges are shared by all snapshots; empty snapshots produce
/// no rows. When every reward maps to one value there is a single bin.
pub fn reward_distribution<S: Scalar>(snapshots: &[(usize, Vec<S>)], bins: usize) -> Result<Vec<HistogramRow>> {
    if bins == 0 {
        return arg_err("histogram needs at least one bin");
    }
    let logs: Vec<(usize, Vec<f64>)> = snapshots
        .iter()
        .map(|(e, r)| (*e, r.iter().map(|v| signed_log(v.to_f64_lossy())).collect()))
        .collect();
    let all = logs.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if !lo.is_finite() {
        return Ok(Vec::new());
    }
    let bins = if hi > lo { bins } else { 1 };
    let width = (hi - lo) / bins as f64;
    let edge = |b: usize| if b == bins { hi } else { lo + width * b as f64 };
    let mut rows = Vec::new();
    for (epoch, values) in &logs {
        if values.is_empty() {
            continue;
        }
        let mut counts = vec![0usize; bins];
        for &x in values {
            let b = if width > 0.0 { (((x - lo) / width) as usize).min(bins - 1) } else { 0 };
            counts[b] += 1;
        }
        let total = values.len() as f64;
        rows.extend(counts.iter().enumerate().map(|(b, &c)| HistogramRow {
            epoch: *epoch,
            bin_left: edge(b),
            bin_right: edge(b + 1),
            probability: c as f64 / total,
        }));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub episode: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Mean and population std of best-so-far scores across seeds.
pub fn best_score_series(records: &[RunRecord]) -> Result<Vec<SeriesPoint>> {
    let first = records.first().ok_or_else(|| Error::Argument("no run records".into()))?;
    let grid: Vec<usize> = first.episodes.iter().map(|e| e.episode).collect();
    for r in records {
        if r.episodes.len() != grid.len() || r.episodes.iter().zip(&grid).any(|(e, &g)| e.episode != g) {
            return arg_err(format!("seed {} has a different episode grid", r.seed));
        }
    }
    let n = records.len() as f64;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &episode)| {
            let mean = records.iter().map(|r| r.episodes[i].best).sum::<f64>() / n;
            let var = records.iter().map(|r| (r.episodes[i].best - mean).powi(2)).sum::<f64>() / n;
            SeriesPoint { episode, mean, std: var.sqrt() }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::EpisodeRecord;

    fn record(seed: u64, best: &[f64]) -> RunRecord {
        RunRecord {
            seed,
            config_hash: String::new(),
            episodes: best
                .iter()
                .enumerate()
                .map(|(i, &b)| EpisodeRecord {
                    episode: i + 1,
                    score: b,
                    best: b,
                    train_return: 0.0,
                    steps: 1,
                    loss: Default::default(),
                    lambda: 0.6,
                    alpha: 0.2,
                    p_u: 0.0,
                    shaped_count: 0,
                    wall_ms: 0.0,
                })
                .collect(),
            first_success: None,
            total_transitions: best.len(),
        }
    }

    #[test]
    fn single_component_is_closed_form() {
        let pts: Vec<Vec<f64>> = vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]];
        let m = gmm_fit(&pts, 1, 3, 50).unwrap();
        assert!((m.means[0][0] - 3.0).abs() < 1e-12);
        assert!((m.variances[0][0] - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.variances[0][1], VARIANCE_FLOOR);
        assert_eq!(m.weights, vec![1.0]);
    }

    #[test]
    fn identical_points_converge() {
        let pts = vec![vec![2.0, 2.0]; 10];
        let m = gmm_fit(&pts, 3, 0, 100).unwrap();
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(m.variances.iter().flatten().all(|&v| v >= VARIANCE_FLOOR));
    }

    #[test]
    fn separated_clouds_are_pure() {
        let mut pts = Vec::new();
        for i in 0..20 {
            let e = (i as f64) * 0.01;
            pts.push(vec![e, -e]);
            pts.push(vec![100.0 + e, 100.0 - e]);
        }
        let m = gmm_fit(&pts, 2, 11, 100).unwrap();
        let a = m.predict(&pts[0]);
        let b = m.predict(&pts[1]);
        assert_ne!(a, b);
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(m.predict(p), if i % 2 == 0 { a } else { b });
        }
        assert_eq!(gmm_fit(&pts, 2, 11, 100).unwrap(), m);
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(gmm_fit(&[vec![1.0]], 2, 0, 10).is_err());
        assert!(consensus(&[vec![1.0], vec![2.0]], 1, 0, 0).is_err());
    }

    #[test]
    fn duplicate_features_always_agree() {
        let pts = vec![vec![0.0], vec![0.0], vec![5.0], vec![9.0]];
        let c = consensus(&pts, 2, 10, 4).unwrap();
        assert_eq!(c.get(0, 1), 1.0);
        for i in 0..4 {
            assert_eq!(c.get(i, i), 1.0);
            for j in 0..4 {
                assert_eq!(c.get(i, j), c.get(j, i));
            }
        }
    }

    #[test]
    fn histogram_cases() {
        let rows = reward_distribution::<f64>(&[(200, vec![0.0; 5])], 10).unwrap();
        assert_eq!(rows, vec![HistogramRow { epoch: 200, bin_left: 0.0, bin_right: 0.0, probability: 1.0 }]);
        assert!(reward_distribution::<f64>(&[(200, vec![])], 10).unwrap().is_empty());
        let rows = reward_distribution::<f64>(&[(1, vec![-1.0, 0.0, 0.5, 1.0]), (2, vec![1.0, 1.0])], 4).unwrap();
        for epoch in [1, 2] {
            let p: f64 = rows.iter().filter(|r| r.epoch == epoch).map(|r| r.probability).sum();
            assert!((p - 1.0).abs() < 1e-12);
        }
        assert_eq!(rows[0].bin_left, -(2f64.ln()));
        assert_eq!(rows[3].bin_right, 2f64.ln());
    }

    #[test]
    fn series_mean_and_population_std() {
        let s = best_score_series(&[record(0, &[1.0, 1.0]), record(1, &[3.0, 3.0])]).unwrap();
        assert_eq!((s[0].mean, s[0].std), (2.0, 1.0));
        let single = best_score_series(&[record(0, &[0.0, 2.0])]).unwrap();
        assert!(single.iter().all(|p| p.std == 0.0));
        assert!(best_score_series(&[record(0, &[1.0]), record(1, &[1.0, 2.0])]).is_err());
        assert!(best_score_series(&[]).is_err());
    }
}
