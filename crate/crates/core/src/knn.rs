//! The k-nearest-neighbour rule in an abstract metric space.
//!
//! Distance ties at the k-th radius are broken by auxiliary keys `ξᵢ`
//! (smaller key wins) or by sample index; voting ties go to label 1.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{MetricError, MetricSpace, Point};
use crate::rng::rng_from;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnnError {
    #[error("sample must be non-empty")]
    EmptySample,
    #[error("sample fields have different lengths: {points} points, {labels} labels, {keys} tie keys")]
    LengthMismatch {
        points: usize,
        labels: usize,
        keys: usize,
    },
    #[error("label {0} is not binary")]
    Label(u8),
    #[error("tie keys must be finite and pairwise distinct")]
    TieKeys,
    #[error("k = {k} outside 1..={n}")]
    K { k: usize, n: usize },
    #[error("prediction and truth sequences differ in length ({0} vs {1})")]
    Lengths(usize, usize),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieStrategy {
    /// Prefer boundary points with smaller auxiliary key.
    #[default]
    UniformRandom,
    /// Prefer boundary points with smaller index.
    FirstIndex,
}

/// Points, binary labels, and the tie-break keys attached to each point.
#[derive(Clone, Debug)]
pub struct LabelledSample {
    points: Vec<Point>,
    labels: Vec<u8>,
    tie_keys: Vec<f64>,
}

impl LabelledSample {
    pub fn new(points: Vec<Point>, labels: Vec<u8>, tie_keys: Vec<f64>) -> Result<Self, KnnError> {
        if points.len() != labels.len() || points.len() != tie_keys.len() {
            return Err(KnnError::LengthMismatch {
                points: points.len(),
                labels: labels.len(),
                keys: tie_keys.len(),
            });
        }
        if points.is_empty() {
            return Err(KnnError::EmptySample);
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(KnnError::Label(l));
        }
        let mut sorted = tie_keys.clone();
        if sorted.iter().any(|k| !k.is_finite()) {
            return Err(KnnError::TieKeys);
        }
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(KnnError::TieKeys);
        }
        Ok(LabelledSample {
            points,
            labels,
            tie_keys,
        })
    }

    /// Attaches fresh uniform keys drawn from `rng`.
    pub fn with_random_keys<R: Rng + ?Sized>(
        points: Vec<Point>,
        labels: Vec<u8>,
        rng: &mut R,
    ) -> Result<Self, KnnError> {
        let keys = distinct_uniform_keys(points.len(), rng);
        Self::new(points, labels, keys)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn tie_keys(&self) -> &[f64] {
        &self.tie_keys
    }

    fn distances(&self, x: &Point, space: &MetricSpace) -> Result<Vec<f64>, KnnError> {
        space.check(x)?;
        self.points
            .iter()
            .map(|p| space.distance(x, p).map_err(KnnError::from))
            .collect()
    }

    fn check_k(&self, k: usize) -> Result<(), KnnError> {
        if k == 0 || k > self.len() {
            Err(KnnError::K { k, n: self.len() })
        } else {
            Ok(())
        }
    }
}

/// `n` uniform keys in `[0, 1)`, redrawn until pairwise distinct.
pub fn distinct_uniform_keys<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut keys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    loop {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
        let dup: Vec<usize> = order
            .windows(2)
            .filter(|w| keys[w[0]] == keys[w[1]])
            .map(|w| w[1])
            .collect();
        if dup.is_empty() {
            return keys;
        }
        for i in dup {
            keys[i] = rng.random::<f64>();
        }
    }
}

fn kth_smallest(dists: &[f64], k: usize) -> f64 {
    let mut scratch = dists.to_vec();
    let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}

/// Smallest radius of a closed ball around `x` holding at least `k` sample points.
pub fn r_k(sample: &LabelledSample, x: &Point, k: usize, space: &MetricSpace) -> Result<f64, KnnError> {
    sample.check_k(k)?;
    let dists = sample.distances(x, space)?;
    Ok(kth_smallest(&dists, k))
}

/// Indices of the `k` nearest neighbours given precomputed distances.
///
/// All points strictly inside the `r_k` sphere are taken, then the boundary
/// is filled in the order prescribed by `strategy`.
pub fn select_from_distances(dists: &[f64], tie_keys: &[f64], k: usize, strategy: TieStrategy) -> Vec<usize> {
    let radius = kth_smallest(dists, k);
    let mut chosen: Vec<usize> = (0..dists.len()).filter(|&i| dists[i] < radius).collect();
    let mut boundary: Vec<usize> = (0..dists.len()).filter(|&i| dists[i] == radius).collect();
    if let TieStrategy::UniformRandom = strategy {
        boundary.sort_by(|&a, &b| tie_keys[a].total_cmp(&tie_keys[b]));
    }
    let missing = k - chosen.len();
    chosen.extend_from_slice(&boundary[..missing]);
    chosen
}

pub fn select_neighbours(
    sample: &LabelledSample,
    x: &Point,
    k: usize,
    strategy: TieStrategy,
    space: &MetricSpace,
) -> Result<Vec<usize>, KnnError> {
    sample.check_k(k)?;
    let dists = sample.distances(x, space)?;
    Ok(select_from_distances(&dists, &sample.tie_keys, k, strategy))
}

/// Majority label among `votes_for_one` out of `k`; an exact split goes to 1.
pub fn majority(votes_for_one: usize, k: usize) -> u8 {
    u8::from(2 * votes_for_one >= k)
}

pub fn knn_predict(
    sample: &LabelledSample,
    x: &Point,
    k: usize,
    strategy: TieStrategy,
    space: &MetricSpace,
) -> Result<u8, KnnError> {
    let chosen = select_neighbours(sample, x, k, strategy, space)?;
    let ones = chosen.iter().filter(|&&i| sample.labels[i] == 1).count();
    Ok(majority(ones, k))
}

pub fn empirical_error(predictions: &[u8], truths: &[u8]) -> Result<f64, KnnError> {
    if predictions.len() != truths.len() {
        return Err(KnnError::Lengths(predictions.len(), truths.len()));
    }
    if predictions.is_empty() {
        return Err(KnnError::EmptySample);
    }
    let wrong = predictions.iter().zip(truths).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / predictions.len() as f64)
}

/// A Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            stderr: 0.0,
            samples: 0,
        }
    }

    /// Proportion estimate with stderr `sqrt(p(1-p)/N)`. At `p ∈ {0, 1}` the
    /// add-half proportion `(hits + 1/2)/(N + 1)` goes under the root instead,
    /// so a Monte Carlo stderr is never zero.
    pub fn proportion(hits: usize, total: usize) -> Self {
        let p = hits as f64 / total as f64;
        let q = if hits == 0 || hits == total {
            (hits as f64 + 0.5) / (total as f64 + 1.0)
        } else {
            p
        };
        Estimate {
            value: p,
            stderr: (q * (1.0 - q) / total as f64).sqrt(),
            samples: total,
        }
    }

    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Estimate {
            value: mean,
            stderr: (var / n).sqrt(),
            samples: values.len(),
        }
    }
}

/// Label generated by the threshold coupling `Y = 1{Z ≤ η}`.
pub fn coupled_label(z: f64, eta: f64) -> u8 {
    u8::from(z <= eta)
}

/// A learning problem `(μ, η)`: a sampler for `μ` and the regression function.
pub trait LearningProblem: Sync {
    fn space(&self) -> MetricSpace;

    fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point;

    /// `P[Y = 1 | X = x]`.
    fn eta(&self, x: &Point) -> f64;

    /// Known Bayes error, when available in closed form.
    fn bayes_error(&self) -> Option<f64> {
        None
    }

    /// Draws `(X, Y)` with `Y = 1{Z ≤ η(X)}`, `Z` uniform on `(0, 1]`.
    fn sample_labelled<R: Rng + ?Sized>(&self, rng: &mut R) -> (Point, u8) {
        let x = self.sample_point(rng);
        let z = 1.0 - rng.random::<f64>();
        let y = coupled_label(z, self.eta(&x));
        (x, y)
    }
}

/// Bayes error `∫ min{η, 1−η} dμ`, exact when the problem knows it.
pub fn bayes_error<P: LearningProblem>(problem: &P, mc_samples: usize, seed: u64) -> Estimate {
    if let Some(b) = problem.bayes_error() {
        return Estimate::exact(b);
    }
    let mut rng = rng_from(seed, &[0xba7e5]);
    let values: Vec<f64> = (0..mc_samples.max(1))
        .map(|_| {
            let x = problem.sample_point(&mut rng);
            let eta = problem.eta(&x);
            eta.min(1.0 - eta)
        })
        .collect();
    Estimate::from_values(&values)
}

pub fn draw_sample<P: LearningProblem>(problem: &P, n: usize, seed: u64) -> Result<LabelledSample, KnnError> {
    let mut rng = rng_from(seed, &[0x5a4d1e]);
    let (points, labels): (Vec<Point>, Vec<u8>) = (0..n).map(|_| problem.sample_labelled(&mut rng)).unzip();
    LabelledSample::with_random_keys(points, labels, &mut rng)
}

/// Misclassification rate of the k-NN rule trained on one `n`-sample, over
/// `test_points` fresh labelled draws.
pub fn knn_error_estimate<P: LearningProblem>(
    problem: &P,
    n: usize,
    k: usize,
    test_points: usize,
    seed: u64,
) -> Result<Estimate, KnnError> {
    let space = problem.space();
    let sample = draw_sample(problem, n, seed)?;
    sample.check_k(k)?;
    let wrong: Result<usize, KnnError> = (0..test_points)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(seed, &[0x7e57, i as u64]);
            let (x, y) = problem.sample_labelled(&mut rng);
            let dists = sample.distances(&x, &space)?;
            let chosen = select_from_distances(&dists, &sample.tie_keys, k, TieStrategy::UniformRandom);
            let ones = chosen.iter().filter(|&&j| sample.labels[j] == 1).count();
            Ok(usize::from(majority(ones, k) != y))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b));
    Ok(Estimate::proportion(wrong?, test_points))
}

/// Monte Carlo estimate of `P[Y_(1)(X) ≠ Y]` at sample size `n`.
pub fn one_nn_error_estimate<P: LearningProblem>(
    problem: &P,
    n: usize,
    test_points: usize,
    seed: u64,
) -> Result<Estimate, KnnError> {
    knn_error_estimate(problem, n, 1, test_points, seed)
}
