//! Count-based simulation of the k-NN vote at a diffuse test point.
//!
//! Seen from a diffuse point `X = yᵇ` (`|b| = D`), sample points fall into
//! finitely many shells, each label-homogeneous and strictly ordered by
//! distance to `X`:
//!
//! ```text
//! X itself, x^b,
//! then for l = D−1 down to 0:
//!   x^{b[..l]},
//!   atoms of depth l+1 … D−1 under the siblings of b[..l+1],
//!   diffuse points under those siblings,
//!   atoms of depth D under those siblings.
//! ```
//!
//! Drawing the shell occupancies from the multinomial law and walking them in
//! order reproduces the k-NN prediction without materializing the sample.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use super::sampler::{sample_mu, Provenance};
use super::tree::{AdversarialProblem, TreeWord};
use super::AdversarialError;
use crate::knn::{knn_predict, majority, Estimate, LabelledSample, TieStrategy};
use crate::metric::{MetricSpace, Point, SparsePoint};
use crate::rng::rng_from;

/// Sample sizes above this are refused by the brute-force path.
pub const BRUTE_FORCE_LIMIT: u64 = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ShellClass {
    /// Copies of the test point.
    DiffuseSelf,
    /// The atom on the test branch at this depth.
    PathAtom { depth: usize },
    /// Atoms of `depth` whose word leaves the test branch after `level` letters.
    SiblingAtom { level: usize, depth: usize },
    /// Diffuse points whose branch leaves the test branch after `level` letters.
    SiblingDiffuse { level: usize },
}

impl ShellClass {
    pub fn label(&self) -> u8 {
        u8::from(!matches!(self, ShellClass::DiffuseSelf | ShellClass::SiblingDiffuse { .. }))
    }
}

/// Shells in increasing distance order with their probabilities.
#[derive(Clone, Debug)]
pub struct ShellLayout {
    classes: Vec<ShellClass>,
    exact: Vec<BigRational>,
    probs: Vec<f64>,
    tail: Vec<f64>,
    position: HashMap<ShellClass, usize>,
}

fn prod(ms: &[u64]) -> BigRational {
    BigRational::from_integer(ms.iter().fold(BigInt::one(), |acc, &m| acc * BigInt::from(m)))
}

impl ShellLayout {
    pub fn new(problem: &AdversarialProblem) -> Self {
        let d = problem.truncation_depth();
        let m = problem.branching();
        let rule = problem.schedule().gamma_rule;
        let q = |i: usize| if i < d { rule.gamma(i) } else { rule.tail(i) };
        let half = BigRational::new(BigInt::one(), BigInt::from(2));
        let sib = |l: usize| BigRational::from_integer(BigInt::from(m[l + 1] - 1));

        let mut entries: Vec<(ShellClass, BigRational)> = vec![
            (ShellClass::DiffuseSelf, &half / prod(&m[1..=d])),
            (ShellClass::PathAtom { depth: d }, q(d) / prod(&m[..=d])),
        ];
        for l in (0..d).rev() {
            entries.push((ShellClass::PathAtom { depth: l }, q(l) / prod(&m[..=l])));
            for depth in l + 1..d {
                entries.push((ShellClass::SiblingAtom { level: l, depth }, q(depth) * sib(l) / prod(&m[..=l + 1])));
            }
            entries.push((ShellClass::SiblingDiffuse { level: l }, &half * sib(l) / prod(&m[1..=l + 1])));
            entries.push((ShellClass::SiblingAtom { level: l, depth: d }, q(d) * sib(l) / prod(&m[..=l + 1])));
        }

        let (classes, exact): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let probs: Vec<f64> = exact.iter().map(|p| p.to_f64().unwrap_or(0.0)).collect();
        let mut tail = vec![BigRational::zero(); exact.len()];
        let mut acc = BigRational::zero();
        for i in (0..exact.len()).rev() {
            acc += &exact[i];
            tail[i] = acc.clone();
        }
        let tail = tail.iter().map(|p| p.to_f64().unwrap_or(0.0)).collect();
        let position = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        ShellLayout {
            classes,
            exact,
            probs,
            tail,
            position,
        }
    }

    pub fn classes(&self) -> &[ShellClass] {
        &self.classes
    }

    pub fn exact_probabilities(&self) -> &[BigRational] {
        &self.exact
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn position(&self, class: &ShellClass) -> Option<usize> {
        self.position.get(class).copied()
    }

    /// Occupancy of each shell for a materialized sample.
    pub fn tally<'a>(&self, provenances: impl IntoIterator<Item = &'a Provenance>, test: &TreeWord) -> Vec<u64> {
        let mut counts = vec![0u64; self.classes.len()];
        for p in provenances {
            let pos = self.position(&classify(p, test)).expect("every draw falls in a shell");
            counts[pos] += 1;
        }
        counts
    }

    /// Multinomial occupancy with `n` draws; stops once `stop_at` points are
    /// placed, leaving later shells at zero.
    pub fn draw_counts<R: Rng + ?Sized>(&self, n: u64, stop_at: u64, rng: &mut R) -> Vec<u64> {
        let mut counts = vec![0u64; self.classes.len()];
        let (mut left, mut placed) = (n, 0u64);
        let last = self.classes.len() - 1;
        for i in 0..=last {
            if left == 0 || placed >= stop_at {
                break;
            }
            let c = if i == last {
                left
            } else {
                let p = (self.probs[i] / self.tail[i]).clamp(0.0, 1.0);
                Binomial::new(left, p).expect("probability in [0, 1]").sample(rng)
            };
            counts[i] = c;
            left -= c;
            placed += c;
        }
        counts
    }
}

/// Shell of a sample draw as seen from the diffuse test branch `test`.
pub fn classify(provenance: &Provenance, test: &TreeWord) -> ShellClass {
    match provenance {
        Provenance::Diffuse(s) if s == test => ShellClass::DiffuseSelf,
        Provenance::Diffuse(s) => ShellClass::SiblingDiffuse {
            level: s.common_prefix_len(test),
        },
        Provenance::Atomic(s) if s.is_prefix_of(test) => ShellClass::PathAtom { depth: s.depth() },
        Provenance::Atomic(s) => ShellClass::SiblingAtom {
            level: s.common_prefix_len(test),
            depth: s.depth(),
        },
    }
}

/// k-NN vote from shell occupancies: shells are consumed nearest first.
pub fn predict_from_counts(layout: &ShellLayout, counts: &[u64], k: u64) -> u8 {
    let (mut taken, mut ones) = (0u64, 0u64);
    for (class, &c) in layout.classes.iter().zip(counts) {
        let take = c.min(k - taken);
        taken += take;
        if class.label() == 1 {
            ones += take;
        }
        if taken == k {
            break;
        }
    }
    majority(ones as usize, k as usize)
}

/// A point of the given shell, used to check the distance ordering.
pub fn representative(problem: &AdversarialProblem, class: &ShellClass, test: &TreeWord) -> Option<SparsePoint> {
    let d = problem.truncation_depth();
    let m = problem.branching();
    let sibling_branch = |level: usize, depth: usize| -> Option<TreeWord> {
        if m[level + 1] < 2 {
            return None;
        }
        let mut letters = test.letters()[..level].to_vec();
        letters.push(test.letters()[level] % m[level + 1] + 1);
        letters.resize(depth, 1);
        Some(TreeWord(letters))
    };
    match *class {
        ShellClass::DiffuseSelf => problem.center(test).ok(),
        ShellClass::PathAtom { depth } => problem.atom(&test.prefix(depth)).ok(),
        ShellClass::SiblingAtom { level, depth } => problem.atom(&sibling_branch(level, depth)?).ok(),
        ShellClass::SiblingDiffuse { level } => problem.center(&sibling_branch(level, d)?).ok(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageSim {
    pub stage: usize,
    pub n: u64,
    pub k: u64,
    pub test_count: usize,
    pub predicted_one: usize,
    pub fraction: Estimate,
}

fn check_stage(problem: &AdversarialProblem, stage: usize) -> Result<(), AdversarialError> {
    let depth = problem.truncation_depth();
    if stage + 1 > depth {
        return Err(AdversarialError::Stage {
            stage,
            needed: stage + 1,
            depth,
        });
    }
    Ok(())
}

fn check_nk(n: u64, k: u64) -> Result<(), AdversarialError> {
    if n == 0 {
        return Err(crate::knn::KnnError::EmptySample.into());
    }
    if k == 0 || k > n {
        return Err(crate::knn::KnnError::K {
            k: k as usize,
            n: n as usize,
        }
        .into());
    }
    Ok(())
}

fn test_branch<R: Rng + ?Sized>(problem: &AdversarialProblem, rng: &mut R) -> TreeWord {
    let m = problem.branching();
    TreeWord((1..=problem.truncation_depth()).map(|l| rng.random_range(1..=m[l])).collect())
}

/// Predictions at `test_count` diffuse test points, each against its own
/// simulated `n`-sample.
pub fn structured_stage_predictions(
    problem: &AdversarialProblem,
    stage: usize,
    n: u64,
    k: u64,
    test_count: usize,
    seed: u64,
) -> Result<Vec<u8>, AdversarialError> {
    check_stage(problem, stage)?;
    check_nk(n, k)?;
    let layout = ShellLayout::new(problem);
    Ok((0..test_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(seed, &[0x5713, stage as u64, i as u64]);
            let counts = layout.draw_counts(n, k, &mut rng);
            predict_from_counts(&layout, &counts, k)
        })
        .collect())
}

/// Fraction of diffuse test points predicted 1 at stage `stage`.
pub fn structured_stage_sim(
    problem: &AdversarialProblem,
    stage: usize,
    n: u64,
    k: u64,
    test_count: usize,
    seed: u64,
) -> Result<StageSim, AdversarialError> {
    let predictions = structured_stage_predictions(problem, stage, n, k, test_count, seed)?;
    let predicted_one = predictions.iter().filter(|&&p| p == 1).count();
    Ok(StageSim {
        stage,
        n,
        k,
        test_count,
        predicted_one,
        fraction: Estimate::proportion(predicted_one, test_count.max(1)),
    })
}

/// Per-test-point predictions on one materialized sample, both by brute-force
/// k-NN and by walking the tallied shells.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BruteForceComparison {
    pub brute: Vec<u8>,
    pub counted: Vec<u8>,
}

pub fn brute_force_stage_predictions(
    problem: &AdversarialProblem,
    stage: usize,
    n: u64,
    k: u64,
    test_count: usize,
    seed: u64,
    strategy: TieStrategy,
) -> Result<BruteForceComparison, AdversarialError> {
    check_stage(problem, stage)?;
    check_nk(n, k)?;
    if n > BRUTE_FORCE_LIMIT {
        return Err(AdversarialError::BruteForceLimit {
            n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let draws = sample_mu(problem, n as usize, seed);
    let mut rng = rng_from(seed, &[0xb7f0]);
    let provenances: Vec<Provenance> = draws.iter().map(|d| d.provenance.clone()).collect();
    let (points, labels): (Vec<Point>, Vec<u8>) =
        draws.into_iter().map(|d| (Point::Sparse(d.point), d.label)).unzip();
    let sample = LabelledSample::with_random_keys(points, labels, &mut rng)?;
    let layout = ShellLayout::new(problem);
    let mut brute = Vec::with_capacity(test_count);
    let mut counted = Vec::with_capacity(test_count);
    for _ in 0..test_count {
        let branch = test_branch(problem, &mut rng);
        let x = Point::Sparse(problem.center(&branch)?);
        brute.push(knn_predict(&sample, &x, k as usize, strategy, &MetricSpace::SparseL2)?);
        let counts = layout.tally(&provenances, &branch);
        counted.push(predict_from_counts(&layout, &counts, k));
    }
    Ok(BruteForceComparison { brute, counted })
}
