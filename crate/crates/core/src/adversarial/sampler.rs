//! Exact sampling from the truncated measure `μ₀⁽ᴰ⁾ + μ₁`.
//!
//! Atoms deeper than the truncation depth `D` are merged into depth `D`, so
//! the atomic half keeps total mass exactly 1/2.

use num_traits::ToPrimitive;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::tree::{AdversarialProblem, TreeWord};
use crate::knn::LearningProblem;
use crate::metric::{MetricSpace, Point, SparsePoint};
use crate::rng::rng_from;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Provenance {
    /// The atom `xᵗ`.
    Atomic(TreeWord),
    /// The hub `yᵗ` of a depth-`D` branch.
    Diffuse(TreeWord),
}

impl Provenance {
    pub fn word(&self) -> &TreeWord {
        match self {
            Provenance::Atomic(t) | Provenance::Diffuse(t) => t,
        }
    }

    pub fn label(&self) -> u8 {
        u8::from(matches!(self, Provenance::Atomic(_)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Draw {
    pub point: SparsePoint,
    pub label: u8,
    pub provenance: Provenance,
}

impl AdversarialProblem {
    /// Mass `qᵢ` of all atoms of depth `i` after truncation.
    pub fn atom_level_mass(&self, i: usize) -> f64 {
        let rule = self.schedule().gamma_rule;
        let exact = if i < self.truncation_depth() {
            rule.gamma(i)
        } else {
            rule.tail(i)
        };
        exact.to_f64().unwrap_or(0.0)
    }

    fn random_word<R: Rng + ?Sized>(&self, depth: usize, rng: &mut R) -> TreeWord {
        let m = self.branching();
        TreeWord((1..=depth).map(|l| rng.random_range(1..=m[l])).collect())
    }

    pub fn sample_provenance<R: Rng + ?Sized>(&self, rng: &mut R) -> Provenance {
        let d = self.truncation_depth();
        if rng.random::<bool>() {
            let u: f64 = rng.random::<f64>() * 0.5;
            let mut acc = 0.0;
            let mut depth = d;
            for i in 0..d {
                acc += self.atom_level_mass(i);
                if u < acc {
                    depth = i;
                    break;
                }
            }
            Provenance::Atomic(self.random_word(depth, rng))
        } else {
            Provenance::Diffuse(self.random_word(d, rng))
        }
    }

    pub fn realize(&self, provenance: Provenance) -> Draw {
        let point = match &provenance {
            Provenance::Atomic(t) => self.atom(t),
            Provenance::Diffuse(t) => self.center(t),
        }
        .expect("sampled words respect the branching");
        Draw {
            point,
            label: provenance.label(),
            provenance,
        }
    }

    pub fn sample_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw {
        let p = self.sample_provenance(rng);
        self.realize(p)
    }
}

/// `count` i.i.d. labelled draws, reproducible from `seed`.
pub fn sample_mu(problem: &AdversarialProblem, count: usize, seed: u64) -> Vec<Draw> {
    const CHUNK: usize = 4096;
    (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = rng_from(seed, &[0x6d75, c as u64]);
            let len = CHUNK.min(count - c * CHUNK);
            (0..len).map(move |_| problem.sample_draw(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

impl LearningProblem for AdversarialProblem {
    fn space(&self) -> MetricSpace {
        MetricSpace::SparseL2
    }

    fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        Point::Sparse(self.sample_draw(rng).point)
    }

    fn eta(&self, x: &Point) -> f64 {
        match x {
            Point::Sparse(p) => self.eta_sparse(p),
            _ => 0.0,
        }
    }

    fn bayes_error(&self) -> Option<f64> {
        Some(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversarial::{DeltaRule, GammaRule, KRule, Schedule};

    fn problem() -> AdversarialProblem {
        let s = Schedule::empirical(GammaRule::Dyadic, DeltaRule::Dyadic, KRule::Log2Ceil, vec![1, 4, 3], vec![]);
        AdversarialProblem::new(s, 2).unwrap()
    }

    #[test]
    fn deterministic_given_seed() {
        let p = problem();
        assert_eq!(sample_mu(&p, 5000, 9), sample_mu(&p, 5000, 9));
        assert_ne!(sample_mu(&p, 50, 9), sample_mu(&p, 50, 10));
    }

    #[test]
    fn labels_follow_eta() {
        let p = problem();
        for d in sample_mu(&p, 2000, 1) {
            assert_eq!(f64::from(d.label), p.eta_sparse(&d.point));
            if let Provenance::Diffuse(t) = &d.provenance {
                assert_eq!(t.depth(), 2);
            }
        }
    }

    #[test]
    fn truncated_level_masses_sum_to_half() {
        let p = problem();
        let total: f64 = (0..=2).map(|i| p.atom_level_mass(i)).sum();
        assert_eq!(total, 0.5);
        assert_eq!(p.atom_level_mass(2), 0.125);
    }

    #[test]
    fn frequencies_match_masses() {
        let p = problem();
        let n = 200_000;
        let draws = sample_mu(&p, n, 3);
        let ones = draws.iter().filter(|d| d.label == 1).count() as f64 / n as f64;
        let tol = 4.0 * (0.25 / n as f64).sqrt();
        assert!((ones - 0.5).abs() < tol, "{ones}");
        let root = draws
            .iter()
            .filter(|d| d.provenance == Provenance::Atomic(TreeWord::root()))
            .count() as f64
            / n as f64;
        assert!((root - 0.25).abs() < 4.0 * (0.25 * 0.75 / n as f64).sqrt(), "{root}");
    }
}
