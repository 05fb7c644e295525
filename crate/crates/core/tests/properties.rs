use proptest::prelude::*;

use knnlab::adversarial::{
    brute_force_stage_predictions, derive_schedule, sample_mu, validate_schedule, AdversarialProblem, DeltaRule,
    GammaRule, KRule, Schedule, ShellLayout,
};
use knnlab::knn::{select_from_distances, TieStrategy};
use knnlab::metric::{distance, word_distance, HPoint, MetricSpace, Point, SparsePoint};
use knnlab::nagata::{
    covers_centers, greedy_covering_subfamily, interval_multiplicity_exact, is_disconnected,
    multiplicity_over_probes, Ball, BallFamily,
};
use knnlab::rng::rng_from;

fn coord() -> impl Strategy<Value = f64> {
    -50.0..50.0f64
}

fn hpoint() -> impl Strategy<Value = Point> {
    (coord(), coord(), coord()).prop_map(|(x, y, z)| Point::Heisenberg(HPoint::new(x, y, z)))
}

fn sparse() -> impl Strategy<Value = Point> {
    prop::collection::vec((0u64..12, -5.0..5.0f64), 0..6).prop_map(|e| Point::Sparse(SparsePoint::from_entries(e)))
}

fn word() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..3, 0..7)
}

fn metric_holds(space: &MetricSpace, p: &Point, q: &Point, r: &Point) {
    let d = |a: &Point, b: &Point| distance(space, a, b).unwrap();
    let (pq, qr, pr) = (d(p, q), d(q, r), d(p, r));
    assert!(pq >= 0.0);
    assert_eq!(d(p, p), 0.0);
    assert!((pq - d(q, p)).abs() <= 1e-9 * (1.0 + pq));
    assert!(pr <= pq + qr + 1e-9 * (1.0 + pr));
}

proptest! {
    #[test]
    fn heisenberg_is_a_metric(p in hpoint(), q in hpoint(), r in hpoint()) {
        metric_holds(&MetricSpace::Heisenberg, &p, &q, &r);
    }

    #[test]
    fn sparse_is_a_metric(p in sparse(), q in sparse(), r in sparse()) {
        metric_holds(&MetricSpace::SparseL2, &p, &q, &r);
        let d = distance(&MetricSpace::SparseL2, &p, &q).unwrap();
        prop_assert_eq!(d == 0.0, p == q);
    }

    #[test]
    fn words_are_an_ultrametric(a in word(), b in word(), c in word()) {
        let (ab, bc, ac) = (word_distance(&a, &b), word_distance(&b, &c), word_distance(&a, &c));
        prop_assert!(ac <= ab.max(bc));
        prop_assert_eq!(ab, word_distance(&b, &a));
        prop_assert_eq!(ab == 0.0, a == b);
    }

    #[test]
    fn selection_takes_all_strictly_closer(
        dists in prop::collection::vec(0u8..6, 1..40),
        k_frac in 0.0..1.0f64,
    ) {
        let dists: Vec<f64> = dists.into_iter().map(f64::from).collect();
        let keys: Vec<f64> = (0..dists.len()).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        let k = 1 + (k_frac * (dists.len() - 1) as f64) as usize;
        for strategy in [TieStrategy::UniformRandom, TieStrategy::FirstIndex] {
            let chosen = select_from_distances(&dists, &keys, k, strategy);
            prop_assert_eq!(chosen.len(), k);
            let mut sorted = chosen.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), k);
            let radius = chosen.iter().map(|&i| dists[i]).fold(0.0, f64::max);
            for (i, &d) in dists.iter().enumerate() {
                if d < radius {
                    prop_assert!(chosen.contains(&i));
                }
            }
        }
    }
}

fn interval_family() -> impl Strategy<Value = BallFamily> {
    prop::collection::vec((-20i32..20, 1i32..12, any::<bool>()), 1..25).prop_map(|raw| {
        let balls = raw
            .into_iter()
            .map(|(c, r, closed)| Ball {
                center: Point::Real(f64::from(c) / 2.0),
                radius: f64::from(r) / 4.0,
                closed,
            })
            .collect();
        BallFamily::unbounded(MetricSpace::EuclideanLine, balls).unwrap()
    })
}

/// Multiplicity on the line by direct evaluation at every endpoint and every
/// midpoint between consecutive endpoints.
fn line_oracle(f: &BallFamily) -> usize {
    let mut marks: Vec<f64> = f
        .balls()
        .iter()
        .flat_map(|b| match b.center {
            Point::Real(c) => [c - b.radius, c + b.radius],
            _ => unreachable!(),
        })
        .collect();
    marks.sort_by(f64::total_cmp);
    marks.dedup();
    let mids: Vec<f64> = marks.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    let probes: Vec<Point> = marks.iter().chain(&mids).map(|&x| Point::Real(x)).collect();
    multiplicity_over_probes(f, &probes).unwrap().0
}

proptest! {
    #[test]
    fn sweep_matches_oracle(f in interval_family()) {
        prop_assert_eq!(interval_multiplicity_exact(&f).unwrap(), line_oracle(&f));
    }

    #[test]
    fn greedy_subfamily_invariants(f in interval_family()) {
        let sub = greedy_covering_subfamily(&f);
        prop_assert!(is_disconnected(&sub));
        prop_assert!(covers_centers(&sub, &f));
        prop_assert!(interval_multiplicity_exact(&sub).unwrap() <= 2);
    }

    #[test]
    fn ultrametric_disconnected_families_are_disjoint(
        raw in prop::collection::vec((word(), 0i32..6, any::<bool>()), 1..20),
    ) {
        let balls = raw
            .into_iter()
            .map(|(w, e, closed)| Ball { center: Point::Word(w), radius: 0.5f64.powi(e), closed })
            .collect();
        let f = BallFamily::unbounded(MetricSpace::UltrametricWords { alphabet_size: 3 }, balls).unwrap();
        let sub = greedy_covering_subfamily(&f);
        let probes: Vec<Point> = f.centers();
        prop_assert_eq!(multiplicity_over_probes(&sub, &probes).unwrap().0, 1);
    }
}

fn small_problem(m1: u64, m2: u64, m3: u64) -> AdversarialProblem {
    let s = Schedule::empirical(GammaRule::Dyadic, DeltaRule::Dyadic, KRule::Log2Ceil, vec![1, m1, m2, m3], vec![]);
    AdversarialProblem::new(s, 3).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn counted_vote_equals_brute_force(
        m1 in 2u64..5, m2 in 1u64..4, m3 in 1u64..4,
        n in 5u64..400, k_frac in 0.0..1.0f64, stage in 0usize..2, seed in any::<u64>(),
    ) {
        let p = small_problem(m1, m2, m3);
        let k = 1 + (k_frac * (n - 1) as f64) as u64;
        let cmp = brute_force_stage_predictions(&p, stage, n, k, 10, seed, TieStrategy::UniformRandom).unwrap();
        prop_assert_eq!(cmp.brute, cmp.counted);
    }
}

#[test]
fn shell_occupancy_matches_tallies() {
    let p = small_problem(3, 2, 2);
    let layout = ShellLayout::new(&p);
    let n = 400_000u64;
    let mut rng = rng_from(12, &[]);
    let simulated = layout.draw_counts(n, u64::MAX, &mut rng);
    let test = knnlab::adversarial::TreeWord(vec![1, 2, 1]);
    let draws = sample_mu(&p, n as usize, 13);
    let tallied = layout.tally(draws.iter().map(|d| &d.provenance), &test);
    for (i, &prob) in layout.probabilities().iter().enumerate() {
        let sd = (n as f64 * prob * (1.0 - prob)).sqrt().max(1.0);
        let expected = n as f64 * prob;
        assert!((simulated[i] as f64 - expected).abs() < 5.0 * sd, "shell {i}: simulated {}", simulated[i]);
        assert!((tallied[i] as f64 - expected).abs() < 5.0 * sd, "shell {i}: sampled {}", tallied[i]);
    }
}

#[test]
fn derived_schedules_are_tight() {
    for depth in 0..=2 {
        let s = derive_schedule(GammaRule::Dyadic, DeltaRule::Dyadic, KRule::Log2Ceil, depth).unwrap();
        assert!(validate_schedule(&s).is_empty());
        for i in 0..s.n.len() {
            let mut smaller = s.clone();
            smaller.n[i] -= 1;
            assert!(!validate_schedule(&smaller).is_empty(), "n{i} not minimal at depth {depth}");
            if i + 1 < s.m.len() && s.m[i + 1] > 2 {
                let mut fewer = s.clone();
                fewer.m[i + 1] -= 1;
                assert!(!validate_schedule(&fewer).is_empty(), "m{} not minimal", i + 1);
            }
        }
    }
}
