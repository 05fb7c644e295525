//! Experiment runners behind the `lab` binary.
//!
//! Every runner is a pure function of an [`ExperimentConfig`]; randomness is
//! derived from `config.seed`, so output regenerates bit for bit.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversarial::{
    brute_force_stage_predictions, delta_f64, derive_schedule_with, structured_stage_sim, validate_schedule,
    AdversarialError, AdversarialProblem, DeltaRule, GammaRule, KRule, Mode, Schedule, StageBounds, Until, Violation,
    BRUTE_FORCE_LIMIT,
};
use crate::knn::{draw_sample, knn_predict, Estimate, KnnError, LearningProblem, TieStrategy};
use crate::metric::{h_dilate, HPoint, MetricSpace, Point, SparsePoint};
use crate::nagata::{
    doubling_cover_greedy, greedy_covering_subfamily, interval_multiplicity_exact, is_disconnected,
    multiplicity_over_probes, nagata_witness_sparse, pentagon_family, Ball, BallFamily, CertificateKind,
    CertificateRecord, DimensionCertificate, IdSource, NagataError,
};
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("schedule validation failed: {0:?}")]
    Validation(Vec<Violation>),
    #[error("overflow at stage {stage}: {quantity} exceeds the 64-bit range")]
    Overflow { stage: usize, quantity: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Adversarial(AdversarialError),
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Nagata(#[from] NagataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<AdversarialError> for ExperimentError {
    fn from(e: AdversarialError) -> Self {
        match e {
            AdversarialError::Invalid(v) => ExperimentError::Validation(v),
            AdversarialError::Overflow { stage, quantity } => ExperimentError::Overflow { stage, quantity },
            other => ExperimentError::Adversarial(other),
        }
    }
}

impl ExperimentError {
    /// Process exit code: 2 for schedule violations, 3 for overflow.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Validation(_) => 2,
            ExperimentError::Overflow { .. } => 3,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Consistency,
    Baseline,
    Coverhart,
    Dimension,
    Schedule,
}

/// Inclusive stage range, written `A..B` (or a single `A`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StageRange {
    pub start: usize,
    pub end: usize,
}

impl StageRange {
    pub fn new(start: usize, end: usize) -> Result<Self, String> {
        if start > end {
            return Err(format!("empty stage range {start}..{end}"));
        }
        Ok(StageRange { start, end })
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> {
        self.start..=self.end
    }
}

impl FromStr for StageRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad stage `{v}`: {e}"));
        match s.split_once("..") {
            Some((a, b)) => StageRange::new(parse(a)?, parse(b.trim_start_matches('='))?),
            None => {
                let a = parse(s)?;
                StageRange::new(a, a)
            }
        }
    }
}

impl TryFrom<String> for StageRange {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<StageRange> for String {
    fn from(r: StageRange) -> Self {
        r.to_string()
    }
}

impl fmt::Display for StageRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Count-based shell simulation; any sample size.
    #[default]
    Structured,
    /// Materialized sample with brute-force k-NN; `n ≤ 2000`.
    BruteForce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub stages: StageRange,
    /// Sample sizes; per stage for `consistency`, the n-grid for `baseline`.
    pub n_override: Option<Vec<u64>>,
    /// Branching numbers `m₀ = 1, m₁, …` for `consistency`.
    pub m_override: Option<Vec<u64>>,
    /// Lower bounds on derived sample sizes in proof mode.
    pub n_floor: Vec<u64>,
    pub k_rule: Option<KRule>,
    pub gamma_rule: GammaRule,
    pub delta_rule: DeltaRule,
    pub test_count: usize,
    /// Independent training samples per baseline row.
    pub replications: usize,
    pub mode: Mode,
    pub engine: Engine,
    pub output_path: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::Consistency,
            seed: 0,
            stages: StageRange { start: 0, end: 1 },
            n_override: None,
            m_override: None,
            n_floor: Vec::new(),
            k_rule: None,
            gamma_rule: GammaRule::Dyadic,
            delta_rule: DeltaRule::Dyadic,
            test_count: 10_000,
            replications: 16,
            mode: Mode::Empirical,
            engine: Engine::Structured,
            output_path: None,
        }
    }
}

/// Branching numbers of the default empirical schedule.
pub const EMPIRICAL_M: [u64; 4] = [1, 293, 4096, 4096];
/// Sample sizes of the default empirical schedule.
pub const EMPIRICAL_N: [u64; 2] = [128, 1_000_000];
/// Sample sizes of the Euclidean baseline.
pub const BASELINE_N: [u64; 3] = [100, 1_000, 10_000];

impl ExperimentConfig {
    pub fn for_experiment(experiment: Experiment) -> Self {
        ExperimentConfig {
            experiment,
            ..Self::default()
        }
    }

    fn k_rule_or(&self, default: KRule) -> KRule {
        self.k_rule.unwrap_or(default)
    }

    fn check_test_count(&self) -> Result<(), ExperimentError> {
        if self.test_count < 100 {
            return Err(ExperimentError::Config(format!(
                "test_count must be at least 100, got {}",
                self.test_count
            )));
        }
        Ok(())
    }
}

/// One row of a consistency or baseline table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub n: u64,
    pub k: u64,
    /// Fraction of test points predicted 1 (diffuse test points only for
    /// consistency rows).
    #[serde(rename = "frac_pred1_nonatomic")]
    pub fraction_predicted_1: f64,
    pub error: f64,
    pub bayes: f64,
    pub delta: Option<f64>,
    /// Standard error of the Monte Carlo quantity of the row: the fraction
    /// for consistency rows, the error for baseline rows.
    pub stderr: f64,
}

pub fn write_stage_csv<W: Write>(writer: W, rows: &[StageReport]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// The schedule a consistency run uses, validated for its mode.
pub fn consistency_schedule(config: &ExperimentConfig) -> Result<Schedule, ExperimentError> {
    let k_rule = config.k_rule_or(KRule::Log2Ceil);
    let last = config.stages.end;
    let schedule = match (&config.m_override, &config.n_override, config.mode) {
        (None, None, Mode::ProofBound) => derive_schedule_with(
            config.gamma_rule,
            config.delta_rule,
            k_rule,
            Until::Branching(last + 1),
            &config.n_floor,
        )?,
        (m, n, mode) => {
            let m = m.clone().unwrap_or_else(|| EMPIRICAL_M.to_vec());
            let n = n.clone().unwrap_or_else(|| EMPIRICAL_N.to_vec());
            let mut s = Schedule::empirical(config.gamma_rule, config.delta_rule, k_rule, m, n);
            s.mode = mode;
            s
        }
    };
    let violations = validate_schedule(&schedule);
    if !violations.is_empty() {
        return Err(ExperimentError::Validation(violations));
    }
    if schedule.n.len() <= last {
        return Err(ExperimentError::Config(format!(
            "stage {last} requested but the schedule has {} sample sizes",
            schedule.n.len()
        )));
    }
    Ok(schedule)
}

/// Fraction of diffuse test points the k-NN rule labels 1 at each scheduled
/// stage. Error is reported as `fraction / 2`: the diffuse half carries label
/// 0, so this is the misclassified mass there, a lower bound on the risk.
pub fn run_consistency(config: &ExperimentConfig) -> Result<Vec<StageReport>, ExperimentError> {
    config.check_test_count()?;
    let schedule = consistency_schedule(config)?;
    let depth = config.stages.end + 2;
    let problem = AdversarialProblem::padded(schedule.clone(), depth, 2)?;
    config
        .stages
        .iter()
        .map(|stage| {
            let n = schedule.n[stage];
            let k = schedule.k_rule.k(n);
            let seed = derive_seed(config.seed, &[0xc0, stage as u64]);
            let fraction = match config.engine {
                Engine::Structured => structured_stage_sim(&problem, stage, n, k, config.test_count, seed)?.fraction,
                Engine::BruteForce => {
                    if n > BRUTE_FORCE_LIMIT {
                        return Err(ExperimentError::Config(format!(
                            "brute force is limited to n <= {BRUTE_FORCE_LIMIT}, stage {stage} has n = {n}"
                        )));
                    }
                    let cmp = brute_force_stage_predictions(
                        &problem,
                        stage,
                        n,
                        k,
                        config.test_count,
                        seed,
                        TieStrategy::UniformRandom,
                    )?;
                    let ones = cmp.brute.iter().filter(|&&p| p == 1).count();
                    Estimate::proportion(ones, cmp.brute.len())
                }
            };
            Ok(StageReport {
                stage,
                n,
                k,
                fraction_predicted_1: fraction.value,
                error: fraction.value / 2.0,
                bayes: 0.0,
                delta: Some(delta_f64(schedule.delta_rule, stage)),
                stderr: fraction.stderr,
            })
        })
        .collect()
}

/// Regression functions on the unit cube.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eta {
    Constant(f64),
    /// `1{x_coord > threshold}`.
    HalfSpace { coord: usize, threshold: f64 },
    /// `x_coord`.
    Linear { coord: usize },
}

impl Eta {
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Eta::Constant(p) => p,
            Eta::HalfSpace { coord, threshold } => f64::from(u8::from(x[coord] > threshold)),
            Eta::Linear { coord } => x[coord],
        }
    }

    /// `E min(η, 1−η)` under the uniform law.
    pub fn bayes_error(&self) -> f64 {
        match *self {
            Eta::Constant(p) => p.min(1.0 - p),
            Eta::HalfSpace { .. } => 0.0,
            Eta::Linear { .. } => 0.25,
        }
    }

    /// `E 2η(1−η)`, the large-sample 1-NN error.
    pub fn one_nn_limit(&self) -> f64 {
        match *self {
            Eta::Constant(p) => 2.0 * p * (1.0 - p),
            Eta::HalfSpace { .. } => 0.0,
            Eta::Linear { .. } => 1.0 / 3.0,
        }
    }
}

/// Uniform law on `[0,1]^dim`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformCube {
    pub dim: usize,
    pub eta: Eta,
}

impl UniformCube {
    fn coords<'a>(&self, x: &'a Point) -> std::borrow::Cow<'a, [f64]> {
        match x {
            Point::Real(v) => std::borrow::Cow::Owned(vec![*v]),
            Point::Vector(v) => std::borrow::Cow::Borrowed(v.as_slice()),
            _ => std::borrow::Cow::Owned(vec![0.0; self.dim]),
        }
    }
}

impl LearningProblem for UniformCube {
    fn space(&self) -> MetricSpace {
        if self.dim == 1 {
            MetricSpace::EuclideanLine
        } else {
            MetricSpace::Euclidean { dim: self.dim }
        }
    }

    fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        if self.dim == 1 {
            Point::Real(rng.random())
        } else {
            Point::Vector((0..self.dim).map(|_| rng.random()).collect())
        }
    }

    fn eta(&self, x: &Point) -> f64 {
        self.eta.value(&self.coords(x))
    }

    fn bayes_error(&self) -> Option<f64> {
        Some(self.eta.bayes_error())
    }
}

/// k-NN error and fraction predicted 1 over fresh test draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KnnEvaluation {
    pub error: Estimate,
    pub predicted_one: Estimate,
}

pub fn evaluate_knn<P: LearningProblem>(
    problem: &P,
    n: u64,
    k: u64,
    test_count: usize,
    seed: u64,
) -> Result<KnnEvaluation, ExperimentError> {
    let space = problem.space();
    let sample = draw_sample(problem, n as usize, seed)?;
    let outcomes: Result<Vec<(u8, u8)>, KnnError> = (0..test_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(seed, &[0x7e57, i as u64]);
            let (x, y) = problem.sample_labelled(&mut rng);
            let p = knn_predict(&sample, &x, k as usize, TieStrategy::UniformRandom, &space)?;
            Ok((p, y))
        })
        .collect();
    let outcomes = outcomes?;
    let wrong = outcomes.iter().filter(|(p, y)| p != y).count();
    let ones = outcomes.iter().filter(|(p, _)| *p == 1).count();
    Ok(KnnEvaluation {
        error: Estimate::proportion(wrong, test_count),
        predicted_one: Estimate::proportion(ones, test_count),
    })
}

/// k-NN on the uniform interval with `η = 1` on `(1/2, 1]`.
///
/// Each row averages `replications` independent training samples, the test
/// budget split evenly between them; `stderr` is taken across replications,
/// floored by the pooled proportion stderr over all test points.
pub fn run_baseline(config: &ExperimentConfig) -> Result<Vec<StageReport>, ExperimentError> {
    run_baseline_with(
        config,
        UniformCube {
            dim: 1,
            eta: Eta::HalfSpace {
                coord: 0,
                threshold: 0.5,
            },
        },
    )
}

pub fn run_baseline_with(config: &ExperimentConfig, problem: UniformCube) -> Result<Vec<StageReport>, ExperimentError> {
    config.check_test_count()?;
    let k_rule = config.k_rule_or(KRule::SqrtCeil);
    let grid = config.n_override.clone().unwrap_or_else(|| BASELINE_N.to_vec());
    grid.iter()
        .enumerate()
        .map(|(idx, &n)| {
            let k = k_rule.k(n);
            let reps = config.replications.max(2);
            let per_rep = config.test_count.div_ceil(reps);
            let evals = (0..reps)
                .map(|r| evaluate_knn(&problem, n, k, per_rep, derive_seed(config.seed, &[0xba5e, idx as u64, r as u64])))
                .collect::<Result<Vec<_>, _>>()?;
            let errors: Vec<f64> = evals.iter().map(|e| e.error.value).collect();
            let ones: Vec<f64> = evals.iter().map(|e| e.predicted_one.value).collect();
            let error = Estimate::from_values(&errors);
            let misses = errors.iter().map(|e| (e * per_rep as f64).round() as usize).sum();
            let pooled = Estimate::proportion(misses, per_rep * reps);
            Ok(StageReport {
                stage: idx,
                n,
                k,
                fraction_predicted_1: Estimate::from_values(&ones).value,
                error: error.value,
                bayes: problem.eta.bayes_error(),
                delta: None,
                stderr: error.stderr.max(pooled.stderr),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverHartRow {
    pub case: String,
    pub n: u64,
    pub error: f64,
    pub stderr: f64,
    pub bayes: f64,
    /// `E 2η(1−η)`.
    pub limit: f64,
    /// `error / bayes`, when the Bayes error is positive.
    pub ratio: Option<f64>,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverHartReport {
    pub rows: Vec<CoverHartRow>,
}

impl CoverHartReport {
    pub fn row(&self, case: &str) -> Option<&CoverHartRow> {
        self.rows.iter().find(|r| r.case == case)
    }

    pub fn max_ratio(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.ratio).reduce(f64::max)
    }
}

/// The cases of the 1-NN study in the unit square: name, regression function
/// and default sample size.
pub fn coverhart_cases() -> Vec<(&'static str, Eta, u64)> {
    vec![
        ("constant", Eta::Constant(0.3), 20_000),
        (
            "half_plane",
            Eta::HalfSpace {
                coord: 0,
                threshold: 0.5,
            },
            10_000,
        ),
        ("linear", Eta::Linear { coord: 0 }, 10_000),
    ]
}

/// 1-NN error in the unit square against the Bayes error.
pub fn run_coverhart(config: &ExperimentConfig) -> Result<CoverHartReport, ExperimentError> {
    config.check_test_count()?;
    let rows = coverhart_cases()
        .into_iter()
        .enumerate()
        .map(|(idx, (case, eta, n))| {
            let n = config
                .n_override
                .as_ref()
                .and_then(|v| v.get(idx).copied())
                .unwrap_or(n);
            let problem = UniformCube { dim: 2, eta };
            let eval = evaluate_knn(&problem, n, 1, config.test_count, derive_seed(config.seed, &[0xc4, idx as u64]))?;
            let bayes = eta.bayes_error();
            Ok(CoverHartRow {
                case: case.to_string(),
                n,
                error: eval.error.value,
                stderr: eval.error.stderr,
                bayes,
                limit: eta.one_nn_limit(),
                ratio: (bayes > 0.0).then(|| eval.error.value / bayes),
                bound: 2.0,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(CoverHartReport { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimensionCheck {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DoublingRow {
    pub radius: f64,
    pub grid_points: usize,
    pub separated: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimensionReport {
    pub checks: Vec<DimensionCheck>,
    pub certificates: Vec<CertificateRecord>,
    pub heisenberg_doubling: Vec<DoublingRow>,
}

impl DimensionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&DimensionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Disconnected interval family built by rejection: a candidate is kept when
/// its centre avoids all kept balls and its ball avoids all kept centres.
pub fn random_disconnected_intervals<R: Rng + ?Sized>(rng: &mut R, attempts: usize) -> BallFamily {
    let mut balls: Vec<Ball> = Vec::new();
    for _ in 0..attempts {
        let c: f64 = rng.random_range(-10.0..10.0);
        let r: f64 = rng.random_range(0.05..3.0);
        let closed = rng.random::<bool>();
        let candidate = Ball {
            center: Point::Real(c),
            radius: r,
            closed,
        };
        let fits = balls.iter().all(|b| {
            let (Point::Real(bc), Point::Real(cc)) = (&b.center, &candidate.center) else {
                unreachable!()
            };
            let d = (bc - cc).abs();
            let in_b = if b.closed { d <= b.radius } else { d < b.radius };
            let in_c = if closed { d <= r } else { d < r };
            !in_b && !in_c
        });
        if fits {
            balls.push(candidate);
        }
    }
    BallFamily::unbounded(MetricSpace::EuclideanLine, balls).expect("valid intervals")
}

/// Random balls in the word ultrametric.
pub fn random_word_family<R: Rng + ?Sized>(rng: &mut R, size: usize, alphabet: u32, len: usize) -> BallFamily {
    let balls = (0..size)
        .map(|_| {
            let word: Vec<u32> = (0..len).map(|_| rng.random_range(0..alphabet)).collect();
            let radius = 0.5f64.powi(rng.random_range(0..len as i32));
            Ball {
                center: Point::Word(word),
                radius,
                closed: rng.random::<bool>(),
            }
        })
        .collect();
    BallFamily::unbounded(
        MetricSpace::UltrametricWords {
            alphabet_size: alphabet,
        },
        balls,
    )
    .expect("valid word balls")
}

/// Points of `B̄_1(e)` on a regular grid, step `1/4` in each coordinate.
pub fn heisenberg_unit_grid() -> Vec<HPoint> {
    let steps: Vec<f64> = (-4..=4).map(|i| f64::from(i) / 4.0).collect();
    let mut out = Vec::new();
    for &x in &steps {
        for &y in &steps {
            for &z in &steps {
                let p = HPoint::new(x, y, z);
                if crate::metric::h_norm(&p) <= 1.0 {
                    out.push(p);
                }
            }
        }
    }
    out
}

fn check(name: &str, value: f64, limit: f64, passed: bool) -> DimensionCheck {
    DimensionCheck {
        name: name.to_string(),
        value,
        limit,
        passed,
    }
}

/// The dimension battery: explicit witnesses, random families and the
/// Heisenberg doubling table.
pub fn run_dimension_suite(config: &ExperimentConfig) -> Result<DimensionReport, ExperimentError> {
    let mut checks = Vec::new();
    let mut certificates = Vec::new();

    let pentagon = pentagon_family();
    let origin = Point::Vector(vec![0.0, 0.0]);
    let cert = DimensionCertificate::new(CertificateKind::DeGrootWitness, pentagon, origin)?;
    checks.push(check(
        "plane_pentagon_multiplicity",
        cert.multiplicity as f64,
        5.0,
        cert.verify() && cert.multiplicity == 5,
    ));
    certificates.push(cert.record());

    let families = 1000;
    let worst_line = (0..families)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(config.seed, &[0x1e, i as u64]);
            let f = random_disconnected_intervals(&mut rng, 40);
            debug_assert!(is_disconnected(&f));
            interval_multiplicity_exact(&f)
        })
        .try_reduce(|| 0, |a, b| Ok(a.max(b)))?;
    checks.push(check("line_disconnected_multiplicity_max", worst_line as f64, 2.0, worst_line <= 2));

    let worst_word = (0..families)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(config.seed, &[0x77, i as u64]);
            let f = greedy_covering_subfamily(&random_word_family(&mut rng, 30, 3, 6));
            let probes = f.default_probes(&[]);
            multiplicity_over_probes(&f, &probes).map(|(m, _)| m)
        })
        .try_reduce(|| 0, |a, b| Ok(a.max(b)))?;
    checks.push(check("ultrametric_greedy_multiplicity_max", worst_word as f64, 1.0, worst_word == 1));

    let mut ids = IdSource::starting_at(0);
    let mut sparse_ok = true;
    for m in 1..=256usize {
        let cert = nagata_witness_sparse(m, &SparsePoint::origin(), 1.0, &mut ids)?;
        sparse_ok &= cert.verify() && cert.multiplicity == m;
        if m.is_power_of_two() && m <= 8 {
            certificates.push(cert.record());
        }
    }
    checks.push(check("sparse_witnesses_1_to_256", 256.0, 256.0, sparse_ok));

    let grid = heisenberg_unit_grid();
    let space = MetricSpace::Heisenberg;
    let identity = Point::Heisenberg(HPoint::IDENTITY);
    let mut doubling = Vec::new();
    for r in [1.0, 0.5, 0.25] {
        let points: Vec<Point> = grid
            .iter()
            .map(|p| h_dilate(r, p).map(Point::Heisenberg))
            .collect::<Result<_, _>>()
            .map_err(NagataError::from)?;
        doubling.push(DoublingRow {
            radius: r,
            grid_points: points.len(),
            separated: doubling_cover_greedy(&points, &identity, r, &space)?,
        });
    }
    let equal = doubling.windows(2).all(|w| w[0].separated == w[1].separated);
    checks.push(check(
        "heisenberg_doubling_scale_invariant",
        doubling[0].separated as f64,
        doubling[0].separated as f64,
        equal,
    ));

    Ok(DimensionReport {
        checks,
        certificates,
        heisenberg_doubling: doubling,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleReport {
    pub schedule: Schedule,
    pub stages: Vec<StageBounds>,
}

/// Proof mode derives the minimal schedule up to `n_{stages.end}`; empirical
/// mode validates the configured (or default) sequences.
pub fn print_schedule(config: &ExperimentConfig) -> Result<ScheduleReport, ExperimentError> {
    let k_rule = config.k_rule_or(KRule::Log2Ceil);
    let depth = config.stages.end;
    let schedule = match config.mode {
        Mode::ProofBound if config.m_override.is_none() && config.n_override.is_none() => derive_schedule_with(
            config.gamma_rule,
            config.delta_rule,
            k_rule,
            Until::SampleSize(depth),
            &config.n_floor,
        )?,
        mode => {
            let m = config.m_override.clone().unwrap_or_else(|| EMPIRICAL_M.to_vec());
            let n = config.n_override.clone().unwrap_or_else(|| EMPIRICAL_N.to_vec());
            let mut s = Schedule::empirical(config.gamma_rule, config.delta_rule, k_rule, m, n);
            s.mode = mode;
            let violations = validate_schedule(&s);
            if !violations.is_empty() {
                return Err(ExperimentError::Validation(violations));
            }
            s
        }
    };
    let stages = config
        .stages
        .iter()
        .take_while(|&i| i < schedule.m.len())
        .filter_map(|i| schedule.stage_bounds(i))
        .collect();
    Ok(ScheduleReport { schedule, stages })
}

/// Runs the configured experiment and writes its output (CSV for stage
/// tables, JSON otherwise) to `out`.
pub fn run_to_writer<W: Write>(config: &ExperimentConfig, mut out: W) -> Result<(), ExperimentError> {
    match config.experiment {
        Experiment::Consistency => write_stage_csv(out, &run_consistency(config)?),
        Experiment::Baseline => write_stage_csv(out, &run_baseline(config)?),
        Experiment::Coverhart => {
            serde_json::to_writer_pretty(&mut out, &run_coverhart(config)?)?;
            Ok(writeln!(out)?)
        }
        Experiment::Dimension => {
            serde_json::to_writer_pretty(&mut out, &run_dimension_suite(config)?)?;
            Ok(writeln!(out)?)
        }
        Experiment::Schedule => {
            serde_json::to_writer_pretty(&mut out, &print_schedule(config)?)?;
            Ok(writeln!(out)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_ranges() {
        assert_eq!("0..1".parse::<StageRange>().unwrap(), StageRange { start: 0, end: 1 });
        assert_eq!("2".parse::<StageRange>().unwrap(), StageRange { start: 2, end: 2 });
        assert_eq!("1..=3".parse::<StageRange>().unwrap(), StageRange { start: 1, end: 3 });
        assert!("3..1".parse::<StageRange>().is_err());
        assert!("a..1".parse::<StageRange>().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig {
            k_rule: Some(KRule::Const(1)),
            mode: Mode::ProofBound,
            ..ExperimentConfig::for_experiment(Experiment::Schedule)
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"experiment":"baseline","stages":"0..0"}"#).unwrap();
        assert_eq!(partial.experiment, Experiment::Baseline);
        assert_eq!(partial.test_count, 10_000);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(ExperimentError::Validation(vec![]).exit_code(), 2);
        let e: ExperimentError = AdversarialError::Overflow { stage: 3, quantity: "n" }.into();
        assert_eq!(e.exit_code(), 3);
        assert_eq!(ExperimentError::Config("x".into()).exit_code(), 1);
    }

    #[test]
    fn trivial_eta_gives_zero_error() {
        let problem = UniformCube {
            dim: 1,
            eta: Eta::Constant(1.0),
        };
        let eval = evaluate_knn(&problem, 200, 15, 500, 3).unwrap();
        assert_eq!(eval.error.value, 0.0);
        assert_eq!(eval.predicted_one.value, 1.0);
    }

    #[test]
    fn eta_summaries() {
        let e = Eta::Constant(0.3);
        assert!((e.one_nn_limit() - 0.42).abs() < 1e-15);
        assert_eq!(e.bayes_error(), 0.3);
        assert_eq!(Eta::Linear { coord: 0 }.value(&[0.2, 0.9]), 0.2);
    }

    #[test]
    fn schedule_rows() {
        let mut cfg = ExperimentConfig::for_experiment(Experiment::Schedule);
        cfg.mode = Mode::ProofBound;
        cfg.stages = StageRange { start: 0, end: 0 };
        let report = print_schedule(&cfg).unwrap();
        assert_eq!(report.schedule.m, vec![1]);
        assert_eq!(report.stages.len(), 1);
        cfg.stages = StageRange { start: 0, end: 1 };
        let report = print_schedule(&cfg).unwrap();
        assert!((report.stages[0].n_bound - 32.0 * 8f64.ln()).abs() < 1e-9);
        assert_eq!(report.stages[0].n, Some(67));
        cfg.stages = StageRange { start: 0, end: 4 };
        assert_eq!(print_schedule(&cfg).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn invalid_empirical_schedule_is_rejected() {
        let cfg = ExperimentConfig {
            m_override: Some(vec![1, 293, 4096, 4096]),
            n_override: Some(vec![16, 1_000_000]),
            ..ExperimentConfig::default()
        };
        assert_eq!(run_consistency(&cfg).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn small_consistency_run_is_reproducible() {
        let cfg = ExperimentConfig {
            test_count: 200,
            ..ExperimentConfig::default()
        };
        let a = run_consistency(&cfg).unwrap();
        let b = run_consistency(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.bayes == 0.0 && r.error == r.fraction_predicted_1 / 2.0));
    }

    #[test]
    fn disconnected_interval_generator() {
        let mut rng = rng_from(5, &[]);
        for _ in 0..20 {
            let f = random_disconnected_intervals(&mut rng, 40);
            assert!(is_disconnected(&f));
            assert!(!f.is_empty());
        }
    }
}
